#!/usr/bin/env python3
"""Download the public corpus sources into raw/ in the layouts the recipes expect.

Needs the `datasets` package and network access. Some sources are gated and
require `huggingface-cli login` first.
"""
import argparse
import csv
import json
import pathlib

from datasets import load_dataset


def write_jsonl(rows, path):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")


def write_csv(rows, fields, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)


def first_user_content(messages):
    if isinstance(messages, str):
        messages = json.loads(messages)
    for m in messages:
        if m.get("role") == "user":
            return m.get("content", "")
    return ""


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="raw")
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    write_jsonl(load_dataset("OpenSafetyLab/Salad-Data", "base_set", split="train"), out / "salad-data.jsonl")
    write_jsonl(load_dataset("alespalla/chatbot_instruction_prompts", split="train"),
                out / "chatbot-instruction-prompts.jsonl")
    orca = load_dataset("microsoft/orca-agentinstruct-1M-v1", split="creative_content")
    write_jsonl(({"content": first_user_content(r["messages"])} for r in orca), out / "orca-agentinstruct.jsonl")

    jb = load_dataset("TrustAIRLab/in-the-wild-jailbreak-prompts", "jailbreak_2023_12_25", split="train")
    regular = load_dataset("TrustAIRLab/in-the-wild-jailbreak-prompts", "regular_2023_12_25", split="train")
    rows = [dict(r, jailbreak="True") for r in jb] + [dict(r, jailbreak="False") for r in regular]
    write_csv(rows, ["prompt", "jailbreak"], out / "jailbreak-llms.csv")

    write_jsonl(load_dataset("lmsys/toxic-chat", "toxicchat0124", split="train"), out / "toxic-chat.jsonl")
    write_jsonl(load_dataset("VMware/open-instruct", split="train"), out / "open-instruct.jsonl")
    spml = load_dataset("reshabhs/SPML_Chatbot_Prompt_Injection", split="train")
    write_csv(spml, ["System Prompt", "User Prompt", "Prompt injection"], out / "spml.csv")


if __name__ == "__main__":
    main()
