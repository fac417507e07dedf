#include <algorithm>
#include <array>
#include <cmath>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

#include "sentinel/corpus.hpp"
#include "sentinel/error.hpp"
#include "sentinel/rng.hpp"
#include "sentinel/text.hpp"

namespace sentinel::corpus {
namespace {

enum Stage : std::uint64_t { kMixtureStage = 1, kSplitStage = 2 };

std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

std::size_t label_index(Label l) { return l == Label::benign ? 0 : 1; }

}  // namespace

void canonical_order(std::vector<LabeledPrompt>& records) {
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.source, a.row) < std::tie(b.source, b.row);
  });
}

std::vector<LabeledPrompt> cap_samples(std::vector<LabeledPrompt> records, std::size_t cap,
                                       std::uint64_t seed) {
  if (records.size() <= cap) return records;
  SeededRng rng(seed);
  const auto keep = rng.choose(records.size(), cap);
  std::vector<LabeledPrompt> out;
  out.reserve(cap);
  for (auto i : keep) out.push_back(std::move(records[i]));
  return out;
}

DedupResult deduplicate(const std::vector<LabeledPrompt>& records) {
  struct Group {
    Label first;
    bool conflict = false;
  };
  std::vector<std::string> keys;
  keys.reserve(records.size());
  std::unordered_map<std::string, Group> groups;
  for (const auto& r : records) {
    keys.push_back(normalize_text(r.text));
    auto [it, inserted] = groups.try_emplace(keys.back(), Group{r.label});
    if (!inserted && it->second.first != r.label) it->second.conflict = true;
  }

  DedupResult out;
  std::unordered_set<std::string_view> seen;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Group& g = groups.at(keys[i]);
    if (g.conflict) {
      ++out.conflict_records;
      ++out.conflicts_by_source[records[i].source];
      continue;
    }
    if (!seen.insert(keys[i]).second) {
      ++out.duplicates;
      ++out.duplicates_by_source[records[i].source];
      continue;
    }
    out.records.push_back(records[i]);
  }
  for (const auto& [key, g] : groups) out.conflict_groups += g.conflict ? 1 : 0;
  return out;
}

MixtureResult compose_mixture(const std::vector<LabeledPrompt>& records, const CurationConfig& cfg) {
  validate(cfg);
  std::array<std::vector<std::size_t>, 2> by_label;
  for (std::size_t i = 0; i < records.size(); ++i) by_label[label_index(records[i].label)].push_back(i);
  const double benign = static_cast<double>(by_label[0].size());
  const double jailbreak = static_cast<double>(by_label[1].size());
  if (by_label[0].empty() || by_label[1].empty()) {
    throw Error("degenerate_corpus", "degenerate corpus: both labels are required for the mixture");
  }

  const double r = cfg.benign_ratio;
  std::size_t over = 0;  // label index to downsample
  std::size_t target = 0;
  if (benign * (1.0 - r) > jailbreak * r) {
    over = 0;
    target = round_half_up(jailbreak * r / (1.0 - r));
  } else {
    over = 1;
    target = round_half_up(benign * (1.0 - r) / r);
  }
  target = std::clamp<std::size_t>(target, 1, by_label[over].size());

  std::vector<bool> keep(records.size(), true);
  SeededRng rng(stage_seed(cfg.seed, kMixtureStage));
  const auto& pool = by_label[over];
  std::vector<bool> chosen(pool.size(), false);
  for (auto i : rng.choose(pool.size(), target)) chosen[i] = true;
  for (std::size_t i = 0; i < pool.size(); ++i) keep[pool[i]] = chosen[i];

  MixtureResult out;
  out.records.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (keep[i]) {
      out.records.push_back(records[i]);
    } else {
      ++out.downsampled_by_source[records[i].source];
    }
  }
  return out;
}

SplitResult split_train_test(const std::vector<LabeledPrompt>& records, const CurationConfig& cfg) {
  validate(cfg);
  const double f = cfg.train_fraction;
  std::array<std::vector<std::size_t>, 2> by_label;
  for (std::size_t i = 0; i < records.size(); ++i) by_label[label_index(records[i].label)].push_back(i);

  // Largest remainder: per-label floors, then hand out the rest so the train
  // total equals round(f * N).
  std::array<std::size_t, 2> take{};
  std::array<double, 2> remainder{};
  std::size_t floors = 0;
  for (std::size_t l = 0; l < 2; ++l) {
    const double ideal = f * static_cast<double>(by_label[l].size());
    take[l] = static_cast<std::size_t>(std::floor(ideal));
    remainder[l] = ideal - static_cast<double>(take[l]);
    floors += take[l];
  }
  std::size_t extra = round_half_up(f * static_cast<double>(records.size())) - floors;
  std::array<std::size_t, 2> order{0, 1};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (auto l : order) {
    if (extra == 0) break;
    if (take[l] < by_label[l].size()) {
      ++take[l];
      --extra;
    }
  }

  std::vector<bool> in_train(records.size(), false);
  for (std::size_t l = 0; l < 2; ++l) {
    SeededRng rng(stage_seed(cfg.seed, kSplitStage + l));
    for (auto i : rng.choose(by_label[l].size(), take[l])) in_train[by_label[l][i]] = true;
  }

  // Without dedup the same normalized text may sit on both sides; such test
  // rows follow their train twin.
  std::unordered_set<std::string> train_keys;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (in_train[i]) train_keys.insert(normalize_text(records[i].text));
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!in_train[i] && train_keys.count(normalize_text(records[i].text))) in_train[i] = true;
  }

  SplitResult out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    LabeledPrompt p = records[i];
    p.split = in_train[i] ? Split::train : Split::test;
    (in_train[i] ? out.train : out.test).push_back(std::move(p));
  }
  return out;
}

}  // namespace sentinel::corpus
