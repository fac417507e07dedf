// Eigen must precede httplib: <resolv.h> defines a `_res` macro that
// collides with Eigen parameter names.
#include "sentinel/backend.hpp"

#include <httplib.h>

namespace sentinel {

RemoteBackend::RemoteBackend(Options options) : options_(std::move(options)) {}

LogitMatrixd RemoteBackend::infer(std::span<const TokenSequence> batch) {
  std::size_t width = 0;
  for (const auto& s : batch) width = std::max(width, s.length());
  nlohmann::json ids = nlohmann::json::array();
  nlohmann::json mask = nlohmann::json::array();
  for (const auto& s : batch) {
    std::vector<std::int64_t> row(s.ids);
    std::vector<int> m(row.size(), 1);
    row.resize(width, options_.pad_id);
    m.resize(width, 0);
    ids.push_back(std::move(row));
    mask.push_back(std::move(m));
  }
  const nlohmann::json body = {{"input_ids", std::move(ids)}, {"attention_mask", std::move(mask)}};

  httplib::Client client(options_.url);
  const auto secs = options_.timeout.count() / 1000;
  const auto usecs = (options_.timeout.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  auto res = client.Post(options_.path, body.dump(), "application/json");
  if (!res) throw BackendError("remote backend: " + httplib::to_string(res.error()));
  if (res->status != 200) throw BackendError("remote backend: HTTP " + std::to_string(res->status));

  const auto reply = nlohmann::json::parse(res->body, nullptr, false);
  if (reply.is_discarded() || !reply.contains("logits") || !reply["logits"].is_array() ||
      reply["logits"].size() != batch.size()) {
    throw BackendError("remote backend: malformed logits reply");
  }
  LogitMatrixd out(static_cast<Eigen::Index>(batch.size()), 2);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& row = reply["logits"][i];
    if (!row.is_array() || row.size() != 2 || !row[0].is_number() || !row[1].is_number()) {
      throw BackendError("remote backend: logits row " + std::to_string(i) + " is not two numbers");
    }
    out(static_cast<Eigen::Index>(i), 0) = row[0].get<double>();
    out(static_cast<Eigen::Index>(i), 1) = row[1].get<double>();
  }
  return out;
}

}  // namespace sentinel
