#include <algorithm>
#include <map>
#include <string>

#include "moelo/continual/continual.hpp"
#include "moelo/error.hpp"
#include "moelo/numkit/checkpoint.hpp"

namespace moelo::continual {

ReplayBuffer::ReplayBuffer(std::size_t per_pair_capacity) : capacity_(per_pair_capacity) {
  if (capacity_ == 0) throw ConfigError("replay per_pair_capacity must be >= 1");
}

std::size_t ReplayBuffer::size() const noexcept {
  std::size_t n = 0;
  for (const auto& [k, v] : pairs_) n += v.size();
  return n;
}

std::vector<const ReplayEntry*> ReplayBuffer::entries() const {
  std::vector<const ReplayEntry*> out;
  for (const auto& [k, v] : pairs_)
    for (const auto& e : v) out.push_back(&e);
  return out;
}

void ReplayBuffer::replace(const Key& key, std::vector<ReplayEntry> entries) {
  if (entries.size() > capacity_) throw CapacityError("more prototypes than per_pair_capacity");
  pairs_[key] = std::move(entries);
}

nlohmann::json ReplayBuffer::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto* e : this->entries())
    entries.push_back({{"device_id", e->device_id},
                       {"region_id", e->region_id},
                       {"global_label", e->global_label},
                       {"features", numkit::encode_doubles(e->features)}});
  return {{"per_pair_capacity", capacity_}, {"entries", std::move(entries)}};
}

ReplayBuffer ReplayBuffer::from_json(const nlohmann::json& j) {
  try {
    ReplayBuffer b(j.at("per_pair_capacity").get<std::size_t>());
    for (const auto& ej : j.at("entries")) {
      ReplayEntry e{numkit::decode_doubles(ej.at("features")), ej.at("global_label").get<std::size_t>(),
                    ej.at("device_id").get<std::string>(), ej.at("region_id").get<int>()};
      auto& slot = b.pairs_[{e.device_id, e.region_id}];
      if (slot.size() >= b.capacity_) throw CapacityError("checkpoint exceeds per_pair_capacity");
      slot.push_back(std::move(e));
    }
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed replay buffer: ") + e.what());
  }
}

std::vector<std::size_t> herding_select(const Matrix& emb, std::size_t m) {
  const std::size_t n = emb.rows();
  if (n == 0) throw DataError("herding needs at least one embedding");
  if (m > n) throw DataError("cannot select more prototypes than candidates");
  const std::size_t dim = emb.cols();
  std::vector<double> total(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) total[j] += emb(i, j);

  // ||mean - (S + e)/k||^2 scaled by (n k)^2: ||k T - n (S + e)||^2. The
  // scaled form is exact for integer-valued embeddings.
  std::vector<double> running(dim, 0.0);
  std::vector<bool> used(n, false);
  std::vector<std::size_t> picks;
  const double nn = static_cast<double>(n);
  for (std::size_t k = 1; k <= m; ++k) {
    const double kk = static_cast<double>(k);
    std::size_t best = n;
    double best_d = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      if (used[c]) continue;
      double d = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double r = kk * total[j] - nn * (running[j] + emb(c, j));
        d += r * r;
      }
      if (best == n || d < best_d) {
        best = c;
        best_d = d;
      }
    }
    used[best] = true;
    picks.push_back(best);
    for (std::size_t j = 0; j < dim; ++j) running[j] += emb(best, j);
  }
  return picks;
}

void update_replay(ReplayBuffer& buffer, const model::MoEModel& model, const data::Dataset& new_data) {
  std::map<ReplayBuffer::Key, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < new_data.samples.size(); ++i)
    groups[{new_data.samples[i].device_id, new_data.samples[i].region_id}].push_back(i);
  for (const auto& [key, idx] : groups) {
    const Matrix x = data::to_features(new_data, idx);
    const Matrix z = numkit::mlp_forward(model.encoder, x, false, 0);
    const auto picks = herding_select(z, std::min(buffer.per_pair_capacity(), idx.size()));
    std::vector<ReplayEntry> entries;
    for (std::size_t p : picks) {
      const data::Fingerprint& fp = new_data.samples[idx[p]];
      entries.push_back({std::vector<double>(x.row(p).begin(), x.row(p).end()),
                         model.registry.global_class(fp.rp_id), fp.device_id, fp.region_id});
    }
    buffer.replace(key, std::move(entries));
  }
}

}  // namespace moelo::continual
