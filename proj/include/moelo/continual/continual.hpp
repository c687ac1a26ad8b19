#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "moelo/data/fingerprint.hpp"
#include "moelo/model/moe_model.hpp"
#include "moelo/numkit/adam.hpp"

namespace moelo::continual {

using numkit::Matrix;

enum class IncrementMode { DIL, CIL, CDIL };

const char* to_string(IncrementMode m) noexcept;
IncrementMode parse_mode(std::string_view s);

struct RegionSpec {
  int region_id = 0;
  std::vector<model::ReferencePoint> rps;
};

// Which parameter groups move and which losses apply. `mode` is empty for
// the initial (baseline) training step.
struct TrainPlan {
  std::optional<IncrementMode> mode;
  bool train_encoder = false;
  bool train_projection = false;
  bool train_new_experts = false;
  bool use_ce = false;
  bool use_dr = false;
  std::vector<RegionSpec> new_regions;
};

// DIL: encoder + projection, CE + DR, no new region.
// CIL: new expert only, CE only (plus the projection when cil_train_gate).
// CDIL: encoder + projection + new expert, CE + DR.
// Throws PlanError when has_new_region disagrees with the mode.
TrainPlan plan_increment(IncrementMode mode, bool has_new_region, bool cil_train_gate = false);
// First training step of a scenario: everything trainable, both losses.
TrainPlan plan_baseline(std::vector<RegionSpec> regions);

struct ReplayEntry {
  std::vector<double> features;
  std::size_t global_label = 0;
  std::string device_id;
  int region_id = 0;
  friend bool operator==(const ReplayEntry&, const ReplayEntry&) = default;
};

// Device-region balanced exemplar memory: per_pair_capacity prototypes for
// every (device, region) pair observed so far.
class ReplayBuffer {
 public:
  using Key = std::pair<std::string, int>;

  explicit ReplayBuffer(std::size_t per_pair_capacity = 1);

  std::size_t per_pair_capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept;
  bool empty() const noexcept { return size() == 0; }
  std::size_t pair_count() const noexcept { return pairs_.size(); }

  const std::map<Key, std::vector<ReplayEntry>>& pairs() const noexcept { return pairs_; }
  // Flattened in (device, region) order.
  std::vector<const ReplayEntry*> entries() const;

  void replace(const Key& key, std::vector<ReplayEntry> entries);

  nlohmann::json to_json() const;
  static ReplayBuffer from_json(const nlohmann::json& j);

  friend bool operator==(const ReplayBuffer&, const ReplayBuffer&) = default;

 private:
  std::size_t capacity_;
  std::map<Key, std::vector<ReplayEntry>> pairs_;
};

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 50;
  double replay_fraction = 0.25;
  numkit::AdamConfig adam;
  bool cil_train_gate = false;
  std::uint64_t seed = 0;

  void validate() const;
};

// Greedy herding: step k picks the unused candidate whose inclusion brings
// the running mean of the picks closest to the mean of all embeddings; ties
// go to the lowest index. Throws DataError on empty input or m > count.
std::vector<std::size_t> herding_select(const Matrix& embeddings, std::size_t m);

// Re-selects prototypes (herding on the encoder latent z) for every
// (device, region) pair present in `new_data`; other pairs are untouched.
void update_replay(ReplayBuffer& buffer, const model::MoEModel& model, const data::Dataset& new_data);

// A labelled slice ready for training.
struct LabeledSet {
  Matrix x;
  std::vector<std::size_t> labels;  // global classes
};

LabeledSet label_dataset(const model::MoEModel& model, const data::Dataset& ds);

struct Batch {
  Matrix x;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> region_labels;  // anchor index of each label's region
  std::size_t replay_count = 0;
};

// floor(rho * N) replay draws (without replacement when the buffer is large
// enough) followed by the next N - floor(rho * N) new samples from `order`
// starting at `cursor`, which advances. An empty buffer yields N new samples.
Batch compose_batch(const model::MoEModel& model, const LabeledSet& new_data, std::span<const std::size_t> order,
                    std::size_t& cursor, const ReplayBuffer& buffer, const TrainConfig& cfg, Rng& rng);

struct EpochLoss {
  double ce = 0.0;
  double ce_expert = 0.0;
  double dr = 0.0;
  double total = 0.0;
};

struct TrainReport {
  std::vector<EpochLoss> epochs;
  std::size_t optimizer_steps = 0;
  std::vector<std::size_t> new_experts;
};

// Adds the plan's experts, freezes every earlier expert, then runs
// cfg.epochs passes over `new_data` mixed with replay. Parameter groups
// outside the plan are never written.
TrainReport train_increment(model::MoEModel& model, const TrainPlan& plan, const data::Dataset& new_data,
                            const ReplayBuffer& buffer, const TrainConfig& cfg);

}  // namespace moelo::continual
