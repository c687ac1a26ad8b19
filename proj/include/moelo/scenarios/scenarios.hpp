#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "moelo/continual/continual.hpp"
#include "moelo/data/fingerprint.hpp"
#include "moelo/model/moe_model.hpp"

namespace moelo::scenarios {

using continual::IncrementMode;

enum class Track { dil_exclusive, cil_exclusive, cdil };

const char* to_string(Track t) noexcept;   // "DIL-Exclusive", ...
const char* short_name(Track t) noexcept;  // "dil", "cil", "cdil"
Track parse_track(std::string_view s);

enum class UnitType { device, region };
UnitType unit_type(Track t) noexcept;
const char* to_string(UnitType u) noexcept;

struct Increment {
  IncrementMode mode = IncrementMode::DIL;
  bool baseline = false;               // first step: trains everything
  std::vector<std::string> new_devices;
  std::optional<int> new_region;       // single new region (CIL/CDIL steps)
  std::vector<int> baseline_regions;   // regions whose experts the baseline creates
  // Training selector: devices x regions.
  std::vector<std::string> devices;
  std::vector<int> regions;
};

struct ScenarioPlan {
  Track track = Track::cdil;
  std::string building;
  std::vector<Increment> steps;
  std::map<int, std::vector<model::ReferencePoint>> region_rps;
};

// DIL-Exclusive: step 0 trains the first device on every region (all experts
// created), then one DIL step per further device.
// CIL-Exclusive: step 0 trains region 0 with every device, then one CIL step
// per further region with every device.
// CDIL: step k pairs region k with device floor(k * D / R). Every step is a
// CDIL step, including those that revisit a device when R > D.
// Throws PlanError when the partition leaves CIL/CDIL without increments.
ScenarioPlan build_plan(Track track, const std::string& building, std::span<const model::ReferencePoint> rps,
                        std::span<const data::DeviceProfile> devices, std::size_t n_rp);

double localization_error(const Vec3& pred, const Vec3& truth);

struct MetricRow {
  std::size_t step = 0;
  std::string mode;
  UnitType unit_type = UnitType::region;
  std::string unit_id;
  double le_mean = 0.0;
  double le_worst = 0.0;
  std::size_t n_test = 0;
  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

struct MetricLog {
  std::vector<MetricRow> rows;
  // Mean LE over all test samples seen so far, one entry per step.
  std::vector<double> seen_mean;
  friend bool operator==(const MetricLog&, const MetricLog&) = default;
};

struct Forgetting {
  std::map<std::string, double> per_unit;  // F_u
  double average = 0.0;                    // AF
};

// F_u = LE of the unit's latest evaluation - its best (running minimum);
// AF is the mean of F_u over every unit in the log. Throws DataError on an
// empty log.
Forgetting forgetting_metrics(const MetricLog& log);

// Mean over units of le_mean at the last step.
double final_mean_le(const MetricLog& log);

struct ScenarioOptions {
  model::ModelConfig model;  // input_dim and r_max are filled from data/plan when zero
  continual::TrainConfig train;
  std::size_t replay_capacity = 1;
};

struct StepTiming {
  double train_ms = 0.0;
  double eval_ms = 0.0;
};

struct ScenarioResult {
  MetricLog log;
  model::MoEModel model;
  continual::ReplayBuffer buffer;
  std::vector<continual::TrainReport> reports;
  std::vector<StepTiming> timings;
};

// Runs every increment in order: train, refresh replay, evaluate each unit
// seen so far on held-out data (hard gating). All randomness derives from
// `seed`.
ScenarioResult run_scenario(const ScenarioPlan& plan, const data::Dataset& train, const data::Dataset& test,
                            const ScenarioOptions& options, std::uint64_t seed);

// Sequential fine-tuning control: one encoder plus a single classifier head
// over all global classes (grown as regions arrive, old columns kept), no
// replay and no freezing.
struct NaiveResult {
  MetricLog log;
  std::vector<std::size_t> head_width;  // after each step
};

NaiveResult naive_baseline_run(const ScenarioPlan& plan, const data::Dataset& train, const data::Dataset& test,
                               const ScenarioOptions& options, std::uint64_t seed);

struct SweepRow {
  std::size_t n_rp = 0;
  std::size_t regions = 0;
  double final_mean_le = 0.0;
  double average_forgetting = 0.0;
};

// Re-partitions the same RPs for each n_rp and runs one scenario per value.
// The anchor frame is sized for the largest region count of the sweep.
std::vector<SweepRow> granularity_sweep(const data::Dataset& dataset, std::span<const data::DeviceProfile> devices,
                                        std::span<const std::size_t> n_rp_values, Track track,
                                        const ScenarioOptions& options, double test_fraction, std::uint64_t seed,
                                        const std::string& building = "building1");

// metrics.csv: step,mode,unit_type,unit_id,le_mean_m,le_worst_m,n_test
void write_metrics_csv(const MetricLog& log, std::ostream& out);
void save_metrics_csv(const MetricLog& log, const std::filesystem::path& path);

// Experiment checkpoint: model plus replay buffer, resumable mid-scenario.
nlohmann::json experiment_checkpoint(const ScenarioPlan& plan, std::size_t completed_steps,
                                     const model::MoEModel& model, const continual::ReplayBuffer& buffer);

}  // namespace moelo::scenarios
