#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "moelo/geometry.hpp"
#include "moelo/model/registry.hpp"
#include "moelo/numkit/matrix.hpp"
#include "moelo/seed.hpp"

namespace moelo::data {

using model::ReferencePoint;

constexpr double kMissingRss = -100.0;
constexpr double kMaxRss = 0.0;

struct Fingerprint {
  std::vector<double> rss;  // dBm per AP, kMissingRss when unseen
  std::string device_id;
  int region_id = 0;
  int rp_id = 0;
  Vec3 coords;
  int time_index = 0;
  friend bool operator==(const Fingerprint&, const Fingerprint&) = default;
};

struct Dataset {
  std::size_t ap_count = 0;
  std::vector<Fingerprint> samples;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Min-max scaling into [0, 1] with min = -100 dBm and max = 0 dBm; one row
// per listed sample (all samples when `idx` is empty).
numkit::Matrix to_features(const Dataset& ds, std::span<const std::size_t> idx = {});
std::vector<double> to_features(const Fingerprint& fp);

// ---------------------------------------------------------------------------
// Synthetic world

struct PathLoss {
  double p0_dbm = -30.0;       // at 1 m
  double exponent = 3.0;
  double shadow_sigma_db = 2.0;
  // 0 gives independent shadowing per (RP, AP); > 0 a spatially smooth
  // field with roughly this correlation length in meters.
  double shadow_correlation_m = 0.0;
};

enum class BuildingTemplate { building1, building2, custom };

struct BuildingParams {
  BuildingTemplate templ = BuildingTemplate::building1;
  std::size_t grid_cols = 30;   // custom only
  std::size_t grid_rows = 2;    // custom only
  std::size_t ap_count = 172;   // custom only
  double ap_margin_m = 5.0;     // APs scattered this far around the RP grid
  double ap_height_min_m = -3.0;
  double ap_height_max_m = 3.0;
  PathLoss path_loss;
  double detection_threshold_dbm = -95.0;
};

struct BuildingSpec {
  std::string name;
  std::vector<ReferencePoint> rps;  // grid order, rp_id == index
  std::vector<Vec3> aps;
  PathLoss path_loss;
  double detection_threshold_dbm = -95.0;
  numkit::Matrix shadowing;  // rps x aps, dB

  std::size_t ap_count() const noexcept { return aps.size(); }
};

// building1: 60 RPs (30 x 2 grid), 172 APs. building2: 48 RPs (24 x 2),
// 168 APs. RPs sit on a 1 m grid. Throws ConfigError on empty dimensions.
BuildingSpec generate_building(const BuildingParams& params, std::uint64_t seed);

struct DeviceProfile {
  std::string acronym;
  double rss_bias_db = 0.0;
  double gain_scale = 1.0;
  double noise_std_db = 0.0;
  double miss_probability = 0.0;
  int intro_time_index = 0;
  friend bool operator==(const DeviceProfile&, const DeviceProfile&) = default;
};

// BLU, HTC, LG, MOTO, OP3, S7 with collection instances
// {0, 9 h, 1 d, 1 w, 1 mo, 3 mo} mapped to drift steps 0..5.
std::vector<DeviceProfile> default_devices();

// Throws ConfigError when a profile is out of range or the list is not
// ordered by intro time.
void validate_devices(std::span<const DeviceProfile> devices);

struct DriftParams {
  std::vector<double> global_offset_db = {0.0, -0.5, -1.0, -1.5, -2.5, -3.5};
  double ap_walk_sigma_db = 0.5;
};

class DriftModel {
 public:
  DriftModel() = default;
  DriftModel(const DriftParams& params, std::size_t ap_count, std::uint64_t seed);

  // Zero at time 0. Throws ConfigError past the configured horizon.
  double offset(int time_index, std::size_t ap) const;
  std::size_t horizon() const noexcept { return global_.size(); }

 private:
  std::vector<double> global_;
  numkit::Matrix walk_;  // time x ap
};

// raw_j = gain * (P0 - 10 n log10(max(d, 1)) + shadow) + bias + drift + noise;
// below threshold or missed -> -100, then clamped to [-100, 0].
Fingerprint simulate_fingerprint(const BuildingSpec& building, const DeviceProfile& device, int rp_id,
                                 int time_index, const DriftModel& drift, Rng& rng);

// rp_id -> region_id: grid order chunked into groups of n_rp.
std::map<int, int> partition_regions(std::span<const ReferencePoint> rps, std::size_t n_rp);
// Rewrites every sample's region_id from its rp_id.
void assign_regions(Dataset& ds, const std::map<int, int>& partition);

struct WorldParams {
  BuildingParams building;
  std::vector<DeviceProfile> devices = default_devices();
  DriftParams drift;
  std::size_t samples_per_rp = 30;
  std::size_t n_rp = 10;
};

struct World {
  BuildingSpec building;
  std::vector<DeviceProfile> devices;
  Dataset dataset;
};

// One collection per device at its intro time, samples_per_rp fingerprints
// per RP. Per-sample streams derive from (seed, device, rp, time, sample).
World generate_world(const WorldParams& params, std::uint64_t seed);

// Distinct RPs present in a dataset, in grid order.
std::vector<ReferencePoint> reference_points(const Dataset& ds);

// ---------------------------------------------------------------------------
// CSV:  device_id,region_id,rp_id,x,y,z,time_index,rssi_0,...,rssi_{D-1}

void save_dataset_csv(const Dataset& ds, const std::filesystem::path& path);
void write_dataset_csv(const Dataset& ds, std::ostream& out);
Dataset load_dataset_csv(const std::filesystem::path& path);
Dataset read_dataset_csv(std::istream& in);

// Stratified per (device, region); every pair with >= 2 samples lands in
// both halves. Throws ConfigError unless 0 < test_fraction < 1.
std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, double test_fraction, std::uint64_t seed);

}  // namespace moelo::data
