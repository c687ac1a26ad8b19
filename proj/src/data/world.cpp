#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "moelo/data/fingerprint.hpp"
#include "moelo/error.hpp"

namespace moelo::data {

using numkit::Matrix;

numkit::Matrix to_features(const Dataset& ds, std::span<const std::size_t> idx) {
  const std::size_t n = idx.empty() ? ds.samples.size() : idx.size();
  Matrix x(n, ds.ap_count);
  for (std::size_t i = 0; i < n; ++i) {
    const Fingerprint& fp = ds.samples[idx.empty() ? i : idx[i]];
    if (fp.rss.size() != ds.ap_count) throw ShapeError("fingerprint length does not match the dataset AP count");
    auto row = x.row(i);
    for (std::size_t j = 0; j < fp.rss.size(); ++j) row[j] = (fp.rss[j] - kMissingRss) / (kMaxRss - kMissingRss);
  }
  return x;
}

std::vector<double> to_features(const Fingerprint& fp) {
  std::vector<double> out(fp.rss.size());
  for (std::size_t j = 0; j < fp.rss.size(); ++j) out[j] = (fp.rss[j] - kMissingRss) / (kMaxRss - kMissingRss);
  return out;
}

namespace {

void fill_shadowing(BuildingSpec& b, std::uint64_t seed) {
  const PathLoss& pl = b.path_loss;
  b.shadowing = Matrix(b.rps.size(), b.aps.size());
  if (pl.shadow_sigma_db == 0.0) return;
  Rng rng = make_rng(seed, "shadowing");
  std::normal_distribution<double> normal(0.0, 1.0);
  if (pl.shadow_correlation_m <= 0.0) {
    for (double& v : b.shadowing.flat()) v = pl.shadow_sigma_db * normal(rng);
    return;
  }
  // Sum of random plane waves: zero-mean, variance sigma^2, smooth over
  // roughly the correlation length.
  constexpr int kWaves = 16;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double amp = pl.shadow_sigma_db * std::sqrt(2.0 / kWaves);
  for (std::size_t a = 0; a < b.aps.size(); ++a) {
    for (int w = 0; w < kWaves; ++w) {
      const double theta = 2.0 * std::numbers::pi * unit(rng);
      const double k = (0.5 + unit(rng)) / pl.shadow_correlation_m;
      const double phase = 2.0 * std::numbers::pi * unit(rng);
      for (std::size_t r = 0; r < b.rps.size(); ++r) {
        const Vec3& p = b.rps[r].coords;
        b.shadowing(r, a) += amp * std::cos(k * (std::cos(theta) * p.x + std::sin(theta) * p.y) + phase);
      }
    }
  }
}

}  // namespace

BuildingSpec generate_building(const BuildingParams& params, std::uint64_t seed) {
  std::size_t cols = params.grid_cols, rows = params.grid_rows, n_aps = params.ap_count;
  std::string name = "custom";
  switch (params.templ) {
    case BuildingTemplate::building1:
      cols = 30, rows = 2, n_aps = 172, name = "building1";
      break;
    case BuildingTemplate::building2:
      cols = 24, rows = 2, n_aps = 168, name = "building2";
      break;
    case BuildingTemplate::custom:
      break;
  }
  if (cols == 0 || rows == 0 || n_aps == 0) throw ConfigError("building dimensions must be positive");
  if (params.ap_margin_m < 0.0 || params.ap_height_max_m < params.ap_height_min_m)
    throw ConfigError("AP placement bounds are inconsistent");

  BuildingSpec b;
  b.name = name;
  b.path_loss = params.path_loss;
  b.detection_threshold_dbm = params.detection_threshold_dbm;
  // Grid order: along the corridor (x) first, then across it (y).
  for (std::size_t c = 0; c < cols; ++c)
    for (std::size_t r = 0; r < rows; ++r)
      b.rps.push_back({static_cast<int>(b.rps.size()), {static_cast<double>(c), static_cast<double>(r), 0.0}});

  Rng rng = make_rng(seed, "aps");
  std::uniform_real_distribution<double> ux(-params.ap_margin_m, static_cast<double>(cols - 1) + params.ap_margin_m);
  std::uniform_real_distribution<double> uy(-params.ap_margin_m, static_cast<double>(rows - 1) + params.ap_margin_m);
  std::uniform_real_distribution<double> uz(params.ap_height_min_m, params.ap_height_max_m);
  for (std::size_t a = 0; a < n_aps; ++a) {
    const double x = ux(rng), y = uy(rng), z = uz(rng);
    b.aps.push_back({x, y, z});
  }
  fill_shadowing(b, seed);
  return b;
}

std::vector<DeviceProfile> default_devices() {
  return {
      {"BLU", 0.0, 1.00, 3.0, 0.02, 0},
      {"HTC", -3.0, 0.97, 3.0, 0.03, 1},
      {"LG", 2.5, 1.03, 3.0, 0.03, 2},
      {"MOTO", -5.0, 0.95, 3.5, 0.04, 3},
      {"OP3", 4.0, 1.02, 3.0, 0.03, 4},
      {"S7", 5.0, 1.05, 3.5, 0.04, 5},
  };
}

void validate_devices(std::span<const DeviceProfile> devices) {
  if (devices.empty()) throw ConfigError("at least one device profile is required");
  for (std::size_t i = 0; i < devices.size(); ++i) {
    const auto& d = devices[i];
    if (d.acronym.empty() || d.acronym.find_first_of(",\n\r") != std::string::npos)
      throw ConfigError("device acronym must be non-empty and contain no commas or newlines");
    if (!(d.noise_std_db >= 0.0)) throw ConfigError("device " + d.acronym + ": noise_std_db must be >= 0");
    if (!(d.miss_probability >= 0.0 && d.miss_probability < 1.0))
      throw ConfigError("device " + d.acronym + ": miss_probability must lie in [0, 1)");
    if (!(d.gain_scale > 0.0)) throw ConfigError("device " + d.acronym + ": gain_scale must be positive");
    if (d.intro_time_index < 0) throw ConfigError("device " + d.acronym + ": intro_time_index must be >= 0");
    if (i > 0 && d.intro_time_index < devices[i - 1].intro_time_index)
      throw ConfigError("devices must be listed in order of intro_time_index");
    for (std::size_t j = 0; j < i; ++j)
      if (devices[j].acronym == d.acronym) throw ConfigError("duplicate device acronym " + d.acronym);
  }
}

DriftModel::DriftModel(const DriftParams& params, std::size_t ap_count, std::uint64_t seed) {
  if (params.global_offset_db.empty()) throw ConfigError("drift needs at least one time index");
  if (params.ap_walk_sigma_db < 0.0) throw ConfigError("drift ap_walk_sigma_db must be >= 0");
  global_ = params.global_offset_db;
  global_[0] = 0.0;
  walk_ = Matrix(global_.size(), ap_count);
  Rng rng = make_rng(seed, "drift");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t t = 1; t < global_.size(); ++t)
    for (std::size_t a = 0; a < ap_count; ++a) walk_(t, a) = walk_(t - 1, a) + params.ap_walk_sigma_db * normal(rng);
}

double DriftModel::offset(int time_index, std::size_t ap) const {
  if (time_index < 0 || static_cast<std::size_t>(time_index) >= global_.size())
    throw ConfigError("time index " + std::to_string(time_index) + " outside the drift horizon");
  if (ap >= walk_.cols()) throw ShapeError("AP index outside the drift model");
  return global_[time_index] + walk_(time_index, ap);
}

Fingerprint simulate_fingerprint(const BuildingSpec& building, const DeviceProfile& device, int rp_id,
                                 int time_index, const DriftModel& drift, Rng& rng) {
  if (rp_id < 0 || static_cast<std::size_t>(rp_id) >= building.rps.size())
    throw RegistryError("rp " + std::to_string(rp_id) + " is not part of " + building.name);
  if (time_index < device.intro_time_index)
    throw ConfigError("device " + device.acronym + " is not collecting before time " +
                      std::to_string(device.intro_time_index));
  const ReferencePoint& rp = building.rps[rp_id];
  const PathLoss& pl = building.path_loss;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Fingerprint fp;
  fp.device_id = device.acronym;
  fp.rp_id = rp_id;
  fp.coords = rp.coords;
  fp.time_index = time_index;
  fp.rss.resize(building.aps.size());
  for (std::size_t j = 0; j < building.aps.size(); ++j) {
    const double d = std::max(distance(rp.coords, building.aps[j]), 1.0);
    const double received = pl.p0_dbm - 10.0 * pl.exponent * std::log10(d) + building.shadowing(rp_id, j);
    // Draw both variates unconditionally so streams stay aligned across configs.
    const double n = noise(rng);
    const double u = unit(rng);
    const double raw = device.gain_scale * received + device.rss_bias_db + drift.offset(time_index, j) +
                       device.noise_std_db * n;
    double v = raw;
    if (raw < building.detection_threshold_dbm || u < device.miss_probability) v = kMissingRss;
    fp.rss[j] = std::clamp(v, kMissingRss, kMaxRss);
  }
  return fp;
}

std::map<int, int> partition_regions(std::span<const ReferencePoint> rps, std::size_t n_rp) {
  if (n_rp == 0) throw ConfigError("n_rp must be >= 1");
  if (n_rp > rps.size())
    throw ConfigError("n_rp " + std::to_string(n_rp) + " exceeds the " + std::to_string(rps.size()) + " RPs");
  std::vector<ReferencePoint> sorted(rps.begin(), rps.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const ReferencePoint& a, const ReferencePoint& b) {
    if (a.coords.x != b.coords.x) return a.coords.x < b.coords.x;
    if (a.coords.y != b.coords.y) return a.coords.y < b.coords.y;
    return a.coords.z < b.coords.z;
  });
  std::map<int, int> out;
  for (std::size_t i = 0; i < sorted.size(); ++i) out[sorted[i].rp_id] = static_cast<int>(i / n_rp);
  return out;
}

void assign_regions(Dataset& ds, const std::map<int, int>& partition) {
  for (auto& fp : ds.samples) {
    auto it = partition.find(fp.rp_id);
    if (it == partition.end()) throw RegistryError("rp " + std::to_string(fp.rp_id) + " missing from partition");
    fp.region_id = it->second;
  }
}

World generate_world(const WorldParams& params, std::uint64_t seed) {
  validate_devices(params.devices);
  if (params.samples_per_rp == 0) throw ConfigError("samples_per_rp must be >= 1");
  World w;
  w.building = generate_building(params.building, derive_seed(seed, "building"));
  w.devices = params.devices;
  const DriftModel drift(params.drift, w.building.ap_count(), derive_seed(seed, "drift"));
  const auto partition = partition_regions(w.building.rps, params.n_rp);

  w.dataset.ap_count = w.building.ap_count();
  for (std::size_t d = 0; d < w.devices.size(); ++d) {
    const DeviceProfile& dev = w.devices[d];
    for (const auto& rp : w.building.rps) {
      for (std::size_t s = 0; s < params.samples_per_rp; ++s) {
        Rng rng = make_rng(seed, "fingerprint",
                           {d, static_cast<std::uint64_t>(rp.rp_id), static_cast<std::uint64_t>(dev.intro_time_index), s});
        Fingerprint fp = simulate_fingerprint(w.building, dev, rp.rp_id, dev.intro_time_index, drift, rng);
        fp.region_id = partition.at(rp.rp_id);
        w.dataset.samples.push_back(std::move(fp));
      }
    }
  }
  return w;
}

std::vector<ReferencePoint> reference_points(const Dataset& ds) {
  std::map<int, Vec3> seen;
  for (const auto& fp : ds.samples) {
    auto [it, inserted] = seen.emplace(fp.rp_id, fp.coords);
    if (!inserted && !(it->second == fp.coords))
      throw DataError("rp " + std::to_string(fp.rp_id) + " appears with two different coordinates");
  }
  std::vector<ReferencePoint> out;
  for (const auto& [id, c] : seen) out.push_back({id, c});
  std::stable_sort(out.begin(), out.end(), [](const ReferencePoint& a, const ReferencePoint& b) {
    if (a.coords.x != b.coords.x) return a.coords.x < b.coords.x;
    if (a.coords.y != b.coords.y) return a.coords.y < b.coords.y;
    return a.coords.z < b.coords.z;
  });
  return out;
}

}  // namespace moelo::data
