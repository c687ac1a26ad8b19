#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "moelo/data/fingerprint.hpp"
#include "moelo/scenarios/scenarios.hpp"

namespace moelo::cli {

// Everything a subcommand needs. Loaded from TOML, then patched by flags.
struct RunConfig {
  RunConfig() { options.model.r_max = 0; }  // 0: sized from the partition

  std::uint64_t seed = 7;
  std::string track = "all";  // dil | cil | cdil | all
  std::filesystem::path out = "out";
  double test_fraction = 0.2;
  bool naive_baseline = true;

  data::WorldParams world;
  std::optional<std::filesystem::path> dataset;  // CSV instead of the synthetic world

  scenarios::ScenarioOptions options;

  std::vector<std::size_t> sweep_n_rp = {5, 10, 15, 20};
  std::string sweep_track = "cdil";

  std::vector<scenarios::Track> tracks() const;
  std::string building_name() const;
  // Throws ConfigError naming the offending key.
  void validate() const;
};

// Unknown keys and type mismatches throw ConfigError naming the key.
RunConfig parse_config(std::string_view toml_text, std::string_view source = "config");
RunConfig load_config(const std::filesystem::path& path);

data::BuildingTemplate parse_building(std::string_view name);

}  // namespace moelo::cli
