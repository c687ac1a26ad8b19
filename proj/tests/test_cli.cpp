#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "moelo/cli/app.hpp"
#include "moelo/cli/config.hpp"
#include "moelo/error.hpp"

using namespace moelo;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "moelo");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("moelo_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

constexpr const char* kSmallConfig = R"(
track = "cdil"
naive_baseline = false

[[devices]]
acronym = "BLU"
noise_std_db = 3.0
intro_time_index = 0

[[devices]]
acronym = "HTC"
rss_bias_db = -3.0
noise_std_db = 3.0
intro_time_index = 1

[data]
samples_per_rp = 5
n_rp = 20

[model]
encoder_hidden = 32
latent_dim = 16
expert_hidden = 32

[train]
epochs = 3
)";

fs::path write_config(const TempDir& dir, const std::string& text) {
  const fs::path p = dir.path() / "run.toml";
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

}  // namespace

TEST_CASE("config parsing") {
  const auto cfg = cli::parse_config(kSmallConfig);
  CHECK(cfg.track == "cdil");
  CHECK(cfg.world.devices.size() == 2);
  CHECK(cfg.world.devices[1].rss_bias_db == -3.0);
  CHECK(cfg.world.samples_per_rp == 5);
  CHECK(cfg.options.model.latent_dim == 16);
  CHECK(cfg.options.train.epochs == 3);
  CHECK(cfg.seed == 7);

  const auto defaults = cli::parse_config("");
  CHECK(defaults.tracks().size() == 3);
  CHECK(defaults.options.train.batch_size == 64);
  CHECK(defaults.options.train.replay_fraction == 0.25);
  CHECK(defaults.options.train.adam.learning_rate == 1e-3);

  try {
    cli::parse_config("[model]\nfoo = 1\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("model.foo") != std::string::npos);
  }
  CHECK_THROWS_AS(cli::parse_config("[train]\nepochs = \"many\"\n"), ConfigError);
  // Range checks run once flags have been applied.
  CHECK_THROWS_AS(cli::parse_config("test_fraction = 1.5\n").validate(), ConfigError);
  CHECK_THROWS_AS(cli::parse_config("track = \"sideways\"\n").validate(), ConfigError);
  CHECK_THROWS_AS(cli::parse_config("[train]\nreplay_fraction = 1.0\n").validate(), ConfigError);
  CHECK_NOTHROW(cli::parse_config(kSmallConfig).validate());
  CHECK_THROWS_AS(cli::parse_config("seed = [\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_building("building9"), ConfigError);
}

TEST_CASE("the shipped example config parses to the defaults") {
  const auto shipped = cli::load_config(fs::path(MOELO_SOURCE_DIR) / "configs" / "run.toml");
  const cli::RunConfig defaults;
  CHECK(shipped.seed == defaults.seed);
  CHECK(shipped.world.devices == defaults.world.devices);
  CHECK(shipped.world.samples_per_rp == defaults.world.samples_per_rp);
  CHECK(shipped.options.model == defaults.options.model);
  CHECK(shipped.sweep_n_rp == defaults.sweep_n_rp);
}

TEST_CASE("exit codes") {
  CHECK(invoke({"--help"}).code == 0);
  CHECK(invoke({"run", "--help"}).code == 0);
  const auto bad = invoke({"frobnicate"});
  CHECK(bad.code == 2);
  CHECK_FALSE(bad.err.empty());
  CHECK(invoke({}).code == 2);
  CHECK(invoke({"run", "--track", "sideways"}).code == 2);
  CHECK(invoke({"run", "--config", "/nonexistent.toml"}).code == 2);

  TempDir dir("codes");
  const auto cfg = write_config(dir, "[model]\nfoo = 1\n");
  const auto r = invoke({"run", "--config", cfg.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("model.foo") != std::string::npos);
}

TEST_CASE("check subcommand") {
  const auto r = invoke({"check"});
  CHECK(r.code == 0);
  CHECK(r.out.find("PASS") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);
}

TEST_CASE("run writes reproducible outputs") {
  TempDir dir("run");
  const auto cfg = write_config(dir, kSmallConfig);
  const fs::path a = dir.path() / "a", b = dir.path() / "b";
  const auto ra = invoke({"run", "--config", cfg.string(), "--seed", "7", "--out", a.string()});
  REQUIRE_MESSAGE(ra.code == 0, ra.err);
  const auto rb = invoke({"run", "--config", cfg.string(), "--seed", "7", "--out", b.string()});
  REQUIRE(rb.code == 0);

  for (const char* f : {"metrics.csv", "summary.json", "checkpoint.json"}) CHECK(fs::exists(a / f));
  CHECK_FALSE(fs::exists(a / "baseline_metrics.csv"));
  const std::string metrics = slurp(a / "metrics.csv");
  CHECK(metrics.rfind("step,mode,unit_type,unit_id,le_mean_m,le_worst_m,n_test\n", 0) == 0);
  CHECK(metrics == slurp(b / "metrics.csv"));
  CHECK(slurp(a / "checkpoint.json") == slurp(b / "checkpoint.json"));

  const auto summary = nlohmann::json::parse(slurp(a / "summary.json"));
  const auto& t = summary["tracks"]["CDIL"];
  CHECK(t["increments"].size() == 3);
  CHECK(t["average_forgetting_m"].get<double>() >= 0.0);
  CHECK(t["param_count"]["caveat"].is_string());

  const auto rc = invoke({"run", "--config", cfg.string(), "--seed", "8", "--out", (dir.path() / "c").string()});
  REQUIRE(rc.code == 0);
  CHECK(slurp(dir.path() / "c" / "metrics.csv") != metrics);

  // eval on the held-out split of the same world
  const auto re = invoke({"eval", "--config", cfg.string(), "--seed", "7", "--checkpoint", (a / "checkpoint.json").string(),
                       "--out", (dir.path() / "e").string()});
  REQUIRE_MESSAGE(re.code == 0, re.err);
  const auto ev = nlohmann::json::parse(slurp(dir.path() / "e" / "eval.json"));
  CHECK(ev["samples"].get<std::size_t>() > 0);
  CHECK(ev["skipped_unknown_rp"] == 0);
}

TEST_CASE("gen-data and sweep") {
  TempDir dir("gen");
  const auto cfg = write_config(dir, kSmallConfig);
  const auto g = invoke({"gen-data", "--config", cfg.string(), "--out", dir.path().string()});
  REQUIRE_MESSAGE(g.code == 0, g.err);
  CHECK(fs::exists(dir.path() / "dataset.csv"));

  const auto s = invoke({"sweep", "--config", cfg.string(), "--out", (dir.path() / "s").string(), "--n-rp", "15"});
  REQUIRE_MESSAGE(s.code == 0, s.err);
  const auto sw = nlohmann::json::parse(slurp(dir.path() / "s" / "sweep.json"));
  REQUIRE(sw["rows"].size() == 1);
  CHECK(sw["rows"][0]["regions"] == 4);
  CHECK(invoke({"sweep", "--config", cfg.string(), "--track", "all"}).code == 2);
}
