#include "moelo/cli/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "moelo/error.hpp"

namespace moelo::cli {

namespace {

// Reads typed keys from one table and remembers which ones were used so the
// rest can be reported as unknown.
class Section {
 public:
  Section(const toml::table* table, std::string prefix) : table_(table), prefix_(std::move(prefix)) {}

  std::string key_name(std::string_view key) const {
    return prefix_.empty() ? std::string(key) : prefix_ + "." + std::string(key);
  }

  const toml::node* find(std::string_view key) {
    used_.insert(std::string(key));
    return table_ ? table_->get(key) : nullptr;
  }

  void get(std::string_view key, double& dst) {
    if (const auto* n = find(key)) {
      if (auto v = n->value_exact<double>()) {
        dst = *v;
      } else if (auto i = n->value_exact<std::int64_t>()) {
        dst = static_cast<double>(*i);
      } else {
        fail(key, "a number");
      }
    }
  }

  void get(std::string_view key, std::size_t& dst) {
    if (const auto* n = find(key)) {
      auto v = n->value_exact<std::int64_t>();
      if (!v || *v < 0) fail(key, "a non-negative integer");
      dst = static_cast<std::size_t>(*v);
    }
  }

  void get(std::string_view key, int& dst) {
    if (const auto* n = find(key)) {
      auto v = n->value_exact<std::int64_t>();
      if (!v) fail(key, "an integer");
      dst = static_cast<int>(*v);
    }
  }

  void get_seed(std::string_view key, std::uint64_t& dst) {
    if (const auto* n = find(key)) {
      auto v = n->value_exact<std::int64_t>();
      if (!v || *v < 0) fail(key, "a non-negative integer");
      dst = static_cast<std::uint64_t>(*v);
    }
  }

  void get(std::string_view key, bool& dst) {
    if (const auto* n = find(key)) {
      auto v = n->value_exact<bool>();
      if (!v) fail(key, "a boolean");
      dst = *v;
    }
  }

  void get(std::string_view key, std::string& dst) {
    if (const auto* n = find(key)) {
      auto v = n->value_exact<std::string>();
      if (!v) fail(key, "a string");
      dst = *v;
    }
  }

  void get(std::string_view key, std::vector<double>& dst) {
    if (const auto* n = find(key)) {
      const auto* arr = n->as_array();
      if (!arr) fail(key, "an array of numbers");
      std::vector<double> out;
      for (const auto& e : *arr) {
        if (auto v = e.value_exact<double>()) {
          out.push_back(*v);
        } else if (auto i = e.value_exact<std::int64_t>()) {
          out.push_back(static_cast<double>(*i));
        } else {
          fail(key, "an array of numbers");
        }
      }
      dst = std::move(out);
    }
  }

  void get(std::string_view key, std::vector<std::size_t>& dst) {
    if (const auto* n = find(key)) {
      const auto* arr = n->as_array();
      if (!arr) fail(key, "an array of non-negative integers");
      std::vector<std::size_t> out;
      for (const auto& e : *arr) {
        auto v = e.value_exact<std::int64_t>();
        if (!v || *v < 0) fail(key, "an array of non-negative integers");
        out.push_back(static_cast<std::size_t>(*v));
      }
      dst = std::move(out);
    }
  }

  const toml::table* table(std::string_view key) {
    const auto* n = find(key);
    if (!n) return nullptr;
    if (!n->is_table()) fail(key, "a table");
    return n->as_table();
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [k, _] : *table_)
      if (!used_.count(std::string(k.str()))) throw ConfigError("unknown config key '" + key_name(k.str()) + "'");
  }

  [[noreturn]] void fail(std::string_view key, const char* what) const {
    throw ConfigError("config key '" + key_name(key) + "' must be " + what);
  }

 private:
  const toml::table* table_;
  std::string prefix_;
  std::set<std::string> used_;
};

void read_building(Section s, data::BuildingParams& b) {
  std::string templ;
  s.get("template", templ);
  if (!templ.empty()) {
    try {
      b.templ = parse_building(templ);
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + s.key_name("template") + "': " + e.what());
    }
  }
  s.get("grid_cols", b.grid_cols);
  s.get("grid_rows", b.grid_rows);
  s.get("ap_count", b.ap_count);
  s.get("ap_margin_m", b.ap_margin_m);
  s.get("ap_height_min_m", b.ap_height_min_m);
  s.get("ap_height_max_m", b.ap_height_max_m);
  s.get("p0_dbm", b.path_loss.p0_dbm);
  s.get("exponent", b.path_loss.exponent);
  s.get("shadow_sigma_db", b.path_loss.shadow_sigma_db);
  s.get("shadow_correlation_m", b.path_loss.shadow_correlation_m);
  s.get("detection_threshold_dbm", b.detection_threshold_dbm);
  s.finish();
}

void read_devices(const toml::node* node, std::vector<data::DeviceProfile>& out) {
  const auto* arr = node->as_array();
  if (!arr || !arr->is_array_of_tables()) throw ConfigError("config key 'devices' must be an array of tables");
  std::vector<data::DeviceProfile> devices;
  for (std::size_t i = 0; i < arr->size(); ++i) {
    Section s(arr->get(i)->as_table(), "devices[" + std::to_string(i) + "]");
    data::DeviceProfile d;
    s.get("acronym", d.acronym);
    s.get("rss_bias_db", d.rss_bias_db);
    s.get("gain_scale", d.gain_scale);
    s.get("noise_std_db", d.noise_std_db);
    s.get("miss_probability", d.miss_probability);
    s.get("intro_time_index", d.intro_time_index);
    s.finish();
    if (d.acronym.empty()) throw ConfigError("config key '" + s.key_name("acronym") + "' is required");
    devices.push_back(std::move(d));
  }
  out = std::move(devices);
}

void read_model(Section s, model::ModelConfig& m) {
  s.get("encoder_hidden", m.encoder_hidden);
  s.get("latent_dim", m.latent_dim);
  s.get("expert_hidden", m.expert_hidden);
  s.get("expert_dropout", m.expert_dropout);
  s.get("r_max", m.r_max);
  std::string target;
  s.get("dr_target", target);
  if (target == "paper") {
    m.dr_target = model::DrTarget::paper;
  } else if (target == "unity") {
    m.dr_target = model::DrTarget::unity;
  } else if (!target.empty()) {
    throw ConfigError("config key '" + s.key_name("dr_target") + "' must be \"paper\" or \"unity\"");
  }
  s.get("ce_weight", m.ce_weight);
  s.get("dr_weight", m.dr_weight);
  s.finish();
}

void read_train(Section s, scenarios::ScenarioOptions& o) {
  auto& t = o.train;
  s.get("batch_size", t.batch_size);
  s.get("epochs", t.epochs);
  s.get("replay_fraction", t.replay_fraction);
  s.get("replay_capacity", o.replay_capacity);
  s.get("learning_rate", t.adam.learning_rate);
  s.get("beta1", t.adam.beta1);
  s.get("beta2", t.adam.beta2);
  s.get("epsilon", t.adam.epsilon);
  s.get("cil_train_gate", t.cil_train_gate);
  s.finish();
}

}  // namespace

data::BuildingTemplate parse_building(std::string_view name) {
  if (name == "building1") return data::BuildingTemplate::building1;
  if (name == "building2") return data::BuildingTemplate::building2;
  if (name == "custom") return data::BuildingTemplate::custom;
  throw ConfigError("unknown building '" + std::string(name) + "' (expected building1, building2 or custom)");
}

std::vector<scenarios::Track> RunConfig::tracks() const {
  if (track == "all") return {scenarios::Track::dil_exclusive, scenarios::Track::cil_exclusive, scenarios::Track::cdil};
  return {scenarios::parse_track(track)};
}

std::string RunConfig::building_name() const {
  switch (world.building.templ) {
    case data::BuildingTemplate::building1:
      return "building1";
    case data::BuildingTemplate::building2:
      return "building2";
    case data::BuildingTemplate::custom:
      return "custom";
  }
  return "custom";
}

void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError("config key '" + key + "' " + what);
  };
  need(track == "all" || track == "dil" || track == "cil" || track == "cdil", "track", "must be dil, cil, cdil or all");
  need(sweep_track == "dil" || sweep_track == "cil" || sweep_track == "cdil", "sweep.track",
       "must be dil, cil or cdil");
  need(test_fraction > 0.0 && test_fraction < 1.0, "test_fraction", "must lie in (0, 1)");
  need(!out.empty(), "out", "must not be empty");

  const auto& b = world.building;
  need(b.ap_margin_m >= 0.0, "building.ap_margin_m", "must be >= 0");
  need(b.ap_height_min_m <= b.ap_height_max_m, "building.ap_height_min_m", "must not exceed ap_height_max_m");
  need(b.path_loss.exponent > 0.0, "building.exponent", "must be positive");
  need(b.path_loss.shadow_sigma_db >= 0.0, "building.shadow_sigma_db", "must be >= 0");
  need(b.path_loss.shadow_correlation_m >= 0.0, "building.shadow_correlation_m", "must be >= 0");
  need(b.detection_threshold_dbm >= -100.0 && b.detection_threshold_dbm <= 0.0, "building.detection_threshold_dbm",
       "must lie in [-100, 0]");
  if (b.templ == data::BuildingTemplate::custom) {
    need(b.grid_cols > 0, "building.grid_cols", "must be positive");
    need(b.grid_rows > 0, "building.grid_rows", "must be positive");
    need(b.ap_count > 0, "building.ap_count", "must be positive");
  }
  try {
    data::validate_devices(world.devices);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config key 'devices': ") + e.what());
  }
  need(world.drift.ap_walk_sigma_db >= 0.0, "drift.ap_walk_sigma_db", "must be >= 0");
  need(!world.drift.global_offset_db.empty() && world.drift.global_offset_db.front() == 0.0,
       "drift.global_offset_db", "must start with 0");
  int last_intro = 0;
  for (const auto& d : world.devices) last_intro = std::max(last_intro, d.intro_time_index);
  need(static_cast<std::size_t>(last_intro) < world.drift.global_offset_db.size(), "drift.global_offset_db",
       "must cover every device intro_time_index");
  need(world.samples_per_rp >= 2, "data.samples_per_rp", "must be >= 2 so every pair lands in both splits");
  need(world.n_rp >= 1, "data.n_rp", "must be >= 1");

  const auto& m = options.model;
  need(m.encoder_hidden > 0, "model.encoder_hidden", "must be positive");
  need(m.latent_dim > 0, "model.latent_dim", "must be positive");
  need(m.expert_hidden > 0, "model.expert_hidden", "must be positive");
  need(m.expert_dropout >= 0.0 && m.expert_dropout < 1.0, "model.expert_dropout", "must lie in [0, 1)");
  need(m.r_max == 0 || (m.r_max >= 2 && m.r_max <= m.latent_dim), "model.r_max",
       "must be 0 (automatic) or within [2, latent_dim]");
  need(m.ce_weight >= 0.0, "model.ce_weight", "must be >= 0");
  need(m.dr_weight >= 0.0, "model.dr_weight", "must be >= 0");

  need(options.replay_capacity >= 1, "train.replay_capacity", "must be >= 1");
  need(options.train.epochs >= 1, "train.epochs", "must be >= 1");
  try {
    options.train.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config section 'train': ") + e.what());
  }
  need(!sweep_n_rp.empty(), "sweep.n_rp", "must list at least one value");
  for (std::size_t n : sweep_n_rp) need(n >= 1, "sweep.n_rp", "values must be >= 1");
}

RunConfig parse_config(std::string_view text, std::string_view source) {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ":" << e.source().begin.line << ": " << e.description();
    throw ConfigError(msg.str());
  }

  RunConfig cfg;
  Section top(&root, "");
  top.get_seed("seed", cfg.seed);
  top.get("track", cfg.track);
  std::string out;
  top.get("out", out);
  if (!out.empty()) cfg.out = out;
  top.get("test_fraction", cfg.test_fraction);
  top.get("naive_baseline", cfg.naive_baseline);

  if (const auto* t = top.table("building")) read_building(Section(t, "building"), cfg.world.building);
  if (const auto* n = top.find("devices")) read_devices(n, cfg.world.devices);
  if (const auto* t = top.table("drift")) {
    Section s(t, "drift");
    s.get("global_offset_db", cfg.world.drift.global_offset_db);
    s.get("ap_walk_sigma_db", cfg.world.drift.ap_walk_sigma_db);
    s.finish();
  }
  if (const auto* t = top.table("data")) {
    Section s(t, "data");
    s.get("samples_per_rp", cfg.world.samples_per_rp);
    s.get("n_rp", cfg.world.n_rp);
    std::string path;
    s.get("dataset", path);
    if (!path.empty()) cfg.dataset = path;
    s.finish();
  }
  if (const auto* t = top.table("model")) read_model(Section(t, "model"), cfg.options.model);
  if (const auto* t = top.table("train")) read_train(Section(t, "train"), cfg.options);
  if (const auto* t = top.table("sweep")) {
    Section s(t, "sweep");
    s.get("n_rp", cfg.sweep_n_rp);
    s.get("track", cfg.sweep_track);
    s.finish();
  }
  top.finish();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.string());
}

}  // namespace moelo::cli
