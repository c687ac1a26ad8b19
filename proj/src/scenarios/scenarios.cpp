#include "moelo/scenarios/scenarios.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <utility>

#include "moelo/error.hpp"
#include "moelo/log.hpp"
#include "moelo/numkit/ops.hpp"

namespace moelo::scenarios {

using continual::IncrementMode;
using continual::ReplayBuffer;
using data::Dataset;
using numkit::Matrix;

const char* to_string(Track t) noexcept {
  switch (t) {
    case Track::dil_exclusive:
      return "DIL-Exclusive";
    case Track::cil_exclusive:
      return "CIL-Exclusive";
    case Track::cdil:
      return "CDIL";
  }
  return "?";
}

const char* short_name(Track t) noexcept {
  switch (t) {
    case Track::dil_exclusive:
      return "dil";
    case Track::cil_exclusive:
      return "cil";
    case Track::cdil:
      return "cdil";
  }
  return "?";
}

Track parse_track(std::string_view s) {
  if (s == "dil" || s == "DIL-Exclusive") return Track::dil_exclusive;
  if (s == "cil" || s == "CIL-Exclusive") return Track::cil_exclusive;
  if (s == "cdil" || s == "CDIL") return Track::cdil;
  throw ConfigError("unknown track '" + std::string(s) + "' (expected dil, cil or cdil)");
}

UnitType unit_type(Track t) noexcept { return t == Track::dil_exclusive ? UnitType::device : UnitType::region; }

const char* to_string(UnitType u) noexcept { return u == UnitType::device ? "device" : "region"; }

ScenarioPlan build_plan(Track track, const std::string& building, std::span<const model::ReferencePoint> rps,
                        std::span<const data::DeviceProfile> devices, std::size_t n_rp) {
  data::validate_devices(devices);
  const auto partition = data::partition_regions(rps, n_rp);
  ScenarioPlan plan;
  plan.track = track;
  plan.building = building;
  for (const auto& rp : rps) plan.region_rps[partition.at(rp.rp_id)].push_back(rp);

  std::vector<int> regions;
  for (const auto& [r, _] : plan.region_rps) regions.push_back(r);
  std::vector<std::string> names;
  for (const auto& d : devices) names.push_back(d.acronym);
  const std::size_t n_reg = regions.size(), n_dev = names.size();

  switch (track) {
    case Track::dil_exclusive:
      for (std::size_t k = 0; k < n_dev; ++k) {
        Increment inc;
        inc.mode = IncrementMode::DIL;
        inc.baseline = k == 0;
        inc.new_devices = {names[k]};
        inc.devices = {names[k]};
        inc.regions = regions;
        if (inc.baseline) inc.baseline_regions = regions;
        plan.steps.push_back(std::move(inc));
      }
      break;
    case Track::cil_exclusive:
      if (n_reg < 2) throw PlanError("CIL-Exclusive needs at least two regions");
      for (std::size_t k = 0; k < n_reg; ++k) {
        Increment inc;
        inc.mode = IncrementMode::CIL;
        inc.baseline = k == 0;
        if (k == 0) inc.new_devices = names;
        inc.devices = names;
        inc.regions = {regions[k]};
        if (inc.baseline) {
          inc.baseline_regions = {regions[k]};
        } else {
          inc.new_region = regions[k];
        }
        plan.steps.push_back(std::move(inc));
      }
      break;
    case Track::cdil: {
      if (n_reg < 2) throw PlanError("CDIL needs at least two regions");
      std::set<std::string> known;
      for (std::size_t k = 0; k < n_reg; ++k) {
        const std::string& dev = names[k * n_dev / n_reg];
        Increment inc;
        inc.baseline = k == 0;
        // Devices repeat when R > D; the step still trains as CDIL.
        inc.mode = IncrementMode::CDIL;
        if (known.insert(dev).second) inc.new_devices = {dev};
        inc.devices = {dev};
        inc.regions = {regions[k]};
        if (inc.baseline) {
          inc.baseline_regions = {regions[k]};
        } else {
          inc.new_region = regions[k];
        }
        plan.steps.push_back(std::move(inc));
      }
      break;
    }
  }
  return plan;
}

double localization_error(const Vec3& pred, const Vec3& truth) { return distance(pred, truth); }

Forgetting forgetting_metrics(const MetricLog& log) {
  if (log.rows.empty()) throw DataError("forgetting needs at least one evaluation");
  struct History {
    double best = 0.0;
    double current = 0.0;
    std::size_t last_step = 0;
    bool seen = false;
  };
  std::map<std::string, History> units;
  for (const auto& row : log.rows) {
    History& h = units[row.unit_id];
    if (!h.seen) {
      h = {row.le_mean, row.le_mean, row.step, true};
      continue;
    }
    if (row.step < h.last_step) throw DataError("metric log rows are not in step order");
    h.best = std::min(h.best, row.le_mean);
    h.current = row.le_mean;
    h.last_step = row.step;
  }
  Forgetting f;
  double sum = 0.0;
  for (const auto& [id, h] : units) {
    f.per_unit[id] = h.current - h.best;
    sum += h.current - h.best;
  }
  f.average = sum / static_cast<double>(units.size());
  return f;
}

double final_mean_le(const MetricLog& log) {
  if (log.rows.empty()) throw DataError("empty metric log");
  const std::size_t last = log.rows.back().step;
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : log.rows)
    if (r.step == last) sum += r.le_mean, ++n;
  return sum / static_cast<double>(n);
}

namespace {

using Pair = std::pair<std::string, int>;
using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

Dataset select(const Dataset& ds, std::span<const std::string> devices, std::span<const int> regions) {
  Dataset out{ds.ap_count, {}};
  for (const auto& fp : ds.samples) {
    if (std::find(devices.begin(), devices.end(), fp.device_id) == devices.end()) continue;
    if (std::find(regions.begin(), regions.end(), fp.region_id) == regions.end()) continue;
    out.samples.push_back(fp);
  }
  return out;
}

struct EvalState {
  std::set<Pair> seen;
  std::vector<std::string> units;  // first-seen order
};

void note_step(EvalState& st, const Increment& inc, UnitType ut) {
  for (const auto& d : inc.devices)
    for (int r : inc.regions) st.seen.insert({d, r});
  if (ut == UnitType::device) {
    for (const auto& d : inc.devices)
      if (std::find(st.units.begin(), st.units.end(), d) == st.units.end()) st.units.push_back(d);
  } else {
    for (int r : inc.regions) {
      const auto id = std::to_string(r);
      if (std::find(st.units.begin(), st.units.end(), id) == st.units.end()) st.units.push_back(id);
    }
  }
}

// Appends one row per seen unit; `predict` maps a test slice to coordinates.
template <typename Predict>
void evaluate_step(MetricLog& log, std::size_t step, const char* mode, UnitType ut, const EvalState& st,
                   const Dataset& test, Predict&& predict) {
  Dataset pool{test.ap_count, {}};
  for (const auto& fp : test.samples)
    if (st.seen.count({fp.device_id, fp.region_id})) pool.samples.push_back(fp);
  if (pool.samples.empty()) throw DataError("no held-out data for the units seen at step " + std::to_string(step));
  const std::vector<Vec3> pred = predict(pool);

  double pooled = 0.0;
  for (std::size_t i = 0; i < pool.samples.size(); ++i) pooled += localization_error(pred[i], pool.samples[i].coords);
  log.seen_mean.push_back(pooled / static_cast<double>(pool.samples.size()));

  for (const auto& unit : st.units) {
    double sum = 0.0, worst = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pool.samples.size(); ++i) {
      const auto& fp = pool.samples[i];
      const bool match = ut == UnitType::device ? fp.device_id == unit : std::to_string(fp.region_id) == unit;
      if (!match) continue;
      const double le = localization_error(pred[i], fp.coords);
      sum += le;
      worst = std::max(worst, le);
      ++n;
    }
    if (n == 0) throw DataError("no held-out data for " + std::string(to_string(ut)) + " " + unit);
    log.rows.push_back({step, mode, ut, unit, sum / static_cast<double>(n), worst, n});
  }
}

std::vector<continual::RegionSpec> region_specs(const ScenarioPlan& plan, std::span<const int> regions) {
  std::vector<continual::RegionSpec> out;
  for (int r : regions) {
    auto it = plan.region_rps.find(r);
    if (it == plan.region_rps.end()) throw PlanError("region " + std::to_string(r) + " is not in the plan");
    out.push_back({r, it->second});
  }
  return out;
}

ScenarioOptions resolve(const ScenarioPlan& plan, const Dataset& train, ScenarioOptions o) {
  if (o.model.input_dim == 0) o.model.input_dim = train.ap_count;
  if (o.model.r_max == 0) o.model.r_max = std::max<std::size_t>(plan.region_rps.size(), 2);
  if (o.model.r_max < plan.region_rps.size())
    throw ConfigError("r_max " + std::to_string(o.model.r_max) + " is below the plan's " +
                      std::to_string(plan.region_rps.size()) + " regions");
  return o;
}

}  // namespace

ScenarioResult run_scenario(const ScenarioPlan& plan, const Dataset& train, const Dataset& test,
                            const ScenarioOptions& options, std::uint64_t seed) {
  const ScenarioOptions opts = resolve(plan, train, options);
  model::ModelConfig mc = opts.model;
  mc.seed = derive_seed(seed, "model");
  ScenarioResult res{{}, model::MoEModel::create(mc), ReplayBuffer(opts.replay_capacity), {}, {}};
  const UnitType ut = unit_type(plan.track);
  EvalState st;

  for (std::size_t k = 0; k < plan.steps.size(); ++k) {
    const Increment& inc = plan.steps[k];
    const Dataset slice = select(train, inc.devices, inc.regions);
    if (slice.samples.empty()) throw DataError("step " + std::to_string(k) + " selects no training data");

    continual::TrainPlan tp;
    if (inc.baseline) {
      tp = continual::plan_baseline(region_specs(plan, inc.baseline_regions));
    } else {
      tp = continual::plan_increment(inc.mode, inc.new_region.has_value(), opts.train.cil_train_gate);
      if (inc.new_region) tp.new_regions = region_specs(plan, std::vector<int>{*inc.new_region});
    }
    continual::TrainConfig tc = opts.train;
    tc.seed = derive_seed(seed, "train", {k});

    const auto t0 = Clock::now();
    res.reports.push_back(continual::train_increment(res.model, tp, slice, res.buffer, tc));
    continual::update_replay(res.buffer, res.model, slice);
    StepTiming timing{ms_since(t0), 0.0};

    note_step(st, inc, ut);
    const auto t1 = Clock::now();
    evaluate_step(res.log, k, continual::to_string(inc.mode), ut, st, test, [&](const Dataset& pool) {
      const auto preds = model::predict_batch(res.model, data::to_features(pool));
      std::vector<Vec3> out;
      out.reserve(preds.size());
      for (const auto& p : preds) out.push_back(p.coords);
      return out;
    });
    timing.eval_ms = ms_since(t1);
    res.timings.push_back(timing);
    log::info(std::string(to_string(plan.track)) + " step " + std::to_string(k) + " (" +
              continual::to_string(inc.mode) + ") seen-mean LE " + std::to_string(res.log.seen_mean.back()) + " m");
  }
  return res;
}

// ---------------------------------------------------------------------------
// Naive sequential fine-tuning

namespace {

struct NaiveModel {
  numkit::Mlp encoder;
  numkit::Mlp head;  // latent -> hidden -> |C|
  model::ClassRegistry registry;
  std::uint64_t seed = 0;
  bool has_head = false;
};

void grow_head(NaiveModel& m, const model::ModelConfig& mc, std::size_t new_classes, std::size_t tag) {
  const std::size_t total = m.registry.num_classes();
  if (!m.has_head) {
    m.head = numkit::Mlp::build({mc.latent_dim, mc.expert_hidden, total}, numkit::Activation::identity,
                                mc.expert_dropout, derive_seed(m.seed, "naive-head"));
    m.has_head = true;
    return;
  }
  numkit::DenseLayer& out = m.head.layers.back();
  const std::size_t old = out.out_dim();
  const auto fresh = numkit::DenseLayer::init(out.in_dim(), new_classes, numkit::Activation::identity,
                                              derive_seed(m.seed, "naive-head", {tag}));
  Matrix w(out.in_dim(), old + new_classes);
  for (std::size_t r = 0; r < out.in_dim(); ++r) {
    for (std::size_t c = 0; c < old; ++c) w(r, c) = out.weights(r, c);
    for (std::size_t c = 0; c < new_classes; ++c) w(r, old + c) = fresh.weights(r, c);
  }
  out.weights = std::move(w);
  out.bias.resize(old + new_classes, 0.0);
}

void train_naive(NaiveModel& m, const continual::LabeledSet& set, const continual::TrainConfig& cfg) {
  struct Group {
    numkit::Mlp* net;
    numkit::AdamState state;
  };
  std::vector<Group> groups;
  for (numkit::Mlp* net : {&m.encoder, &m.head}) {
    auto p = net->params();
    groups.push_back({net, numkit::AdamState::for_params(p, cfg.adam)});
  }
  std::vector<std::size_t> order(set.labels.size());
  std::size_t steps = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(cfg.seed, "epoch", {epoch});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Matrix x = set.x.select_rows(idx);
      numkit::MlpTape enc_tape, head_tape;
      const Matrix z = numkit::mlp_forward(m.encoder, x, true, 0, enc_tape);
      Matrix p = numkit::mlp_forward(m.head, z, true, derive_seed(cfg.seed, "step", {steps}), head_tape);
      const double inv_n = 1.0 / static_cast<double>(idx.size());
      for (std::size_t i = 0; i < p.rows(); ++i) {
        numkit::softmax_inplace(p.row(i));
        for (double& v : p.row(i)) v *= inv_n;
        p(i, set.labels[idx[i]]) -= inv_n;
      }
      auto hb = numkit::mlp_backward(m.head, head_tape, p, true, true);
      auto eb = numkit::mlp_backward(m.encoder, enc_tape, hb.input_grad, true, false);
      {
        auto params = m.encoder.params();
        auto g = std::as_const(eb.grads).tensors();
        numkit::adam_step(params, g, groups[0].state);
      }
      {
        auto params = m.head.params();
        auto g = std::as_const(hb.grads).tensors();
        numkit::adam_step(params, g, groups[1].state);
      }
      ++steps;
    }
  }
}

}  // namespace

NaiveResult naive_baseline_run(const ScenarioPlan& plan, const Dataset& train, const Dataset& test,
                               const ScenarioOptions& options, std::uint64_t seed) {
  const ScenarioOptions opts = resolve(plan, train, options);
  const model::ModelConfig& mc = opts.model;
  NaiveModel m;
  m.seed = derive_seed(seed, "naive");
  m.encoder = numkit::Mlp::build({mc.input_dim, mc.encoder_hidden, mc.latent_dim}, numkit::Activation::relu, 0.0,
                                 derive_seed(m.seed, "encoder"));
  NaiveResult res;
  const UnitType ut = unit_type(plan.track);
  EvalState st;

  for (std::size_t k = 0; k < plan.steps.size(); ++k) {
    const Increment& inc = plan.steps[k];
    const Dataset slice = select(train, inc.devices, inc.regions);
    if (slice.samples.empty()) throw DataError("step " + std::to_string(k) + " selects no training data");

    std::vector<int> added = inc.baseline_regions;
    if (inc.new_region) added.push_back(*inc.new_region);
    std::size_t new_classes = 0;
    for (const auto& spec : region_specs(plan, added)) {
      m.registry.add_region(spec.region_id, spec.rps);
      new_classes += spec.rps.size();
    }
    if (new_classes > 0 || !m.has_head) grow_head(m, mc, new_classes, k);
    res.head_width.push_back(m.head.out_dim());

    continual::LabeledSet set;
    set.x = data::to_features(slice);
    for (const auto& fp : slice.samples) set.labels.push_back(m.registry.global_class(fp.rp_id));
    continual::TrainConfig tc = opts.train;
    tc.seed = derive_seed(seed, "naive-train", {k});
    train_naive(m, set, tc);

    note_step(st, inc, ut);
    evaluate_step(res.log, k, continual::to_string(inc.mode), ut, st, test, [&](const Dataset& pool) {
      const Matrix logits = numkit::mlp_forward(m.head, numkit::mlp_forward(m.encoder, data::to_features(pool), false, 0),
                                                false, 0);
      std::vector<Vec3> out;
      for (std::size_t i = 0; i < logits.rows(); ++i)
        out.push_back(m.registry.class_info(numkit::argmax(logits.row(i))).coords);
      return out;
    });
  }
  return res;
}

std::vector<SweepRow> granularity_sweep(const Dataset& dataset, std::span<const data::DeviceProfile> devices,
                                        std::span<const std::size_t> n_rp_values, Track track,
                                        const ScenarioOptions& options, double test_fraction, std::uint64_t seed,
                                        const std::string& building) {
  const auto rps = data::reference_points(dataset);
  std::size_t max_regions = 0;
  for (std::size_t n : n_rp_values) {
    if (n == 0 || n > rps.size()) throw ConfigError("n_rp " + std::to_string(n) + " is outside [1, RP count]");
    max_regions = std::max(max_regions, (rps.size() + n - 1) / n);
  }
  std::vector<SweepRow> rows;
  for (std::size_t n : n_rp_values) {
    Dataset ds = dataset;
    data::assign_regions(ds, data::partition_regions(rps, n));
    auto [train, test] = data::split_train_test(ds, test_fraction, derive_seed(seed, "split"));
    const ScenarioPlan plan = build_plan(track, building, rps, devices, n);
    ScenarioOptions o = options;
    o.model.r_max = std::max(o.model.r_max, max_regions);
    const auto result = run_scenario(plan, train, test, o, seed);
    rows.push_back({n, plan.region_rps.size(), final_mean_le(result.log), forgetting_metrics(result.log).average});
    log::info("sweep n_rp=" + std::to_string(n) + " final mean LE " + std::to_string(rows.back().final_mean_le));
  }
  return rows;
}

void write_metrics_csv(const MetricLog& log, std::ostream& out) {
  auto num = [](double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
  };
  out << "step,mode,unit_type,unit_id,le_mean_m,le_worst_m,n_test\n";
  for (const auto& r : log.rows)
    out << r.step << ',' << r.mode << ',' << to_string(r.unit_type) << ',' << r.unit_id << ',' << num(r.le_mean) << ','
        << num(r.le_worst) << ',' << r.n_test << '\n';
}

void save_metrics_csv(const MetricLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_metrics_csv(log, out);
}

nlohmann::json experiment_checkpoint(const ScenarioPlan& plan, std::size_t completed_steps,
                                     const model::MoEModel& model, const ReplayBuffer& buffer) {
  return {{"format", "moelo-experiment/1"},
          {"track", to_string(plan.track)},
          {"building", plan.building},
          {"completed_steps", completed_steps},
          {"model", model::to_json(model)},
          {"replay", buffer.to_json()}};
}

}  // namespace moelo::scenarios
