#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "moelo/error.hpp"
#include "moelo/scenarios/scenarios.hpp"

using namespace moelo;
using namespace moelo::scenarios;

namespace {

struct Fixture {
  data::World world;
  data::Dataset train, test;
  std::vector<model::ReferencePoint> rps;
};

// Small enough to train in well under a second per step.
const Fixture& fixture() {
  static const Fixture f = [] {
    data::WorldParams wp;
    wp.samples_per_rp = 6;
    wp.n_rp = 20;
    Fixture fx;
    fx.world = data::generate_world(wp, 21);
    auto [tr, te] = data::split_train_test(fx.world.dataset, 0.25, 5);
    fx.train = std::move(tr);
    fx.test = std::move(te);
    fx.rps = fx.world.building.rps;
    return fx;
  }();
  return f;
}

ScenarioOptions fast_options() {
  ScenarioOptions o;
  o.train.epochs = 4;
  o.model.encoder_hidden = 32;
  o.model.latent_dim = 16;
  o.model.expert_hidden = 32;
  return o;
}

std::vector<data::DeviceProfile> first_devices(std::size_t n) {
  auto d = data::default_devices();
  d.resize(n);
  return d;
}

}  // namespace

TEST_CASE("localization error examples") {
  CHECK(localization_error({3, 4, 0}, {0, 0, 0}) == doctest::Approx(5.0));
  CHECK(localization_error({1.5, -2, 7}, {1.5, -2, 7}) == 0.0);
  CHECK(localization_error({1, 2, 3}, {0, 0, 0}) == doctest::Approx(std::sqrt(14.0)));
}

TEST_CASE("forgetting hand cases") {
  MetricLog log;
  log.rows = {{0, "CIL", UnitType::region, "0", 1.0, 1.0, 5},
              {1, "CIL", UnitType::region, "0", 2.0, 2.0, 5},
              {1, "CIL", UnitType::region, "1", 0.5, 0.5, 5}};
  const auto f = forgetting_metrics(log);
  CHECK(f.per_unit.at("0") == doctest::Approx(1.0));
  CHECK(f.per_unit.at("1") == 0.0);
  CHECK(f.average == doctest::Approx(0.5));
  CHECK(final_mean_le(log) == doctest::Approx(1.25));

  // Recovery after a dip still counts against the running best.
  MetricLog dip;
  dip.rows = {{0, "DIL", UnitType::device, "BLU", 2.0, 2.0, 1},
              {1, "DIL", UnitType::device, "BLU", 1.0, 1.0, 1},
              {2, "DIL", UnitType::device, "BLU", 1.5, 1.5, 1}};
  CHECK(forgetting_metrics(dip).average == doctest::Approx(0.5));

  CHECK_THROWS_AS(forgetting_metrics(MetricLog{}), DataError);
  CHECK_THROWS_AS(final_mean_le(MetricLog{}), DataError);
}

TEST_CASE("track names") {
  CHECK(parse_track("dil") == Track::dil_exclusive);
  CHECK(parse_track("CIL-Exclusive") == Track::cil_exclusive);
  CHECK(parse_track("cdil") == Track::cdil);
  CHECK_THROWS(parse_track("dcil"));
  CHECK(unit_type(Track::dil_exclusive) == UnitType::device);
  CHECK(unit_type(Track::cdil) == UnitType::region);
}

TEST_CASE("plans") {
  const auto& fx = fixture();
  const auto devs = data::default_devices();

  const auto dil = build_plan(Track::dil_exclusive, "building1", fx.rps, devs, 10);
  REQUIRE(dil.steps.size() == 6);
  const char* order[] = {"BLU", "HTC", "LG", "MOTO", "OP3", "S7"};
  for (std::size_t k = 0; k < 6; ++k) {
    CHECK(dil.steps[k].devices == std::vector<std::string>{order[k]});
    CHECK(dil.steps[k].regions.size() == 6);
    CHECK(dil.steps[k].mode == IncrementMode::DIL);
  }
  CHECK(dil.steps[0].baseline);
  CHECK(dil.steps[0].baseline_regions.size() == 6);

  const auto cil = build_plan(Track::cil_exclusive, "building1", fx.rps, devs, 10);
  REQUIRE(cil.steps.size() == 6);
  for (std::size_t k = 0; k < 6; ++k) {
    CHECK(cil.steps[k].regions == std::vector<int>{static_cast<int>(k)});
    CHECK(cil.steps[k].devices.size() == 6);
  }
  CHECK(cil.steps[3].new_region == 3);

  const std::map<std::size_t, std::size_t> regions{{5, 12}, {10, 6}, {15, 4}, {20, 3}};
  for (const auto& [n_rp, r] : regions) {
    const auto plan = build_plan(Track::cdil, "building1", fx.rps, devs, n_rp);
    CHECK(plan.steps.size() == r);
    CHECK(plan.region_rps.size() == r);
    for (std::size_t k = 0; k < r; ++k) {
      CHECK(plan.steps[k].devices == std::vector<std::string>{order[k * 6 / r]});
      CHECK(plan.steps[k].mode == IncrementMode::CDIL);
    }
  }
  CHECK_THROWS_AS(build_plan(Track::cil_exclusive, "building1", fx.rps, devs, 60), PlanError);
  CHECK_THROWS_AS(build_plan(Track::cdil, "building1", fx.rps, devs, 60), PlanError);
}

TEST_CASE("scenario run logs every seen unit and is deterministic") {
  const auto& fx = fixture();
  const auto devs = first_devices(3);
  const auto plan = build_plan(Track::cdil, "building1", fx.rps, devs, 20);
  const auto opt = fast_options();
  const auto a = run_scenario(plan, fx.train, fx.test, opt, 3);

  REQUIRE(a.log.seen_mean.size() == 3);
  REQUIRE(a.log.rows.size() == 1 + 2 + 3);
  std::size_t i = 0;
  for (std::size_t step = 0; step < 3; ++step)
    for (std::size_t u = 0; u <= step; ++u, ++i) {
      const auto& row = a.log.rows[i];
      CHECK(row.step == step);
      CHECK(row.unit_id == std::to_string(u));
      CHECK(row.unit_type == UnitType::region);
      CHECK(row.le_worst >= row.le_mean);
      CHECK(row.le_mean >= 0.0);
      CHECK(row.n_test > 0);
    }
  CHECK(a.model.experts.size() == 3);
  CHECK(a.reports.size() == 3);
  CHECK(a.timings.size() == 3);
  const auto f = forgetting_metrics(a.log);
  CHECK(f.average >= 0.0);
  for (const auto& [id, v] : f.per_unit) CHECK(v >= 0.0);

  const auto b = run_scenario(plan, fx.train, fx.test, opt, 3);
  CHECK(a.log == b.log);
  CHECK(a.model == b.model);

  // Predicting does not touch the trained state.
  const auto before = model::to_json(a.model).dump();
  (void)model::predict_batch(a.model, data::to_features(fx.test));
  CHECK(model::to_json(a.model).dump() == before);

  const auto ckpt = experiment_checkpoint(plan, 3, a.model, a.buffer);
  CHECK(ckpt["format"] == "moelo-experiment/1");
  CHECK(model::model_from_json(ckpt["model"]) == a.model);
}

TEST_CASE("dil run uses device units") {
  const auto& fx = fixture();
  const auto plan = build_plan(Track::dil_exclusive, "building1", fx.rps, first_devices(2), 20);
  const auto r = run_scenario(plan, fx.train, fx.test, fast_options(), 8);
  REQUIRE(r.log.rows.size() == 1 + 2);
  CHECK(r.log.rows[0].unit_id == "BLU");
  CHECK(r.log.rows[2].unit_id == "HTC");
  CHECK(r.log.rows[2].unit_type == UnitType::device);
  CHECK(r.model.experts.size() == 3);
}

TEST_CASE("naive baseline grows one head over all classes") {
  const auto& fx = fixture();
  const auto plan = build_plan(Track::cil_exclusive, "building1", fx.rps, first_devices(2), 20);
  auto opt = fast_options();
  opt.train.epochs = 15;
  const auto n = naive_baseline_run(plan, fx.train, fx.test, opt, 4);
  CHECK(n.head_width == std::vector<std::size_t>{20, 40, 60});
  REQUIRE(n.log.rows.size() == 6);
  // Region 0 is learned first and then overwritten.
  CHECK(n.log.rows.back().unit_id == "2");
  CHECK(n.log.rows[3].unit_id == "0");
  CHECK(n.log.rows[3].le_mean > n.log.rows[0].le_mean);
}

TEST_CASE("granularity sweep") {
  const auto& fx = fixture();
  const std::vector<std::size_t> values{15, 20};
  const auto rows = granularity_sweep(fx.world.dataset, first_devices(2), values, Track::cdil, fast_options(), 0.25, 6);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].n_rp == 15);
  CHECK(rows[0].regions == 4);
  CHECK(rows[1].regions == 3);
  for (const auto& r : rows) {
    CHECK(std::isfinite(r.final_mean_le));
    CHECK(r.average_forgetting >= 0.0);
  }
}

TEST_CASE("metrics csv") {
  MetricLog log;
  log.rows = {{0, "CDIL", UnitType::region, "0", 1.5, 2.25, 12}, {1, "CDIL", UnitType::region, "1", 0.1, 0.5, 3}};
  std::ostringstream out;
  write_metrics_csv(log, out);
  CHECK(out.str() ==
        "step,mode,unit_type,unit_id,le_mean_m,le_worst_m,n_test\n"
        "0,CDIL,region,0,1.5,2.25,12\n"
        "1,CDIL,region,1,0.1,0.5,3\n");
}
