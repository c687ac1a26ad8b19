#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "moelo/data/fingerprint.hpp"
#include "moelo/error.hpp"

using namespace moelo;
using namespace moelo::data;

namespace {

// One RP at the origin, APs at the given distances along x, no shadowing.
BuildingSpec line_building(const std::vector<double>& ap_x) {
  BuildingSpec b;
  b.name = "line";
  b.rps = {{0, {0, 0, 0}}};
  for (double x : ap_x) b.aps.push_back({x, 0, 0});
  b.shadowing = numkit::Matrix(1, ap_x.size());
  return b;
}

DriftModel flat_drift(std::size_t aps) { return DriftModel(DriftParams{{0.0}, 0.0}, aps, 1); }

WorldParams small_world() {
  WorldParams p;
  p.samples_per_rp = 3;
  return p;
}

}  // namespace

TEST_CASE("building templates") {
  const auto b1 = generate_building({}, 11);
  CHECK(b1.rps.size() == 60);
  CHECK(b1.ap_count() == 172);
  BuildingParams p2;
  p2.templ = BuildingTemplate::building2;
  const auto b2 = generate_building(p2, 11);
  CHECK(b2.rps.size() == 48);
  CHECK(b2.ap_count() == 168);

  // Grid neighbours along the corridor are one meter apart.
  CHECK(distance(b1.rps[0].coords, b1.rps[2].coords) == doctest::Approx(1.0));
  CHECK(distance(b1.rps[0].coords, b1.rps[1].coords) == doctest::Approx(1.0));
  for (std::size_t i = 0; i < b1.rps.size(); ++i) CHECK(b1.rps[i].rp_id == static_cast<int>(i));
  CHECK(b1.shadowing.rows() == 60);
  CHECK(b1.shadowing.cols() == 172);

  BuildingParams bad;
  bad.templ = BuildingTemplate::custom;
  bad.grid_cols = 0;
  CHECK_THROWS_AS(generate_building(bad, 1), ConfigError);
}

TEST_CASE("path loss example and detection threshold") {
  const auto b = line_building({10.0, 1000.0, 0.5});
  const DeviceProfile dev{"X", 0.0, 1.0, 0.0, 0.0, 0};
  Rng rng(3);
  const auto fp = simulate_fingerprint(b, dev, 0, 0, flat_drift(3), rng);
  CHECK(fp.rss[0] == doctest::Approx(-60.0).epsilon(1e-12));
  CHECK(fp.rss[1] == kMissingRss);                           // -120 dBm is below -95
  CHECK(fp.rss[2] == doctest::Approx(-30.0).epsilon(1e-12));  // distance floored at 1 m
  CHECK(fp.device_id == "X");

  const DeviceProfile biased{"Y", 3.0, 1.0, 0.0, 0.0, 0};
  Rng rng2(3);
  const auto fb = simulate_fingerprint(b, biased, 0, 0, flat_drift(3), rng2);
  CHECK(fb.rss[0] - fp.rss[0] == doctest::Approx(3.0));
  CHECK(fb.rss[1] == kMissingRss);

  const DeviceProfile late{"Z", 0.0, 1.0, 0.0, 0.0, 2};
  CHECK_THROWS_AS(simulate_fingerprint(b, late, 0, 0, flat_drift(3), rng), ConfigError);
  CHECK_THROWS_AS(simulate_fingerprint(b, dev, 5, 0, flat_drift(3), rng), RegistryError);
}

TEST_CASE("simulated values stay in range and are reproducible") {
  const auto w1 = generate_world(small_world(), 42);
  const auto w2 = generate_world(small_world(), 42);
  CHECK(w1.dataset == w2.dataset);
  CHECK(w1.dataset.samples.size() == 60 * 6 * 3);
  std::size_t missing = 0, total = 0, out_of_range = 0;
  for (const auto& fp : w1.dataset.samples)
    for (double v : fp.rss) {
      out_of_range += !(v >= kMissingRss && v <= kMaxRss);
      missing += v == kMissingRss;
      ++total;
    }
  CHECK(out_of_range == 0);
  CHECK(missing < total);
  const auto w3 = generate_world(small_world(), 43);
  CHECK_FALSE(w1.dataset == w3.dataset);

  // Each device collects at its own time index.
  for (const auto& fp : w1.dataset.samples) {
    auto it = std::find_if(w1.devices.begin(), w1.devices.end(),
                           [&](const DeviceProfile& d) { return d.acronym == fp.device_id; });
    REQUIRE(it != w1.devices.end());
    CHECK(fp.time_index == it->intro_time_index);
  }
}

TEST_CASE("drift") {
  const DriftModel d(DriftParams{}, 20, 5);
  CHECK(d.horizon() == 6);
  for (std::size_t a = 0; a < 20; ++a) CHECK(d.offset(0, a) == 0.0);
  CHECK_THROWS_AS(d.offset(6, 0), ConfigError);
  CHECK_THROWS_AS(d.offset(-1, 0), ConfigError);
  CHECK_THROWS_AS(DriftModel(DriftParams{{}, 0.5}, 3, 1), ConfigError);
  const DriftModel flat(DriftParams{{0.0, -2.0}, 0.0}, 3, 1);
  CHECK(flat.offset(1, 2) == doctest::Approx(-2.0));
}

TEST_CASE("device validation") {
  auto devs = default_devices();
  REQUIRE(devs.size() == 6);
  CHECK(devs.front().acronym == "BLU");
  CHECK(devs.back().acronym == "S7");
  CHECK_NOTHROW(validate_devices(devs));

  auto bad = devs;
  bad[2].miss_probability = 1.0;
  CHECK_THROWS_AS(validate_devices(bad), ConfigError);
  bad = devs;
  bad[1].noise_std_db = -1;
  CHECK_THROWS_AS(validate_devices(bad), ConfigError);
  bad = devs;
  bad[3].acronym = "BLU";
  CHECK_THROWS_AS(validate_devices(bad), ConfigError);
  bad = devs;
  std::swap(bad[0].intro_time_index, bad[5].intro_time_index);
  CHECK_THROWS_AS(validate_devices(bad), ConfigError);
  bad = devs;
  bad[0].acronym = "A,B";
  CHECK_THROWS_AS(validate_devices(bad), ConfigError);
  CHECK_THROWS_AS(validate_devices(std::vector<DeviceProfile>{}), ConfigError);
}

TEST_CASE("region partitions") {
  const auto b1 = generate_building({}, 1);
  const auto p = partition_regions(b1.rps, 10);
  std::map<int, int> sizes;
  for (const auto& [rp, region] : p) ++sizes[region];
  CHECK(sizes.size() == 6);
  for (const auto& [region, n] : sizes) CHECK(n == 10);
  // Contiguous along the corridor: region never decreases with x.
  for (std::size_t i = 1; i < b1.rps.size(); ++i)
    if (b1.rps[i].coords.x > b1.rps[i - 1].coords.x) CHECK(p.at(b1.rps[i].rp_id) >= p.at(b1.rps[i - 1].rp_id));

  BuildingParams p2;
  p2.templ = BuildingTemplate::building2;
  const auto b2 = generate_building(p2, 1);
  std::map<int, int> s2;
  for (const auto& [rp, region] : partition_regions(b2.rps, 10)) ++s2[region];
  CHECK(s2 == std::map<int, int>{{0, 10}, {1, 10}, {2, 10}, {3, 10}, {4, 8}});

  std::set<int> r5;
  for (const auto& [rp, region] : partition_regions(b1.rps, 5)) r5.insert(region);
  CHECK(r5.size() == 12);
  CHECK_THROWS_AS(partition_regions(b1.rps, 61), ConfigError);
  CHECK_THROWS_AS(partition_regions(b1.rps, 0), ConfigError);

  auto w = generate_world(small_world(), 2);
  assign_regions(w.dataset, partition_regions(w.building.rps, 20));
  for (const auto& fp : w.dataset.samples) CHECK(fp.region_id == p.at(fp.rp_id) / 2);
}

TEST_CASE("feature scaling") {
  Fingerprint fp;
  fp.rss = {-100.0, 0.0, -60.0};
  const auto f = to_features(fp);
  CHECK(f[0] == 0.0);
  CHECK(f[1] == 1.0);
  CHECK(f[2] == doctest::Approx(0.4));
}

TEST_CASE("csv round trip") {
  auto w = generate_world(small_world(), 9);
  w.dataset.samples.resize(40);
  std::stringstream ss;
  write_dataset_csv(w.dataset, ss);
  const Dataset back = read_dataset_csv(ss);
  CHECK(back == w.dataset);

  // The sentinel survives the round trip.
  bool saw_missing = false;
  for (const auto& fp : back.samples)
    for (double v : fp.rss) saw_missing |= v == kMissingRss;
  CHECK(saw_missing);
}

TEST_CASE("csv errors") {
  const std::string header = "device_id,region_id,rp_id,x,y,z,time_index,rssi_0,rssi_1\n";
  {
    std::stringstream ss(header + "BLU,0,0,0,0,0,0,-50,-100\nBLU,0,1,1,0,0,0,-50\n");
    try {
      read_dataset_csv(ss);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
    }
  }
  {
    std::stringstream ss(header + "BLU,0,0,0,0,0,0,-50,-100\r\n");
    CHECK_THROWS_AS(read_dataset_csv(ss), ParseError);
  }
  {
    std::stringstream ss(header + "BLU,0,0,0,0,0,0,-50,12\n");
    CHECK_THROWS_AS(read_dataset_csv(ss), ParseError);
  }
  {
    std::stringstream ss(header + "BLU,0,zero,0,0,0,0,-50,-100\n");
    CHECK_THROWS_AS(read_dataset_csv(ss), ParseError);
  }
  {
    std::stringstream ss("device,region_id\n");
    CHECK_THROWS_AS(read_dataset_csv(ss), ParseError);
  }
  CHECK_THROWS_AS(load_dataset_csv("/nonexistent/data.csv"), DataError);
}

TEST_CASE("stratified split") {
  Dataset ds{1, {}};
  for (const char* dev : {"BLU", "HTC"})
    for (int region = 0; region < 3; ++region)
      for (int i = 0; i < 100; ++i) {
        Fingerprint fp;
        fp.device_id = dev;
        fp.region_id = region;
        fp.rp_id = i;
        fp.rss = {-static_cast<double>(i % 90)};
        fp.time_index = i;  // makes every sample unique
        ds.samples.push_back(fp);
      }
  const auto [train, test] = split_train_test(ds, 0.2, 77);
  std::map<std::tuple<std::string, int>, int> ntr, nte;
  for (const auto& fp : train.samples) ++ntr[{fp.device_id, fp.region_id}];
  for (const auto& fp : test.samples) ++nte[{fp.device_id, fp.region_id}];
  CHECK(ntr.size() == 6);
  for (const auto& [k, n] : ntr) CHECK(n == 80);
  for (const auto& [k, n] : nte) CHECK(n == 20);

  // Disjoint and exhaustive.
  std::multiset<std::tuple<std::string, int, int>> all, parts;
  for (const auto& fp : ds.samples) all.insert({fp.device_id, fp.region_id, fp.time_index});
  for (const auto* part : {&train, &test})
    for (const auto& fp : part->samples) parts.insert({fp.device_id, fp.region_id, fp.time_index});
  CHECK(all == parts);

  const auto again = split_train_test(ds, 0.2, 77);
  CHECK(again.first == train);
  CHECK(again.second == test);
  CHECK_FALSE(split_train_test(ds, 0.2, 78).second == test);
  CHECK_THROWS_AS(split_train_test(ds, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split_train_test(ds, 1.0, 1), ConfigError);
}

TEST_CASE("reference points") {
  const auto w = generate_world(small_world(), 4);
  const auto rps = reference_points(w.dataset);
  CHECK(rps.size() == 60);
  Dataset bad{1, {}};
  Fingerprint a;
  a.rss = {-50};
  a.rp_id = 1;
  Fingerprint b = a;
  b.coords.x = 3;
  bad.samples = {a, b};
  CHECK_THROWS_AS(reference_points(bad), DataError);
}

TEST_CASE("device shift is pure bias at time 0 without noise") {
  const auto b = generate_building({}, 13);
  const DriftModel drift(DriftParams{}, b.ap_count(), 2);
  const DeviceProfile a{"A", 0.0, 1.0, 0.0, 0.0, 0}, c{"C", 2.5, 1.0, 0.0, 0.0, 0};
  for (int rp : {0, 17, 59}) {
    Rng r1(1), r2(2);
    const auto fa = simulate_fingerprint(b, a, rp, 0, drift, r1);
    const auto fc = simulate_fingerprint(b, c, rp, 0, drift, r2);
    std::size_t both = 0, mismatched = 0;
    for (std::size_t j = 0; j < b.ap_count(); ++j) {
      if (fa.rss[j] == kMissingRss || fc.rss[j] == kMissingRss || fc.rss[j] == kMaxRss) continue;
      ++both;
      mismatched += std::abs(fc.rss[j] - fa.rss[j] - 2.5) > 1e-12;
    }
    CHECK(both > 0);
    CHECK(mismatched == 0);
  }
}
