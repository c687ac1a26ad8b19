#include "moelo/model/registry.hpp"

#include <string>

#include "moelo/error.hpp"
#include "moelo/numkit/checkpoint.hpp"

namespace moelo::model {

std::size_t ClassRegistry::add_region(int region_id, std::span<const ReferencePoint> rps) {
  if (region_pos(region_id)) throw RegistryError("region " + std::to_string(region_id) + " already registered");
  if (rps.empty()) throw RegistryError("region " + std::to_string(region_id) + " has no reference points");
  for (std::size_t i = 0; i < rps.size(); ++i) {
    if (rp_class_.count(rps[i].rp_id)) throw RegistryError("rp " + std::to_string(rps[i].rp_id) + " already registered");
    for (std::size_t j = 0; j < i; ++j)
      if (rps[j].rp_id == rps[i].rp_id) throw RegistryError("rp " + std::to_string(rps[i].rp_id) + " listed twice");
  }
  Region r{region_id, {}, class_rp_.size()};
  const std::size_t pos = regions_.size();
  for (const auto& rp : rps) {
    rp_class_[rp.rp_id] = class_rp_.size();
    rp_coords_[rp.rp_id] = rp.coords;
    class_rp_.push_back(rp.rp_id);
    class_region_.push_back(pos);
    r.rps.push_back(rp.rp_id);
  }
  regions_.push_back(std::move(r));
  return pos;
}

std::optional<std::size_t> ClassRegistry::region_pos(int region_id) const {
  for (std::size_t i = 0; i < regions_.size(); ++i)
    if (regions_[i].region_id == region_id) return i;
  return std::nullopt;
}

std::size_t ClassRegistry::global_class(int rp_id) const {
  auto it = rp_class_.find(rp_id);
  if (it == rp_class_.end()) throw RegistryError("rp " + std::to_string(rp_id) + " is not registered");
  return it->second;
}

ClassRegistry::ClassInfo ClassRegistry::class_info(std::size_t global) const {
  if (global >= class_rp_.size()) throw RegistryError("global class " + std::to_string(global) + " out of range");
  const std::size_t pos = class_region_[global];
  const int rp = class_rp_[global];
  return {pos, global - regions_[pos].first_global, rp, rp_coords_.at(rp)};
}

const Vec3& ClassRegistry::rp_coords(int rp_id) const {
  auto it = rp_coords_.find(rp_id);
  if (it == rp_coords_.end()) throw RegistryError("rp " + std::to_string(rp_id) + " is not registered");
  return it->second;
}

nlohmann::json ClassRegistry::to_json() const {
  nlohmann::json regions = nlohmann::json::array();
  for (const auto& r : regions_) {
    nlohmann::json rps = nlohmann::json::array();
    for (int rp : r.rps) {
      const Vec3& c = rp_coords_.at(rp);
      rps.push_back({{"rp_id", rp}, {"coords", numkit::encode_doubles(std::vector<double>{c.x, c.y, c.z})}});
    }
    regions.push_back({{"region_id", r.region_id}, {"rps", std::move(rps)}});
  }
  return {{"regions", std::move(regions)}};
}

ClassRegistry ClassRegistry::from_json(const nlohmann::json& j) {
  try {
    ClassRegistry reg;
    for (const auto& rj : j.at("regions")) {
      std::vector<ReferencePoint> rps;
      for (const auto& pj : rj.at("rps")) {
        auto c = numkit::decode_doubles(pj.at("coords"));
        if (c.size() != 3) throw DataError("rp coordinates must have 3 components");
        rps.push_back({pj.at("rp_id").get<int>(), {c[0], c[1], c[2]}});
      }
      reg.add_region(rj.at("region_id").get<int>(), rps);
    }
    return reg;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed class registry: ") + e.what());
  }
}

}  // namespace moelo::model
