#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "moelo/geometry.hpp"

namespace moelo::model {

struct ReferencePoint {
  int rp_id = 0;
  Vec3 coords;
  friend bool operator==(const ReferencePoint&, const ReferencePoint&) = default;
};

// Global label space: the disjoint union of every region's local RP classes,
// laid out in region-insertion order. Indices never move once assigned.
class ClassRegistry {
 public:
  struct Region {
    int region_id = 0;
    std::vector<int> rps;       // local class c -> rp id
    std::size_t first_global = 0;
    friend bool operator==(const Region&, const Region&) = default;
  };

  struct ClassInfo {
    std::size_t region_pos = 0;  // == expert index
    std::size_t local = 0;
    int rp_id = 0;
    Vec3 coords;
  };

  // Appends a region and its classes; returns its position. Throws
  // RegistryError on a duplicate region or RP, or an empty class list.
  std::size_t add_region(int region_id, std::span<const ReferencePoint> rps);

  std::size_t num_regions() const noexcept { return regions_.size(); }
  std::size_t num_classes() const noexcept { return class_rp_.size(); }
  const std::vector<Region>& regions() const noexcept { return regions_; }

  std::optional<std::size_t> region_pos(int region_id) const;
  std::size_t global_class(int rp_id) const;
  ClassInfo class_info(std::size_t global) const;
  const Vec3& rp_coords(int rp_id) const;

  nlohmann::json to_json() const;
  static ClassRegistry from_json(const nlohmann::json& j);

  friend bool operator==(const ClassRegistry&, const ClassRegistry&) = default;

 private:
  std::vector<Region> regions_;
  std::vector<int> class_rp_;             // global -> rp id
  std::vector<std::size_t> class_region_; // global -> region pos
  std::map<int, std::size_t> rp_class_;   // rp id -> global
  std::map<int, Vec3> rp_coords_;
};

}  // namespace moelo::model
