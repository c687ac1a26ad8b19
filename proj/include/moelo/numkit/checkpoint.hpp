#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "moelo/numkit/mlp.hpp"

namespace moelo::numkit {

// Doubles are stored as their IEEE-754 bit pattern in 16 lowercase hex
// digits so a save/load cycle is bit-exact.
std::string encode_double(double v);
double decode_double(const std::string& hex);

nlohmann::json encode_doubles(std::span<const double> v);
std::vector<double> decode_doubles(const nlohmann::json& j);

nlohmann::json to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);

}  // namespace moelo::numkit
