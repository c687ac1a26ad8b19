#include "moelo/numkit/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstdio>

#include "moelo/error.hpp"

namespace moelo::numkit {

std::string encode_double(double v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(v)));
  return buf;
}

double decode_double(const std::string& hex) {
  std::uint64_t bits = 0;
  auto [ptr, ec] = std::from_chars(hex.data(), hex.data() + hex.size(), bits, 16);
  if (hex.size() != 16 || ec != std::errc{} || ptr != hex.data() + hex.size())
    throw DataError("bad hex-encoded double '" + hex + "'");
  return std::bit_cast<double>(bits);
}

nlohmann::json encode_doubles(std::span<const double> v) {
  nlohmann::json arr = nlohmann::json::array();
  for (double d : v) arr.push_back(encode_double(d));
  return arr;
}

std::vector<double> decode_doubles(const nlohmann::json& j) {
  if (!j.is_array()) throw DataError("expected an array of hex-encoded doubles");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& e : j) out.push_back(decode_double(e.get<std::string>()));
  return out;
}

nlohmann::json to_json(const Mlp& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers) {
    layers.push_back({{"in", l.in_dim()},
                      {"out", l.out_dim()},
                      {"activation", l.activation == Activation::relu ? "relu" : "identity"},
                      {"weights", encode_doubles(l.weights.flat())},
                      {"bias", encode_doubles(l.bias)}});
  }
  return {{"dropout_rate", encode_double(net.dropout_rate)}, {"layers", std::move(layers)}};
}

Mlp mlp_from_json(const nlohmann::json& j) {
  try {
    Mlp net;
    net.dropout_rate = decode_double(j.at("dropout_rate").get<std::string>());
    for (const auto& lj : j.at("layers")) {
      const auto in = lj.at("in").get<std::size_t>();
      const auto out = lj.at("out").get<std::size_t>();
      const auto act = lj.at("activation").get<std::string>();
      if (act != "relu" && act != "identity") throw DataError("unknown activation '" + act + "'");
      DenseLayer layer{Matrix(in, out, decode_doubles(lj.at("weights"))), decode_doubles(lj.at("bias")),
                       act == "relu" ? Activation::relu : Activation::identity};
      if (layer.bias.size() != out) throw ShapeError("checkpoint bias length does not match layer width");
      if (!net.layers.empty() && net.layers.back().out_dim() != in)
        throw ShapeError("checkpoint layers do not chain");
      net.layers.push_back(std::move(layer));
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed network checkpoint: ") + e.what());
  }
}

}  // namespace moelo::numkit
