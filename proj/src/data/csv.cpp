#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>

#include "moelo/data/fingerprint.hpp"
#include "moelo/error.hpp"

namespace moelo::data {
namespace {

constexpr std::string_view kFixedColumns[] = {"device_id", "region_id", "rp_id", "x", "y", "z", "time_index"};
constexpr std::size_t kFixed = std::size(kFixedColumns);

void put_double(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, ptr);
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

template <typename T>
T parse_number(std::string_view cell, std::size_t line, std::string_view column) {
  T v{};
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || ptr != cell.data() + cell.size() || cell.empty())
    throw ParseError(line, "bad value '" + std::string(cell) + "' in column " + std::string(column));
  return v;
}

}  // namespace

void write_dataset_csv(const Dataset& ds, std::ostream& out) {
  std::string buf;
  for (std::size_t c = 0; c < kFixed; ++c) {
    if (c) buf += ',';
    buf += kFixedColumns[c];
  }
  for (std::size_t j = 0; j < ds.ap_count; ++j) buf += ",rssi_" + std::to_string(j);
  buf += '\n';
  out << buf;
  for (const auto& fp : ds.samples) {
    if (fp.rss.size() != ds.ap_count) throw ShapeError("fingerprint length does not match the dataset AP count");
    buf.clear();
    buf += fp.device_id;
    buf += ',' + std::to_string(fp.region_id) + ',' + std::to_string(fp.rp_id) + ',';
    put_double(buf, fp.coords.x);
    buf += ',';
    put_double(buf, fp.coords.y);
    buf += ',';
    put_double(buf, fp.coords.z);
    buf += ',' + std::to_string(fp.time_index);
    for (double v : fp.rss) {
      buf += ',';
      put_double(buf, v);
    }
    buf += '\n';
    out << buf;
  }
}

void save_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_dataset_csv(ds, out);
  if (!out) throw DataError("failed writing " + path.string());
}

Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError(lineno, "missing header");
  if (!line.empty() && line.back() == '\r') throw ParseError(lineno, "CRLF line endings are not accepted");
  const auto header = split_commas(line);
  if (header.size() < kFixed) throw ParseError(lineno, "header has too few columns");
  for (std::size_t c = 0; c < kFixed; ++c)
    if (header[c] != kFixedColumns[c])
      throw ParseError(lineno, "expected column '" + std::string(kFixedColumns[c]) + "', found '" +
                                   std::string(header[c]) + "'");
  Dataset ds;
  ds.ap_count = header.size() - kFixed;
  for (std::size_t j = 0; j < ds.ap_count; ++j)
    if (header[kFixed + j] != "rssi_" + std::to_string(j))
      throw ParseError(lineno, "expected column 'rssi_" + std::to_string(j) + "'");

  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.back() == '\r') throw ParseError(lineno, "CRLF line endings are not accepted");
    const auto cells = split_commas(line);
    if (cells.size() != header.size())
      throw ParseError(lineno, "expected " + std::to_string(header.size()) + " columns, found " +
                                   std::to_string(cells.size()));
    Fingerprint fp;
    if (cells[0].empty()) throw ParseError(lineno, "empty device_id");
    fp.device_id = std::string(cells[0]);
    fp.region_id = parse_number<int>(cells[1], lineno, "region_id");
    fp.rp_id = parse_number<int>(cells[2], lineno, "rp_id");
    fp.coords = {parse_number<double>(cells[3], lineno, "x"), parse_number<double>(cells[4], lineno, "y"),
                 parse_number<double>(cells[5], lineno, "z")};
    fp.time_index = parse_number<int>(cells[6], lineno, "time_index");
    fp.rss.resize(ds.ap_count);
    for (std::size_t j = 0; j < ds.ap_count; ++j) {
      const double v = parse_number<double>(cells[kFixed + j], lineno, header[kFixed + j]);
      if (!(v >= kMissingRss && v <= kMaxRss))
        throw ParseError(lineno, "RSS value outside [-100, 0] in column " + std::string(header[kFixed + j]));
      fp.rss[j] = v;
    }
    ds.samples.push_back(std::move(fp));
  }
  return ds;
}

Dataset load_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_dataset_csv(in);
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in (0, 1)");
  std::map<std::tuple<std::string, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    groups[{ds.samples[i].device_id, ds.samples[i].region_id}].push_back(i);

  std::vector<bool> is_test(ds.samples.size(), false);
  Rng rng = make_rng(seed, "split");
  for (auto& [key, idx] : groups) {
    const std::size_t n = idx.size();
    if (n < 2) continue;
    auto take = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    take = std::clamp<std::size_t>(take, 1, n - 1);
    std::vector<std::size_t> order = idx;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < take; ++k) is_test[order[k]] = true;
  }
  Dataset train{ds.ap_count, {}}, test{ds.ap_count, {}};
  for (std::size_t i = 0; i < ds.samples.size(); ++i) (is_test[i] ? test : train).samples.push_back(ds.samples[i]);
  return {std::move(train), std::move(test)};
}

}  // namespace moelo::data
