#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "opbn/csv.hpp"
#include "opbn/data.hpp"
#include "opbn/error.hpp"

namespace opbn {
namespace {

constexpr std::array<char, 4> kMagic{'O', 'P', 'B', 'N'};
constexpr std::uint32_t kBundleVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

template <class T>
std::string optional_cell(const std::optional<T>& v) {
  if (!v) return {};
  if constexpr (std::is_floating_point_v<T>) return format_double(*v);
  else return std::to_string(*v);
}

template <class T>
std::optional<T> parse_optional(const std::string& cell, const std::string& column, std::size_t line) {
  if (cell.empty()) return std::nullopt;
  T value{};
  const auto* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw DataError("meta.csv line " + std::to_string(line) + ": bad value '" + cell + "' in column " + column);
  }
  return value;
}

}  // namespace

std::optional<double> meta_value(const MetaRow& row, std::string_view field) {
  auto to_double = [](const auto& v) -> std::optional<double> {
    if (!v) return std::nullopt;
    return double(*v);
  };
  if (field == "label") return to_double(row.label);
  if (field == "azimuth") return row.azimuth;
  if (field == "elevation") return row.elevation;
  if (field == "trajectory") return to_double(row.trajectory);
  if (field == "angle") return row.angle;
  throw DataError("unknown metadata field '" + std::string(field) + "'");
}

std::vector<std::size_t> DatasetBundle::indices(Split which) const {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < rows(); ++r) {
    const Split s = split.empty() ? Split::train : split[r];
    if (s == which) out.push_back(r);
  }
  return out;
}

std::size_t DatasetBundle::image_side() const {
  const auto side = std::size_t(std::lround(std::sqrt(double(dim()))));
  return side * side == dim() ? side : 0;
}

void validate_bundle(const DatasetBundle& bundle) {
  if (bundle.meta.size() != bundle.rows()) {
    throw DataError("bundle has " + std::to_string(bundle.rows()) + " rows but " + std::to_string(bundle.meta.size()) +
                    " metadata rows");
  }
  if (!bundle.split.empty() && bundle.split.size() != bundle.rows()) throw DataError("bundle split has wrong length");
  for (double v : bundle.x.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("bundle pixel value outside [0, 1]");
  }
}

void assign_split(DatasetBundle& bundle, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must lie in [0, 1)");
  const std::size_t n = bundle.rows();
  const bool by_trajectory =
      n > 0 && std::ranges::all_of(bundle.meta, [](const MetaRow& m) { return m.trajectory.has_value(); });

  // Units are shuffled and taken in order until the test quota is reached.
  std::vector<std::vector<std::size_t>> units;
  if (by_trajectory) {
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t r = 0; r < n; ++r) groups[*bundle.meta[r].trajectory].push_back(r);
    for (auto& [id, rows] : groups) units.push_back(std::move(rows));
  } else {
    for (std::size_t r = 0; r < n; ++r) units.push_back({r});
  }
  Stream rng(seed, Purpose::split);
  std::shuffle(units.begin(), units.end(), rng);

  const auto quota = std::size_t(std::llround(test_fraction * double(n)));
  bundle.split.assign(n, Split::train);
  std::size_t taken = 0;
  for (const auto& unit : units) {
    if (taken >= quota) break;
    for (std::size_t r : unit) bundle.split[r] = Split::test;
    taken += unit.size();
  }
}

void save_bundle(const DatasetBundle& bundle, const std::filesystem::path& directory) {
  validate_bundle(bundle);
  std::filesystem::create_directories(directory);
  {
    std::ofstream os(directory / "bundle.bin", std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + (directory / "bundle.bin").string());
    os.write(kMagic.data(), 4);
    put_u32(os, kBundleVersion);
    put_u32(os, std::uint32_t(bundle.rows()));
    put_u32(os, std::uint32_t(bundle.dim()));
    for (double v : bundle.x.values()) {
      std::uint32_t bits;
      const float f = static_cast<float>(v);
      std::memcpy(&bits, &f, 4);
      put_u32(os, bits);
    }
    if (!os) throw DataError("failed writing bundle.bin");
  }
  {
    CsvWriter meta(directory / "meta.csv", {"id", "label", "azimuth", "elevation", "trajectory", "angle"});
    for (const auto& m : bundle.meta) {
      meta.row({std::to_string(m.id), optional_cell(m.label), optional_cell(m.azimuth), optional_cell(m.elevation),
                optional_cell(m.trajectory), optional_cell(m.angle)});
    }
  }
  std::filesystem::remove(directory / "split.csv");
  if (bundle.split.empty()) return;
  CsvWriter split(directory / "split.csv", {"id", "split"});
  for (std::size_t r = 0; r < bundle.rows(); ++r) {
    split.row({std::to_string(bundle.meta[r].id), bundle.split[r] == Split::train ? "train" : "test"});
  }
}

DatasetBundle load_bundle(const std::filesystem::path& directory) {
  const auto bin_path = directory / "bundle.bin";
  std::ifstream is(bin_path, std::ios::binary);
  if (!is) throw DataError("cannot open " + bin_path.string() + " (run gen-data first)");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw DataError(bin_path.string() + ": not an OPBN bundle (bad magic)");
  }
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kBundleVersion) {
    throw DataError(bin_path.string() + ": unsupported bundle version " + std::to_string(version));
  }
  const std::size_t n = get_u32(bytes.data() + 8);
  const std::size_t d = get_u32(bytes.data() + 12);
  if (bytes.size() != 16 + n * d * 4) {
    throw DataError(bin_path.string() + ": expected " + std::to_string(16 + n * d * 4) + " bytes, found " +
                    std::to_string(bytes.size()) + " (truncated or corrupt)");
  }
  DatasetBundle bundle;
  bundle.x = Matrix(n, d);
  auto values = bundle.x.values();
  for (std::size_t k = 0; k < n * d; ++k) {
    const std::uint32_t bits = get_u32(bytes.data() + 16 + 4 * k);
    float f;
    std::memcpy(&f, &bits, 4);
    values[k] = double(f);
  }

  const auto meta_rows = read_csv(directory / "meta.csv", {"id", "label", "azimuth", "elevation", "trajectory", "angle"});
  for (std::size_t k = 0; k < meta_rows.size(); ++k) {
    const auto& c = meta_rows[k];
    const std::size_t line = k + 2;
    MetaRow m;
    const auto id = parse_optional<std::int64_t>(c[0], "id", line);
    if (!id) throw DataError("meta.csv line " + std::to_string(line) + ": missing id");
    m.id = *id;
    m.label = parse_optional<int>(c[1], "label", line);
    m.azimuth = parse_optional<double>(c[2], "azimuth", line);
    m.elevation = parse_optional<double>(c[3], "elevation", line);
    m.trajectory = parse_optional<int>(c[4], "trajectory", line);
    m.angle = parse_optional<double>(c[5], "angle", line);
    bundle.meta.push_back(m);
  }

  const auto split_path = directory / "split.csv";
  if (std::filesystem::exists(split_path)) {
    const auto rows = read_csv(split_path, {"id", "split"});
    if (rows.size() != n) throw DataError("split.csv has " + std::to_string(rows.size()) + " rows, expected " + std::to_string(n));
    for (const auto& r : rows) {
      if (r[1] != "train" && r[1] != "test") throw DataError("split.csv: unknown split '" + r[1] + "'");
      bundle.split.push_back(r[1] == "train" ? Split::train : Split::test);
    }
  }
  validate_bundle(bundle);
  return bundle;
}

}  // namespace opbn
