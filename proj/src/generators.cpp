#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <regex>

#include "opbn/data.hpp"
#include "opbn/error.hpp"

namespace opbn {
namespace {

// Stored pixels are float32-representable so bundles round-trip exactly.
double quantize(double v) { return double(static_cast<float>(std::clamp(v, 0.0, 1.0))); }

void set_row(Matrix& x, std::size_t r, const Image& img) {
  auto row = x.row(r);
  for (std::size_t p = 0; p < row.size(); ++p) row[p] = quantize(img.pixels[p]);
}

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

// Silhouette membership at normalized coordinates u, v in [-1, 1] (v points down).
bool inside(Shape shape, double scale, double u, double v) {
  switch (shape) {
    case Shape::circle:
      return u * u + v * v <= (0.8 * scale) * (0.8 * scale);
    case Shape::square:
      return std::abs(u) <= 0.65 * scale && std::abs(v) <= 0.65 * scale;
    case Shape::triangle: {
      const double top = -0.8 * scale, base = 0.7 * scale;
      if (v < top || v > base) return false;
      return std::abs(u) <= 0.85 * scale * (v - top) / (base - top);
    }
    case Shape::bar:
      return std::abs(u) <= 0.9 * scale && std::abs(v) <= 0.3 * scale;
  }
  return false;
}

}  // namespace

DatasetBundle gen_perturbed_mnist(const IdxImages& source, std::size_t per_class, std::span<const double> angles,
                                  Stream& rng) {
  if (angles.empty()) throw ContractError("gen_perturbed_mnist: need at least one angle");
  for (std::size_t k = 0; k < angles.size(); ++k) {
    if (!(angles[k] > 0.0) || (k > 0 && !(angles[k] > angles[k - 1]))) {
      throw ContractError("gen_perturbed_mnist: angles must be positive and strictly increasing");
    }
  }
  if (source.images.empty()) throw DataError("gen_perturbed_mnist: source has no images");

  std::vector<std::size_t> chosen;
  for (int label = 0; label < 10; ++label) {
    std::vector<std::size_t> pool;
    for (std::size_t k = 0; k < source.labels.size(); ++k) {
      if (source.labels[k] == label) pool.push_back(k);
    }
    if (pool.size() < per_class) {
      throw DataError("gen_perturbed_mnist: class " + std::to_string(label) + " has only " +
                      std::to_string(pool.size()) + " images, need " + std::to_string(per_class));
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + std::ptrdiff_t(per_class));
  }

  const std::size_t length = angles.size() + 1;
  const std::size_t d = source.rows * source.cols;
  DatasetBundle bundle;
  bundle.x = Matrix(chosen.size() * length, d);
  for (std::size_t t = 0; t < chosen.size(); ++t) {
    const Image& base = source.images[chosen[t]];
    for (std::size_t a = 0; a < length; ++a) {
      const double angle = a == 0 ? 0.0 : angles[a - 1];
      const std::size_t r = t * length + a;
      set_row(bundle.x, r, a == 0 ? base : rotate_image(base, angle));
      MetaRow m;
      m.id = std::int64_t(r);
      m.label = source.labels[chosen[t]];
      m.trajectory = int(t);
      m.angle = angle;
      bundle.meta.push_back(m);
    }
  }
  return bundle;
}

Image render_two_factor(const TwoFactor& f, std::size_t side) {
  // Lambertian shading of a dome under a distant light, cut to the silhouette.
  constexpr int kSuper = 4;
  constexpr double kDomeRadius = 1.3;
  constexpr double kAmbient = 0.1;
  const double az = deg2rad(f.azimuth), el = deg2rad(f.elevation);
  const double lx = std::sin(az) * std::cos(el), ly = std::sin(el), lz = std::cos(az) * std::cos(el);

  Image img{side, side, std::vector<double>(side * side, 0.0)};
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      double acc = 0.0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double u = 2.0 * (double(x) + (sx + 0.5) / kSuper) / double(side) - 1.0;
          const double v = 2.0 * (double(y) + (sy + 0.5) / kSuper) / double(side) - 1.0;
          if (!inside(f.shape, f.scale, u, v)) continue;
          const double nz = std::sqrt(std::max(0.0, kDomeRadius * kDomeRadius - u * u - v * v));
          const double lambert = (u * lx - v * ly + nz * lz) / kDomeRadius;
          acc += kAmbient + (1.0 - kAmbient) * std::max(0.0, lambert);
        }
      }
      img.pixels[y * side + x] = acc / (kSuper * kSuper);
    }
  }
  return img;
}

DatasetBundle gen_twofactor_synthetic(std::size_t n, std::size_t side, Stream& rng) {
  if (n < 10) throw ContractError("gen_twofactor_synthetic: need N >= 10");
  if (side < 8) throw ContractError("gen_twofactor_synthetic: image side must be at least 8");
  DatasetBundle bundle;
  bundle.x = Matrix(n, side * side);
  for (std::size_t r = 0; r < n; ++r) {
    TwoFactor f;
    f.shape = static_cast<Shape>(rng.below(kShapeCount));
    f.scale = 0.75 + 0.25 * rng.uniform();
    f.azimuth = kTwoFactorAzimuthRange * (2.0 * rng.uniform() - 1.0);
    f.elevation = kTwoFactorElevationMin + (kTwoFactorElevationMax - kTwoFactorElevationMin) * rng.uniform();
    set_row(bundle.x, r, render_two_factor(f, side));
    MetaRow m;
    m.id = std::int64_t(r);
    m.label = int(f.shape);
    m.azimuth = f.azimuth;
    m.elevation = f.elevation;
    bundle.meta.push_back(m);
  }
  return bundle;
}

std::optional<YaleName> parse_yale_name(std::string_view filename) {
  static const std::regex pattern(R"(yaleB(\d+)_P\d+A([+-]\d{3})E([+-]\d{2}))");
  std::cmatch m;
  if (!std::regex_search(filename.begin(), filename.end(), m, pattern)) return std::nullopt;
  return YaleName{std::stoi(m[1].str()), double(std::stoi(m[2].str())), double(std::stoi(m[3].str()))};
}

DatasetBundle load_yale(const std::filesystem::path& directory, const YaleOptions& options) {
  if (!std::filesystem::is_directory(directory)) throw DataError("Yale directory not found: " + directory.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(directory)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<Image> images;
  std::vector<MetaRow> meta;
  for (const auto& path : files) {
    const auto name = parse_yale_name(path.filename().string());
    if (!name) {
      std::cerr << "warning: skipping " << path.string() << " (name does not follow the Yale convention)\n";
      continue;
    }
    images.push_back(resize_image(read_pgm(path), options.side, options.side));
    MetaRow m;
    m.id = std::int64_t(meta.size());
    m.label = name->subject;
    m.azimuth = name->azimuth;
    m.elevation = name->elevation;
    meta.push_back(m);
  }
  if (images.empty()) throw DataError("no usable Yale images under " + directory.string());

  DatasetBundle bundle;
  bundle.x = Matrix(images.size(), options.side * options.side);
  for (std::size_t r = 0; r < images.size(); ++r) set_row(bundle.x, r, images[r]);
  bundle.meta = std::move(meta);
  // 300 of 2414 images are held out in the full set; keep that ratio.
  assign_split(bundle, 300.0 / 2414.0, options.seed);
  return bundle;
}

}  // namespace opbn
