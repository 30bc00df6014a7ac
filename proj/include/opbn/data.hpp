#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "opbn/matrix.hpp"
#include "opbn/rng.hpp"

namespace opbn {

/// Per-row annotations read by simulated oracles and probes. Absent fields
/// are empty optionals (empty cells in meta.csv).
struct MetaRow {
  std::int64_t id = 0;
  std::optional<int> label;
  std::optional<double> azimuth;    // degrees
  std::optional<double> elevation;  // degrees
  std::optional<int> trajectory;
  std::optional<double> angle;  // degrees

  friend bool operator==(const MetaRow&, const MetaRow&) = default;
};

/// Numeric value of a named metadata field ("label", "azimuth", "elevation",
/// "trajectory", "angle"); empty when absent. Throws DataError on an unknown name.
std::optional<double> meta_value(const MetaRow& row, std::string_view field);

enum class Split : std::uint8_t { train, test };

struct DatasetBundle {
  Matrix x;  // N x D, every entry in [0, 1]
  std::vector<MetaRow> meta;
  std::vector<Split> split;  // empty means every row is a training row

  [[nodiscard]] std::size_t rows() const { return x.rows(); }
  [[nodiscard]] std::size_t dim() const { return x.cols(); }
  [[nodiscard]] std::vector<std::size_t> indices(Split which) const;
  /// Side length when D is a perfect square, otherwise 0.
  [[nodiscard]] std::size_t image_side() const;

  friend bool operator==(const DatasetBundle&, const DatasetBundle&) = default;
};

/// Throws DataError unless meta rows match x rows and all pixels lie in [0, 1].
void validate_bundle(const DatasetBundle& bundle);

/// Marks round(test_fraction * N) rows as test with a seeded shuffle. When
/// every row has a trajectory id, whole trajectories are assigned together.
void assign_split(DatasetBundle& bundle, double test_fraction, std::uint64_t seed);

// --- images -----------------------------------------------------------------

/// Greyscale image with values in [0, 1], row-major.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  double at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
};

/// Rotates clockwise by `degrees` about the image centre, bilinear sampling
/// with zero padding. A zero angle returns an identical copy.
Image rotate_image(const Image& image, double degrees);

/// Area-weighted resampling to width x height.
Image resize_image(const Image& image, std::size_t width, std::size_t height);

Image read_pgm(const std::filesystem::path& path);
void write_pgm(const Image& image, const std::filesystem::path& path);

struct IdxImages {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Image> images;
  std::vector<int> labels;
};

/// Reads an IDX3 image file and its IDX1 label file; ".gz" files are inflated.
IdxImages read_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

// --- generators and loaders -------------------------------------------------

/// Default rotation angles for perturbed MNIST trajectories, in degrees.
inline const std::vector<double> kDefaultRotationAngles{9.0, 18.0, 27.0, 36.0, 45.0};

/// Picks `per_class` digits of every class and expands each into a trajectory:
/// the original followed by one rotated copy per angle.
DatasetBundle gen_perturbed_mnist(const IdxImages& source, std::size_t per_class, std::span<const double> angles,
                                  Stream& rng);

enum class Shape { circle = 0, square = 1, triangle = 2, bar = 3 };
inline constexpr int kShapeCount = 4;

/// Planted factors of one two-factor image.
struct TwoFactor {
  Shape shape = Shape::circle;
  double scale = 1.0;       // silhouette size relative to the frame
  double azimuth = 0.0;     // light direction, degrees
  double elevation = 0.0;   // degrees
};

inline constexpr double kTwoFactorAzimuthRange = 60.0;  // azimuth in [-60, 60]
inline constexpr double kTwoFactorElevationMin = -20.0;
inline constexpr double kTwoFactorElevationMax = 40.0;

/// Renders a shaded silhouette; a pure function of the factors.
Image render_two_factor(const TwoFactor& factors, std::size_t side);

/// N images with independent uniformly drawn shape and light direction.
DatasetBundle gen_twofactor_synthetic(std::size_t n, std::size_t side, Stream& rng);

struct YaleOptions {
  std::size_t side = 32;
  std::uint64_t seed = 0;
};

struct YaleName {
  int subject = 0;
  double azimuth = 0.0;
  double elevation = 0.0;
};

/// Parses `yaleBSS_P00A+AAAE+EE...` style names; empty when the name does not match.
std::optional<YaleName> parse_yale_name(std::string_view filename);

/// Loads every parseable PGM under `directory` (recursively), 300-in-2414
/// test split.
DatasetBundle load_yale(const std::filesystem::path& directory, const YaleOptions& options = {});

// --- bundle files -----------------------------------------------------------

/// Writes bundle.bin, meta.csv and split.csv into `directory`.
void save_bundle(const DatasetBundle& bundle, const std::filesystem::path& directory);
DatasetBundle load_bundle(const std::filesystem::path& directory);

}  // namespace opbn
