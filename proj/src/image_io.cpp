#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>

#include "opbn/data.hpp"
#include "opbn/error.hpp"

namespace opbn {
namespace {

double sample_bilinear(const Image& img, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
  const double ax = x - fx, ay = y - fy;
  auto px = [&](long xi, long yi) -> double {
    if (xi < 0 || yi < 0 || xi >= long(img.width) || yi >= long(img.height)) return 0.0;
    return img.at(std::size_t(xi), std::size_t(yi));
  };
  return (1 - ax) * (1 - ay) * px(x0, y0) + ax * (1 - ay) * px(x0 + 1, y0) + (1 - ax) * ay * px(x0, y0 + 1) +
         ax * ay * px(x0 + 1, y0 + 1);
}

std::vector<unsigned char> read_all_gz(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (f == nullptr) throw DataError("cannot open " + path.string());
  std::vector<unsigned char> out;
  std::vector<unsigned char> buf(1 << 16);
  int got = 0;
  while ((got = gzread(f, buf.data(), unsigned(buf.size()))) > 0) out.insert(out.end(), buf.begin(), buf.begin() + got);
  const bool failed = got < 0;
  gzclose(f);
  if (failed) throw DataError("failed to read " + path.string());
  return out;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t(b[at]) << 24) | (std::uint32_t(b[at + 1]) << 16) | (std::uint32_t(b[at + 2]) << 8) |
         std::uint32_t(b[at + 3]);
}

}  // namespace

Image rotate_image(const Image& image, double degrees) {
  if (degrees == 0.0) return image;
  const double t = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  const double cx = (double(image.width) - 1.0) / 2.0;
  const double cy = (double(image.height) - 1.0) / 2.0;
  Image out{image.width, image.height, std::vector<double>(image.pixels.size(), 0.0)};
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      // Inverse of the clockwise (y-down) rotation.
      const double dx = double(x) - cx, dy = double(y) - cy;
      const double sx = c * dx + s * dy + cx;
      const double sy = -s * dx + c * dy + cy;
      out.pixels[y * image.width + x] = std::clamp(sample_bilinear(image, sx, sy), 0.0, 1.0);
    }
  }
  return out;
}

Image resize_image(const Image& image, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) throw ContractError("resize_image: empty target size");
  const double sx = double(image.width) / double(width);
  const double sy = double(image.height) / double(height);
  Image out{width, height, std::vector<double>(width * height, 0.0)};
  for (std::size_t oy = 0; oy < height; ++oy) {
    const double y0 = double(oy) * sy, y1 = y0 + sy;
    for (std::size_t ox = 0; ox < width; ++ox) {
      const double x0 = double(ox) * sx, x1 = x0 + sx;
      double acc = 0.0, area = 0.0;
      for (auto iy = std::size_t(y0); iy < image.height && double(iy) < y1; ++iy) {
        const double wy = std::min(y1, double(iy + 1)) - std::max(y0, double(iy));
        for (auto ix = std::size_t(x0); ix < image.width && double(ix) < x1; ++ix) {
          const double wx = std::min(x1, double(ix + 1)) - std::max(x0, double(ix));
          acc += wx * wy * image.at(ix, iy);
          area += wx * wy;
        }
      }
      out.pixels[oy * width + ox] = area > 0.0 ? acc / area : 0.0;
    }
  }
  return out;
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    int ch;
    while ((ch = is.get()) != EOF) {
      if (ch == '#') {
        while ((ch = is.get()) != EOF && ch != '\n') {}
        continue;
      }
      if (std::isspace(ch)) {
        if (!t.empty()) break;
        continue;
      }
      t += char(ch);
    }
    return t;
  };
  if (token() != "P5") throw DataError(path.string() + ": not a binary (P5) PGM");
  std::size_t width = 0, height = 0, maxval = 0;
  try {
    width = std::stoul(token());
    height = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PGM header");
  }
  if (width == 0 || height == 0 || maxval == 0 || maxval > 65535) throw DataError(path.string() + ": bad PGM header");
  const std::size_t bytes_per = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> raw(width * height * bytes_per);
  is.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  if (std::size_t(is.gcount()) != raw.size()) throw DataError(path.string() + ": truncated PGM data");
  Image img{width, height, std::vector<double>(width * height)};
  for (std::size_t k = 0; k < width * height; ++k) {
    const std::size_t v = bytes_per == 1 ? raw[k] : (std::size_t(raw[2 * k]) << 8) | raw[2 * k + 1];
    img.pixels[k] = double(v) / double(maxval);
  }
  return img;
}

void write_pgm(const Image& image, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  for (double v : image.pixels) os.put(char(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  if (!os) throw DataError("failed writing " + path.string());
}

IdxImages read_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  if (!std::filesystem::exists(images)) throw DataError("MNIST image file not found: " + images.string());
  if (!std::filesystem::exists(labels)) throw DataError("MNIST label file not found: " + labels.string());
  const auto ib = read_all_gz(images);
  const auto lb = read_all_gz(labels);
  if (ib.size() < 16 || be32(ib, 0) != 0x00000803) throw DataError(images.string() + ": not an IDX3 ubyte file");
  if (lb.size() < 8 || be32(lb, 0) != 0x00000801) throw DataError(labels.string() + ": not an IDX1 ubyte file");
  const std::size_t n = be32(ib, 4), rows = be32(ib, 8), cols = be32(ib, 12);
  if (be32(lb, 4) != n) throw DataError("MNIST image and label counts differ");
  if (ib.size() != 16 + n * rows * cols || lb.size() != 8 + n) throw DataError("MNIST IDX file is truncated");
  IdxImages out;
  out.rows = rows;
  out.cols = cols;
  for (std::size_t k = 0; k < n; ++k) {
    Image img{cols, rows, std::vector<double>(rows * cols)};
    for (std::size_t p = 0; p < rows * cols; ++p) img.pixels[p] = double(ib[16 + k * rows * cols + p]) / 255.0;
    out.images.push_back(std::move(img));
    out.labels.push_back(int(lb[8 + k]));
  }
  return out;
}

}  // namespace opbn
