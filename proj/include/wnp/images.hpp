#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "wnp/core.hpp"

namespace wnp {

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kTileSide = 4;
inline constexpr std::size_t kTilesPerSide = kImageSide / kTileSide;
inline constexpr std::size_t kTileCount = kTilesPerSide * kTilesPerSide;

/// Row-major, channel-last pixel array with values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return pixels[(y * width + x) * channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }

  bool operator==(const Image&) const = default;
};

/// An image cut into an 8x8 grid of 4x4 tiles. Tile t covers pixel rows
/// 4*(t/8) .. +3 and columns 4*(t%8) .. +3; each tile is flattened row-major
/// with channels last.
struct TileGrid {
  std::size_t channels = 1;
  std::vector<std::vector<double>> tiles;

  std::size_t tile_width() const { return kTileSide * kTileSide * channels; }
};

inline TileGrid image_to_tiles(const Image& image) {
  if (image.height != kImageSide || image.width != kImageSide) {
    throw ContractError("image_to_tiles: expected a 32x32 image, got " +
                        std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  if (image.channels != 1 && image.channels != 3) {
    throw ContractError("image_to_tiles: images must have 1 or 3 channels");
  }
  TileGrid grid;
  grid.channels = image.channels;
  grid.tiles.resize(kTileCount);
  for (std::size_t t = 0; t < kTileCount; ++t) {
    const std::size_t y0 = (t / kTilesPerSide) * kTileSide;
    const std::size_t x0 = (t % kTilesPerSide) * kTileSide;
    auto& tile = grid.tiles[t];
    tile.reserve(grid.tile_width());
    for (std::size_t dy = 0; dy < kTileSide; ++dy)
      for (std::size_t dx = 0; dx < kTileSide; ++dx)
        for (std::size_t c = 0; c < image.channels; ++c) tile.push_back(image.at(y0 + dy, x0 + dx, c));
  }
  return grid;
}

inline Image tiles_to_image(const TileGrid& grid) {
  if (grid.tiles.size() != kTileCount) {
    throw ContractError("tiles_to_image: expected 64 tiles, got " + std::to_string(grid.tiles.size()));
  }
  Image image(kImageSide, kImageSide, grid.channels);
  for (std::size_t t = 0; t < kTileCount; ++t) {
    const auto& tile = grid.tiles[t];
    if (tile.size() != grid.tile_width()) throw ContractError("tiles_to_image: ragged tile");
    const std::size_t y0 = (t / kTilesPerSide) * kTileSide;
    const std::size_t x0 = (t % kTilesPerSide) * kTileSide;
    std::size_t k = 0;
    for (std::size_t dy = 0; dy < kTileSide; ++dy)
      for (std::size_t dx = 0; dx < kTileSide; ++dx)
        for (std::size_t c = 0; c < grid.channels; ++c) image.at(y0 + dy, x0 + dx, c) = tile[k++];
  }
  return image;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

enum class SynthKind { gradient, blobs, stripes };

inline SynthKind parse_synth_kind(const std::string& s) {
  if (s == "gradient") return SynthKind::gradient;
  if (s == "blobs") return SynthKind::blobs;
  if (s == "stripes") return SynthKind::stripes;
  throw ContractError("unknown synthetic image kind '" + s + "'");
}

namespace detail {

inline Image synth_one(SynthKind kind, std::size_t channels, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Image img(kImageSide, kImageSide, channels);
  const double side = static_cast<double>(kImageSide);
  switch (kind) {
    case SynthKind::gradient: {
      // Linear ramp along a random direction; each channel interpolates
      // between two random levels with lo < hi.
      const double angle = 2.0 * std::numbers::pi * unit(rng);
      const double ux = std::cos(angle), uy = std::sin(angle);
      double lo_proj = 1e300, hi_proj = -1e300;
      for (double y : {0.0, side - 1}) {
        for (double x : {0.0, side - 1}) {
          lo_proj = std::min(lo_proj, ux * x + uy * y);
          hi_proj = std::max(hi_proj, ux * x + uy * y);
        }
      }
      std::vector<double> lo(channels), hi(channels);
      for (std::size_t c = 0; c < channels; ++c) {
        const double a = unit(rng), b = unit(rng);
        lo[c] = std::min(a, b) * 0.5;
        hi[c] = 0.5 + std::max(a, b) * 0.5;
      }
      for (std::size_t y = 0; y < kImageSide; ++y)
        for (std::size_t x = 0; x < kImageSide; ++x) {
          const double t = (ux * x + uy * y - lo_proj) / (hi_proj - lo_proj);
          for (std::size_t c = 0; c < channels; ++c) img.at(y, x, c) = lo[c] + (hi[c] - lo[c]) * t;
        }
      break;
    }
    case SynthKind::blobs: {
      const std::size_t count = 1 + static_cast<std::size_t>(unit(rng) * 3.0);
      std::vector<double> background(channels);
      for (double& b : background) b = 0.2 * unit(rng);
      for (std::size_t y = 0; y < kImageSide; ++y)
        for (std::size_t x = 0; x < kImageSide; ++x)
          for (std::size_t c = 0; c < channels; ++c) img.at(y, x, c) = background[c];
      for (std::size_t b = 0; b < std::min<std::size_t>(count, 3); ++b) {
        const double cx = side * unit(rng), cy = side * unit(rng);
        const double width = 3.0 + 5.0 * unit(rng);
        std::vector<double> amp(channels);
        for (double& a : amp) a = 0.3 + 0.7 * unit(rng);
        for (std::size_t y = 0; y < kImageSide; ++y)
          for (std::size_t x = 0; x < kImageSide; ++x) {
            const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            const double w = std::exp(-0.5 * d2 / (width * width));
            for (std::size_t c = 0; c < channels; ++c) img.at(y, x, c) += amp[c] * w;
          }
      }
      for (double& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
      break;
    }
    case SynthKind::stripes: {
      const double period = 4.0 + 8.0 * unit(rng);
      const double angle = std::numbers::pi * unit(rng);
      const double phase = 2.0 * std::numbers::pi * unit(rng);
      const double ux = std::cos(angle), uy = std::sin(angle);
      std::vector<double> contrast(channels);
      for (double& k : contrast) k = 0.5 + 0.5 * unit(rng);
      for (std::size_t y = 0; y < kImageSide; ++y)
        for (std::size_t x = 0; x < kImageSide; ++x) {
          const double s = std::sin(2.0 * std::numbers::pi * (ux * x + uy * y) / period + phase);
          for (std::size_t c = 0; c < channels; ++c) img.at(y, x, c) = 0.5 + 0.5 * contrast[c] * s;
        }
      break;
    }
  }
  return img;
}

}  // namespace detail

/// n procedurally generated 32x32 images; image i is drawn from seed + i.
inline std::vector<Image> synth_images(std::size_t n, SynthKind kind, std::size_t channels,
                                       std::uint64_t seed) {
  if (n == 0) throw ContractError("synth_images: need at least one image");
  if (channels != 1 && channels != 3) throw ContractError("synth_images: channels must be 1 or 3");
  std::vector<Image> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(seed + i);
    out.push_back(detail::synth_one(kind, channels, rng));
  }
  return out;
}

/// Mixed corpus cycling gradient, blobs and stripes by image index.
inline std::vector<Image> synth_corpus(std::size_t n, std::size_t channels, std::uint64_t seed) {
  if (n == 0) throw ContractError("synth_corpus: need at least one image");
  if (channels != 1 && channels != 3) throw ContractError("synth_corpus: channels must be 1 or 3");
  static constexpr SynthKind kinds[] = {SynthKind::gradient, SynthKind::blobs, SynthKind::stripes};
  std::vector<Image> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(seed + i);
    out.push_back(detail::synth_one(kinds[i % 3], channels, rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary PGM (P5) / PPM (P6), 8-bit.

struct PnmImage {
  Image image;      // values normalised to [0, 1]
  unsigned maxval;  // as stored in the file
};

namespace detail {

inline std::size_t read_pnm_number(std::istream& in, const std::string& what) {
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = in.get();
  }
  if (ch == EOF || !std::isdigit(ch)) throw std::runtime_error("bad PNM header: missing " + what);
  std::size_t v = 0;
  while (ch != EOF && std::isdigit(ch)) {
    v = v * 10 + static_cast<std::size_t>(ch - '0');
    ch = in.get();
  }
  // The single whitespace byte after the number has been consumed.
  return v;
}

}  // namespace detail

inline PnmImage read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    throw std::runtime_error(path.string() + ": not a binary PGM/PPM file");
  }
  const std::size_t channels = magic[1] == '6' ? 3 : 1;
  const std::size_t width = detail::read_pnm_number(in, "width");
  const std::size_t height = detail::read_pnm_number(in, "height");
  const std::size_t maxval = detail::read_pnm_number(in, "maxval");
  if (width == 0 || height == 0) throw std::runtime_error(path.string() + ": empty image");
  if (maxval == 0 || maxval > 255) {
    throw std::runtime_error(path.string() + ": only 8-bit PNM files are supported");
  }
  std::vector<unsigned char> raw(width * height * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw std::runtime_error(path.string() + ": truncated pixel data");
  PnmImage out{Image(height, width, channels), static_cast<unsigned>(maxval)};
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out.image.pixels[i] = static_cast<double>(raw[i]) / static_cast<double>(maxval);
  }
  return out;
}

/// Writes P5 (1 channel) or P6 (3 channels) with maxval 255.
inline void write_pnm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw ContractError("write_pnm: images must have 1 or 3 channels");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << (image.channels == 3 ? "P6" : "P5") << '\n'
      << image.width << ' ' << image.height << '\n'
      << 255 << '\n';
  for (double v : image.pixels) {
    const auto byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    out.put(static_cast<char>(byte));
  }
}

/// Area-weighted resampling of a square image to side x side.
inline Image box_resample(const Image& src, std::size_t side) {
  if (src.height != src.width) throw ContractError("box_resample: source must be square");
  const std::size_t n = src.height;
  // weights[o][s]: overlap of source cell s with output cell o, normalised.
  const double ratio = static_cast<double>(n) / static_cast<double>(side);
  std::vector<std::vector<std::pair<std::size_t, double>>> weights(side);
  for (std::size_t o = 0; o < side; ++o) {
    const double lo = o * ratio, hi = (o + 1) * ratio;
    for (auto s = static_cast<std::size_t>(lo); s < n && static_cast<double>(s) < hi; ++s) {
      const double overlap = std::min<double>(hi, s + 1.0) - std::max<double>(lo, s);
      if (overlap > 0.0) weights[o].emplace_back(s, overlap / ratio);
    }
  }
  Image out(side, side, src.channels);
  for (std::size_t oy = 0; oy < side; ++oy)
    for (std::size_t ox = 0; ox < side; ++ox)
      for (std::size_t c = 0; c < src.channels; ++c) {
        double acc = 0.0;
        for (auto [sy, wy] : weights[oy])
          for (auto [sx, wx] : weights[ox]) acc += wy * wx * src.at(sy, sx, c);
        out.at(oy, ox, c) = acc;
      }
  return out;
}

inline Image convert_channels(const Image& src, std::size_t channels) {
  if (channels == 0 || channels == src.channels) return src;
  Image out(src.height, src.width, channels);
  for (std::size_t y = 0; y < src.height; ++y)
    for (std::size_t x = 0; x < src.width; ++x) {
      if (channels == 1) {
        out.at(y, x) = 0.299 * src.at(y, x, 0) + 0.587 * src.at(y, x, 1) + 0.114 * src.at(y, x, 2);
      } else {
        for (std::size_t c = 0; c < channels; ++c) out.at(y, x, c) = src.at(y, x, 0);
      }
    }
  return out;
}

/// Loads PGM/PPM files from `dir` (sorted by name), centre-crops each to a
/// square and box-averages it down to 32x32. `channels` = 0 keeps the file's
/// channel count. Unreadable files are skipped with a warning on stderr.
inline std::vector<Image> ingest_image_dir(const std::filesystem::path& dir, std::size_t limit,
                                           std::size_t channels = 0) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("image directory " + dir.string() + " does not exist");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Image> out;
  for (const auto& f : files) {
    if (limit != 0 && out.size() >= limit) break;
    try {
      Image img = read_pnm(f).image;
      const std::size_t side = std::min(img.height, img.width);
      if (side < kImageSide) throw std::runtime_error("smaller than 32x32");
      Image crop(side, side, img.channels);
      const std::size_t y0 = (img.height - side) / 2, x0 = (img.width - side) / 2;
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x)
          for (std::size_t c = 0; c < img.channels; ++c) crop.at(y, x, c) = img.at(y0 + y, x0 + x, c);
      out.push_back(convert_channels(box_resample(crop, kImageSide), channels));
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping " << f.string() << ": " << e.what() << '\n';
    }
  }
  if (out.empty()) throw std::runtime_error("no readable PGM/PPM images in " + dir.string());
  return out;
}

}  // namespace wnp
