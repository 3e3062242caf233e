#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace bangacmm {

// RGB image, HWC row-major, values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  static constexpr std::size_t channels = 3;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w * 3, fill) {
    if (h == 0 || w == 0) throw ParameterError("image dimensions must be positive");
  }

  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }

  bool in_unit_range() const {
    return std::all_of(pixels.begin(), pixels.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// ---------------------------------------------------------------------------
// Binary PPM (P6, maxval 255)

namespace detail {

inline std::string ppm_token(std::istream& is) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace detail

inline Image read_ppm(std::istream& is) {
  if (detail::ppm_token(is) != "P6") throw ParseError("ppm: expected P6 magic");
  std::size_t w = 0, h = 0;
  int maxval = 0;
  try {
    w = std::stoul(detail::ppm_token(is));
    h = std::stoul(detail::ppm_token(is));
    maxval = std::stoi(detail::ppm_token(is));
  } catch (const std::logic_error&) {
    throw ParseError("ppm: malformed header");
  }
  if (w == 0 || h == 0) throw ParseError("ppm: zero-sized image");
  if (maxval != 255) throw ParseError("ppm: only maxval 255 is supported");
  std::vector<unsigned char> raw(w * h * 3);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw ParseError("ppm: truncated pixel data");
  }
  Image img(h, w);
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / 255.0;
  return img;
}

inline Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open image '" + path + "'");
  return read_ppm(is);
}

inline void write_ppm(std::ostream& os, const Image& img) {
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i] = static_cast<unsigned char>(std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0));
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

inline void write_ppm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write image '" + path + "'");
  write_ppm(os, img);
}

// ---------------------------------------------------------------------------
// Geometry

// Corner-aligned bilinear resampling: output corners sample input corners.
// A one-pixel axis samples the input centre.
inline Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw ParameterError("resize target must be at least 1x1");
  if (out_h == img.height && out_w == img.width) return img;
  auto source = [](std::size_t i, std::size_t out_n, std::size_t in_n) {
    if (out_n == 1) return (static_cast<double>(in_n) - 1.0) / 2.0;
    return static_cast<double>(i) * (static_cast<double>(in_n) - 1.0) / (static_cast<double>(out_n) - 1.0);
  };
  Image out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = source(y, out_h, img.height);
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = source(x, out_w, img.width);
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = img.at(y0, x0, c) * (1.0 - fx) + img.at(y0, x1, c) * fx;
        const double bot = img.at(y1, x0, c) * (1.0 - fx) + img.at(y1, x1, c) * fx;
        out.at(y, x, c) = top * (1.0 - fy) + bot * fy;
      }
    }
  }
  return out;
}

inline Image hflip(const Image& img) {
  Image out(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(y, img.width - 1 - x, c) = img.at(y, x, c);
  return out;
}

// Rotation about the image centre with bilinear sampling; pixels whose source
// falls outside the frame are 0.
inline Image rotate(const Image& img, double degrees) {
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (static_cast<double>(img.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(img.width) - 1.0) / 2.0;
  Image out(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const double sx = cs * dx + sn * dy + cx;
      const double sy = -sn * dx + cs * dy + cy;
      if (sx < 0.0 || sy < 0.0 || sx > static_cast<double>(img.width - 1) ||
          sy > static_cast<double>(img.height - 1)) {
        continue;
      }
      const auto x0 = static_cast<std::size_t>(sx), y0 = static_cast<std::size_t>(sy);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
      const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = img.at(y0, x0, c) * (1.0 - fx) + img.at(y0, x1, c) * fx;
        const double bot = img.at(y1, x0, c) * (1.0 - fx) + img.at(y1, x1, c) * fx;
        out.at(y, x, c) = top * (1.0 - fy) + bot * fy;
      }
    }
  }
  return out;
}

inline Image scale_brightness(const Image& img, double factor) {
  Image out = img;
  for (double& v : out.pixels) v = std::clamp(v * factor, 0.0, 1.0);
  return out;
}

struct AugmentPolicy {
  bool rotate = true;      // uniform angle in [-15, 15] degrees
  bool hflip = true;       // probability 0.5
  bool brightness = true;  // uniform factor in [0.8, 1.2]

  static constexpr double kMaxDegrees = 15.0;
  static constexpr double kFlipProbability = 0.5;
  static constexpr double kBrightnessLow = 0.8;
  static constexpr double kBrightnessHigh = 1.2;

  bool any() const { return rotate || hflip || brightness; }
  static AugmentPolicy none() { return {false, false, false}; }
};

inline Image augment(const Image& img, std::mt19937_64& rng, const AugmentPolicy& policy) {
  Image out = img;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  if (policy.rotate) {
    const double deg = (2.0 * u01(rng) - 1.0) * AugmentPolicy::kMaxDegrees;
    out = rotate(out, deg);
  }
  if (policy.hflip && u01(rng) < AugmentPolicy::kFlipProbability) out = hflip(out);
  if (policy.brightness) {
    const double f = AugmentPolicy::kBrightnessLow +
                     u01(rng) * (AugmentPolicy::kBrightnessHigh - AugmentPolicy::kBrightnessLow);
    out = scale_brightness(out, f);
  }
  for (double& v : out.pixels) v = std::clamp(v, 0.0, 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Filters

namespace detail {

inline std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  if (i < 0) return static_cast<std::size_t>(-i);
  if (i >= static_cast<long>(n)) return 2 * n - 2 - static_cast<std::size_t>(i);
  return static_cast<std::size_t>(i);
}

}  // namespace detail

// 3x3 Gaussian, kernel [1,2,1] x [1,2,1] / 16, reflect padding.
inline Image gaussian_blur3(const Image& img) {
  static constexpr double k[3] = {1.0, 2.0, 1.0};
  Image out(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          const std::size_t yy = detail::reflect_index(static_cast<long>(y) + dy, img.height);
          for (int dx = -1; dx <= 1; ++dx) {
            const std::size_t xx = detail::reflect_index(static_cast<long>(x) + dx, img.width);
            s += k[dy + 1] * k[dx + 1] * img.at(yy, xx, c);
          }
        }
        out.at(y, x, c) = s / 16.0;
      }
    }
  }
  return out;
}

// clamp(img + alpha (img - blurred))
inline Image unsharp(const Image& img, const Image& blurred, double alpha = 1.0) {
  Image out(img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    out.pixels[i] = std::clamp(img.pixels[i] + alpha * (img.pixels[i] - blurred.pixels[i]), 0.0, 1.0);
  }
  return out;
}

// Denoise then sharpen: the blurred image is sharpened against its own blur.
inline Image filter_chain(const Image& img) {
  const Image denoised = gaussian_blur3(img);
  return unsharp(denoised, gaussian_blur3(denoised), 1.0);
}

// ---------------------------------------------------------------------------
// Normalization

using ChannelStats = std::array<double, 3>;

inline constexpr ChannelStats kImageNetMean = {0.485, 0.456, 0.406};
inline constexpr ChannelStats kImageNetStd = {0.229, 0.224, 0.225};

// (pixel - mean_c) / std_c, HWC -> CHW.
inline Tensor normalize_stats(const Image& img, const ChannelStats& mean, const ChannelStats& stdev) {
  for (double s : stdev) {
    if (!(s > 0.0)) throw ParameterError("normalization std must be positive");
  }
  Tensor out({3, img.height, img.width});
  const std::size_t plane = img.height * img.width;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out[c * plane + y * img.width + x] = (img.at(y, x, c) - mean[c]) / stdev[c];
  return out;
}

inline Image denormalize(const Tensor& chw, const ChannelStats& mean, const ChannelStats& stdev) {
  if (chw.rank() != 3 || chw.dim(0) != 3) throw DimensionError("denormalize expects [3 x H x W]");
  Image img(chw.dim(1), chw.dim(2));
  const std::size_t plane = img.height * img.width;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(y, x, c) = chw[c * plane + y * img.width + x] * stdev[c] + mean[c];
  return img;
}

// ---------------------------------------------------------------------------
// Fixed-order preprocessing: resize -> augment (train only) -> filter -> normalize

struct PreprocessConfig {
  std::size_t image_size = 32;
  AugmentPolicy augment;
  bool filters = true;
  ChannelStats mean = kImageNetMean;
  ChannelStats stdev = kImageNetStd;
};

// Collects "STAGE <name> <sample-id>" lines when attached to a pipeline run.
struct PipelineTrace {
  std::vector<std::string> lines;
  void add(const std::string& stage, const std::string& sample_id) {
    lines.push_back("STAGE " + stage + " " + sample_id);
  }
};

inline Tensor preprocess(const Image& img, const PreprocessConfig& cfg, bool train, std::mt19937_64& rng,
                         const std::string& sample_id = "", PipelineTrace* trace = nullptr) {
  auto stage = [&](const char* name) {
    if (trace) trace->add(name, sample_id);
  };
  Image cur = resize_bilinear(img, cfg.image_size, cfg.image_size);
  stage("resize");
  if (train && cfg.augment.any()) {
    cur = augment(cur, rng, cfg.augment);
    stage("augment");
  }
  if (cfg.filters) {
    cur = filter_chain(cur);
    stage("filter_chain");
  }
  Tensor out = normalize_stats(cur, cfg.mean, cfg.stdev);
  stage("normalize_stats");
  return out;
}

// [C x H x W] -> [num_patches x (patch*patch*C)], patches in row-major grid
// order, each flattened as (dy, dx, c).
inline Tensor patchify(const Tensor& chw, std::size_t patch) {
  if (chw.rank() != 3) throw DimensionError("patchify expects [C x H x W], got " + shape_str(chw.shape()));
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (patch == 0 || h % patch || w % patch) throw DimensionError("image size not divisible by patch size");
  const std::size_t gh = h / patch, gw = w / patch, pd = patch * patch * c;
  Tensor out({gh * gw, pd});
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px) {
      const std::size_t row = py * gw + px;
      std::size_t col = 0;
      for (std::size_t dy = 0; dy < patch; ++dy)
        for (std::size_t dx = 0; dx < patch; ++dx)
          for (std::size_t ch = 0; ch < c; ++ch)
            out[row * pd + col++] = chw[ch * h * w + (py * patch + dy) * w + px * patch + dx];
    }
  return out;
}

}  // namespace bangacmm
