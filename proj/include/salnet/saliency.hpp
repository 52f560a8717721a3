#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "salnet/core.hpp"
#include "salnet/image.hpp"

namespace salnet {

enum class MaskProvenance { oracle, heuristic, file, dilated };

// Per-pixel foreground relevance in [0,1], same spatial shape as its image.
struct SaliencyMask {
  int height = 0;
  int width = 0;
  std::vector<double> values;
  MaskProvenance provenance = MaskProvenance::oracle;
  double dilation_radius = 0.0;  // meaningful when provenance == dilated
  bool degenerate = false;       // heuristic fallback on a constant image

  SaliencyMask() = default;
  SaliencyMask(int h, int w, MaskProvenance p) : height(h), width(w), provenance(p) {
    values.assign(static_cast<std::size_t>(h) * w, 0.0);
  }
  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// Background-prior contrast heuristic: distance to the mean color of the
// one-pixel border frame, 3x3 box smoothed, min-max normalized.
inline SaliencyMask heuristic_mask(const Image& img) {
  if (img.height < 8 || img.width < 8)
    throw config_error("heuristic_mask needs at least 8x8 images");
  int H = img.height, W = img.width, C = img.channels;
  std::vector<double> border_mean(static_cast<std::size_t>(C), 0.0);
  int border_count = 0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (y != 0 && y != H - 1 && x != 0 && x != W - 1) continue;
      for (int c = 0; c < C; ++c) border_mean[static_cast<std::size_t>(c)] += img.at(c, y, x);
      ++border_count;
    }
  }
  for (double& v : border_mean) v /= border_count;

  std::vector<double> contrast(static_cast<std::size_t>(H) * W);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int c = 0; c < C; ++c) {
        double d = img.at(c, y, x) - border_mean[static_cast<std::size_t>(c)];
        acc += d * d;
      }
      contrast[static_cast<std::size_t>(y) * W + x] = std::sqrt(acc);
    }
  }

  SaliencyMask mask(H, W, MaskProvenance::heuristic);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      int cnt = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
          acc += contrast[static_cast<std::size_t>(yy) * W + xx];
          ++cnt;
        }
      }
      mask.at(y, x) = acc / cnt;
    }
  }
  double lo = *std::min_element(mask.values.begin(), mask.values.end());
  double hi = *std::max_element(mask.values.begin(), mask.values.end());
  if (hi == lo) {
    std::fill(mask.values.begin(), mask.values.end(), 0.0);
    mask.degenerate = true;
    return mask;
  }
  for (double& v : mask.values) v = (v - lo) / (hi - lo);
  return mask;
}

// F = h.I per channel; B is stored as the complement I - F, nudged by at most
// one ulp where rounding would break it, so F + B reproduces I bitwise.
inline std::pair<Image, Image> split(const Image& img, const SaliencyMask& mask) {
  if (img.height != mask.height || img.width != mask.width)
    throw config_error("split: mask shape " + std::to_string(mask.height) + "x" +
                       std::to_string(mask.width) + " does not match image " +
                       std::to_string(img.height) + "x" + std::to_string(img.width));
  Image fg(img.channels, img.height, img.width);
  Image bg(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        double v = img.at(c, y, x);
        double f = mask.at(y, x) * v;
        // walk b (and if a round-to-even tie blocks every neighbor, nudge f)
        // until f + b == v holds bitwise
        auto settle = [v](double fv, double& bv) {
          bv = v - fv;
          for (int step = 0; step < 3; ++step) {
            if (fv + bv == v) return true;
            bv = std::nextafter(bv, fv + bv < v ? HUGE_VAL : -HUGE_VAL);
          }
          return fv + bv == v;
        };
        double b = 0.0;
        if (!settle(f, b)) {
          f = std::nextafter(f, 0.0);
          if (!settle(f, b)) throw numeric_error("split: reconstruction does not converge");
        }
        fg.at(c, y, x) = f;
        bg.at(c, y, x) = b;
      }
    }
  }
  return {std::move(fg), std::move(bg)};
}

// Gaussian soft-dilation: truncated kernel with unit peak (not unit mass),
// then a binarizing threshold. Unit peak makes the thresholded foreground
// monotone non-shrinking in the radius, which is the point of dilation.
inline SaliencyMask dilate(const SaliencyMask& mask, double radius, double threshold) {
  if (radius < 0.0) throw config_error("dilate: radius must be >= 0");
  if (!(threshold > 0.0 && threshold < 1.0))
    throw config_error("dilate: threshold must lie in (0,1)");
  SaliencyMask out(mask.height, mask.width, MaskProvenance::dilated);
  out.dilation_radius = radius;
  if (radius == 0.0) {
    for (std::size_t i = 0; i < mask.values.size(); ++i)
      out.values[i] = mask.values[i] > threshold ? 1.0 : 0.0;
    return out;
  }
  int reach = static_cast<int>(std::ceil(3.0 * radius));
  std::vector<double> kernel(static_cast<std::size_t>(2 * reach + 1));
  for (int d = -reach; d <= reach; ++d)
    kernel[static_cast<std::size_t>(d + reach)] =
        std::exp(-static_cast<double>(d) * d / (2.0 * radius * radius));

  int H = mask.height, W = mask.width;
  std::vector<double> tmp(static_cast<std::size_t>(H) * W, 0.0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int d = -reach; d <= reach; ++d) {
        int xx = x + d;
        if (xx < 0 || xx >= W) continue;
        acc += kernel[static_cast<std::size_t>(d + reach)] *
               mask.values[static_cast<std::size_t>(y) * W + xx];
      }
      tmp[static_cast<std::size_t>(y) * W + x] = acc;
    }
  }
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int d = -reach; d <= reach; ++d) {
        int yy = y + d;
        if (yy < 0 || yy >= H) continue;
        acc += kernel[static_cast<std::size_t>(d + reach)] *
               tmp[static_cast<std::size_t>(yy) * W + x];
      }
      out.at(y, x) = acc > threshold ? 1.0 : 0.0;
    }
  }
  return out;
}

}  // namespace salnet
