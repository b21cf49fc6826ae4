#pragma once

// Weak/strong augmentation pairs. Weak views are mild and label-preserving
// (flip + small shift for images, light noise for vectors); strong views add
// a randomized sequence of heavier transforms plus cutout. All randomness
// comes from the caller-supplied seed, derived per (run, epoch, sample, mode).

#include <algorithm>
#include <cmath>

#include "oslt/common.hpp"

namespace oslt {

enum class AugMode { weak, strong };

using RowVec = Eigen::RowVectorXd;

namespace augdetail {

inline double sample_bilinear(const RowVec& img, const DataShape& s, int c, double y, double x) {
  // edge-clamped bilinear lookup
  const auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
  const int y0 = clampi(static_cast<int>(std::floor(y)), 0, s.height - 1);
  const int x0 = clampi(static_cast<int>(std::floor(x)), 0, s.width - 1);
  const int y1 = clampi(y0 + 1, 0, s.height - 1);
  const int x1 = clampi(x0 + 1, 0, s.width - 1);
  const double fy = std::clamp(y - y0, 0.0, 1.0);
  const double fx = std::clamp(x - x0, 0.0, 1.0);
  auto at = [&](int yy, int xx) { return img((static_cast<Eigen::Index>(c) * s.height + yy) * s.width + xx); };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

// output(y,x) = input(A * (x-cx, y-cy) + (cx+tx, cy+ty)), per channel
inline RowVec affine(const RowVec& img, const DataShape& s, double a, double b, double c, double d, double tx,
                     double ty) {
  RowVec out(img.size());
  const double cx = (s.width - 1) / 2.0;
  const double cy = (s.height - 1) / 2.0;
  for (int ch = 0; ch < s.channels; ++ch)
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double sx = a * dx + b * dy + cx + tx;
        const double sy = c * dx + d * dy + cy + ty;
        out((static_cast<Eigen::Index>(ch) * s.height + y) * s.width + x) = sample_bilinear(img, s, ch, sy, sx);
      }
  return out;
}

inline RowVec hflip(const RowVec& img, const DataShape& s) {
  RowVec out(img.size());
  for (int ch = 0; ch < s.channels; ++ch)
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x)
        out((static_cast<Eigen::Index>(ch) * s.height + y) * s.width + x) =
            img((static_cast<Eigen::Index>(ch) * s.height + y) * s.width + (s.width - 1 - x));
  return out;
}

inline RowVec translate_int(const RowVec& img, const DataShape& s, int dx, int dy) {
  RowVec out(img.size());
  const auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
  for (int ch = 0; ch < s.channels; ++ch)
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        const int sy = clampi(y + dy, 0, s.height - 1);
        const int sx = clampi(x + dx, 0, s.width - 1);
        out((static_cast<Eigen::Index>(ch) * s.height + y) * s.width + x) =
            img((static_cast<Eigen::Index>(ch) * s.height + sy) * s.width + sx);
      }
  return out;
}

inline void clamp01(RowVec& v) {
  v = v.cwiseMax(0.0).cwiseMin(1.0);
}

inline RowVec weak_image(RowVec img, const DataShape& s, Rng& rng) {
  if (rng.uniform() < 0.5) img = hflip(img, s);
  const int max_shift = std::max(1, static_cast<int>(std::lround(0.125 * s.width)));
  const int dx = rng.uniform_int(-max_shift, max_shift);
  const int dy = rng.uniform_int(-max_shift, max_shift);
  if (dx != 0 || dy != 0) img = translate_int(img, s, dx, dy);
  return img;
}

inline RowVec strong_image(RowVec img, const DataShape& s, Rng& rng) {
  img = weak_image(std::move(img), s, rng);
  const int num_ops = 2;
  for (int op = 0; op < num_ops; ++op) {
    switch (rng.uniform_int(0, 9)) {
      case 0: {  // brightness
        img.array() += rng.uniform(-0.3, 0.3);
        clamp01(img);
        break;
      }
      case 1: {  // contrast
        const double mean = img.mean();
        img = (img.array() - mean) * rng.uniform(0.5, 1.5) + mean;
        clamp01(img);
        break;
      }
      case 2: {  // solarize
        const double thr = rng.uniform(0.5, 1.0);
        for (Eigen::Index i = 0; i < img.size(); ++i)
          if (img(i) > thr) img(i) = 1.0 - img(i);
        break;
      }
      case 3: {  // invert
        img = 1.0 - img.array();
        break;
      }
      case 4: {  // posterize
        const double levels = rng.uniform_int(4, 8);
        img = (img.array() * levels).floor() / levels;
        break;
      }
      case 5: {  // rotate
        const double ang = rng.uniform(-30.0, 30.0) * M_PI / 180.0;
        img = affine(img, s, std::cos(ang), -std::sin(ang), std::sin(ang), std::cos(ang), 0, 0);
        break;
      }
      case 6: {  // shear x
        img = affine(img, s, 1.0, rng.uniform(-0.3, 0.3), 0.0, 1.0, 0, 0);
        break;
      }
      case 7: {  // shear y
        img = affine(img, s, 1.0, 0.0, rng.uniform(-0.3, 0.3), 1.0, 0, 0);
        break;
      }
      case 8: {  // large translate
        img = affine(img, s, 1.0, 0.0, 0.0, 1.0, rng.uniform(-0.25, 0.25) * s.width,
                     rng.uniform(-0.25, 0.25) * s.height);
        break;
      }
      case 9: {  // autocontrast
        const double lo = img.minCoeff(), hi = img.maxCoeff();
        if (hi - lo > 1e-9) img = (img.array() - lo) / (hi - lo);
        break;
      }
      default:
        break;
    }
  }
  // cutout: square patch to mid-gray
  const int side = std::max(1, s.height / 2);
  const int cy = rng.uniform_int(0, s.height - 1);
  const int cx = rng.uniform_int(0, s.width - 1);
  for (int ch = 0; ch < s.channels; ++ch)
    for (int y = std::max(0, cy - side / 2); y < std::min(s.height, cy + (side + 1) / 2); ++y)
      for (int x = std::max(0, cx - side / 2); x < std::min(s.width, cx + (side + 1) / 2); ++x)
        img((static_cast<Eigen::Index>(ch) * s.height + y) * s.width + x) = 0.5;
  return img;
}

inline RowVec weak_vector(RowVec v, Rng& rng) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += 0.05 * rng.normal();
  return v;
}

inline RowVec strong_vector(RowVec v, Rng& rng) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += 0.3 * rng.normal();
  // coordinate cutout: zero a contiguous block of ~25% of the coordinates
  const auto block = std::max<Eigen::Index>(1, v.size() / 4);
  const auto start = static_cast<Eigen::Index>(rng.uniform_u64(static_cast<std::uint64_t>(v.size())));
  for (Eigen::Index i = 0; i < block; ++i) v((start + i) % v.size()) = 0.0;
  v *= rng.uniform(0.8, 1.2);
  return v;
}

}  // namespace augdetail

inline RowVec augment(const RowVec& sample, const DataShape& shape, AugMode mode, std::uint64_t seed) {
  Rng rng(seed);
  if (shape.is_image()) {
    require(sample.size() == shape.flat(), "augment: sample width does not match shape");
    return mode == AugMode::weak ? augdetail::weak_image(sample, shape, rng)
                                 : augdetail::strong_image(sample, shape, rng);
  }
  return mode == AugMode::weak ? augdetail::weak_vector(sample, rng) : augdetail::strong_vector(sample, rng);
}

// Stream key for a sample's view at a given epoch; keeps augmentation
// reproducible under any batch ordering or prefetch concurrency.
inline std::uint64_t augment_seed(std::uint64_t run_seed, long epoch, long sample_id, AugMode mode) {
  return derive_seed(run_seed, 0xA46, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(sample_id),
                     mode == AugMode::weak ? 0ULL : 1ULL);
}

}  // namespace oslt
