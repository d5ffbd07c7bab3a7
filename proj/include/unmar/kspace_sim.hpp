#ifndef UNMAR_KSPACE_SIM_HPP
#define UNMAR_KSPACE_SIM_HPP

#include <algorithm>
#include <cstdlib>
#include <numeric>
#include <vector>

#include "unmar/fft.hpp"
#include "unmar/image.hpp"

namespace unmar {

/// Motion model: the scan fills k-space lines center-out in echo groups of
/// eg_size lines. Each period starts with ts_eg groups from the still subject
/// and continues with corrupt_eg groups taken from a rotated (moved) subject.
struct MotionSpec {
  int eg_size = 10;
  int ts_eg = 3;
  int corrupt_eg = 9;
  std::vector<double> angles_deg = {5.0, -5.0};
};

/// Rotates counterclockwise about the pixel-grid center ((h-1)/2, (w-1)/2)
/// with bilinear interpolation; samples falling outside read as zero.
inline Image rotate(const Image& img, double angle_deg) {
  const int h = img.h, w = img.w;
  Image out(h, w);
  const double rad = angle_deg * 3.14159265358979323846 / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      // inverse map: rotate the output coordinate by -angle
      double dy = r - cy, dx = c - cx;
      double sx = cx + dx * cs + dy * sn;
      double sy = cy - dx * sn + dy * cs;
      int x0 = static_cast<int>(std::floor(sx));
      int y0 = static_cast<int>(std::floor(sy));
      double fx = sx - x0, fy = sy - y0;
      auto px = [&](int y, int x) -> double {
        if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
        return img.at(y, x);
      };
      double v = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                 fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
      out.at(r, c) = static_cast<float>(v);
    }
  }
  return out;
}

/// Row acquisition order: center row (height/2) first, then outward by
/// distance, lower index first on ties.
inline std::vector<int> line_order_center_out(int height) {
  if (height < 1)
    throw ConfigError(fmt::format("line_order_center_out: height {} < 1", height));
  std::vector<int> order(height);
  std::iota(order.begin(), order.end(), 0);
  const int center = height / 2;
  std::stable_sort(order.begin(), order.end(), [center](int a, int b) {
    return std::abs(a - center) < std::abs(b - center);
  });
  return order;
}

/// Per-row provenance after splicing: 0 = clean, 1+i = corrupted_sources[i].
struct SpliceResult {
  KSpace k;
  std::vector<int> mask;
};

inline SpliceResult splice_kspace(const KSpace& clean,
                                  const std::vector<KSpace>& sources,
                                  const MotionSpec& spec,
                                  int source_start = 0, int phase_eg = 0) {
  if (sources.empty())
    throw ConfigError("splice_kspace: no corrupted sources");
  if (spec.eg_size < 1 || spec.ts_eg < 1 || spec.corrupt_eg < 1)
    throw ConfigError(
        fmt::format("splice_kspace: eg_size={} ts_eg={} corrupt_eg={} must all be >= 1",
                    spec.eg_size, spec.ts_eg, spec.corrupt_eg));
  if (phase_eg < 0 || phase_eg >= spec.ts_eg)
    throw ConfigError(fmt::format(
        "splice_kspace: phase_eg {} outside the clean interval [0, {})",
        phase_eg, spec.ts_eg));
  for (const KSpace& s : sources)
    if (s.h != clean.h || s.w != clean.w)
      throw ShapeError(fmt::format("splice_kspace: source {}x{} vs clean {}x{}",
                                   s.h, s.w, clean.h, clean.w));

  const int h = clean.h;
  const std::vector<int> order = line_order_center_out(h);
  SpliceResult res;
  res.k = clean;
  res.mask.assign(h, 0);

  const int period = spec.ts_eg + spec.corrupt_eg;
  const int n_src = static_cast<int>(sources.size());
  const int n_groups = (h + spec.eg_size - 1) / spec.eg_size;
  for (int g = 0; g < n_groups; ++g) {
    const int pos = (g + phase_eg) % period;
    if (pos < spec.ts_eg) continue;          // still-subject group
    const int block = (g + phase_eg) / period;  // one corrupted block per period
    const int src = ((source_start + block) % n_src + n_src) % n_src;
    const int lo = g * spec.eg_size;
    const int hi = std::min(lo + spec.eg_size, h);
    for (int i = lo; i < hi; ++i) {
      const int row = order[i];
      for (int c = 0; c < clean.w; ++c)
        res.k.at(row, c) = sources[src].at(row, c);
      res.mask[row] = 1 + src;
    }
  }
  return res;
}

struct SimResult {
  Image corrupted;
  std::vector<int> mask;
};

/// Full pipeline: rotate the clean image by each angle, transform everything
/// to k-space, splice per the motion spec, and reconstruct the corrupted
/// magnitude image clipped to [0,1]. The seed picks which rotation the first
/// corrupted block uses and jitters the pattern phase within the leading
/// clean block, so the acquisition still opens motion-free at the k-space
/// center but the corrupted-line fraction averages to
/// corrupt_eg/(corrupt_eg+ts_eg) over many simulations instead of sitting on
/// one truncation-biased value.
inline SimResult simulate_motion(const Image& clean, const MotionSpec& spec,
                                 uint64_t seed) {
  if (spec.angles_deg.empty())
    throw ConfigError("simulate_motion: no motion angles");
  float lo = 0.0f, hi = 0.0f;
  if (!clean.px.empty()) {
    auto [mn, mx] = std::minmax_element(clean.px.begin(), clean.px.end());
    lo = *mn;
    hi = *mx;
  }
  if (lo < -1e-6f || hi > 1.0f + 1e-6f)
    throw DataError(fmt::format(
        "simulate_motion: image values [{:.4g}, {:.4g}] outside [0,1]", lo, hi));

  const KSpace k_clean = fft2(to_complex(clean));
  std::vector<KSpace> k_rot;
  k_rot.reserve(spec.angles_deg.size());
  for (double a : spec.angles_deg)
    k_rot.push_back(fft2(to_complex(rotate(clean, a))));

  Rng rng(derive_seed(seed, "splice"));
  const int start =
      static_cast<int>(rng.uniform_int(static_cast<uint64_t>(k_rot.size())));
  const int n_groups = (clean.h + spec.eg_size - 1) / spec.eg_size;
  const int phase_mod = std::min(spec.ts_eg, n_groups);
  const int phase =
      static_cast<int>(rng.uniform_int(static_cast<uint64_t>(phase_mod)));
  SpliceResult sp = splice_kspace(k_clean, k_rot, spec, start, phase);

  SimResult res;
  res.corrupted = clip01(magnitude(ifft2(sp.k)));
  res.mask = std::move(sp.mask);
  return res;
}

/// Fraction of k-space rows whose data came from a moved subject.
inline double corrupted_fraction(const std::vector<int>& mask) {
  if (mask.empty()) throw ConfigError("corrupted_fraction: empty mask");
  int n = 0;
  for (int m : mask) n += (m != 0);
  return static_cast<double>(n) / static_cast<double>(mask.size());
}

}  // namespace unmar

#endif  // UNMAR_KSPACE_SIM_HPP
