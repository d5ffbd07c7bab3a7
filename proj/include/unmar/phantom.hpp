#ifndef UNMAR_PHANTOM_HPP
#define UNMAR_PHANTOM_HPP

#include <vector>

#include "unmar/image.hpp"

namespace unmar {

/// One additive ellipse in normalized [-1,1] coordinates.
struct Ellipse {
  double cx = 0.0, cy = 0.0;   // center
  double a = 0.5, b = 0.5;     // half-axes
  double angle_deg = 0.0;      // rotation of the major axis
  double intensity = 1.0;      // added inside the ellipse
};

struct PhantomSpec {
  int size = 128;
  std::vector<Ellipse> ellipses;
};

/// Head-phantom ellipse set (modified Shepp-Logan intensities, which keep the
/// brain interior visibly above background).
inline PhantomSpec default_head_phantom(int size) {
  PhantomSpec spec;
  spec.size = size;
  spec.ellipses = {
      {0.0, 0.0, 0.69, 0.92, 0.0, 1.0},
      {0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8},
      {0.22, 0.0, 0.11, 0.31, -18.0, -0.2},
      {-0.22, 0.0, 0.16, 0.41, 18.0, -0.2},
      {0.0, 0.35, 0.21, 0.25, 0.0, 0.1},
      {0.0, 0.1, 0.046, 0.046, 0.0, 0.1},
      {0.0, -0.1, 0.046, 0.046, 0.0, 0.1},
      {-0.08, -0.605, 0.046, 0.023, 0.0, 0.1},
      {0.0, -0.606, 0.023, 0.023, 0.0, 0.1},
      {0.06, -0.605, 0.023, 0.046, 0.0, 0.1},
  };
  return spec;
}

/// Renders the additive ellipse sum, clipped to [0,1], with 2x2 supersampling
/// to soften edges. The seed jitters every ellipse parameter by up to +-5%
/// (centers move relative to their axis lengths) for dataset diversity.
inline Image render_phantom(const PhantomSpec& spec, uint64_t seed) {
  if (spec.size < 16)
    throw ConfigError(fmt::format("render_phantom: size {} < 16", spec.size));
  Rng rng(derive_seed(seed, "phantom"));
  std::vector<Ellipse> es = spec.ellipses;
  for (Ellipse& e : es) {
    auto j = [&rng]() { return rng.uniform(-0.05, 0.05); };
    e.a *= 1.0 + j();
    e.b *= 1.0 + j();
    e.intensity *= 1.0 + j();
    e.cx += j() * e.a;
    e.cy += j() * e.b;
    e.angle_deg += j() * 90.0;
  }

  struct Prepared {
    double cx, cy, cs, sn, inv_a2, inv_b2, intensity;
  };
  std::vector<Prepared> ps;
  ps.reserve(es.size());
  for (const Ellipse& e : es) {
    double rad = e.angle_deg * 3.14159265358979323846 / 180.0;
    ps.push_back({e.cx, e.cy, std::cos(rad), std::sin(rad),
                  1.0 / (e.a * e.a), 1.0 / (e.b * e.b), e.intensity});
  }

  const int n = spec.size;
  Image out(n, n);
  const double step = 2.0 / n;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      double acc = 0.0;
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          double x = -1.0 + (c + 0.25 + 0.5 * sx) * step;
          double y = 1.0 - (r + 0.25 + 0.5 * sy) * step;
          for (const Prepared& p : ps) {
            double dx = x - p.cx, dy = y - p.cy;
            double u = dx * p.cs + dy * p.sn;
            double v = -dx * p.sn + dy * p.cs;
            if (u * u * p.inv_a2 + v * v * p.inv_b2 <= 1.0) acc += p.intensity;
          }
        }
      }
      out.at(r, c) = static_cast<float>(std::clamp(acc / 4.0, 0.0, 1.0));
    }
  }
  return out;
}

}  // namespace unmar

#endif  // UNMAR_PHANTOM_HPP
