#ifndef UNMAR_METRICS_HPP
#define UNMAR_METRICS_HPP

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include <json.hpp>

#include "unmar/image.hpp"

namespace unmar {

constexpr double kSsimC1 = 0.01 * 0.01;  // (0.01*L)^2, L=1
constexpr double kSsimC2 = 0.03 * 0.03;  // (0.03*L)^2

namespace detail {

/// Normalized 1-D Gaussian taps, sigma 1.5.
inline std::vector<double> gaussian_kernel(int win) {
  std::vector<double> k(win);
  const double sigma = 1.5;
  const double c = (win - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < win; ++i) {
    k[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

/// Largest odd window <= 11 that fits the image.
inline int ssim_window(int h, int w) {
  int win = std::min(11, std::min(h, w));
  if (win % 2 == 0) --win;
  return std::max(win, 1);
}

/// Separable valid-mode filter of a float image into doubles.
inline std::vector<double> filter_valid(const Image& img,
                                        const std::vector<double>& k) {
  const int win = static_cast<int>(k.size());
  const int hw = img.w - win + 1;  // after horizontal pass
  std::vector<double> tmp(static_cast<size_t>(img.h) * hw);
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < hw; ++c) {
      double acc = 0.0;
      for (int i = 0; i < win; ++i) acc += k[i] * img.at(r, c + i);
      tmp[static_cast<size_t>(r) * hw + c] = acc;
    }
  const int hh = img.h - win + 1;
  std::vector<double> out(static_cast<size_t>(hh) * hw);
  for (int r = 0; r < hh; ++r)
    for (int c = 0; c < hw; ++c) {
      double acc = 0.0;
      for (int i = 0; i < win; ++i) acc += k[i] * tmp[static_cast<size_t>(r + i) * hw + c];
      out[static_cast<size_t>(r) * hw + c] = acc;
    }
  return out;
}

inline double ssim_term(double mx, double my, double vx, double vy, double cov) {
  const double num = (2.0 * mx * my + kSsimC1) * (2.0 * cov + kSsimC2);
  const double den = (mx * mx + my * my + kSsimC1) * (vx + vy + kSsimC2);
  return num / den;
}

}  // namespace detail

/// Structural similarity. Windowed mode (the default everywhere) slides an
/// 11x11 Gaussian window (sigma 1.5, valid positions only) and averages;
/// global mode applies the formula once with whole-image statistics.
inline double ssim(const Image& x, const Image& y, bool windowed = true) {
  check_same_shape("ssim", x, y);
  if (x.px.empty()) throw DataError("ssim: empty image");

  if (!windowed) {
    double mx = 0, my = 0;
    for (size_t i = 0; i < x.px.size(); ++i) {
      mx += x.px[i];
      my += y.px[i];
    }
    const double n = static_cast<double>(x.px.size());
    mx /= n;
    my /= n;
    double vx = 0, vy = 0, cov = 0;
    for (size_t i = 0; i < x.px.size(); ++i) {
      const double dx = x.px[i] - mx, dy = y.px[i] - my;
      vx += dx * dx;
      vy += dy * dy;
      cov += dx * dy;
    }
    return detail::ssim_term(mx, my, vx / n, vy / n, cov / n);
  }

  const int win = detail::ssim_window(x.h, x.w);
  const std::vector<double> k = detail::gaussian_kernel(win);
  Image xx(x.h, x.w), yy(x.h, x.w), xy(x.h, x.w);
  for (size_t i = 0; i < x.px.size(); ++i) {
    xx.px[i] = x.px[i] * x.px[i];
    yy.px[i] = y.px[i] * y.px[i];
    xy.px[i] = x.px[i] * y.px[i];
  }
  const auto mx = detail::filter_valid(x, k);
  const auto my = detail::filter_valid(y, k);
  const auto ex2 = detail::filter_valid(xx, k);
  const auto ey2 = detail::filter_valid(yy, k);
  const auto exy = detail::filter_valid(xy, k);
  double acc = 0.0;
  for (size_t i = 0; i < mx.size(); ++i)
    acc += detail::ssim_term(mx[i], my[i], ex2[i] - mx[i] * mx[i],
                             ey2[i] - my[i] * my[i], exy[i] - mx[i] * my[i]);
  return acc / static_cast<double>(mx.size());
}

inline double mse(const Image& x, const Image& y) {
  check_same_shape("mse", x, y);
  double acc = 0.0;
  for (size_t i = 0; i < x.px.size(); ++i) {
    const double d = static_cast<double>(x.px[i]) - y.px[i];
    acc += d * d;
  }
  return acc / static_cast<double>(x.px.size());
}

/// 10*log10(max^2/mse); zero error maps to the +infinity sentinel.
inline double psnr_from_mse(double mse_value, double max_value = 1.0) {
  if (max_value <= 0.0)
    throw ConfigError(fmt::format("psnr: max_value {} must be > 0", max_value));
  if (mse_value < 0.0)
    throw ConfigError(fmt::format("psnr: mse {} must be >= 0", mse_value));
  if (mse_value == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_value * max_value / mse_value);
}

inline double psnr(const Image& x, const Image& y, double max_value = 1.0) {
  return psnr_from_mse(mse(x, y), max_value);
}

struct MetricReport {
  double ssim = 0.0;
  double psnr = 0.0;  // mean over finite pairs; +inf if every pair was exact
  double mse = 0.0;
  int n_images = 0;
  int n_inf_psnr = 0;

  std::string to_text() const {
    return fmt::format("ssim={:.6f}\npsnr={}\nmse={:.8g}\nn_images={}\nn_inf_psnr={}\n",
                       ssim, std::isinf(psnr) ? "inf" : fmt::format("{:.4f}", psnr),
                       mse, n_images, n_inf_psnr);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["ssim"] = ssim;
    if (std::isinf(psnr))
      j["psnr"] = "inf";
    else
      j["psnr"] = psnr;
    j["mse"] = mse;
    j["n_images"] = n_images;
    j["n_inf_psnr"] = n_inf_psnr;
    return j;
  }
};

/// Mean windowed SSIM and mean PSNR over (restored, reference) pairs.
/// Infinite PSNRs (exact pairs) are excluded from the mean and counted.
inline MetricReport evaluate_set(
    const std::vector<std::pair<Image, Image>>& pairs) {
  if (pairs.empty()) throw DataError("evaluate_set: no image pairs");
  MetricReport rep;
  rep.n_images = static_cast<int>(pairs.size());
  double psnr_acc = 0.0;
  int psnr_n = 0;
  for (const auto& [restored, reference] : pairs) {
    rep.ssim += ssim(restored, reference);
    rep.mse += mse(restored, reference);
    const double p = psnr(restored, reference);
    if (std::isinf(p)) {
      ++rep.n_inf_psnr;
    } else {
      psnr_acc += p;
      ++psnr_n;
    }
  }
  rep.ssim /= rep.n_images;
  rep.mse /= rep.n_images;
  rep.psnr = psnr_n > 0 ? psnr_acc / psnr_n
                        : std::numeric_limits<double>::infinity();
  return rep;
}

}  // namespace unmar

#endif  // UNMAR_METRICS_HPP
