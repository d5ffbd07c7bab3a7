#ifndef UNMAR_LOSSES_HPP
#define UNMAR_LOSSES_HPP

#include "unmar/metrics.hpp"
#include "unmar/ops.hpp"

namespace unmar {

struct LossWeights {
  float lambda_ssim = 0.5f;
  float lambda_ge_adv = 0.1f;
  float lambda_gr_adv = 0.1f;
};

/// The adversarial penalty as written (mean |D-t|, i.e. sqrt of the square)
/// versus the conventional least-squares reading (mean (D-t)^2).
enum class AdvForm { kSqrt, kSquared };

inline AdvForm adv_form_from_string(const std::string& s) {
  if (s == "sqrt") return AdvForm::kSqrt;
  if (s == "squared") return AdvForm::kSquared;
  throw ConfigError(fmt::format("loss form '{}' (want sqrt|squared)", s));
}

inline const char* to_string(AdvForm f) {
  return f == AdvForm::kSqrt ? "sqrt" : "squared";
}

inline Tensor l1_loss(Tape* tape, const Tensor& x, const Tensor& y) {
  return reduce_abs_mean(tape, x, y);
}

/// Differentiable windowed SSIM over an [N,1,H,W] batch: Gaussian local
/// statistics via convolution, per-window similarity map, mean over all
/// windows. Matches metrics::ssim on a single image.
inline Tensor ssim_diff(Tape* tape, const Tensor& x, const Tensor& y) {
  check_same_shape("ssim_diff", x, y);
  if (x.rank() != 4 || x.dim(1) != 1)
    throw ShapeError(fmt::format("ssim_diff: want [N,1,H,W], got {}",
                                 shape_str(x.shape())));
  const int win = detail::ssim_window(x.dim(2), x.dim(3));
  const std::vector<double> g = detail::gaussian_kernel(win);
  std::vector<float> taps(static_cast<size_t>(win) * win);
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j)
      taps[static_cast<size_t>(i) * win + j] = static_cast<float>(g[i] * g[j]);
  Tensor kern = Tensor::from_data({1, 1, win, win}, std::move(taps));
  Tensor none;

  auto blur = [&](const Tensor& t) { return conv2d(tape, t, kern, none, 1, 0); };
  Tensor mx = blur(x), my = blur(y);
  Tensor ex2 = blur(mul(tape, x, x));
  Tensor ey2 = blur(mul(tape, y, y));
  Tensor exy = blur(mul(tape, x, y));
  Tensor mx2 = mul(tape, mx, mx);
  Tensor my2 = mul(tape, my, my);
  Tensor vx = sub(tape, ex2, mx2);
  Tensor vy = sub(tape, ey2, my2);
  Tensor cov = sub(tape, exy, mul(tape, mx, my));

  const float c1 = static_cast<float>(kSsimC1), c2 = static_cast<float>(kSsimC2);
  Tensor num = mul(tape, scalar_add(tape, scalar_mul(tape, mul(tape, mx, my), 2.0f), c1),
                   scalar_add(tape, scalar_mul(tape, cov, 2.0f), c2));
  Tensor den = mul(tape, scalar_add(tape, add(tape, mx2, my2), c1),
                   scalar_add(tape, add(tape, vx, vy), c2));
  return reduce_mean(tape, div(tape, num, den));
}

/// |1 - SSIM(x,y)^2|, zero exactly when the images coincide.
inline Tensor ssim_loss(Tape* tape, const Tensor& x, const Tensor& y) {
  Tensor s = ssim_diff(tape, x, y);
  Tensor s2 = mul(tape, s, s);
  return reduce_abs_mean(tape, s2, Tensor::scalar(1.0f));
}

/// Generator-side adversarial penalty: push discriminator scores toward 1.
/// The default is the mean-absolute form, written exactly as the objective
/// is stated; the squared variant is the conventional least-squares reading.
inline Tensor adv_loss_generator(Tape* tape, const Tensor& scores,
                                 AdvForm form = AdvForm::kSqrt) {
  if (form == AdvForm::kSqrt)
    return reduce_abs_mean(tape, scores, Tensor::full(scores.shape(), 1.0f));
  Tensor d = scalar_add(tape, scores, -1.0f);
  return reduce_mean(tape, mul(tape, d, d));
}

/// Discriminator objective: real scores toward 1, fake toward 0, averaged
/// halves. Defaults to the least-squares form — unlike the generator penalty
/// there is no written formula to honor, and the squared form's
/// distance-proportional gradient trains far more stably than the
/// constant-magnitude gradient of the absolute form.
inline Tensor adv_loss_discriminator(Tape* tape, const Tensor& real_scores,
                                     const Tensor& fake_scores,
                                     AdvForm form = AdvForm::kSquared) {
  Tensor lr, lf;
  if (form == AdvForm::kSqrt) {
    lr = reduce_abs_mean(tape, real_scores, Tensor::full(real_scores.shape(), 1.0f));
    lf = reduce_abs_mean(tape, fake_scores, Tensor::zeros(fake_scores.shape()));
  } else {
    Tensor d = scalar_add(tape, real_scores, -1.0f);
    lr = reduce_mean(tape, mul(tape, d, d));
    lf = reduce_mean(tape, mul(tape, fake_scores, fake_scores));
  }
  return scalar_mul(tape, add(tape, lr, lf), 0.5f);
}

/// Cycle consistency between the corrupted input and its restoration:
/// L1 + lambda_ssim * SSIM loss.
inline Tensor cycle_loss(Tape* tape, const Tensor& xa, const Tensor& xa_restored,
                         const LossWeights& w) {
  Tensor l1 = l1_loss(tape, xa_restored, xa);
  return add(tape, l1,
             scalar_mul(tape, ssim_loss(tape, xa_restored, xa), w.lambda_ssim));
}

/// Full generator objective: weighted adversarial terms plus the cycle loss.
inline Tensor total_generator_loss(Tape* tape, const Tensor& ge_scores,
                                   const Tensor& gr_scores, const Tensor& xa,
                                   const Tensor& xa_restored,
                                   const LossWeights& w, AdvForm form) {
  Tensor t = scalar_mul(tape, adv_loss_generator(tape, ge_scores, form),
                        w.lambda_ge_adv);
  t = add(tape, t, scalar_mul(tape, adv_loss_generator(tape, gr_scores, form),
                              w.lambda_gr_adv));
  return add(tape, t, cycle_loss(tape, xa, xa_restored, w));
}

}  // namespace unmar

#endif  // UNMAR_LOSSES_HPP
