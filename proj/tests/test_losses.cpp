#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "unmar/losses.hpp"
#include "unmar/metrics.hpp"
#include "unmar/phantom.hpp"

using namespace unmar;

namespace {

Tensor random_batch(Rng& rng, Shape shape, bool requires_grad = false,
                    double lo = 0.0, double hi = 1.0) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

template <typename F>
double max_rel_grad_err(F&& fwd, std::vector<Tensor> inputs, double h = 1e-3) {
  for (auto& t : inputs) t.zero_grad();
  {
    Tape tape;
    Tensor loss = fwd(&tape);
    tape.backward(loss);
  }
  double worst = 0.0;
  for (auto& t : inputs) {
    REQUIRE(t.has_grad());
    std::vector<float> analytic(t.grad().begin(), t.grad().end());
    for (int64_t i = 0; i < t.numel(); ++i) {
      const float orig = t.data()[i];
      t.data()[i] = orig + static_cast<float>(h);
      const double fp = fwd(nullptr).item();
      t.data()[i] = orig - static_cast<float>(h);
      const double fm = fwd(nullptr).item();
      t.data()[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-3});
      worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("l1 loss values and gradient") {
  Tensor x = Tensor::from_data({2}, {0, 1});
  Tensor y = Tensor::from_data({2}, {1, 1});
  CHECK(l1_loss(nullptr, x, y).item() == Catch::Approx(0.5));
  CHECK(l1_loss(nullptr, x, x).item() == 0.0f);

  // gradient is sign(x-y)/N away from ties
  Tensor a = Tensor::from_data({4}, {0.9f, 0.1f, 0.6f, 0.2f}, true);
  Tensor b = Tensor::from_data({4}, {0.2f, 0.8f, 0.1f, 0.9f});
  Tape tape;
  Tensor l = l1_loss(&tape, a, b);
  tape.backward(l);
  const float expect[] = {0.25f, -0.25f, 0.25f, -0.25f};
  for (int i = 0; i < 4; ++i) CHECK(a.grad()[i] == expect[i]);

  Rng rng(1);
  Tensor p = random_batch(rng, {3, 5}, true);
  Tensor q = random_batch(rng, {3, 5});
  CHECK(max_rel_grad_err([&](Tape* t) { return l1_loss(t, p, q); }, {p}) < 1e-3);
}

TEST_CASE("differentiable ssim matches the metric") {
  Rng rng(2);
  Image ix = render_phantom(default_head_phantom(32), 1);
  Image iy = render_phantom(default_head_phantom(32), 2);
  Tensor x = images_to_tensor({ix});
  Tensor y = images_to_tensor({iy});
  CHECK(ssim_diff(nullptr, x, y).item() ==
        Catch::Approx(ssim(ix, iy)).margin(1e-5));
  CHECK(ssim_diff(nullptr, x, x).item() == Catch::Approx(1.0).margin(1e-6));

  CHECK_THROWS_AS(ssim_diff(nullptr, Tensor::zeros({2, 2}), Tensor::zeros({2, 2})),
                  ShapeError);
}

TEST_CASE("ssim loss values") {
  Rng rng(3);
  Tensor x = random_batch(rng, {2, 1, 12, 12});
  CHECK(ssim_loss(nullptr, x, x).item() == Catch::Approx(0.0).margin(1e-6));

  Tensor y = random_batch(rng, {2, 1, 12, 12});
  const float v = ssim_loss(nullptr, x, y).item();
  CHECK(v >= 0.0f);
  CHECK(v <= 1.0f);  // |1 - s^2| <= 1 for s in [-1, 1]
}

TEST_CASE("ssim loss gradient vs finite differences") {
  Rng rng(4);
  Tensor x = random_batch(rng, {1, 1, 8, 8}, true, 0.2, 0.8);
  Tensor y = random_batch(rng, {1, 1, 8, 8}, false, 0.2, 0.8);
  CHECK(max_rel_grad_err([&](Tape* t) { return ssim_loss(t, x, y); }, {x},
                         1e-3) < 1e-2);
}

TEST_CASE("generator adversarial loss") {
  Tensor perfect = Tensor::full({1, 1, 2, 2}, 1.0f);
  CHECK(adv_loss_generator(nullptr, perfect, AdvForm::kSqrt).item() == 0.0f);
  CHECK(adv_loss_generator(nullptr, perfect, AdvForm::kSquared).item() == 0.0f);

  Tensor scores = Tensor::from_data({2}, {0.0f, 2.0f});
  CHECK(adv_loss_generator(nullptr, scores, AdvForm::kSqrt).item() ==
        Catch::Approx(1.0));
  CHECK(adv_loss_generator(nullptr, scores, AdvForm::kSquared).item() ==
        Catch::Approx(1.0));

  // forms diverge away from |D-1| = 1
  Tensor half = Tensor::full({4}, 0.5f);
  CHECK(adv_loss_generator(nullptr, half, AdvForm::kSqrt).item() ==
        Catch::Approx(0.5));
  CHECK(adv_loss_generator(nullptr, half, AdvForm::kSquared).item() ==
        Catch::Approx(0.25));

  // default form is the penalty as written (mean absolute deviation)
  CHECK(adv_loss_generator(nullptr, half).item() ==
        adv_loss_generator(nullptr, half, AdvForm::kSqrt).item());
}

TEST_CASE("discriminator adversarial loss") {
  Tensor ones = Tensor::full({3}, 1.0f);
  Tensor zeros = Tensor::zeros({3});
  for (AdvForm f : {AdvForm::kSqrt, AdvForm::kSquared}) {
    CHECK(adv_loss_discriminator(nullptr, ones, zeros, f).item() == 0.0f);
  }
  // flipped outputs: real=0, fake=1
  CHECK(adv_loss_discriminator(nullptr, zeros, ones, AdvForm::kSquared).item() ==
        Catch::Approx(1.0));
  // indifferent discriminator at 0.5
  Tensor half = Tensor::full({3}, 0.5f);
  CHECK(adv_loss_discriminator(nullptr, half, half, AdvForm::kSquared).item() ==
        Catch::Approx(0.25));
  CHECK(adv_loss_discriminator(nullptr, half, half, AdvForm::kSqrt).item() ==
        Catch::Approx(0.5));

  // unlike the generator penalty, the default here is the least-squares form
  CHECK(adv_loss_discriminator(nullptr, half, half).item() ==
        adv_loss_discriminator(nullptr, half, half, AdvForm::kSquared).item());
}

TEST_CASE("adversarial gradients vs finite differences") {
  Rng rng(5);
  Tensor s = random_batch(rng, {2, 1, 3, 3}, true, -0.5, 1.8);
  for (AdvForm f : {AdvForm::kSqrt, AdvForm::kSquared}) {
    CHECK(max_rel_grad_err(
              [&](Tape* t) { return adv_loss_generator(t, s, f); }, {s}) < 1e-2);
    Tensor r = random_batch(rng, {2, 1, 3, 3}, true, -0.5, 1.8);
    CHECK(max_rel_grad_err(
              [&](Tape* t) { return adv_loss_discriminator(t, r, s, f); },
              {r, s}) < 1e-2);
  }
}

TEST_CASE("cycle loss composition") {
  Rng rng(6);
  Tensor xa = random_batch(rng, {2, 1, 16, 16});
  Tensor xr = random_batch(rng, {2, 1, 16, 16});

  LossWeights w;
  CHECK(cycle_loss(nullptr, xa, xa, w).item() == Catch::Approx(0.0).margin(1e-6));

  LossWeights no_ssim;
  no_ssim.lambda_ssim = 0.0f;
  CHECK(cycle_loss(nullptr, xa, xr, no_ssim).item() ==
        l1_loss(nullptr, xr, xa).item());

  const double expect = double(l1_loss(nullptr, xr, xa).item()) +
                        0.5 * ssim_loss(nullptr, xr, xa).item();
  CHECK(cycle_loss(nullptr, xa, xr, w).item() == Catch::Approx(expect).margin(1e-9));
}

TEST_CASE("total generator loss decomposes additively") {
  Rng rng(7);
  Tensor xa = random_batch(rng, {2, 1, 16, 16});
  Tensor xr = random_batch(rng, {2, 1, 16, 16});
  Tensor sf = random_batch(rng, {2, 1, 4, 4}, false, -0.5, 1.5);
  Tensor sb = random_batch(rng, {2, 1, 4, 4}, false, -0.5, 1.5);
  LossWeights w;

  for (AdvForm f : {AdvForm::kSqrt, AdvForm::kSquared}) {
    const double expect =
        0.1 * adv_loss_generator(nullptr, sf, f).item() +
        0.1 * adv_loss_generator(nullptr, sb, f).item() +
        cycle_loss(nullptr, xa, xr, w).item();
    CHECK(total_generator_loss(nullptr, sf, sb, xa, xr, w, f).item() ==
          Catch::Approx(expect).margin(1e-9));
  }

  SECTION("global optimum is exactly zero") {
    Tensor ones = Tensor::full({2, 1, 4, 4}, 1.0f);
    CHECK(total_generator_loss(nullptr, ones, ones, xa, xa, w, AdvForm::kSqrt)
              .item() == Catch::Approx(0.0).margin(1e-6));
  }

  SECTION("zero adversarial weights reduce to the cycle loss") {
    LossWeights cyc_only;
    cyc_only.lambda_ge_adv = 0.0f;
    cyc_only.lambda_gr_adv = 0.0f;
    CHECK(total_generator_loss(nullptr, sf, sb, xa, xr, cyc_only, AdvForm::kSqrt)
              .item() == Catch::Approx(cycle_loss(nullptr, xa, xr, w).item())
                             .margin(1e-7));
  }
}

TEST_CASE("loss form names round trip") {
  CHECK(adv_form_from_string("sqrt") == AdvForm::kSqrt);
  CHECK(adv_form_from_string("squared") == AdvForm::kSquared);
  CHECK(std::string(to_string(AdvForm::kSqrt)) == "sqrt");
  CHECK(std::string(to_string(AdvForm::kSquared)) == "squared");
  CHECK_THROWS_AS(adv_form_from_string("huber"), ConfigError);
}

TEST_CASE("nonnegativity on random inputs") {
  Rng rng(8);
  for (int i = 0; i < 10; ++i) {
    Tensor a = random_batch(rng, {1, 1, 12, 12});
    Tensor b = random_batch(rng, {1, 1, 12, 12});
    Tensor s = random_batch(rng, {1, 1, 3, 3}, false, -2.0, 2.0);
    LossWeights w;
    CHECK(l1_loss(nullptr, a, b).item() >= 0.0f);
    CHECK(ssim_loss(nullptr, a, b).item() >= 0.0f);
    CHECK(adv_loss_generator(nullptr, s, AdvForm::kSqrt).item() >= 0.0f);
    CHECK(adv_loss_generator(nullptr, s, AdvForm::kSquared).item() >= 0.0f);
    CHECK(cycle_loss(nullptr, a, b, w).item() >= 0.0f);
  }
}
