#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "unmar/kspace_sim.hpp"
#include "unmar/metrics.hpp"
#include "unmar/phantom.hpp"

using namespace unmar;

TEST_CASE("rotate by zero is the identity") {
  Image img = render_phantom(default_head_phantom(48), 1);
  Image r = rotate(img, 0.0);
  for (int64_t i = 0; i < img.numel(); ++i)
    CHECK(r.px[i] == Catch::Approx(img.px[i]).margin(1e-6));
}

TEST_CASE("rotate by 90 degrees matches the index permutation") {
  // bilinear sampling lands exactly on grid points for quarter turns
  Rng rng(5);
  const int n = 17;
  Image img(n, n);
  for (auto& p : img.px) p = static_cast<float>(rng.uniform());
  Image r = rotate(img, 90.0);
  double worst = 0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      // counterclockwise quarter turn about the center
      float expect = img.at(x, n - 1 - y);
      worst = std::max(worst, std::abs(double(r.at(y, x)) - expect));
    }
  CHECK(worst < 1e-6);
}

TEST_CASE("rotate +5 then -5 approximately restores the center") {
  Image img = render_phantom(default_head_phantom(64), 2);
  Image back = rotate(rotate(img, 5.0), -5.0);
  double err = 0;
  int count = 0;
  for (int y = 16; y < 48; ++y)
    for (int x = 16; x < 48; ++x) {
      err += std::abs(double(back.at(y, x)) - img.at(y, x));
      ++count;
    }
  CHECK(err / count < 0.02);
}

TEST_CASE("line order walks outward from the center row") {
  CHECK(line_order_center_out(4) == std::vector<int>{2, 1, 3, 0});
  CHECK(line_order_center_out(1) == std::vector<int>{0});
  CHECK(line_order_center_out(5) == std::vector<int>{2, 1, 3, 0, 4});
  CHECK_THROWS_AS(line_order_center_out(0), ConfigError);

  // always a permutation
  for (int h : {2, 3, 8, 33, 320}) {
    std::vector<int> order = line_order_center_out(h);
    std::sort(order.begin(), order.end());
    std::vector<int> expect(h);
    std::iota(expect.begin(), expect.end(), 0);
    CHECK(order == expect);
  }
}

namespace {

KSpace image_kspace(const Image& img) { return fft2(to_complex(img)); }

}  // namespace

TEST_CASE("self-splice is bit-exact") {
  Image img = render_phantom(default_head_phantom(64), 3);
  KSpace k = image_kspace(img);
  MotionSpec spec;
  SpliceResult res = splice_kspace(k, {k}, spec);
  for (size_t i = 0; i < k.v.size(); ++i) CHECK(res.k.v[i] == k.v[i]);
}

TEST_CASE("splice validates its arguments") {
  KSpace k(20, 20);
  MotionSpec spec;
  CHECK_THROWS_AS(splice_kspace(k, {}, spec), ConfigError);
  CHECK_THROWS_AS(splice_kspace(k, {KSpace(10, 20)}, spec), ShapeError);
  MotionSpec bad = spec;
  bad.eg_size = 0;
  CHECK_THROWS_AS(splice_kspace(k, {k}, bad), ConfigError);
  CHECK_THROWS_AS(splice_kspace(k, {k}, spec, 0, spec.ts_eg), ConfigError);
  CHECK_THROWS_AS(splice_kspace(k, {k}, spec, 0, -1), ConfigError);
}

TEST_CASE("default phase keeps the first acquired lines clean") {
  const int h = 320;
  KSpace clean(h, 8);
  for (auto& v : clean.v) v = {1.0, 0.0};
  KSpace moved(h, 8);
  for (auto& v : moved.v) v = {2.0, 0.0};

  MotionSpec spec;  // ts_eg=3, corrupt_eg=9, eg_size=10
  SpliceResult res = splice_kspace(clean, {moved}, spec);
  const std::vector<int> order = line_order_center_out(h);

  // first ts_eg*eg_size acquired lines are untouched
  for (int i = 0; i < spec.ts_eg * spec.eg_size; ++i)
    CHECK(res.mask[order[i]] == 0);
  // the very next echo group is corrupted
  CHECK(res.mask[order[spec.ts_eg * spec.eg_size]] == 1);

  // the low-frequency center rows are exactly the early acquisitions
  for (int row = h / 2 - 15; row < h / 2 + 15; ++row)
    CHECK(res.mask[row] == 0);

  // masked rows carry source data, unmasked rows clean data
  for (int row = 0; row < h; ++row)
    for (int c = 0; c < 8; ++c)
      CHECK(res.k.at(row, c).real() == (res.mask[row] ? 2.0 : 1.0));
}

TEST_CASE("default-phase corrupted fraction at 320 lines") {
  KSpace k(320, 4);
  MotionSpec spec;
  SpliceResult res = splice_kspace(k, {k}, spec);
  const double f = corrupted_fraction(res.mask);
  // 32 echo groups, clean at pattern positions 0-2 per 12 -> 23/32 corrupted
  CHECK(f == Catch::Approx(23.0 / 32.0));
  CHECK(f > 0.70);
  CHECK(f < 0.80);
}

TEST_CASE("phase offsets shift the pattern but preserve the leading block") {
  KSpace k(120, 4);
  MotionSpec spec;
  for (int phase = 0; phase < spec.ts_eg; ++phase) {
    SpliceResult res = splice_kspace(k, {k}, spec, 0, phase);
    const std::vector<int> order = line_order_center_out(120);
    const int clean_egs = spec.ts_eg - phase;
    for (int i = 0; i < clean_egs * spec.eg_size; ++i)
      CHECK(res.mask[order[i]] == 0);
    if (phase > 0)  // pattern starts mid-clean-interval
      CHECK(res.mask[order[clean_egs * spec.eg_size]] == 1);
  }
}

TEST_CASE("source rotation cycles through the provided k-spaces") {
  const int h = 240;  // 24 groups = 2 periods
  KSpace clean(h, 2);
  KSpace s1(h, 2), s2(h, 2);
  for (auto& v : s1.v) v = {1.0, 0.0};
  for (auto& v : s2.v) v = {2.0, 0.0};
  MotionSpec spec;
  SpliceResult res = splice_kspace(clean, {s1, s2}, spec);
  bool saw1 = false, saw2 = false;
  for (int m : res.mask) {
    if (m == 1) saw1 = true;
    if (m == 2) saw2 = true;
  }
  CHECK(saw1);
  CHECK(saw2);

  // source_start=1 swaps which block uses which source
  SpliceResult res2 = splice_kspace(clean, {s1, s2}, spec, 1);
  for (int row = 0; row < h; ++row) {
    if (res.mask[row] == 1) CHECK(res2.mask[row] == 2);
    if (res.mask[row] == 2) CHECK(res2.mask[row] == 1);
  }
}

TEST_CASE("simulation rejects out-of-range images") {
  Image img(32, 32);
  img.at(0, 0) = 1.5f;
  CHECK_THROWS_AS(simulate_motion(img, MotionSpec{}, 1), DataError);
  img.at(0, 0) = -0.5f;
  CHECK_THROWS_AS(simulate_motion(img, MotionSpec{}, 1), DataError);
  MotionSpec no_angles;
  no_angles.angles_deg.clear();
  CHECK_THROWS_AS(simulate_motion(Image(32, 32), no_angles, 1), ConfigError);
}

TEST_CASE("zero-angle motion reproduces the clean image") {
  Image img = render_phantom(default_head_phantom(64), 4);
  MotionSpec spec;
  spec.angles_deg = {0.0};
  SimResult res = simulate_motion(img, spec, 9);
  double worst = 0;
  for (int64_t i = 0; i < img.numel(); ++i)
    worst = std::max(worst, std::abs(double(res.corrupted.px[i]) - img.px[i]));
  CHECK(worst < 1e-6);
  CHECK(corrupted_fraction(res.mask) > 0.0);  // lines were spliced, just equal
}

TEST_CASE("huge still interval leaves the image clean") {
  Image img = render_phantom(default_head_phantom(64), 5);
  MotionSpec spec;
  spec.ts_eg = 1000;  // no corrupted group fits into 64 lines
  SimResult res = simulate_motion(img, spec, 9);
  CHECK(corrupted_fraction(res.mask) == 0.0);
  double worst = 0;
  for (int64_t i = 0; i < img.numel(); ++i)
    worst = std::max(worst, std::abs(double(res.corrupted.px[i]) - img.px[i]));
  CHECK(worst < 1e-6);
}

TEST_CASE("simulation output stays in [0,1]") {
  for (uint64_t seed : {1, 2, 3}) {
    Image img = render_phantom(default_head_phantom(64), seed);
    SimResult res = simulate_motion(img, MotionSpec{}, seed);
    for (float v : res.corrupted.px) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("simulation is deterministic in the seed") {
  Image img = render_phantom(default_head_phantom(64), 6);
  SimResult a = simulate_motion(img, MotionSpec{}, 77);
  SimResult b = simulate_motion(img, MotionSpec{}, 77);
  CHECK(a.mask == b.mask);
  CHECK(a.corrupted.px == b.corrupted.px);
}

TEST_CASE("mean corrupted fraction tracks the pattern ratio") {
  // across many seeds the phase jitter averages the truncation bias away
  Image img = render_phantom(default_head_phantom(320), 7);
  MotionSpec spec;
  double sum = 0;
  const int n = 30;
  for (int i = 0; i < n; ++i)
    sum += corrupted_fraction(simulate_motion(img, spec, 1000 + i).mask);
  CHECK(sum / n == Catch::Approx(0.75).margin(0.05));
}

TEST_CASE("shorter still intervals corrupt more") {
  // SSIM(corrupted, clean) should be lower for ts_eg=3 than ts_eg=9;
  // majority vote over phantoms absorbs occasional unlucky draws
  int wins = 0;
  const int n = 20;
  for (int i = 0; i < n; ++i) {
    Image img = render_phantom(default_head_phantom(64), 300 + i);
    MotionSpec heavy, light;
    heavy.ts_eg = 3;
    light.ts_eg = 9;
    double s3 = ssim(simulate_motion(img, heavy, 50 + i).corrupted, img);
    double s9 = ssim(simulate_motion(img, light, 50 + i).corrupted, img);
    if (s3 < s9) ++wins;
  }
  CHECK(wins > n / 2);
}
