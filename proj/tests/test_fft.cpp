#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "unmar/fft.hpp"

using namespace unmar;

namespace {

Image random_image(Rng& rng, int h, int w) {
  Image img(h, w);
  for (auto& p : img.px) p = static_cast<float>(rng.uniform());
  return img;
}

double roundtrip_max_err(const Image& img) {
  ComplexImage c = to_complex(img);
  ComplexImage back = ifft2(fft2(c));
  double worst = 0;
  for (size_t i = 0; i < c.v.size(); ++i)
    worst = std::max(worst, std::abs(back.v[i] - c.v[i]));
  return worst;
}

}  // namespace

TEST_CASE("fft2 round trip across shapes") {
  Rng rng(100);
  // even, odd, rectangular, tiny
  const int shapes[][2] = {{8, 8}, {17, 13}, {16, 24}, {1, 1},
                           {5, 8},  {64, 64}, {31, 2}};
  for (auto [h, w] : shapes) {
    CAPTURE(h, w);
    CHECK(roundtrip_max_err(random_image(rng, h, w)) < 1e-9);
  }
}

TEST_CASE("fft2 round trip stays under 1e-9 over 100 random images") {
  Rng rng(101);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    int h = 2 + static_cast<int>(rng.uniform_int(40));
    int w = 2 + static_cast<int>(rng.uniform_int(40));
    worst = std::max(worst, roundtrip_max_err(random_image(rng, h, w)));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("constant image concentrates at the DC bin") {
  const int h = 12, w = 10;
  const float c = 0.37f;
  Image img(h, w);
  for (auto& p : img.px) p = c;
  KSpace k = fft2(to_complex(img));
  // DC sits at (h/2, w/2) in the centered convention
  CHECK(std::abs(k.at(h / 2, w / 2) -
                 std::complex<double>(c * std::sqrt(double(h) * w), 0.0)) <
        1e-9);
  double off_dc = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (y != h / 2 || x != w / 2) off_dc = std::max(off_dc, std::abs(k.at(y, x)));
  CHECK(off_dc < 1e-9);
}

TEST_CASE("delta image has flat spectrum magnitude") {
  const int h = 16, w = 16;
  Image img(h, w);
  img.at(h / 2, w / 2) = 1.0f;
  KSpace k = fft2(to_complex(img));
  const double expect = 1.0 / std::sqrt(double(h) * w);
  for (const auto& v : k.v) CHECK(std::abs(std::abs(v) - expect) < 1e-12);
}

TEST_CASE("DC-only spectrum inverts to a constant image") {
  const int h = 9, w = 14;
  KSpace k(h, w);
  k.at(h / 2, w / 2) = {2.0, 0.0};
  ComplexImage img = ifft2(k);
  const double expect = 2.0 / std::sqrt(double(h) * w);
  for (const auto& v : img.v) {
    CHECK(std::abs(v.real() - expect) < 1e-12);
    CHECK(std::abs(v.imag()) < 1e-12);
  }
}

TEST_CASE("Parseval energy identity") {
  Rng rng(102);
  for (auto [h, w] : {std::pair{16, 16}, {17, 13}, {24, 8}}) {
    Image img = random_image(rng, h, w);
    ComplexImage c = to_complex(img);
    KSpace k = fft2(c);
    double e_img = 0, e_k = 0;
    for (const auto& v : c.v) e_img += std::norm(v);
    for (const auto& v : k.v) e_k += std::norm(v);
    CHECK(std::abs(e_img - e_k) / e_img < 1e-10);
  }
}

TEST_CASE("magnitude and to_complex helpers") {
  Image img(2, 2);
  img.px = {0.5f, 1.0f, 0.0f, 2.0f};
  ComplexImage c = to_complex(img);
  CHECK(c.at(1, 1).real() == 2.0);
  CHECK(c.at(0, 0).imag() == 0.0);
  Image m = magnitude(c);
  for (int i = 0; i < 4; ++i) CHECK(m.px[i] == img.px[i]);
}
