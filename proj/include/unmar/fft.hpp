#ifndef UNMAR_FFT_HPP
#define UNMAR_FFT_HPP

#include <fftw3.h>

#include <complex>
#include <map>
#include <mutex>
#include <tuple>
#include <vector>

#include "unmar/image.hpp"

namespace unmar {

/// Image-domain 2-D complex array (64-bit components).
struct ComplexImage {
  int h = 0, w = 0;
  std::vector<std::complex<double>> v;

  ComplexImage() = default;
  ComplexImage(int height, int width)
      : h(height), w(width), v(static_cast<size_t>(height) * width) {}

  std::complex<double>& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  const std::complex<double>& at(int y, int x) const {
    return v[static_cast<size_t>(y) * w + x];
  }
};

/// Frequency-domain counterpart, centered convention: the zero-frequency bin
/// sits at (h/2, w/2). The phase-encode axis is the row axis.
struct KSpace {
  int h = 0, w = 0;
  std::vector<std::complex<double>> v;

  KSpace() = default;
  KSpace(int height, int width)
      : h(height), w(width), v(static_cast<size_t>(height) * width) {}

  std::complex<double>& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  const std::complex<double>& at(int y, int x) const {
    return v[static_cast<size_t>(y) * w + x];
  }
};

namespace detail {

// FFTW plans are cached per (h, w, sign). Planning is not thread-safe, so it
// is serialized; executing a cached plan on fresh buffers is safe.
class FftwPlanCache {
public:
  static FftwPlanCache& instance() {
    static FftwPlanCache c;
    return c;
  }

  fftw_plan get(int h, int w, int sign) {
    std::lock_guard<std::mutex> lock(mu_);
    auto key = std::make_tuple(h, w, sign);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    std::vector<std::complex<double>> scratch(static_cast<size_t>(h) * w);
    fftw_plan p = fftw_plan_dft_2d(
        h, w, reinterpret_cast<fftw_complex*>(scratch.data()),
        reinterpret_cast<fftw_complex*>(scratch.data()), sign,
        FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!p) throw Error("fftw planning failed");
    plans_.emplace(key, p);
    return p;
  }

private:
  FftwPlanCache() = default;
  std::mutex mu_;
  std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

template <typename Src, typename Dst>
void quadrant_shift(const Src& in, Dst& out, int dy, int dx) {
  const int h = in.h, w = in.w;
  for (int y = 0; y < h; ++y) {
    int yy = (y + dy) % h;
    for (int x = 0; x < w; ++x) out.v[size_t(yy) * w + (x + dx) % w] = in.v[size_t(y) * w + x];
  }
}

}  // namespace detail

/// Orthonormal 2-D DFT with a centered output spectrum (DC moved to
/// (h/2, w/2)).
inline KSpace fft2(const ComplexImage& img) {
  const int h = img.h, w = img.w;
  std::vector<std::complex<double>> buf = img.v;
  fftw_plan p = detail::FftwPlanCache::instance().get(h, w, FFTW_FORWARD);
  fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(buf.data()),
                   reinterpret_cast<fftw_complex*>(buf.data()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(h) * w);
  for (auto& c : buf) c *= scale;
  KSpace out(h, w);
  ComplexImage tmp;
  tmp.h = h;
  tmp.w = w;
  tmp.v = std::move(buf);
  detail::quadrant_shift(tmp, out, h / 2, w / 2);
  return out;
}

/// Exact inverse of fft2, including the centering convention.
inline ComplexImage ifft2(const KSpace& k) {
  const int h = k.h, w = k.w;
  // undo the centering: shift by the complementary amount
  KSpace unshifted(h, w);
  detail::quadrant_shift(k, unshifted, h - h / 2, w - w / 2);
  fftw_plan p = detail::FftwPlanCache::instance().get(h, w, FFTW_BACKWARD);
  fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(unshifted.v.data()),
                   reinterpret_cast<fftw_complex*>(unshifted.v.data()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(h) * w);
  ComplexImage out(h, w);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = unshifted.v[i] * scale;
  return out;
}

inline ComplexImage to_complex(const Image& im) {
  ComplexImage out(im.h, im.w);
  for (int64_t i = 0; i < im.numel(); ++i) out.v[i] = {double(im.px[i]), 0.0};
  return out;
}

inline Image magnitude(const ComplexImage& c) {
  Image out(c.h, c.w);
  for (size_t i = 0; i < c.v.size(); ++i)
    out.px[i] = static_cast<float>(std::abs(c.v[i]));
  return out;
}

}  // namespace unmar

#endif  // UNMAR_FFT_HPP
