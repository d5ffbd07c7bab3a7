#ifndef UNMAR_IMAGE_HPP
#define UNMAR_IMAGE_HPP

#include <algorithm>
#include <complex>
#include <vector>

#include "unmar/common.hpp"
#include "unmar/tensor.hpp"

namespace unmar {

/// 2-D real-valued raster, row-major float storage.
struct Image {
  int h = 0, w = 0;
  std::vector<float> px;

  Image() = default;
  Image(int height, int width, float fill = 0.0f)
      : h(height), w(width), px(static_cast<size_t>(height) * width, fill) {}

  float& at(int y, int x) { return px[static_cast<size_t>(y) * w + x]; }
  float at(int y, int x) const { return px[static_cast<size_t>(y) * w + x]; }
  int64_t numel() const { return int64_t(h) * w; }
};

inline void check_same_shape(const char* op, const Image& a, const Image& b) {
  if (a.h != b.h || a.w != b.w)
    throw ShapeError(fmt::format("{}: image shape mismatch {}x{} vs {}x{}", op,
                                 a.h, a.w, b.h, b.w));
}

inline double image_mean(const Image& im) {
  double acc = 0.0;
  for (float v : im.px) acc += v;
  return im.numel() ? acc / static_cast<double>(im.numel()) : 0.0;
}

inline Image clip01(Image im) {
  for (float& v : im.px) v = std::clamp(v, 0.0f, 1.0f);
  return im;
}

/// Min-max rescale onto [0,1]; a constant image maps to all zeros.
inline Image normalize(const Image& im) {
  if (im.px.empty()) throw DataError("normalize: empty image");
  auto [mn_it, mx_it] = std::minmax_element(im.px.begin(), im.px.end());
  float mn = *mn_it, mx = *mx_it;
  Image out(im.h, im.w);
  if (mx > mn) {
    float inv = 1.0f / (mx - mn);
    for (int64_t i = 0; i < im.numel(); ++i) out.px[i] = (im.px[i] - mn) * inv;
  }
  return out;
}

// Image <-> NCHW tensor packing (single channel).

inline Tensor images_to_tensor(const std::vector<Image>& batch) {
  if (batch.empty()) throw DataError("images_to_tensor: empty batch");
  int h = batch[0].h, w = batch[0].w;
  Tensor t = Tensor::zeros({static_cast<int>(batch.size()), 1, h, w});
  float* p = t.data();
  for (const Image& im : batch) {
    if (im.h != h || im.w != w)
      throw ShapeError("images_to_tensor: ragged batch");
    std::copy(im.px.begin(), im.px.end(), p);
    p += im.numel();
  }
  return t;
}

inline std::vector<Image> tensor_to_images(const Tensor& t) {
  if (t.rank() != 4 || t.dim(1) != 1)
    throw ShapeError(fmt::format("tensor_to_images: expected [N,1,H,W], got {}",
                                 shape_str(t.shape())));
  std::vector<Image> out(t.dim(0));
  const float* p = t.data();
  for (Image& im : out) {
    im = Image(t.dim(2), t.dim(3));
    std::copy(p, p + im.numel(), im.px.begin());
    p += im.numel();
  }
  return out;
}

}  // namespace unmar

#endif  // UNMAR_IMAGE_HPP
