#include "ocgvf/env/preprocess.hpp"

#include <cmath>

#include "ocgvf/core/errors.hpp"

namespace ocgvf::env {

Image resize_nearest(const Image& in, int h, int w) {
  if (in.h == h && in.w == w) return in;
  if (in.h <= 0 || in.w <= 0) throw ShapeError("resize_nearest: empty image");
  Image out;
  out.h = h;
  out.w = w;
  out.rgb.resize(static_cast<size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y) {
    const int sy = static_cast<int>(static_cast<int64_t>(y) * in.h / h);
    for (int x = 0; x < w; ++x) {
      const int sx = static_cast<int>(static_cast<int64_t>(x) * in.w / w);
      const size_t src = (static_cast<size_t>(sy) * in.w + sx) * 3;
      const size_t dst = (static_cast<size_t>(y) * w + x) * 3;
      out.rgb[dst] = in.rgb[src];
      out.rgb[dst + 1] = in.rgb[src + 1];
      out.rgb[dst + 2] = in.rgb[src + 2];
    }
  }
  return out;
}

Image from_floats(int h, int w, const std::vector<float>& hwc) {
  if (hwc.size() != static_cast<size_t>(h) * w * 3) {
    throw ShapeError("from_floats: buffer size mismatch");
  }
  Image out;
  out.h = h;
  out.w = w;
  out.rgb.resize(hwc.size());
  for (size_t i = 0; i < hwc.size(); ++i) {
    float v = hwc[i];
    if (v < 0.f) v = 0.f;
    if (v > 1.f) v = 1.f;
    out.rgb[i] = static_cast<uint8_t>(std::lround(v * 255.f));
  }
  return out;
}

Image preprocess(const Image& raw, int target_h, int target_w) {
  if (raw.rgb.size() != static_cast<size_t>(raw.h) * raw.w * 3) {
    throw ShapeError("preprocess: image buffer does not match its size");
  }
  return resize_nearest(raw, target_h, target_w);
}

}  // namespace ocgvf::env
