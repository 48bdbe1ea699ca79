#pragma once

// Reference implementations used only by tests. Written for clarity, not speed.

#include <cmath>

#include "xoct/random.hpp"
#include "xoct/tensor.hpp"

namespace oracle {

using xoct::ConvSpec;
using xoct::Shape;
using xoct::Tensor;

inline Tensor random(const Shape& s, xoct::Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Direct summation over batch, output channel, three output axes, input
/// channel and three kernel axes.
inline Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor* b, const ConvSpec& s) {
  const long B = long(x.dim(0)), O = long(w.dim(0)), CG = long(w.dim(1));
  const long G = long(s.groups), OG = O / G;
  const long Di = long(x.dim(2)), Hi = long(x.dim(3)), Wi = long(x.dim(4));
  const long kd = long(s.kernel[0]), kh = long(s.kernel[1]), kw = long(s.kernel[2]);
  const long Do = (Di + 2 * long(s.pad[0]) - kd) / long(s.stride[0]) + 1;
  const long Ho = (Hi + 2 * long(s.pad[1]) - kh) / long(s.stride[1]) + 1;
  const long Wo = (Wi + 2 * long(s.pad[2]) - kw) / long(s.stride[2]) + 1;
  Tensor y(Shape{std::size_t(B), std::size_t(O), std::size_t(Do), std::size_t(Ho), std::size_t(Wo)});
  for (long n = 0; n < B; ++n)
    for (long o = 0; o < O; ++o)
      for (long d = 0; d < Do; ++d)
        for (long h = 0; h < Ho; ++h)
          for (long v = 0; v < Wo; ++v) {
            double acc = b ? (*b)[std::size_t(o)] : 0.0;
            const long g = o / OG;
            for (long c = 0; c < CG; ++c)
              for (long i = 0; i < kd; ++i)
                for (long j = 0; j < kh; ++j)
                  for (long k = 0; k < kw; ++k) {
                    const long z = d * long(s.stride[0]) + i - long(s.pad[0]);
                    const long yy = h * long(s.stride[1]) + j - long(s.pad[1]);
                    const long xx = v * long(s.stride[2]) + k - long(s.pad[2]);
                    if (z < 0 || z >= Di || yy < 0 || yy >= Hi || xx < 0 || xx >= Wi) continue;
                    const long ci = g * CG + c;
                    const std::size_t xi =
                        std::size_t((((n * long(x.dim(1)) + ci) * Di + z) * Hi + yy) * Wi + xx);
                    const std::size_t wi = std::size_t((((o * CG + c) * kd + i) * kh + j) * kw + k);
                    acc += w[wi] * x[xi];
                  }
            y[std::size_t((((n * O + o) * Do + d) * Ho + h) * Wo + v)] = acc;
          }
  return y;
}

/// Per-column weighted mean along z; 0 for columns with no mask weight.
inline Tensor projection(const Tensor& vol, const Tensor& mask) {
  const std::size_t D = vol.dim(0), H = vol.dim(1), W = vol.dim(2);
  Tensor p(Shape{H, W});
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w) {
      double num = 0.0, den = 0.0;
      for (std::size_t z = 0; z < D; ++z) {
        num += vol.at({z, h, w}) * mask.at({z, h, w});
        den += mask.at({z, h, w});
      }
      p.at({h, w}) = den > 0.0 ? num / den : 0.0;
    }
  return p;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
