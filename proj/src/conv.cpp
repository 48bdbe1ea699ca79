// 3-D convolution kernels: chunked im2col lowering onto dgemm.
//
// Reduction order inside each output element is fixed by the chunk layout,
// which depends only on tensor shapes, so results are reproducible bit for
// bit. BLAS is pinned to one thread for the same reason.

#include <cblas.h>

#include <algorithm>
#include <vector>

#include "xoct/tensor.hpp"

namespace xoct {

namespace {

// Upper bound on im2col buffer size (doubles) per chunk.
constexpr std::size_t kColBudget = std::size_t{1} << 21;

struct BlasInit {
  BlasInit() { openblas_set_num_threads(1); }
};

void ensure_blas() {
  static const BlasInit init;
  (void)init;
}

struct Geometry {
  std::size_t batch, cin, cout, groups, cin_g, cout_g;
  std::size_t D, H, W, OD, OH, OW;
  std::size_t kd, kh, kw;
  std::size_t K() const { return cin_g * kd * kh * kw; }
  std::size_t in_vol() const { return D * H * W; }
  std::size_t out_vol() const { return OD * OH * OW; }
};

Geometry make_geometry(const Shape& in, const Shape& w, const ConvSpec& spec) {
  if (in.rank() != 5) throw ShapeError("conv3d: input must be [B,C,D,H,W], got " + in.str());
  if (w.rank() != 5)
    throw ShapeError("conv3d: weight must be [Cout,Cin/g,kd,kh,kw], got " + w.str());
  if (spec.groups == 0) throw SpecError("conv3d: group count must be >= 1");
  for (std::size_t a = 0; a < 3; ++a) {
    if (spec.kernel[a] == 0 || spec.stride[a] == 0)
      throw SpecError("conv3d: kernel and stride extents must be >= 1");
    if (spec.kernel[a] != w.dims()[2 + a])
      throw ShapeError("conv3d: weight " + w.str() + " disagrees with kernel extents");
  }
  Geometry g{};
  g.batch = in.dims()[0];
  g.cin = in.dims()[1];
  g.cout = w.dims()[0];
  g.groups = spec.groups;
  if (g.cin % g.groups != 0 || g.cout % g.groups != 0)
    throw SpecError("conv3d: groups " + std::to_string(g.groups) + " must divide Cin " +
                    std::to_string(g.cin) + " and Cout " + std::to_string(g.cout));
  g.cin_g = g.cin / g.groups;
  g.cout_g = g.cout / g.groups;
  if (w.dims()[1] != g.cin_g)
    throw ShapeError("conv3d: weight " + w.str() + " expects " + std::to_string(w.dims()[1]) +
                     " input channels per group, input " + in.str() + " provides " +
                     std::to_string(g.cin_g));
  g.D = in.dims()[2];
  g.H = in.dims()[3];
  g.W = in.dims()[4];
  g.OD = spec.out_extent(0, g.D);
  g.OH = spec.out_extent(1, g.H);
  g.OW = spec.out_extent(2, g.W);
  g.kd = spec.kernel[0];
  g.kh = spec.kernel[1];
  g.kw = spec.kernel[2];
  return g;
}

bool is_pointwise(const Geometry& g, const ConvSpec& spec) {
  return g.kd == 1 && g.kh == 1 && g.kw == 1 && spec.stride == Triple{1, 1, 1} &&
         spec.pad == Triple{0, 0, 0};
}

// Output-depth slabs [d0, d1) so that K * slab_voxels stays within budget.
std::size_t slab_depth(const Geometry& g) {
  const std::size_t per_slice = g.K() * g.OH * g.OW;
  return std::clamp<std::size_t>(kColBudget / std::max<std::size_t>(per_slice, 1), 1, g.OD);
}

// col[K][n] for output depths [d0, d1) of one (batch, group) input block.
void im2col(const double* x, const Geometry& g, const ConvSpec& spec, std::size_t d0,
            std::size_t d1, double* col) {
  const std::size_t n = (d1 - d0) * g.OH * g.OW;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin_g; ++c) {
    const double* xc = x + c * g.in_vol();
    for (std::size_t kz = 0; kz < g.kd; ++kz)
      for (std::size_t ky = 0; ky < g.kh; ++ky)
        for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
          double* dst = col + row * n;
          for (std::size_t od = d0; od < d1; ++od) {
            const long iz = static_cast<long>(od * spec.stride[0] + kz) - static_cast<long>(spec.pad[0]);
            for (std::size_t oh = 0; oh < g.OH; ++oh, dst += g.OW) {
              const long iy =
                  static_cast<long>(oh * spec.stride[1] + ky) - static_cast<long>(spec.pad[1]);
              if (iz < 0 || iz >= static_cast<long>(g.D) || iy < 0 || iy >= static_cast<long>(g.H)) {
                std::fill_n(dst, g.OW, 0.0);
                continue;
              }
              const double* src = xc + (static_cast<std::size_t>(iz) * g.H + iy) * g.W;
              const long base = static_cast<long>(kx) - static_cast<long>(spec.pad[2]);
              const long sx = static_cast<long>(spec.stride[2]);
              for (std::size_t ow = 0; ow < g.OW; ++ow) {
                const long ix = base + static_cast<long>(ow) * sx;
                dst[ow] = (ix >= 0 && ix < static_cast<long>(g.W)) ? src[ix] : 0.0;
              }
            }
          }
        }
  }
}

// Scatter-add of col back onto the input block (adjoint of im2col).
void col2im(const double* col, const Geometry& g, const ConvSpec& spec, std::size_t d0,
            std::size_t d1, double* x) {
  const std::size_t n = (d1 - d0) * g.OH * g.OW;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin_g; ++c) {
    double* xc = x + c * g.in_vol();
    for (std::size_t kz = 0; kz < g.kd; ++kz)
      for (std::size_t ky = 0; ky < g.kh; ++ky)
        for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
          const double* src = col + row * n;
          for (std::size_t od = d0; od < d1; ++od) {
            const long iz = static_cast<long>(od * spec.stride[0] + kz) - static_cast<long>(spec.pad[0]);
            for (std::size_t oh = 0; oh < g.OH; ++oh, src += g.OW) {
              const long iy =
                  static_cast<long>(oh * spec.stride[1] + ky) - static_cast<long>(spec.pad[1]);
              if (iz < 0 || iz >= static_cast<long>(g.D) || iy < 0 || iy >= static_cast<long>(g.H))
                continue;
              double* dst = xc + (static_cast<std::size_t>(iz) * g.H + iy) * g.W;
              const long base = static_cast<long>(kx) - static_cast<long>(spec.pad[2]);
              const long sx = static_cast<long>(spec.stride[2]);
              for (std::size_t ow = 0; ow < g.OW; ++ow) {
                const long ix = base + static_cast<long>(ow) * sx;
                if (ix >= 0 && ix < static_cast<long>(g.W)) dst[ix] += src[ow];
              }
            }
          }
        }
  }
}

}  // namespace

std::size_t ConvSpec::out_extent(std::size_t axis, std::size_t in) const {
  const long span = static_cast<long>(in + 2 * pad[axis]) - static_cast<long>(kernel[axis]);
  if (span < 0 || stride[axis] == 0)
    throw SpecError("conv3d: kernel " + std::to_string(kernel[axis]) + " with pad " +
                    std::to_string(pad[axis]) + " does not fit extent " + std::to_string(in) +
                    " on spatial axis " + std::to_string(axis));
  return static_cast<std::size_t>(span) / stride[axis] + 1;
}

ConvSpec ConvSpec::same(std::size_t kd, std::size_t kh, std::size_t kw, std::size_t groups) {
  ConvSpec s;
  s.kernel = {kd, kh, kw};
  s.pad = {kd / 2, kh / 2, kw / 2};
  s.groups = groups;
  return s;
}

Shape conv3d_output_shape(const Shape& input, const Shape& weight, const ConvSpec& spec) {
  const Geometry g = make_geometry(input, weight, spec);
  return Shape{g.batch, g.cout, g.OD, g.OH, g.OW};
}

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, const ConvSpec& spec) {
  ensure_blas();
  const Geometry g = make_geometry(input.shape(), weight.shape(), spec);
  const bool has_bias = bias.numel() != 0;
  if (has_bias && !(bias.shape() == Shape{g.cout}))
    throw ShapeError("conv3d: bias " + bias.shape().str() + " must be [" +
                     std::to_string(g.cout) + "]");
  Tensor out(Shape{g.batch, g.cout, g.OD, g.OH, g.OW});
  const std::size_t N = g.out_vol();
  const std::size_t K = g.K();
  double* y = out.ptr();
  if (has_bias)
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t c = 0; c < g.cout; ++c)
        std::fill_n(y + (b * g.cout + c) * N, N, bias[c]);

  const bool pointwise = is_pointwise(g, spec);
  const std::size_t slab = slab_depth(g);
  std::vector<double> col(pointwise ? 0 : K * slab * g.OH * g.OW);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      const double* x = input.ptr() + (b * g.cin + grp * g.cin_g) * g.in_vol();
      const double* w = weight.ptr() + grp * g.cout_g * K;
      double* yg = y + (b * g.cout + grp * g.cout_g) * N;
      if (pointwise) {
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, g.cout_g, N, K, 1.0, w, K, x, N,
                    1.0, yg, N);
        continue;
      }
      for (std::size_t d0 = 0; d0 < g.OD; d0 += slab) {
        const std::size_t d1 = std::min(g.OD, d0 + slab);
        const std::size_t n = (d1 - d0) * g.OH * g.OW;
        im2col(x, g, spec, d0, d1, col.data());
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, g.cout_g, n, K, 1.0, w, K,
                    col.data(), n, 1.0, yg + d0 * g.OH * g.OW, N);
      }
    }
  return out;
}

Tensor conv3d_backward_input(const Tensor& grad_out, const Tensor& weight, const Shape& input_shape,
                             const ConvSpec& spec) {
  ensure_blas();
  const Geometry g = make_geometry(input_shape, weight.shape(), spec);
  if (!(grad_out.shape() == Shape{g.batch, g.cout, g.OD, g.OH, g.OW}))
    throw ShapeError("conv3d_backward_input: gradient shape " + grad_out.shape().str());
  Tensor dx{input_shape};
  const std::size_t N = g.out_vol();
  const std::size_t K = g.K();
  const bool pointwise = is_pointwise(g, spec);
  const std::size_t slab = slab_depth(g);
  std::vector<double> col(pointwise ? 0 : K * slab * g.OH * g.OW);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      double* xg = dx.ptr() + (b * g.cin + grp * g.cin_g) * g.in_vol();
      const double* w = weight.ptr() + grp * g.cout_g * K;
      const double* dy = grad_out.ptr() + (b * g.cout + grp * g.cout_g) * N;
      if (pointwise) {
        cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K, N, g.cout_g, 1.0, w, K, dy, N, 1.0,
                    xg, N);
        continue;
      }
      for (std::size_t d0 = 0; d0 < g.OD; d0 += slab) {
        const std::size_t d1 = std::min(g.OD, d0 + slab);
        const std::size_t n = (d1 - d0) * g.OH * g.OW;
        cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K, n, g.cout_g, 1.0, w, K,
                    dy + d0 * g.OH * g.OW, N, 0.0, col.data(), n);
        col2im(col.data(), g, spec, d0, d1, xg);
      }
    }
  return dx;
}

void conv3d_backward_params(const Tensor& grad_out, const Tensor& input, const ConvSpec& spec,
                            Tensor& grad_weight, Tensor* grad_bias) {
  ensure_blas();
  const Geometry g = make_geometry(input.shape(), grad_weight.shape(), spec);
  if (!(grad_out.shape() == Shape{g.batch, g.cout, g.OD, g.OH, g.OW}))
    throw ShapeError("conv3d_backward_params: gradient shape " + grad_out.shape().str());
  const std::size_t N = g.out_vol();
  const std::size_t K = g.K();
  const bool pointwise = is_pointwise(g, spec);
  const std::size_t slab = slab_depth(g);
  std::vector<double> col(pointwise ? 0 : K * slab * g.OH * g.OW);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      const double* x = input.ptr() + (b * g.cin + grp * g.cin_g) * g.in_vol();
      double* dw = grad_weight.ptr() + grp * g.cout_g * K;
      const double* dy = grad_out.ptr() + (b * g.cout + grp * g.cout_g) * N;
      if (pointwise) {
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, g.cout_g, K, N, 1.0, dy, N, x, N, 1.0,
                    dw, K);
        continue;
      }
      for (std::size_t d0 = 0; d0 < g.OD; d0 += slab) {
        const std::size_t d1 = std::min(g.OD, d0 + slab);
        const std::size_t n = (d1 - d0) * g.OH * g.OW;
        im2col(x, g, spec, d0, d1, col.data());
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, g.cout_g, K, n, 1.0,
                    dy + d0 * g.OH * g.OW, N, col.data(), n, 1.0, dw, K);
      }
    }
  if (grad_bias) {
    if (!(grad_bias->shape() == Shape{g.cout}))
      throw ShapeError("conv3d_backward_params: bias gradient shape " + grad_bias->shape().str());
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t c = 0; c < g.cout; ++c) {
        const double* dy = grad_out.ptr() + (b * g.cout + c) * N;
        double s = 0.0;
        for (std::size_t i = 0; i < N; ++i) s += dy[i];
        (*grad_bias)[c] += s;
      }
  }
}

}  // namespace xoct
