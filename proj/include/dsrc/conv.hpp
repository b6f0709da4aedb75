#pragma once

// Raw (non-differentiable) convolution kernels: im2col lowering onto an
// Eigen GEMM. NCHW layout everywhere; kernels are [out, in, k, k] for conv2d.
// Transposed convolution reuses the conv kernel layout read backwards, i.e.
// a [Cin, Cout, k, k] kernel maps Cin-channel maps to Cout-channel maps and
// is the adjoint of conv2d with the same kernel.

#include <Eigen/Core>
#include <cstddef>
#include <string>
#include <vector>

#include "dsrc/error.hpp"
#include "dsrc/parallel.hpp"
#include "dsrc/tensor.hpp"

namespace dsrc::conv {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// floor((in + 2 pad - k) / stride) + 1, or throws if the window does not fit.
inline std::size_t output_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride < 1) throw InvalidShape("stride must be >= 1");
  if (k < 1) throw InvalidShape("kernel must be >= 1");
  if (k > in + 2 * pad)
    throw InvalidShape("kernel " + std::to_string(k) + " larger than padded input " +
                       std::to_string(in + 2 * pad));
  return (in + 2 * pad - k) / stride + 1;
}

/// Input extents `in` for which output_extent(in) == out; closed range.
struct ExtentRange {
  std::size_t lo;
  std::size_t hi;
};

inline ExtentRange transposed_extent_range(std::size_t out, std::size_t k, std::size_t stride,
                                           std::size_t pad) {
  // (out-1)*stride + k - 2 pad, plus up to stride-1 extra rows.
  const long long base = static_cast<long long>(out - 1) * static_cast<long long>(stride) +
                         static_cast<long long>(k) - 2 * static_cast<long long>(pad);
  const long long lo = std::max<long long>(base, 1);
  const long long hi = base + static_cast<long long>(stride) - 1;
  if (hi < 1) return {1, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

/// Geometry of a forward convolution [N,C,H,W] -> [N,Cout,Ho,Wo].
struct Geometry {
  std::size_t batch, in_ch, in_h, in_w;
  std::size_t out_ch, k, stride, pad;
  std::size_t out_h, out_w;

  std::size_t patch() const { return in_ch * k * k; }
  std::size_t out_hw() const { return out_h * out_w; }
  std::size_t in_hw() const { return in_h * in_w; }
};

/// cols[(c,ky,kx), s*HoWo + pos] for samples [s0, s1).
template <typename T>
void im2col(const Geometry& g, const T* x, T* cols, std::size_t s0, std::size_t s1) {
  const std::size_t ncols = g.batch * g.out_hw();
  const long long pad = static_cast<long long>(g.pad);
  for (std::size_t c = 0; c < g.in_ch; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((c * g.k + ky) * g.k + kx) * ncols;
        for (std::size_t s = s0; s < s1; ++s) {
          const T* plane = x + (s * g.in_ch + c) * g.in_hw();
          T* dst = row + s * g.out_hw();
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const long long iy = static_cast<long long>(oy * g.stride + ky) - pad;
            if (iy < 0 || iy >= static_cast<long long>(g.in_h)) {
              std::fill(dst + oy * g.out_w, dst + (oy + 1) * g.out_w, T(0));
              continue;
            }
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const long long ix = static_cast<long long>(ox * g.stride + kx) - pad;
              dst[oy * g.out_w + ox] =
                  (ix < 0 || ix >= static_cast<long long>(g.in_w)) ? T(0) : plane[iy * g.in_w + ix];
            }
          }
        }
      }
}

/// Adjoint of im2col: accumulates cols into x (which must be pre-zeroed).
template <typename T>
void col2im(const Geometry& g, const T* cols, T* x, std::size_t s0, std::size_t s1) {
  const std::size_t ncols = g.batch * g.out_hw();
  const long long pad = static_cast<long long>(g.pad);
  for (std::size_t s = s0; s < s1; ++s)
    for (std::size_t c = 0; c < g.in_ch; ++c) {
      T* plane = x + (s * g.in_ch + c) * g.in_hw();
      for (std::size_t ky = 0; ky < g.k; ++ky)
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const T* src = cols + ((c * g.k + ky) * g.k + kx) * ncols + s * g.out_hw();
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const long long iy = static_cast<long long>(oy * g.stride + ky) - pad;
            if (iy < 0 || iy >= static_cast<long long>(g.in_h)) continue;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const long long ix = static_cast<long long>(ox * g.stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<long long>(g.in_w)) continue;
              plane[iy * g.in_w + ix] += src[oy * g.out_w + ox];
            }
          }
        }
    }
}

/// [N, C, HW] tensor data -> [C, N*HW] matrix, samples [s0, s1).
template <typename T>
void nchw_to_channel_major(const T* src, T* dst, std::size_t n, std::size_t c, std::size_t hw,
                           std::size_t s0, std::size_t s1) {
  for (std::size_t s = s0; s < s1; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(src + (s * c + ch) * hw, hw, dst + ch * n * hw + s * hw);
}

template <typename T>
void channel_major_to_nchw(const T* src, T* dst, std::size_t n, std::size_t c, std::size_t hw,
                           std::size_t s0, std::size_t s1) {
  for (std::size_t s = s0; s < s1; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(src + ch * n * hw + s * hw, hw, dst + (s * c + ch) * hw);
}

template <typename T>
Geometry conv_geometry(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad) {
  if (x.rank() != 4) throw InvalidShape("conv2d input must be rank 4 NCHW, got " + shape_str(x.shape()));
  if (w.rank() != 4 || w.dim(2) != w.dim(3))
    throw InvalidShape("conv2d kernel must be [Cout,C,k,k], got " + shape_str(w.shape()));
  if (w.dim(1) != x.dim(1))
    throw InvalidShape("conv2d: input has " + std::to_string(x.dim(1)) + " channels but kernel expects " +
                       std::to_string(w.dim(1)));
  Geometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, pad, 0, 0};
  g.out_h = output_extent(g.in_h, g.k, stride, pad);
  g.out_w = output_extent(g.in_w, g.k, stride, pad);
  return g;
}

/// Transposed conv [N,Cin,h,w] -> [N,Cout,H,W] is expressed through the
/// forward geometry [N,Cout,H,W] -> [N,Cin,h,w].
template <typename T>
Geometry transposed_geometry(const Tensor<T>& y, const Tensor<T>& w, std::size_t stride, std::size_t pad,
                             std::size_t target_h, std::size_t target_w) {
  if (y.rank() != 4)
    throw InvalidShape("transposed_conv2d input must be rank 4 NCHW, got " + shape_str(y.shape()));
  if (w.rank() != 4 || w.dim(2) != w.dim(3))
    throw InvalidShape("transposed_conv2d kernel must be [Cin,Cout,k,k], got " + shape_str(w.shape()));
  if (w.dim(0) != y.dim(1))
    throw InvalidShape("transposed_conv2d: input has " + std::to_string(y.dim(1)) +
                       " channels but kernel expects " + std::to_string(w.dim(0)));
  if (stride < 1) throw InvalidShape("stride must be >= 1");
  const std::size_t k = w.dim(2);
  auto check = [&](std::size_t in, std::size_t target, const char* axis) {
    const auto r = transposed_extent_range(in, k, stride, pad);
    if (r.hi < r.lo || target < r.lo || target > r.hi)
      throw InvalidShape(std::string("transposed_conv2d: target ") + axis + " " + std::to_string(target) +
                         " unreachable from " + std::to_string(in) + "; feasible range [" +
                         std::to_string(r.lo) + ", " + std::to_string(r.hi) + "]");
  };
  check(y.dim(2), target_h, "height");
  check(y.dim(3), target_w, "width");
  return Geometry{y.dim(0), w.dim(1), target_h, target_w, w.dim(0), k, stride, pad, y.dim(2), y.dim(3)};
}

inline Eigen::Index sample_col(const Geometry& g, std::size_t s) {
  return static_cast<Eigen::Index>(s * g.out_hw());
}

// GEMMs run one sample at a time so a sample's result does not depend on
// its position in the batch.

/// Forward conv. Fills `cols` (patch x N*HoWo) for reuse in backward.
template <typename T>
Tensor<T> conv2d_forward(const Geometry& g, const Tensor<T>& x, const Tensor<T>& w, std::vector<T>& cols,
                         int threads) {
  const std::size_t ncols = g.batch * g.out_hw();
  const auto hw = static_cast<Eigen::Index>(g.out_hw());
  cols.assign(g.patch() * ncols, T(0));
  std::vector<T> ymat(g.out_ch * ncols);
  Eigen::Map<const RowMat<T>> wm(w.data().data(), g.out_ch, g.patch());
  Eigen::Map<RowMat<T>> cm(cols.data(), g.patch(), ncols);
  Eigen::Map<RowMat<T>> ym(ymat.data(), g.out_ch, ncols);
  Tensor<T> y(Shape{g.batch, g.out_ch, g.out_h, g.out_w});
  parallel_chunks(threads, g.batch, [&](std::size_t, std::size_t s0, std::size_t s1) {
    im2col(g, x.data().data(), cols.data(), s0, s1);
    for (std::size_t s = s0; s < s1; ++s)
      ym.middleCols(sample_col(g, s), hw).noalias() = wm * cm.middleCols(sample_col(g, s), hw);
    channel_major_to_nchw(ymat.data(), y.data().data(), g.batch, g.out_ch, g.out_hw(), s0, s1);
  });
  return y;
}

/// Backward conv: returns dx (if requested) and accumulates into dw.
template <typename T>
void conv2d_backward(const Geometry& g, const Tensor<T>& w, const std::vector<T>& cols, const Tensor<T>& dy,
                     Tensor<T>* dx, Tensor<T>* dw, int threads) {
  const std::size_t ncols = g.batch * g.out_hw();
  const auto hw = static_cast<Eigen::Index>(g.out_hw());
  std::vector<T> dymat(g.out_ch * ncols);
  Eigen::Map<RowMat<T>> dym(dymat.data(), g.out_ch, ncols);
  Eigen::Map<const RowMat<T>> wm(w.data().data(), g.out_ch, g.patch());
  Eigen::Map<const RowMat<T>> cm(cols.data(), g.patch(), ncols);
  std::vector<T> dcols(dx ? g.patch() * ncols : 0);
  std::vector<RowMat<T>> partial_dw;
  parallel_chunks(threads, g.batch, [&](std::size_t, std::size_t s0, std::size_t s1) {
    nchw_to_channel_major(dy.data().data(), dymat.data(), g.batch, g.out_ch, g.out_hw(), s0, s1);
    if (dx) {
      Eigen::Map<RowMat<T>> dcm(dcols.data(), g.patch(), ncols);
      for (std::size_t s = s0; s < s1; ++s)
        dcm.middleCols(sample_col(g, s), hw).noalias() = wm.transpose() * dym.middleCols(sample_col(g, s), hw);
      col2im(g, dcols.data(), dx->data().data(), s0, s1);
    }
  });
  if (dw) {
    Eigen::Map<RowMat<T>> dwm(dw->data().data(), g.out_ch, g.patch());
    dwm.noalias() += dym * cm.transpose();
  }
}

/// Forward transposed conv through geometry `g` (see transposed_geometry).
template <typename T>
Tensor<T> transposed_forward(const Geometry& g, const Tensor<T>& y, const Tensor<T>& w, std::vector<T>& ymat,
                             int threads) {
  // g describes the forward conv out <- in; here y plays the role of its output.
  const std::size_t ncols = g.batch * g.out_hw();
  const auto hw = static_cast<Eigen::Index>(g.out_hw());
  ymat.assign(g.out_ch * ncols, T(0));
  std::vector<T> cols(g.patch() * ncols);
  Eigen::Map<const RowMat<T>> wm(w.data().data(), g.out_ch, g.patch());
  Eigen::Map<RowMat<T>> ym(ymat.data(), g.out_ch, ncols);
  Eigen::Map<RowMat<T>> cm(cols.data(), g.patch(), ncols);
  Tensor<T> out(Shape{g.batch, g.in_ch, g.in_h, g.in_w});
  parallel_chunks(threads, g.batch, [&](std::size_t, std::size_t s0, std::size_t s1) {
    nchw_to_channel_major(y.data().data(), ymat.data(), g.batch, g.out_ch, g.out_hw(), s0, s1);
    for (std::size_t s = s0; s < s1; ++s)
      cm.middleCols(sample_col(g, s), hw).noalias() = wm.transpose() * ym.middleCols(sample_col(g, s), hw);
    col2im(g, cols.data(), out.data().data(), s0, s1);
  });
  return out;
}

template <typename T>
void transposed_backward(const Geometry& g, const Tensor<T>& w, const std::vector<T>& ymat, const Tensor<T>& dout,
                         Tensor<T>* dy, Tensor<T>* dw, int threads) {
  const std::size_t ncols = g.batch * g.out_hw();
  const auto hw = static_cast<Eigen::Index>(g.out_hw());
  std::vector<T> cols(g.patch() * ncols);
  std::vector<T> dymat(dy ? g.out_ch * ncols : 0);
  Eigen::Map<const RowMat<T>> wm(w.data().data(), g.out_ch, g.patch());
  Eigen::Map<RowMat<T>> cm(cols.data(), g.patch(), ncols);
  parallel_chunks(threads, g.batch, [&](std::size_t, std::size_t s0, std::size_t s1) {
    im2col(g, dout.data().data(), cols.data(), s0, s1);
    if (dy) {
      Eigen::Map<RowMat<T>> dym(dymat.data(), g.out_ch, ncols);
      for (std::size_t s = s0; s < s1; ++s)
        dym.middleCols(sample_col(g, s), hw).noalias() = wm * cm.middleCols(sample_col(g, s), hw);
      channel_major_to_nchw(dymat.data(), dy->data().data(), g.batch, g.out_ch, g.out_hw(), s0, s1);
    }
  });
  if (dw) {
    Eigen::Map<const RowMat<T>> ym(ymat.data(), g.out_ch, ncols);
    Eigen::Map<RowMat<T>> dwm(dw->data().data(), g.out_ch, g.patch());
    dwm.noalias() += ym * cm.transpose();
  }
}

}  // namespace dsrc::conv
