#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

#include "trident/parameter.hpp"
#include "trident/tensor.hpp"

namespace trident {

/// Geometry of a square 2-D convolution.
struct ConvSpec {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;

  // Padding chosen so that stride-1 output matches the input extent:
  // pad = dilation for a 3x3 kernel, 0 for 1x1.
  static ConvSpec same(std::size_t kernel, std::size_t in_channels, std::size_t out_channels,
                       std::size_t stride = 1, std::size_t dilation = 1) {
    require(kernel % 2 == 1, "same-spatial mode requires an odd kernel, got ", kernel);
    return ConvSpec{kernel, stride, dilation, dilation * (kernel - 1) / 2, in_channels, out_channels};
  }

  // Extent covered by the dilated kernel: k + (k - 1)(d - 1).
  std::size_t effective_extent() const { return kernel + (kernel - 1) * (dilation - 1); }

  void validate() const {
    require(kernel > 0, "conv kernel must be positive");
    require(stride > 0, "conv stride must be positive");
    require(dilation > 0, "conv dilation must be positive");
    require(in_channels > 0 && out_channels > 0, "conv channel counts must be positive");
  }

  std::size_t output_extent(std::size_t input, const char* axis = "spatial") const {
    auto padded = input + 2 * padding;
    auto extent = effective_extent();
    require(padded >= extent, "conv produces zero-sized ", axis, " output: input ", input,
            " + 2*pad ", padding, " < effective kernel ", extent);
    return (padded - extent) / stride + 1;
  }

  Dims weight_dims() const { return {out_channels, in_channels, kernel, kernel}; }

  bool operator==(const ConvSpec&) const = default;
};

enum class ConvAlgorithm { direct, lowered };

namespace kernels {

struct ConvShape {
  std::size_t n, c, h, w, co, ho, wo;
};

inline ConvShape conv_shape(const Dims& input, const Dims& weight, const ConvSpec& spec) {
  spec.validate();
  require(input.size() == 4, "conv2d input must be rank 4 [N,C,H,W], got ", to_string(input));
  require(input[1] == spec.in_channels, "conv2d input dimension 1 (channels) is ", input[1],
          ", expected ", spec.in_channels);
  require(weight.size() == 4, "conv2d weight must be rank 4, got ", to_string(weight));
  require(weight[0] == spec.out_channels, "conv2d weight dimension 0 (out channels) is ", weight[0],
          ", expected ", spec.out_channels);
  require(weight[1] == spec.in_channels, "conv2d weight dimension 1 (in channels) is ", weight[1],
          ", expected ", spec.in_channels);
  require(weight[2] == spec.kernel && weight[3] == spec.kernel, "conv2d weight dimensions 2,3 are ",
          weight[2], "x", weight[3], ", expected ", spec.kernel, "x", spec.kernel);
  auto ho = spec.output_extent(input[2], "height");
  auto wo = spec.output_extent(input[3], "width");
  return {input[0], input[1], input[2], input[3], spec.out_channels, ho, wo};
}

// Reference: literal summation over every tap, out-of-bounds taps read zero.
inline void direct_forward(std::span<const Real> in, std::span<const Real> wt, std::span<Real> out,
                           const ConvShape& s, const ConvSpec& spec) {
  const long k = static_cast<long>(spec.kernel);
  const long stride = static_cast<long>(spec.stride);
  const long dil = static_cast<long>(spec.dilation);
  const long pad = static_cast<long>(spec.padding);
  const long h = static_cast<long>(s.h), w = static_cast<long>(s.w);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t co = 0; co < s.co; ++co)
      for (std::size_t oy = 0; oy < s.ho; ++oy)
        for (std::size_t ox = 0; ox < s.wo; ++ox) {
          Real acc = 0.0;
          for (std::size_t c = 0; c < s.c; ++c)
            for (long i = 0; i < k; ++i) {
              long iy = static_cast<long>(oy) * stride - pad + i * dil;
              if (iy < 0 || iy >= h) continue;
              for (long j = 0; j < k; ++j) {
                long ix = static_cast<long>(ox) * stride - pad + j * dil;
                if (ix < 0 || ix >= w) continue;
                acc += in[((n * s.c + c) * s.h + iy) * s.w + ix] *
                       wt[((co * s.c + c) * spec.kernel + i) * spec.kernel + j];
              }
            }
          out[((n * s.co + co) * s.ho + oy) * s.wo + ox] = acc;
        }
}

inline void direct_backward(std::span<const Real> in, std::span<const Real> wt, std::span<const Real> gout,
                            std::span<Real> gin, std::span<Real> gwt, const ConvShape& s,
                            const ConvSpec& spec) {
  const long k = static_cast<long>(spec.kernel);
  const long stride = static_cast<long>(spec.stride);
  const long dil = static_cast<long>(spec.dilation);
  const long pad = static_cast<long>(spec.padding);
  const long h = static_cast<long>(s.h), w = static_cast<long>(s.w);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t co = 0; co < s.co; ++co)
      for (std::size_t oy = 0; oy < s.ho; ++oy)
        for (std::size_t ox = 0; ox < s.wo; ++ox) {
          Real g = gout[((n * s.co + co) * s.ho + oy) * s.wo + ox];
          for (std::size_t c = 0; c < s.c; ++c)
            for (long i = 0; i < k; ++i) {
              long iy = static_cast<long>(oy) * stride - pad + i * dil;
              if (iy < 0 || iy >= h) continue;
              for (long j = 0; j < k; ++j) {
                long ix = static_cast<long>(ox) * stride - pad + j * dil;
                if (ix < 0 || ix >= w) continue;
                auto ii = ((n * s.c + c) * s.h + iy) * s.w + ix;
                auto wi = ((co * s.c + c) * spec.kernel + i) * spec.kernel + j;
                if (!gin.empty()) gin[ii] += g * wt[wi];
                if (!gwt.empty()) gwt[wi] += g * in[ii];
              }
            }
        }
}

// Patch matrix for one image: rows (c, i, j), columns (oy, ox).
inline void im2col(const Real* in, Real* col, const ConvShape& s, const ConvSpec& spec) {
  const long k = static_cast<long>(spec.kernel);
  const long stride = static_cast<long>(spec.stride);
  const long dil = static_cast<long>(spec.dilation);
  const long pad = static_cast<long>(spec.padding);
  const long h = static_cast<long>(s.h), w = static_cast<long>(s.w);
  const std::size_t cols = s.ho * s.wo;
  for (std::size_t c = 0; c < s.c; ++c)
    for (long i = 0; i < k; ++i)
      for (long j = 0; j < k; ++j) {
        Real* row = col + ((c * spec.kernel + i) * spec.kernel + j) * cols;
        const Real* plane = in + c * s.h * s.w;
        for (std::size_t oy = 0; oy < s.ho; ++oy) {
          long iy = static_cast<long>(oy) * stride - pad + i * dil;
          Real* dst = row + oy * s.wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + s.wo, 0.0);
            continue;
          }
          for (std::size_t ox = 0; ox < s.wo; ++ox) {
            long ix = static_cast<long>(ox) * stride - pad + j * dil;
            dst[ox] = (ix < 0 || ix >= w) ? 0.0 : plane[iy * w + ix];
          }
        }
      }
}

inline void col2im(const Real* col, Real* gin, const ConvShape& s, const ConvSpec& spec) {
  const long k = static_cast<long>(spec.kernel);
  const long stride = static_cast<long>(spec.stride);
  const long dil = static_cast<long>(spec.dilation);
  const long pad = static_cast<long>(spec.padding);
  const long h = static_cast<long>(s.h), w = static_cast<long>(s.w);
  const std::size_t cols = s.ho * s.wo;
  for (std::size_t c = 0; c < s.c; ++c)
    for (long i = 0; i < k; ++i)
      for (long j = 0; j < k; ++j) {
        const Real* row = col + ((c * spec.kernel + i) * spec.kernel + j) * cols;
        Real* plane = gin + c * s.h * s.w;
        for (std::size_t oy = 0; oy < s.ho; ++oy) {
          long iy = static_cast<long>(oy) * stride - pad + i * dil;
          if (iy < 0 || iy >= h) continue;
          const Real* src = row + oy * s.wo;
          for (std::size_t ox = 0; ox < s.wo; ++ox) {
            long ix = static_cast<long>(ox) * stride - pad + j * dil;
            if (ix >= 0 && ix < w) plane[iy * w + ix] += src[ox];
          }
        }
      }
}

// A 1x1, stride-1, unpadded conv reads its input directly as the patch matrix.
inline bool is_pointwise(const ConvSpec& spec) {
  return spec.kernel == 1 && spec.stride == 1 && spec.padding == 0;
}

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

inline void lowered_forward(std::span<const Real> in, std::span<const Real> wt, std::span<Real> out,
                            std::vector<Real>& cols, const ConvShape& s, const ConvSpec& spec) {
  const auto patch = s.c * spec.kernel * spec.kernel;
  const auto npix = s.ho * s.wo;
  ConstMatMap wmat(wt.data(), static_cast<long>(s.co), static_cast<long>(patch));
  const bool pointwise = is_pointwise(spec);
  if (!pointwise) cols.resize(s.n * patch * npix);
  for (std::size_t n = 0; n < s.n; ++n) {
    const Real* src = in.data() + n * s.c * s.h * s.w;
    if (!pointwise) {
      im2col(src, cols.data() + n * patch * npix, s, spec);
      src = cols.data() + n * patch * npix;
    }
    ConstMatMap cmat(src, static_cast<long>(patch), static_cast<long>(npix));
    MatMap omat(out.data() + n * s.co * npix, static_cast<long>(s.co), static_cast<long>(npix));
    omat.noalias() = wmat * cmat;
  }
}

inline void lowered_backward(std::span<const Real> in, std::span<const Real> wt, std::span<const Real> gout,
                             const std::vector<Real>& cols, std::span<Real> gin, std::span<Real> gwt,
                             const ConvShape& s, const ConvSpec& spec) {
  const auto patch = s.c * spec.kernel * spec.kernel;
  const auto npix = s.ho * s.wo;
  const bool pointwise = is_pointwise(spec);
  ConstMatMap wmat(wt.data(), static_cast<long>(s.co), static_cast<long>(patch));
  std::vector<Real> gcol;
  if (!gin.empty() && !pointwise) gcol.resize(patch * npix);
  for (std::size_t n = 0; n < s.n; ++n) {
    ConstMatMap gmat(gout.data() + n * s.co * npix, static_cast<long>(s.co), static_cast<long>(npix));
    const Real* src = pointwise ? in.data() + n * s.c * s.h * s.w : cols.data() + n * patch * npix;
    if (!gwt.empty()) {
      ConstMatMap cmat(src, static_cast<long>(patch), static_cast<long>(npix));
      MatMap gw(gwt.data(), static_cast<long>(s.co), static_cast<long>(patch));
      gw.noalias() += gmat * cmat.transpose();
    }
    if (!gin.empty()) {
      Real* dst = gin.data() + n * s.c * s.h * s.w;
      if (pointwise) {
        MatMap gi(dst, static_cast<long>(patch), static_cast<long>(npix));
        gi.noalias() += wmat.transpose() * gmat;
      } else {
        MatMap gc(gcol.data(), static_cast<long>(patch), static_cast<long>(npix));
        gc.noalias() = wmat.transpose() * gmat;
        col2im(gcol.data(), dst, s, spec);
      }
    }
  }
}

}  // namespace kernels

/// Dilated 2-D convolution (cross-correlation) with zero padding:
///   out[n,o,y,x] = sum_{c,i,j} in[n,c, y*stride - pad + i*d, x*stride - pad + j*d] * w[o,c,i,j]
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const ConvSpec& spec,
                     ConvAlgorithm algo = ConvAlgorithm::lowered) {
  auto s = kernels::conv_shape(input.dims(), weight.dims(), spec);
  std::vector<Real> out(s.n * s.co * s.ho * s.wo);
  auto cols = std::make_shared<std::vector<Real>>();
  if (algo == ConvAlgorithm::direct)
    kernels::direct_forward(input.data(), weight.data(), out, s, spec);
  else
    kernels::lowered_forward(input.data(), weight.data(), out, *cols, s, spec);
  if (!detail::grad_mode_enabled || !(input.requires_grad() || weight.requires_grad())) cols.reset();
  return record_op({s.n, s.co, s.ho, s.wo}, std::move(out), {input, weight},
                   [s, spec, algo, cols](detail::Node& self) {
                     auto& in = *self.inputs[0];
                     auto& wt = *self.inputs[1];
                     std::span<Real> gin, gwt;
                     if (in.requires_grad) gin = in.ensure_grad();
                     if (wt.requires_grad) gwt = wt.ensure_grad();
                     if (algo == ConvAlgorithm::direct)
                       kernels::direct_backward(in.data, wt.data, self.grad, gin, gwt, s, spec);
                     else
                       kernels::lowered_backward(in.data, wt.data, self.grad, *cols, gin, gwt, s, spec);
                   });
}

inline Tensor conv2d(const Tensor& input, SharedParameter& weight, const ConvSpec& spec,
                     ConvAlgorithm algo = ConvAlgorithm::lowered) {
  return conv2d(input, weight.use(), spec, algo);
}

}  // namespace trident
