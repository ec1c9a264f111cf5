#include "rockres/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace rockres {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(s));
  }
}

template <typename T>
void add_grad(NodePtr<T>& node, NDArray<T> g) {
  if (node->requires_grad) node->accumulate(g);
}

struct ConvGeom {
  std::int64_t n, cin, h, w, cout, kh, kw, ho, wo;
  int stride, pad;
  std::int64_t k() const { return cin * kh * kw; }
  std::int64_t l() const { return ho * wo; }
};

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const std::int64_t l = g.l();
  for (std::int64_t c = 0; c < g.cin; ++c) {
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * l;
        for (std::int64_t oh = 0; oh < g.ho; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + i;
          for (std::int64_t ow = 0; ow < g.wo; ++ow) {
            const std::int64_t iw = ow * g.stride - g.pad + j;
            row[oh * g.wo + ow] = (ih >= 0 && ih < g.h && iw >= 0 && iw < g.w)
                                      ? x[(c * g.h + ih) * g.w + iw]
                                      : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeom& g, T* x) {
  const std::int64_t l = g.l();
  for (std::int64_t c = 0; c < g.cin; ++c) {
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * l;
        for (std::int64_t oh = 0; oh < g.ho; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + i;
          if (ih < 0 || ih >= g.h) continue;
          for (std::int64_t ow = 0; ow < g.wo; ++ow) {
            const std::int64_t iw = ow * g.stride - g.pad + j;
            if (iw < 0 || iw >= g.w) continue;
            x[(c * g.h + ih) * g.w + iw] += row[oh * g.wo + ow];
          }
        }
      }
    }
  }
}

// A 1x1 stride-1 unpadded convolution reads the input plane directly.
bool is_pointwise(const ConvGeom& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

template <typename T>
T gelu_value(T x) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T u = c * (x + static_cast<T>(0.044715) * x * x * x);
  return static_cast<T>(0.5) * x * (T{1} + std::tanh(u));
}

template <typename T>
T gelu_derivative(T x) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T a = static_cast<T>(0.044715);
  const T t = std::tanh(c * (x + a * x * x * x));
  return static_cast<T>(0.5) * (T{1} + t) +
         static_cast<T>(0.5) * x * (T{1} - t * t) * c * (T{1} + T{3} * a * x * x);
}

}  // namespace

// ---------------------------------------------------------------------------
// convolution / linear

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int padding) {
  require_rank(input.shape(), 4, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
  ConvGeom g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.pad = padding;
  if (weight.dim(1) != g.cin) {
    throw ShapeError("conv2d: input has " + std::to_string(g.cin) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  }
  if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding) {
    throw ShapeError("conv2d: kernel " + to_string(weight.shape()) + " larger than padded input " +
                     to_string(input.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{g.cout}) {
    throw ShapeError("conv2d: bias shape " + to_string(bias.shape()));
  }
  g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;

  NDArray<T> out(Shape{g.n, g.cout, g.ho, g.wo});
  const bool direct = is_pointwise(g);
  std::vector<T> col(direct ? 0 : static_cast<std::size_t>(g.k() * g.l()));
  ConstMatMap<T> wmat(weight.value().ptr(), g.cout, g.k());
  for (std::int64_t n = 0; n < g.n; ++n) {
    const T* xn = input.value().ptr() + n * g.cin * g.h * g.w;
    if (!direct) im2col(xn, g, col.data());
    ConstMatMap<T> cmat(direct ? xn : col.data(), g.k(), g.l());
    MatMap<T> omat(out.ptr() + n * g.cout * g.l(), g.cout, g.l());
    omat.noalias() = wmat * cmat;
    if (bias.defined()) {
      for (std::int64_t co = 0; co < g.cout; ++co) omat.row(co).array() += bias.value()[co];
    }
  }

  std::vector<Tensor<T>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor<T>::from_op(
      std::move(out), "conv2d", std::move(inputs),
      [g, direct](const NDArray<T>& gout, std::vector<NodePtr<T>>& ins) {
        const auto& x = ins[0]->value;
        const auto& w = ins[1]->value;
        const bool need_x = ins[0]->requires_grad;
        const bool need_w = ins[1]->requires_grad;
        NDArray<T> gx(x.shape(), T{0});
        NDArray<T> gw(w.shape(), T{0});
        std::vector<T> col(direct ? 0 : static_cast<std::size_t>(g.k() * g.l()));
        std::vector<T> gcol(direct ? 0 : static_cast<std::size_t>(g.k() * g.l()));
        ConstMatMap<T> wmat(w.ptr(), g.cout, g.k());
        MatMap<T> gwmat(gw.ptr(), g.cout, g.k());
        for (std::int64_t n = 0; n < g.n; ++n) {
          const T* xn = x.ptr() + n * g.cin * g.h * g.w;
          ConstMatMap<T> gomat(gout.ptr() + n * g.cout * g.l(), g.cout, g.l());
          if (need_w) {
            if (!direct) im2col(xn, g, col.data());
            ConstMatMap<T> cmat(direct ? xn : col.data(), g.k(), g.l());
            gwmat.noalias() += gomat * cmat.transpose();
          }
          if (need_x) {
            T* gxn = gx.ptr() + n * g.cin * g.h * g.w;
            if (direct) {
              MatMap<T> gxmat(gxn, g.k(), g.l());
              gxmat.noalias() += wmat.transpose() * gomat;
            } else {
              MatMap<T> gcmat(gcol.data(), g.k(), g.l());
              gcmat.noalias() = wmat.transpose() * gomat;
              col2im(gcol.data(), g, gxn);
            }
          }
        }
        add_grad(ins[0], std::move(gx));
        add_grad(ins[1], std::move(gw));
        if (ins.size() > 2 && ins[2]->requires_grad) {
          NDArray<T> gb(Shape{g.cout}, T{0});
          for (std::int64_t n = 0; n < g.n; ++n) {
            for (std::int64_t co = 0; co < g.cout; ++co) {
              const T* p = gout.ptr() + (n * g.cout + co) * g.l();
              T s{0};
              for (std::int64_t i = 0; i < g.l(); ++i) s += p[i];
              gb[co] += s;
            }
          }
          ins[2]->accumulate(gb);
        }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(input.shape(), 2, "linear input");
  require_rank(weight.shape(), 2, "linear weight");
  const std::int64_t n = input.dim(0), din = input.dim(1), dout = weight.dim(0);
  if (weight.dim(1) != din) {
    throw ShapeError("linear: input features " + std::to_string(din) + " vs weight " +
                     to_string(weight.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{dout}) {
    throw ShapeError("linear: bias shape " + to_string(bias.shape()));
  }
  NDArray<T> out(Shape{n, dout});
  MatMap<T> omat(out.ptr(), n, dout);
  omat.noalias() = ConstMatMap<T>(input.value().ptr(), n, din) *
                   ConstMatMap<T>(weight.value().ptr(), dout, din).transpose();
  if (bias.defined()) {
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < dout; ++j) omat(i, j) += bias.value()[j];
    }
  }
  std::vector<Tensor<T>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor<T>::from_op(
      std::move(out), "linear", std::move(inputs),
      [n, din, dout](const NDArray<T>& gout, std::vector<NodePtr<T>>& ins) {
        ConstMatMap<T> go(gout.ptr(), n, dout);
        if (ins[0]->requires_grad) {
          NDArray<T> gx(Shape{n, din});
          MatMap<T>(gx.ptr(), n, din).noalias() =
              go * ConstMatMap<T>(ins[1]->value.ptr(), dout, din);
          ins[0]->accumulate(gx);
        }
        if (ins[1]->requires_grad) {
          NDArray<T> gw(Shape{dout, din});
          MatMap<T>(gw.ptr(), dout, din).noalias() =
              go.transpose() * ConstMatMap<T>(ins[0]->value.ptr(), n, din);
          ins[1]->accumulate(gw);
        }
        if (ins.size() > 2 && ins[2]->requires_grad) {
          NDArray<T> gb(Shape{dout}, T{0});
          for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t j = 0; j < dout; ++j) gb[j] += go(i, j);
          }
          ins[2]->accumulate(gb);
        }
      });
}

// ---------------------------------------------------------------------------
// activations

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  NDArray<T> out(x.shape());
  const auto in = x.data();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = in[i] > T{0} ? in[i] : T{0};
  return Tensor<T>::from_op(std::move(out), "relu", {x},
                            [](const NDArray<T>& gout, std::vector<NodePtr<T>>& ins) {
                              const auto& xv = ins[0]->value;
                              NDArray<T> g(xv.shape());
                              for (std::int64_t i = 0; i < g.numel(); ++i) {
                                g[i] = xv[i] > T{0} ? gout[i] : T{0};
                              }
                              ins[0]->accumulate(g);
                            });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  NDArray<T> out(x.shape());
  const auto in = x.data();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = gelu_value(in[i]);
  return Tensor<T>::from_op(std::move(out), "gelu", {x},
                            [](const NDArray<T>& gout, std::vector<NodePtr<T>>& ins) {
                              const auto& xv = ins[0]->value;
                              NDArray<T> g(xv.shape());
                              for (std::int64_t i = 0; i < g.numel(); ++i) {
                                g[i] = gout[i] * gelu_derivative(xv[i]);
                              }
                              ins[0]->accumulate(g);
                            });
}

// ---------------------------------------------------------------------------
// normalization

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       BatchNormState<T>& state, Mode mode, double eps, double momentum) {
  require_rank(x.shape(), 4, "batch_norm2d input");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const Shape cshape{c};
  require_same_shape(gamma.shape(), cshape, "batch_norm2d gamma");
  require_same_shape(beta.shape(), cshape, "batch_norm2d beta");
  require_same_shape(state.running_mean.shape(), cshape, "batch_norm2d running mean");
  const std::int64_t count = n * hw;
  if (mode == Mode::train && count < 2) {
    throw ShapeError("batch_norm2d: train mode needs at least 2 values per channel, got " +
                     std::to_string(count));
  }

  const auto xv = x.data();
  NDArray<T> xhat(x.shape());
  NDArray<T> invstd(cshape);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double mu, var;
    if (mode == Mode::train) {
      double s = 0.0;
      for (std::int64_t b = 0; b < n; ++b) {
        const T* p = xv.data() + (b * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) s += p[i];
      }
      mu = s / static_cast<double>(count);
      double sq = 0.0;
      for (std::int64_t b = 0; b < n; ++b) {
        const T* p = xv.data() + (b * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(count);
      const double unbiased = sq / static_cast<double>(count - 1);
      state.running_mean[ch] =
          static_cast<T>((1.0 - momentum) * state.running_mean[ch] + momentum * mu);
      state.running_var[ch] =
          static_cast<T>((1.0 - momentum) * state.running_var[ch] + momentum * unbiased);
    } else {
      mu = state.running_mean[ch];
      var = state.running_var[ch];
    }
    const T is = static_cast<T>(1.0 / std::sqrt(var + eps));
    const T m = static_cast<T>(mu);
    invstd[ch] = is;
    for (std::int64_t b = 0; b < n; ++b) {
      const std::int64_t off = (b * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) xhat[off + i] = (xv[off + i] - m) * is;
    }
  }

  NDArray<T> out(x.shape());
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::int64_t off = (b * c + ch) * hw;
      const T gm = gamma.value()[ch], bt = beta.value()[ch];
      for (std::int64_t i = 0; i < hw; ++i) out[off + i] = gm * xhat[off + i] + bt;
    }
  }

  return Tensor<T>::from_op(
      std::move(out), "batch_norm2d", {x, gamma, beta},
      [xhat = std::move(xhat), invstd = std::move(invstd), mode, n, c, hw](
          const NDArray<T>& gout, std::vector<NodePtr<T>>& ins) {
        const auto& gm = ins[1]->value;
        NDArray<T> gg(Shape{c}, T{0}), gb(Shape{c}, T{0});
        NDArray<T> gx(ins[0]->value.shape());
        const double count = static_cast<double>(n * hw);
        for (std::int64_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::int64_t b = 0; b < n; ++b) {
            const std::int64_t off = (b * c + ch) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
              sum_dy += gout[off + i];
              sum_dy_xhat += static_cast<double>(gout[off + i]) * xhat[off + i];
            }
          }
          gg[ch] = static_cast<T>(sum_dy_xhat);
          gb[ch] = static_cast<T>(sum_dy);
          if (!ins[0]->requires_grad) continue;
          const T k = gm[ch] * invstd[ch];
          if (mode == Mode::eval) {
            for (std::int64_t b = 0; b < n; ++b) {
              const std::int64_t off = (b * c + ch) * hw;
              for (std::int64_t i = 0; i < hw; ++i) gx[off + i] = k * gout[off + i];
            }
          } else {
            const T mean_dy = static_cast<T>(sum_dy / count);
            const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
            for (std::int64_t b = 0; b < n; ++b) {
              const std::int64_t off = (b * c + ch) * hw;
              for (std::int64_t i = 0; i < hw; ++i) {
                gx[off + i] = k * (gout[off + i] - mean_dy - xhat[off + i] * mean_dy_xhat);
              }
            }
          }
        }
        add_grad(ins[0], std::move(gx));
        add_grad(ins[1], std::move(gg));
        add_grad(ins[2], std::move(gb));
      });
}

namespace {

// Normalizes `groups` vectors of length `len` with element stride `stride`;
// group g starts at base(g). Element i of every group uses gamma[i].
template <typename T, typename Base>
void normalize_groups(const T* x, T* xhat, T* invstd, std::int64_t groups, std::int64_t len,
                      std::int64_t stride, Base base, double eps) {
  for (std::int64_t g = 0; g < groups; ++g) {
    const std::int64_t b = base(g);
    double s = 0.0;
    for (std::int64_t i = 0; i < len; ++i) s += x[b + i * stride];
    const double mu = s / static_cast<double>(len);
    double sq = 0.0;
    for (std::int64_t i = 0; i < len; ++i) {
      const double d = x[b + i * stride] - mu;
      sq += d * d;
    }
    const T is = static_cast<T>(1.0 / std::sqrt(sq / static_cast<double>(len) + eps));
    const T m = static_cast<T>(mu);
    invstd[g] = is;
    for (std::int64_t i = 0; i < len; ++i) xhat[b + i * stride] = (x[b + i * stride] - m) * is;
  }
}

template <typename T, typename Base>
void normalize_groups_backward(const T* gout, const T* xhat, const T* invstd, const T* gamma,
                               T* gx, T* ggamma, T* gbeta, std::int64_t groups, std::int64_t len,
                               std::int64_t stride, Base base) {
  for (std::int64_t g = 0; g < groups; ++g) {
    const std::int64_t b = base(g);
    double sdx = 0.0, sdxx = 0.0;
    for (std::int64_t i = 0; i < len; ++i) {
      const std::int64_t e = b + i * stride;
      const double dxhat = static_cast<double>(gout[e]) * gamma[i];
      sdx += dxhat;
      sdxx += dxhat * xhat[e];
      ggamma[i] += gout[e] * xhat[e];
      gbeta[i] += gout[e];
    }
    if (gx == nullptr) continue;
    const T mdx = static_cast<T>(sdx / static_cast<double>(len));
    const T mdxx = static_cast<T>(sdxx / static_cast<double>(len));
    for (std::int64_t i = 0; i < len; ++i) {
      const std::int64_t e = b + i * stride;
      gx[e] = invstd[g] * (gout[e] * gamma[i] - mdx - xhat[e] * mdxx);
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, std::size_t normalized_rank, const Tensor<T>& gamma,
                     const Tensor<T>& beta, double eps) {
  const Shape& s = x.shape();
  if (normalized_rank == 0 || normalized_rank > s.size()) {
    throw ShapeError("layer_norm: cannot normalize " + std::to_string(normalized_rank) +
                     " trailing axes of " + to_string(s));
  }
  const Shape trailing(s.end() - static_cast<std::ptrdiff_t>(normalized_rank), s.end());
  require_same_shape(gamma.shape(), trailing, "layer_norm gamma");
  require_same_shape(beta.shape(), trailing, "layer_norm beta");
  const std::int64_t len = numel(trailing);
  const std::int64_t groups = x.numel() / len;
  NDArray<T> xhat(s), invstd(Shape{groups});
  auto base = [len](std::int64_t g) { return g * len; };
  normalize_groups(x.value().ptr(), xhat.ptr(), invstd.ptr(), groups, len, 1, base, eps);
  NDArray<T> out(s);
  for (std::int64_t g = 0; g < groups; ++g) {
    for (std::int64_t i = 0; i < len; ++i) {
      out[g * len + i] = gamma.value()[i] * xhat[g * len + i] + beta.value()[i];
    }
  }
  return Tensor<T>::from_op(
      std::move(out), "layer_norm", {x, gamma, beta},
      [xhat = std::move(xhat), invstd = std::move(invstd), groups, len, trailing](
          const NDArray<T>& gout, std::vector<NodePtr<T>>& ins) {
        NDArray<T> gx(ins[0]->value.shape()), gg(trailing, T{0}), gb(trailing, T{0});
        auto base = [len](std::int64_t g) { return g * len; };
        normalize_groups_backward(gout.ptr(), xhat.ptr(), invstd.ptr(), ins[1]->value.ptr(),
                                  ins[0]->requires_grad ? gx.ptr() : nullptr, gg.ptr(), gb.ptr(),
                                  groups, len, 1, base);
        add_grad(ins[0], std::move(gx));
        add_grad(ins[1], std::move(gg));
        add_grad(ins[2], std::move(gb));
      });
}

template <typename T>
Tensor<T> channel_layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             double eps) {
  require_rank(x.shape(), 4, "channel_layer_norm input");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require_same_shape(gamma.shape(), Shape{c}, "channel_layer_norm gamma");
  require_same_shape(beta.shape(), Shape{c}, "channel_layer_norm beta");
  const std::int64_t groups = n * hw;
  auto base = [c, hw](std::int64_t g) { return (g / hw) * c * hw + g % hw; };
  NDArray<T> xhat(x.shape()), invstd(Shape{groups});
  normalize_groups(x.value().ptr(), xhat.ptr(), invstd.ptr(), groups, c, hw, base, eps);
  NDArray<T> out(x.shape());
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::int64_t off = (b * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        out[off + i] = gamma.value()[ch] * xhat[off + i] + beta.value()[ch];
      }
    }
  }
  return Tensor<T>::from_op(
      std::move(out), "channel_layer_norm", {x, gamma, beta},
      [xhat = std::move(xhat), invstd = std::move(invstd), groups, c, hw](
          const NDArray<T>& gout, std::vector<NodePtr<T>>& ins) {
        NDArray<T> gx(ins[0]->value.shape()), gg(Shape{c}, T{0}), gb(Shape{c}, T{0});
        auto base = [c, hw](std::int64_t g) { return (g / hw) * c * hw + g % hw; };
        normalize_groups_backward(gout.ptr(), xhat.ptr(), invstd.ptr(), ins[1]->value.ptr(),
                                  ins[0]->requires_grad ? gx.ptr() : nullptr, gg.ptr(), gb.ptr(),
                                  groups, c, hw, base);
        add_grad(ins[0], std::move(gx));
        add_grad(ins[1], std::move(gg));
        add_grad(ins[2], std::move(gb));
      });
}

// ---------------------------------------------------------------------------
// softmax

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const Shape& s = x.shape();
  const int rank = static_cast<int>(s.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("softmax: axis out of range for " + to_string(s));
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < rank; ++i) inner *= s[i];
  const std::int64_t len = s[axis];
  NDArray<T> out(s);
  const auto xv = x.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t b = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::int64_t i = 0; i < len; ++i) mx = std::max(mx, xv[b + i * inner]);
      T z{0};
      for (std::int64_t i = 0; i < len; ++i) {
        const T e = std::exp(xv[b + i * inner] - mx);
        out[b + i * inner] = e;
        z += e;
      }
      for (std::int64_t i = 0; i < len; ++i) out[b + i * inner] /= z;
    }
  }
  NDArray<T> saved = out;
  return Tensor<T>::from_op(
      std::move(out), "softmax", {x},
      [y = std::move(saved), outer, inner, len](const NDArray<T>& gout,
                                                std::vector<NodePtr<T>>& ins) {
        NDArray<T> g(y.shape());
        for (std::int64_t o = 0; o < outer; ++o) {
          for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t b = o * len * inner + in;
            T dot{0};
            for (std::int64_t i = 0; i < len; ++i) dot += gout[b + i * inner] * y[b + i * inner];
            for (std::int64_t i = 0; i < len; ++i) {
              g[b + i * inner] = y[b + i * inner] * (gout[b + i * inner] - dot);
            }
          }
        }
        ins[0]->accumulate(g);
      });
}

// ---------------------------------------------------------------------------
// pooling

template <typename T>
Tensor<T> pool2d(const Tensor<T>& x, PoolKind kind, int kernel, int stride, int padding) {
  require_rank(x.shape(), 4, "pool2d input");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto xv = x.data();
  if (kind == PoolKind::global_avg) {
    const std::int64_t hw = h * w;
    NDArray<T> out(Shape{n, c, 1, 1});
    for (std::int64_t p = 0; p < n * c; ++p) {
      T s{0};
      for (std::int64_t i = 0; i < hw; ++i) s += xv[p * hw + i];
      out[p] = s / static_cast<T>(hw);
    }
    return Tensor<T>::from_op(std::move(out), "global_avg_pool", {x},
                              [n, c, hw](const NDArray<T>& gout, std::vector<NodePtr<T>>& ins) {
                                NDArray<T> g(ins[0]->value.shape());
                                for (std::int64_t p = 0; p < n * c; ++p) {
                                  const T v = gout[p] / static_cast<T>(hw);
                                  for (std::int64_t i = 0; i < hw; ++i) g[p * hw + i] = v;
                                }
                                ins[0]->accumulate(g);
                              });
  }
  if (kernel < 1 || stride < 1 || padding < 0) throw ShapeError("pool2d: invalid window");
  if (kernel > h + 2 * padding || kernel > w + 2 * padding) {
    throw ShapeError("pool2d: window larger than padded input " + to_string(x.shape()));
  }
  if (2 * padding > kernel) throw ShapeError("pool2d: padding exceeds half the window");
  const std::int64_t ho = (h + 2 * padding - kernel) / stride + 1;
  const std::int64_t wo = (w + 2 * padding - kernel) / stride + 1;
  NDArray<T> out(Shape{n, c, ho, wo});

  if (kind == PoolKind::max) {
    std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.numel()));
    for (std::int64_t p = 0; p < n * c; ++p) {
      for (std::int64_t oh = 0; oh < ho; ++oh) {
        for (std::int64_t ow = 0; ow < wo; ++ow) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t arg = -1;
          for (int i = 0; i < kernel; ++i) {
            const std::int64_t ih = oh * stride - padding + i;
            if (ih < 0 || ih >= h) continue;
            for (int j = 0; j < kernel; ++j) {
              const std::int64_t iw = ow * stride - padding + j;
              if (iw < 0 || iw >= w) continue;
              const std::int64_t e = (p * h + ih) * w + iw;
              if (arg < 0 || xv[e] > best) {
                best = xv[e];
                arg = e;
              }
            }
          }
          const std::int64_t o = (p * ho + oh) * wo + ow;
          out[o] = best;
          argmax[static_cast<std::size_t>(o)] = arg;
        }
      }
    }
    return Tensor<T>::from_op(std::move(out), "max_pool2d", {x},
                              [argmax = std::move(argmax)](const NDArray<T>& gout,
                                                           std::vector<NodePtr<T>>& ins) {
                                NDArray<T> g(ins[0]->value.shape(), T{0});
                                for (std::size_t o = 0; o < argmax.size(); ++o) {
                                  g[argmax[o]] += gout[static_cast<std::int64_t>(o)];
                                }
                                ins[0]->accumulate(g);
                              });
  }

  const T area = static_cast<T>(kernel * kernel);
  for (std::int64_t p = 0; p < n * c; ++p) {
    for (std::int64_t oh = 0; oh < ho; ++oh) {
      for (std::int64_t ow = 0; ow < wo; ++ow) {
        T s{0};
        for (int i = 0; i < kernel; ++i) {
          const std::int64_t ih = oh * stride - padding + i;
          if (ih < 0 || ih >= h) continue;
          for (int j = 0; j < kernel; ++j) {
            const std::int64_t iw = ow * stride - padding + j;
            if (iw < 0 || iw >= w) continue;
            s += xv[(p * h + ih) * w + iw];
          }
        }
        out[(p * ho + oh) * wo + ow] = s / area;
      }
    }
  }
  return Tensor<T>::from_op(
      std::move(out), "avg_pool2d", {x},
      [n, c, h, w, ho, wo, kernel, stride, padding, area](const NDArray<T>& gout,
                                                          std::vector<NodePtr<T>>& ins) {
        NDArray<T> g(ins[0]->value.shape(), T{0});
        for (std::int64_t p = 0; p < n * c; ++p) {
          for (std::int64_t oh = 0; oh < ho; ++oh) {
            for (std::int64_t ow = 0; ow < wo; ++ow) {
              const T v = gout[(p * ho + oh) * wo + ow] / area;
              for (int i = 0; i < kernel; ++i) {
                const std::int64_t ih = oh * stride - padding + i;
                if (ih < 0 || ih >= h) continue;
                for (int j = 0; j < kernel; ++j) {
                  const std::int64_t iw = ow * stride - padding + j;
                  if (iw < 0 || iw >= w) continue;
                  g[(p * h + ih) * w + iw] += v;
                }
              }
            }
          }
        }
        ins[0]->accumulate(g);
      });
}

// ---------------------------------------------------------------------------
// elementwise and shape

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  NDArray<T> out = a.value();
  out.add_inplace(b.value());
  return Tensor<T>::from_op(std::move(out), "add", {a, b},
                            [](const NDArray<T>& gout, std::vector<NodePtr<T>>& ins) {
                              add_grad(ins[0], gout);
                              add_grad(ins[1], gout);
                            });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  NDArray<T> out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return Tensor<T>::from_op(std::move(out), "mul", {a, b},
                            [](const NDArray<T>& gout, std::vector<NodePtr<T>>& ins) {
                              for (int k = 0; k < 2; ++k) {
                                if (!ins[k]->requires_grad) continue;
                                const auto& other = ins[1 - k]->value;
                                NDArray<T> g(other.shape());
                                for (std::int64_t i = 0; i < g.numel(); ++i) {
                                  g[i] = gout[i] * other[i];
                                }
                                ins[k]->accumulate(g);
                              }
                            });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor) {
  const T f = static_cast<T>(factor);
  NDArray<T> out(x.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] * f;
  return Tensor<T>::from_op(std::move(out), "scale", {x},
                            [f](const NDArray<T>& gout, std::vector<NodePtr<T>>& ins) {
                              NDArray<T> g(gout.shape());
                              for (std::int64_t i = 0; i < g.numel(); ++i) g[i] = gout[i] * f;
                              ins[0]->accumulate(g);
                            });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  NDArray<T> out = x.value().reshaped(std::move(shape));
  return Tensor<T>::from_op(std::move(out), "reshape", {x},
                            [](const NDArray<T>& gout, std::vector<NodePtr<T>>& ins) {
                              ins[0]->accumulate(gout.reshaped(ins[0]->value.shape()));
                            });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a, bool transpose_b) {
  require_rank(a.shape(), 3, "matmul lhs");
  require_rank(b.shape(), 3, "matmul rhs");
  const std::int64_t ba = a.dim(0), bb = b.dim(0);
  if (ba != bb && ba != 1 && bb != 1) {
    throw ShapeError("matmul: batch mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  const std::int64_t batch = std::max(ba, bb);
  const std::int64_t ar = a.dim(1), ac = a.dim(2), br = b.dim(1), bc = b.dim(2);
  const std::int64_t m = transpose_a ? ac : ar, ka = transpose_a ? ar : ac;
  const std::int64_t kb = transpose_b ? bc : br, nn = transpose_b ? br : bc;
  if (ka != kb) {
    throw ShapeError("matmul: inner dimensions differ " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  NDArray<T> out(Shape{batch, m, nn});
  for (std::int64_t i = 0; i < batch; ++i) {
    ConstMatMap<T> am(a.value().ptr() + (ba == 1 ? 0 : i) * ar * ac, ar, ac);
    ConstMatMap<T> bm(b.value().ptr() + (bb == 1 ? 0 : i) * br * bc, br, bc);
    MatMap<T> om(out.ptr() + i * m * nn, m, nn);
    if (!transpose_a && !transpose_b) om.noalias() = am * bm;
    else if (transpose_a && !transpose_b) om.noalias() = am.transpose() * bm;
    else if (!transpose_a && transpose_b) om.noalias() = am * bm.transpose();
    else om.noalias() = am.transpose() * bm.transpose();
  }
  return Tensor<T>::from_op(
      std::move(out), "matmul", {a, b},
      [=](const NDArray<T>& gout, std::vector<NodePtr<T>>& ins) {
        NDArray<T> ga(ins[0]->value.shape(), T{0}), gb(ins[1]->value.shape(), T{0});
        for (std::int64_t i = 0; i < batch; ++i) {
          ConstMatMap<T> am(ins[0]->value.ptr() + (ba == 1 ? 0 : i) * ar * ac, ar, ac);
          ConstMatMap<T> bm(ins[1]->value.ptr() + (bb == 1 ? 0 : i) * br * bc, br, bc);
          ConstMatMap<T> go(gout.ptr() + i * m * nn, m, nn);
          if (ins[0]->requires_grad) {
            MatMap<T> gam(ga.ptr() + (ba == 1 ? 0 : i) * ar * ac, ar, ac);
            // d op(A) = dC op(B)^T
            if (!transpose_a) {
              if (!transpose_b) gam.noalias() += go * bm.transpose();
              else gam.noalias() += go * bm;
            } else {
              if (!transpose_b) gam.noalias() += bm * go.transpose();
              else gam.noalias() += bm.transpose() * go.transpose();
            }
          }
          if (ins[1]->requires_grad) {
            MatMap<T> gbm(gb.ptr() + (bb == 1 ? 0 : i) * br * bc, br, bc);
            // d op(B) = op(A)^T dC
            if (!transpose_b) {
              if (!transpose_a) gbm.noalias() += am.transpose() * go;
              else gbm.noalias() += am * go;
            } else {
              if (!transpose_a) gbm.noalias() += go.transpose() * am;
              else gbm.noalias() += go.transpose() * am.transpose();
            }
          }
        }
        add_grad(ins[0], std::move(ga));
        add_grad(ins[1], std::move(gb));
      });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int64_t> indices) {
  require_rank(table.shape(), 2, "gather_rows table");
  const std::int64_t rows = table.dim(0), d = table.dim(1);
  const auto count = static_cast<std::int64_t>(indices.size());
  if (count == 0) throw ShapeError("gather_rows: empty index list");
  NDArray<T> out(Shape{count, d});
  for (std::int64_t r = 0; r < count; ++r) {
    const std::int64_t src = indices[static_cast<std::size_t>(r)];
    if (src < 0 || src >= rows) {
      throw ShapeError("gather_rows: index " + std::to_string(src) + " outside table of " +
                       std::to_string(rows) + " rows");
    }
    std::copy_n(table.value().ptr() + src * d, d, out.ptr() + r * d);
  }
  std::vector<std::int64_t> idx(indices.begin(), indices.end());
  return Tensor<T>::from_op(std::move(out), "gather_rows", {table},
                            [idx = std::move(idx), d](const NDArray<T>& gout,
                                                      std::vector<NodePtr<T>>& ins) {
                              NDArray<T> g(ins[0]->value.shape(), T{0});
                              for (std::size_t r = 0; r < idx.size(); ++r) {
                                for (std::int64_t j = 0; j < d; ++j) {
                                  g[idx[r] * d + j] += gout[static_cast<std::int64_t>(r) * d + j];
                                }
                              }
                              ins[0]->accumulate(g);
                            });
}

// ---------------------------------------------------------------------------
// reductions and loss

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double s = 0.0;
  for (T v : x.data()) s += v;
  return Tensor<T>::from_op(NDArray<T>::scalar(static_cast<T>(s)), "sum", {x},
                            [](const NDArray<T>& gout, std::vector<NodePtr<T>>& ins) {
                              ins[0]->accumulate(NDArray<T>(ins[0]->value.shape(), gout[0]));
                            });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels) {
  require_rank(logits.shape(), 2, "cross_entropy logits");
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  NDArray<T> probs(logits.shape());
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int32_t y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) {
      throw ConfigError("cross_entropy: label " + std::to_string(y) + " out of range for " +
                        std::to_string(k) + " classes");
    }
    const T* row = logits.value().ptr() + i * k;
    const T mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::int64_t j = 0; j < k; ++j) {
      const double e = std::exp(static_cast<double>(row[j] - mx));
      probs[i * k + j] = static_cast<T>(e);
      z += e;
    }
    for (std::int64_t j = 0; j < k; ++j) probs[i * k + j] = static_cast<T>(probs[i * k + j] / z);
    total += std::log(z) - static_cast<double>(row[y] - mx);
  }
  std::vector<std::int32_t> y(labels.begin(), labels.end());
  return Tensor<T>::from_op(
      NDArray<T>::scalar(static_cast<T>(total / static_cast<double>(n))), "cross_entropy",
      {logits},
      [probs = std::move(probs), y = std::move(y), n, k](const NDArray<T>& gout,
                                                         std::vector<NodePtr<T>>& ins) {
        NDArray<T> g(probs.shape());
        const T s = gout[0] / static_cast<T>(n);
        for (std::int64_t i = 0; i < n; ++i) {
          for (std::int64_t j = 0; j < k; ++j) {
            g[i * k + j] = (probs[i * k + j] - (j == y[static_cast<std::size_t>(i)] ? T{1} : T{0})) * s;
          }
        }
        ins[0]->accumulate(g);
      });
}

#define ROCKRES_INSTANTIATE_OPS(T)                                                             \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);  \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> gelu(const Tensor<T>&);                                                   \
  template Tensor<T> batch_norm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                  BatchNormState<T>&, Mode, double, double);                  \
  template Tensor<T> layer_norm(const Tensor<T>&, std::size_t, const Tensor<T>&,              \
                                const Tensor<T>&, double);                                    \
  template Tensor<T> channel_layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                        double);                                              \
  template Tensor<T> softmax(const Tensor<T>&, int);                                           \
  template Tensor<T> pool2d(const Tensor<T>&, PoolKind, int, int, int);                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, double);                                          \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, bool, bool);                   \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::int64_t>);             \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                   \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>);

ROCKRES_INSTANTIATE_OPS(float)
ROCKRES_INSTANTIATE_OPS(double)

}  // namespace rockres
