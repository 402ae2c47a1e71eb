#include "c2l/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace c2l {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
  }
}

template <typename T>
void add_into(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Unfolds one [C x H x W] image into [C*9 x Ho*Wo] patch columns.
// Output columns [lo, hi) whose tap kx lands inside a row of width w.
inline std::pair<std::size_t, std::size_t> valid_columns(long kx, long pad, long stride, std::size_t w,
                                                         std::size_t wo) {
  const long first = pad - kx;  // smallest ox * stride that is in range
  long lo = first <= 0 ? 0 : (first + stride - 1) / stride;
  long hi = (static_cast<long>(w) - 1 + pad - kx) / stride + 1;
  if (static_cast<long>(w) - 1 + pad - kx < 0) hi = 0;
  lo = std::min<long>(lo, static_cast<long>(wo));
  hi = std::clamp<long>(hi, lo, static_cast<long>(wo));
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <typename T>
void im2col(const T* img, std::size_t channels, std::size_t h, std::size_t w, std::size_t ho, std::size_t wo,
            const ConvSpec& spec, T* cols) {
  const long pad = static_cast<long>(spec.padding);
  const long stride = static_cast<long>(spec.stride);
  const std::size_t plane = ho * wo;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = img + c * h * w;
    for (long ky = 0; ky < 3; ++ky) {
      for (long kx = 0; kx < 3; ++kx) {
        T* dst = cols + ((c * 9) + ky * 3 + kx) * plane;
        const auto [lo, hi] = valid_columns(kx, pad, stride, w, wo);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy) * stride - pad + ky;
          T* drow = dst + oy * wo;
          if (iy < 0 || iy >= static_cast<long>(h)) {
            std::fill(drow, drow + wo, T(0));
            continue;
          }
          const long base = iy * static_cast<long>(w) - pad + kx;
          std::fill(drow, drow + lo, T(0));
          if (stride == 1 && lo < hi) {
            std::copy(src + base + static_cast<long>(lo), src + base + static_cast<long>(hi), drow + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) drow[ox] = src[base + static_cast<long>(ox) * stride];
          }
          std::fill(drow + hi, drow + wo, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t ho, std::size_t wo,
            const ConvSpec& spec, T* img) {
  const long pad = static_cast<long>(spec.padding);
  const long stride = static_cast<long>(spec.stride);
  const std::size_t plane = ho * wo;
  for (std::size_t c = 0; c < channels; ++c) {
    T* dst = img + c * h * w;
    for (long ky = 0; ky < 3; ++ky) {
      for (long kx = 0; kx < 3; ++kx) {
        const T* src = cols + ((c * 9) + ky * 3 + kx) * plane;
        const auto [lo, hi] = valid_columns(kx, pad, stride, w, wo);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy) * stride - pad + ky;
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          const long base = iy * static_cast<long>(w) - pad + kx;
          const T* srow = src + oy * wo;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[base + static_cast<long>(ox) * stride] += srow[ox];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.shape() == bv.shape()) {
    Tensor<T> out = av;
    add_into<T>(out.data(), bv.data());
    const Var<T> ops[] = {a, b};
    return a.tape().record(std::move(out), ops, [a, b](Tape<T>& t, std::span<const T> g) {
      if (a.requires_grad()) add_into<T>(t.grad_buffer(a.id()), g);
      if (b.requires_grad()) add_into<T>(t.grad_buffer(b.id()), g);
    });
  }
  // Scalar operand: broadcast it over the other one.
  const bool a_scalar = av.size() == 1;
  const bool b_scalar = bv.size() == 1;
  if (!a_scalar && !b_scalar) shape_mismatch("add", av.shape(), bv.shape());
  const Var<T>& big = a_scalar ? b : a;
  const Var<T>& small = a_scalar ? a : b;
  Tensor<T> out = big.value();
  const T s = small.value()[0];
  for (T& v : out.data()) v += s;
  const Var<T> ops[] = {a, b};
  return a.tape().record(std::move(out), ops, [big, small](Tape<T>& t, std::span<const T> g) {
    if (big.requires_grad()) add_into<T>(t.grad_buffer(big.id()), g);
    if (small.requires_grad()) {
      T total = 0;
      for (T v : g) total += v;
      t.grad_buffer(small.id())[0] += total;
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (T& v : out.data()) v *= factor;
  const Var<T> ops[] = {a};
  return a.tape().record(std::move(out), ops, [a, factor](Tape<T>& t, std::span<const T> g) {
    auto ga = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
  Tensor<T> out = a.value();
  auto bd = b.value().data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bd[i];
  const Var<T> ops[] = {a, b};
  return a.tape().record(std::move(out), ops, [a, b](Tape<T>& t, std::span<const T> g) {
    if (a.requires_grad()) {
      auto ga = t.grad_buffer(a.id());
      auto bv = b.value().data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto gb = t.grad_buffer(b.id());
      auto av = a.value().data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (T& v : out.data()) v = v > T(0) ? v : T(0);
  const Var<T> ops[] = {a};
  return a.tape().record(std::move(out), ops, [a](Tape<T>& t, std::span<const T> g) {
    auto ga = t.grad_buffer(a.id());
    auto av = a.value().data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] > T(0)) ga[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("matmul", a.shape(), 2);
  require_rank("matmul", b.shape(), 2);
  if (a.dim(1) != b.dim(0)) shape_mismatch("matmul", a.shape(), b.shape());
  Tensor<T> out({a.dim(0), b.dim(1)});
  MatMap<T>(out.ptr(), a.dim(0), b.dim(1)).noalias() =
      ConstMatMap<T>(a.ptr(), a.dim(0), a.dim(1)) * ConstMatMap<T>(b.ptr(), b.dim(0), b.dim(1));
  return out;
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = matmul(a.value(), b.value());
  const Var<T> ops[] = {a, b};
  return a.tape().record(std::move(out), ops, [a, b](Tape<T>& t, std::span<const T> g) {
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    ConstMatMap<T> gm(g.data(), m, n);
    if (a.requires_grad()) {
      MatMap<T>(t.grad_buffer(a.id()).data(), m, k).noalias() +=
          gm * ConstMatMap<T>(b.value().ptr(), k, n).transpose();
    }
    if (b.requires_grad()) {
      MatMap<T>(t.grad_buffer(b.id()).data(), k, n).noalias() +=
          ConstMatMap<T>(a.value().ptr(), m, k).transpose() * gm;
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_rank("linear", x.shape(), 2);
  require_rank("linear", weight.shape(), 2);
  const std::size_t batch = x.shape()[0], in = x.shape()[1], out_dim = weight.shape()[0];
  if (weight.shape()[1] != in) shape_mismatch("linear", x.shape(), weight.shape());
  if (bias.shape() != Shape{out_dim}) shape_mismatch("linear", weight.shape(), bias.shape());
  Tensor<T> out({batch, out_dim});
  MatMap<T> om(out.ptr(), batch, out_dim);
  om.noalias() = ConstMatMap<T>(x.value().ptr(), batch, in) *
                 ConstMatMap<T>(weight.value().ptr(), out_dim, in).transpose();
  const T* bv = bias.value().ptr();
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t j = 0; j < out_dim; ++j) om(i, j) += bv[j];
  }
  const Var<T> ops[] = {x, weight, bias};
  return x.tape().record(std::move(out), ops, [x, weight, bias, batch, in, out_dim](Tape<T>& t, std::span<const T> g) {
    ConstMatMap<T> gm(g.data(), batch, out_dim);
    if (x.requires_grad()) {
      MatMap<T>(t.grad_buffer(x.id()).data(), batch, in).noalias() +=
          gm * ConstMatMap<T>(weight.value().ptr(), out_dim, in);
    }
    if (weight.requires_grad()) {
      MatMap<T>(t.grad_buffer(weight.id()).data(), out_dim, in).noalias() +=
          gm.transpose() * ConstMatMap<T>(x.value().ptr(), batch, in);
    }
    if (bias.requires_grad()) {
      auto gb = t.grad_buffer(bias.id());
      for (std::size_t i = 0; i < batch; ++i) {
        for (std::size_t j = 0; j < out_dim; ++j) gb[j] += gm(i, j);
      }
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias, ConvSpec spec) {
  require_rank("conv2d", input.shape(), 4);
  require_rank("conv2d", kernel.shape(), 4);
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  if (ks[2] != 3 || ks[3] != 3) throw ShapeError("conv2d: kernel must be 3x3, got " + shape_str(ks));
  if (ks[1] != is[1]) shape_mismatch("conv2d", is, ks);
  if (spec.stride != 1 && spec.stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");
  if (spec.padding > 1) throw ShapeError("conv2d: padding must be 0 or 1");
  if (is[2] < 3 || is[3] < 3) throw ShapeError("conv2d: input spatial size below 3x3: " + shape_str(is));
  const bool has_bias = bias.valid();
  if (has_bias && bias.shape() != Shape{ks[0]}) shape_mismatch("conv2d", ks, bias.shape());

  const std::size_t batch = is[0], channels = is[1], h = is[2], w = is[3], out_ch = ks[0];
  const std::size_t ho = (h + 2 * spec.padding - 3) / spec.stride + 1;
  const std::size_t wo = (w + 2 * spec.padding - 3) / spec.stride + 1;
  const std::size_t patch = channels * 9, plane = ho * wo;

  Tensor<T> out({batch, out_ch, ho, wo});
  AlignedVector<T> cols(patch * plane);
  ConstMatMap<T> km(kernel.value().ptr(), out_ch, patch);
  for (std::size_t b = 0; b < batch; ++b) {
    im2col(input.value().ptr() + b * channels * h * w, channels, h, w, ho, wo, spec, cols.data());
    MatMap<T> om(out.ptr() + b * out_ch * plane, out_ch, plane);
    om.noalias() = km * ConstMatMap<T>(cols.data(), patch, plane);
    if (has_bias) {
      const T* bv = bias.value().ptr();
      for (std::size_t o = 0; o < out_ch; ++o) om.row(o).array() += bv[o];
    }
  }

  std::vector<Var<T>> ops{input, kernel};
  if (has_bias) ops.push_back(bias);
  return input.tape().record(
      std::move(out), ops,
      [input, kernel, bias, has_bias, spec, batch, channels, h, w, out_ch, ho, wo, patch, plane](
          Tape<T>& t, std::span<const T> g) {
        AlignedVector<T> cols(patch * plane);
        AlignedVector<T> dcols;
        ConstMatMap<T> km(kernel.value().ptr(), out_ch, patch);
        const bool gi = input.requires_grad();
        const bool gk = kernel.requires_grad();
        const bool gb = has_bias && bias.requires_grad();
        if (gi) dcols.resize(patch * plane);
        for (std::size_t b = 0; b < batch; ++b) {
          ConstMatMap<T> gm(g.data() + b * out_ch * plane, out_ch, plane);
          if (gk) {
            im2col(input.value().ptr() + b * channels * h * w, channels, h, w, ho, wo, spec, cols.data());
            MatMap<T>(t.grad_buffer(kernel.id()).data(), out_ch, patch).noalias() +=
                gm * ConstMatMap<T>(cols.data(), patch, plane).transpose();
          }
          if (gb) {
            auto gbias = t.grad_buffer(bias.id());
            for (std::size_t o = 0; o < out_ch; ++o) gbias[o] += gm.row(o).sum();
          }
          if (gi) {
            MatMap<T>(dcols.data(), patch, plane).noalias() = km.transpose() * gm;
            col2im(dcols.data(), channels, h, w, ho, wo, spec,
                   t.grad_buffer(input.id()).data() + b * channels * h * w);
          }
        }
      });
}

template <typename T>
Var<T> group_norm(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta, std::size_t groups, T eps) {
  require_rank("group_norm", input.shape(), 4);
  const Shape& is = input.shape();
  const std::size_t batch = is[0], channels = is[1], plane = is[2] * is[3];
  if (groups == 0 || channels % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(channels) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  if (gamma.shape() != Shape{channels}) shape_mismatch("group_norm", is, gamma.shape());
  if (beta.shape() != Shape{channels}) shape_mismatch("group_norm", is, beta.shape());
  const std::size_t per_group = channels / groups;
  const std::size_t group_size = per_group * plane;

  Tensor<T> out(is);
  std::vector<T> xhat(input.value().size());
  std::vector<T> inv_std(batch * groups);
  const T* x = input.value().ptr();
  const T* gv = gamma.value().ptr();
  const T* bv = beta.value().ptr();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t base = (b * channels + gi * per_group) * plane;
      T mean = 0;
      for (std::size_t i = 0; i < group_size; ++i) mean += x[base + i];
      mean /= static_cast<T>(group_size);
      T var = 0;
      for (std::size_t i = 0; i < group_size; ++i) {
        const T d = x[base + i] - mean;
        var += d * d;
      }
      var /= static_cast<T>(group_size);
      const T is_ = T(1) / std::sqrt(var + eps);
      inv_std[b * groups + gi] = is_;
      for (std::size_t c = 0; c < per_group; ++c) {
        const std::size_t ch = gi * per_group + c;
        const std::size_t off = base + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const T xh = (x[off + i] - mean) * is_;
          xhat[off + i] = xh;
          out[off + i] = gv[ch] * xh + bv[ch];
        }
      }
    }
  }

  const Var<T> ops[] = {input, gamma, beta};
  return input.tape().record(
      std::move(out), ops,
      [input, gamma, beta, groups, batch, channels, plane, per_group, group_size, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape<T>& t, std::span<const T> g) {
        const T* gv = gamma.value().ptr();
        if (gamma.requires_grad() || beta.requires_grad()) {
          std::vector<T> dgamma(channels, T(0)), dbeta(channels, T(0));
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t c = 0; c < channels; ++c) {
              const std::size_t off = (b * channels + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                dgamma[c] += g[off + i] * xhat[off + i];
                dbeta[c] += g[off + i];
              }
            }
          }
          if (gamma.requires_grad()) add_into<T>(t.grad_buffer(gamma.id()), dgamma);
          if (beta.requires_grad()) add_into<T>(t.grad_buffer(beta.id()), dbeta);
        }
        if (!input.requires_grad()) return;
        auto gx = t.grad_buffer(input.id());
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t gi = 0; gi < groups; ++gi) {
            const std::size_t base = (b * channels + gi * per_group) * plane;
            T mean_d = 0, mean_dx = 0;
            for (std::size_t c = 0; c < per_group; ++c) {
              const T gam = gv[gi * per_group + c];
              const std::size_t off = base + c * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                const T d = g[off + i] * gam;
                mean_d += d;
                mean_dx += d * xhat[off + i];
              }
            }
            mean_d /= static_cast<T>(group_size);
            mean_dx /= static_cast<T>(group_size);
            const T is_ = inv_std[b * groups + gi];
            for (std::size_t c = 0; c < per_group; ++c) {
              const T gam = gv[gi * per_group + c];
              const std::size_t off = base + c * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                gx[off + i] += is_ * (g[off + i] * gam - mean_d - xhat[off + i] * mean_dx);
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> max_pool_2x2(const Var<T>& input) {
  require_rank("max_pool_2x2", input.shape(), 4);
  const Shape& is = input.shape();
  if (is[2] % 2 != 0 || is[3] % 2 != 0) throw ShapeError("max_pool_2x2: odd spatial size " + shape_str(is));
  const std::size_t maps = is[0] * is[1], h = is[2], w = is[3], ho = h / 2, wo = w / 2;
  Tensor<T> out({is[0], is[1], ho, wo});
  std::vector<std::uint32_t> arg(out.size());
  const T* x = input.value().ptr();
  for (std::size_t m = 0; m < maps; ++m) {
    const T* src = x + m * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (2 * oy) * w + 2 * ox;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t c : cand) {
          if (src[c] > src[best]) best = c;
        }
        const std::size_t o = m * ho * wo + oy * wo + ox;
        out[o] = src[best];
        arg[o] = static_cast<std::uint32_t>(m * h * w + best);
      }
    }
  }
  const Var<T> ops[] = {input};
  return input.tape().record(std::move(out), ops, [input, arg = std::move(arg)](Tape<T>& t, std::span<const T> g) {
    auto gx = t.grad_buffer(input.id());
    for (std::size_t i = 0; i < g.size(); ++i) gx[arg[i]] += g[i];
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& input) {
  require_rank("global_avg_pool", input.shape(), 4);
  const Shape& is = input.shape();
  const std::size_t maps = is[0] * is[1], plane = is[2] * is[3];
  Tensor<T> out({is[0], is[1]});
  const T* x = input.value().ptr();
  for (std::size_t m = 0; m < maps; ++m) {
    T s = 0;
    for (std::size_t i = 0; i < plane; ++i) s += x[m * plane + i];
    out[m] = s / static_cast<T>(plane);
  }
  const Var<T> ops[] = {input};
  return input.tape().record(std::move(out), ops, [input, maps, plane](Tape<T>& t, std::span<const T> g) {
    auto gx = t.grad_buffer(input.id());
    const T inv = T(1) / static_cast<T>(plane);
    for (std::size_t m = 0; m < maps; ++m) {
      for (std::size_t i = 0; i < plane; ++i) gx[m * plane + i] += g[m] * inv;
    }
  });
}

template <typename T>
Var<T> flatten(const Var<T>& input) {
  const Shape& is = input.shape();
  if (is.empty()) throw ShapeError("flatten: rank-0 input");
  Tensor<T> out = input.value().reshaped({is[0], input.value().size() / is[0]});
  const Var<T> ops[] = {input};
  return input.tape().record(std::move(out), ops, [input](Tape<T>& t, std::span<const T> g) {
    add_into<T>(t.grad_buffer(input.id()), g);
  });
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& input) {
  require_rank("l2_normalize", input.shape(), 2);
  Tensor<T> out = input;
  for (std::size_t r = 0; r < input.dim(0); ++r) {
    auto row = out.row(r);
    T ss = 0;
    for (T v : row) ss += v * v;
    const T norm = std::sqrt(ss);
    if (!(norm >= static_cast<T>(kNormEpsilon))) {
      throw NumericError("l2_normalize: row " + std::to_string(r) + " has degenerate norm " + std::to_string(norm));
    }
    for (T& v : row) v /= norm;
  }
  return out;
}

template <typename T>
Var<T> l2_normalize(const Var<T>& input) {
  Tensor<T> out = l2_normalize(input.value());
  const Var<T> ops[] = {input};
  const std::size_t rows = input.shape()[0], cols = input.shape()[1];
  return input.tape().record(std::move(out), ops, [input, rows, cols](Tape<T>& t, std::span<const T> g) {
    auto gx = t.grad_buffer(input.id());
    const T* x = input.value().ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = x + r * cols;
      const T* gr = g.data() + r * cols;
      T ss = 0, dot = 0;
      for (std::size_t c = 0; c < cols; ++c) {
        ss += xr[c] * xr[c];
        dot += xr[c] * gr[c];
      }
      const T norm = std::sqrt(ss);
      // y = x/n  =>  dx = (g - y (y.g)) / n
      const T yg = dot / norm;
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += (gr[c] - (xr[c] / norm) * yg) / norm;
    }
  });
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const std::size_t> targets, Reduction reduction) {
  require_rank("softmax_cross_entropy", logits.shape(), 2);
  const std::size_t rows = logits.shape()[0], cols = logits.shape()[1];
  if (targets.size() != rows) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  }
  const T* z = logits.value().ptr();
  for (std::size_t i = 0; i < logits.value().size(); ++i) {
    if (!std::isfinite(z[i])) throw NumericError("softmax_cross_entropy: non-finite logit");
  }
  std::vector<T> probs(rows * cols);
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= cols) throw ShapeError("softmax_cross_entropy: target index out of range");
    const T* zr = z + r * cols;
    const T mx = *std::max_element(zr, zr + cols);
    T denom = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      probs[r * cols + c] = std::exp(zr[c] - mx);
      denom += probs[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] /= denom;
    total += std::log(denom) + mx - zr[targets[r]];
  }
  const T factor = reduction == Reduction::mean ? T(1) / static_cast<T>(rows) : T(1);
  Tensor<T> out({1}, std::vector<T>{total * factor});
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  const Var<T> ops[] = {logits};
  return logits.tape().record(
      std::move(out), ops,
      [logits, rows, cols, factor, probs = std::move(probs), tgt = std::move(tgt)](Tape<T>& t, std::span<const T> g) {
        auto gz = t.grad_buffer(logits.id());
        const T s = g[0] * factor;
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const T p = probs[r * cols + c] - (c == tgt[r] ? T(1) : T(0));
            gz[r * cols + c] += s * p;
          }
        }
      });
}

template <typename T>
Var<T> sigmoid_bce(const Var<T>& logits, const Tensor<T>& targets, Reduction reduction) {
  if (logits.shape() != targets.shape()) shape_mismatch("sigmoid_bce", logits.shape(), targets.shape());
  const T* z = logits.value().ptr();
  const std::size_t n = targets.size();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    // softplus(z) - y z, written to stay finite for large |z|.
    const T zi = z[i];
    total += std::max(zi, T(0)) + std::log1p(std::exp(-std::abs(zi))) - targets[i] * zi;
  }
  const T factor = reduction == Reduction::mean ? T(1) / static_cast<T>(n) : T(1);
  Tensor<T> out({1}, std::vector<T>{total * factor});
  const Var<T> ops[] = {logits};
  return logits.tape().record(std::move(out), ops, [logits, targets, factor](Tape<T>& t, std::span<const T> g) {
    auto gz = t.grad_buffer(logits.id());
    const T* z = logits.value().ptr();
    for (std::size_t i = 0; i < gz.size(); ++i) {
      const T p = T(1) / (T(1) + std::exp(-z[i]));
      gz[i] += g[0] * factor * (p - targets[i]);
    }
  });
}

template <typename T>
Var<T> contrastive_logits(const Var<T>& anchor, const Tensor<T>& positive, const Tensor<T>& negatives, T tau) {
  if (!(tau > T(0))) throw std::invalid_argument("contrastive_logits: temperature must be positive");
  require_rank("contrastive_logits", anchor.shape(), 2);
  require_rank("contrastive_logits", negatives.shape(), 2);
  if (positive.shape() != anchor.shape()) shape_mismatch("contrastive_logits", anchor.shape(), positive.shape());
  const std::size_t rows = anchor.shape()[0], dim = anchor.shape()[1], n = negatives.dim(0);
  if (negatives.dim(1) != dim) shape_mismatch("contrastive_logits", anchor.shape(), negatives.shape());

  const T inv_tau = T(1) / tau;
  ConstMatMap<T> am(anchor.value().ptr(), rows, dim);
  ConstMatMap<T> qm(negatives.ptr(), n, dim);
  Tensor<T> out({rows, n + 1});
  MatMap<T> om(out.ptr(), rows, n + 1);
  om.rightCols(n).noalias() = inv_tau * (am * qm.transpose());
  for (std::size_t r = 0; r < rows; ++r) {
    T dot = 0;
    for (std::size_t c = 0; c < dim; ++c) dot += am(r, c) * positive[r * dim + c];
    om(r, 0) = dot * inv_tau;
  }
  const Var<T> ops[] = {anchor};
  return anchor.tape().record(
      std::move(out), ops,
      [anchor, positive, negatives, rows, dim, n, inv_tau](Tape<T>& t, std::span<const T> g) {
        ConstMatMap<T> gm(g.data(), rows, n + 1);
        MatMap<T> ga(t.grad_buffer(anchor.id()).data(), rows, dim);
        ga.noalias() += inv_tau * (gm.rightCols(n) * ConstMatMap<T>(negatives.ptr(), n, dim));
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < dim; ++c) ga(r, c) += inv_tau * gm(r, 0) * positive[r * dim + c];
        }
      });
}

#define C2L_INSTANTIATE_OPS(T)                                                                             \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> scale(const Var<T>&, T);                                                                 \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> relu(const Var<T>&);                                                                     \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                                    \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                     \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, ConvSpec);                           \
  template Var<T> group_norm(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, T);                 \
  template Var<T> max_pool_2x2(const Var<T>&);                                                             \
  template Var<T> global_avg_pool(const Var<T>&);                                                          \
  template Var<T> flatten(const Var<T>&);                                                                  \
  template Var<T> l2_normalize(const Var<T>&);                                                             \
  template Var<T> softmax_cross_entropy(const Var<T>&, std::span<const std::size_t>, Reduction);           \
  template Var<T> sigmoid_bce(const Var<T>&, const Tensor<T>&, Reduction);                                 \
  template Var<T> contrastive_logits(const Var<T>&, const Tensor<T>&, const Tensor<T>&, T);                \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> l2_normalize(const Tensor<T>&);

C2L_INSTANTIATE_OPS(float)
C2L_INSTANTIATE_OPS(double)

}  // namespace c2l
