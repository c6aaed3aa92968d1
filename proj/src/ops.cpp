#include "flsim/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "flsim/error.hpp"
#include "kernels.hpp"

namespace flsim::ops {
namespace {

using detail::Node;

[[noreturn]] void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(op, what);
}

std::string shapes(const Tensor& a, const Tensor& b) {
  return shape_str(a.shape()) + " vs " + shape_str(b.shape());
}

void require_defined(const char* op, const Tensor& t) {
  if (!t.defined()) shape_fail(op, "undefined tensor operand");
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  require_defined(op, t);
  if (t.rank() != rank) {
    shape_fail(op, "expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

std::vector<float>& grad_of(Node& n, std::size_t parent) { return n.parents[parent]->grad; }
bool wants(Node& n, std::size_t parent) { return n.parents[parent]->requires_grad; }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined("add", a);
  require_defined("add", b);
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (bs.size() > as.size() || !std::equal(bs.rbegin(), bs.rend(), as.rbegin())) {
    shape_fail("add", "right operand must match a trailing suffix: " + shapes(a, b));
  }
  const std::size_t inner = b.numel();
  const std::size_t outer = a.numel() / inner;
  std::vector<float> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += bd[i];
  return Tensor::make_result(as, std::move(out), {a, b}, [outer, inner](Node& n) {
    if (wants(n, 0)) {
      auto& ga = grad_of(n, 0);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i];
    }
    if (wants(n, 1)) {
      auto& gb = grad_of(n, 1);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) gb[i] += n.grad[o * inner + i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined("sub", a);
  require_defined("sub", b);
  if (a.shape() != b.shape()) shape_fail("sub", shapes(a, b));
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    if (wants(n, 0)) {
      auto& g = grad_of(n, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (wants(n, 1)) {
      auto& g = grad_of(n, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined("mul", a);
  require_defined("mul", b);
  if (a.shape() != b.shape()) shape_fail("mul", shapes(a, b));
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& n) {
    const auto& ad = n.parents[0]->data;
    const auto& bd = n.parents[1]->data;
    if (wants(n, 0)) {
      auto& g = grad_of(n, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bd[i];
    }
    if (wants(n, 1)) {
      auto& g = grad_of(n, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * ad[i];
    }
  });
}

Tensor scale(const Tensor& a, float factor) {
  require_defined("scale", a);
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [factor](Node& n) {
    auto& g = grad_of(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * factor;
  });
}

Tensor square(const Tensor& a) {
  require_defined("square", a);
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * a.data()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a}, [](Node& n) {
    const auto& x = n.parents[0]->data;
    auto& g = grad_of(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0f * x[i] * n.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  require_defined("sum", a);
  float s = 0.0f;
  for (float v : a.data()) s += v;
  return Tensor::make_result({}, {s}, {a}, [](Node& n) {
    auto& g = grad_of(n, 0);
    for (auto& v : g) v += n.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  require_defined("mean", a);
  return scale(sum(a), 1.0f / static_cast<float>(a.numel()));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  if (a.rank() < 2 || b.rank() < 2) shape_fail("matmul", "operands need rank >= 2: " + shapes(a, b));
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const std::size_t M = as[as.size() - 2], K = as.back();
  const std::size_t Kb = bs[bs.size() - 2], N = bs.back();
  if (K != Kb) shape_fail("matmul", "inner dimensions differ: " + shapes(a, b));
  const bool shared = bs.size() == 2;
  if (!shared && (bs.size() != as.size() || !std::equal(as.begin(), as.end() - 2, bs.begin()))) {
    shape_fail("matmul", "batch dimensions differ: " + shapes(a, b));
  }
  const std::size_t batch = a.numel() / (M * K);
  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(N);
  std::vector<float> out(batch * M * N);
  if (shared) {
    kernels::gemm(batch * M, N, K, a.data().data(), false, b.data().data(), false, out.data(),
                  false);
  } else {
    for (std::size_t t = 0; t < batch; ++t) {
      kernels::gemm(M, N, K, a.data().data() + t * M * K, false, b.data().data() + t * K * N,
                    false, out.data() + t * M * N, false);
    }
  }
  return Tensor::make_result(out_shape, std::move(out), {a, b},
                             [shared, batch, M, N, K](Node& n) {
    const float* ad = n.parents[0]->data.data();
    const float* bd = n.parents[1]->data.data();
    const float* g = n.grad.data();
    if (shared) {
      // dA = dC B^T ; dB = A^T dC over the flattened (batch * M) rows.
      if (wants(n, 0))
        kernels::gemm(batch * M, K, N, g, false, bd, true, grad_of(n, 0).data(), true);
      if (wants(n, 1))
        kernels::gemm(K, N, batch * M, ad, true, g, false, grad_of(n, 1).data(), true);
      return;
    }
    for (std::size_t t = 0; t < batch; ++t) {
      if (wants(n, 0))
        kernels::gemm(M, K, N, g + t * M * N, false, bd + t * K * N, true,
                      grad_of(n, 0).data() + t * M * K, true);
      if (wants(n, 1))
        kernels::gemm(K, N, M, ad + t * M * K, true, g + t * M * N, false,
                      grad_of(n, 1).data() + t * K * N, true);
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined("reshape", x);
  if (numel(shape) != x.numel()) {
    shape_fail("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<float> out(x.data().begin(), x.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {x}, [](Node& n) {
    auto& g = grad_of(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  require_defined("permute", x);
  const auto& xs = x.shape();
  const std::size_t r = xs.size();
  std::vector<bool> used(r, false);
  if (perm.size() != r) shape_fail("permute", "permutation rank mismatch for " + shape_str(xs));
  for (auto p : perm) {
    if (p >= r || used[p]) shape_fail("permute", "invalid permutation for " + shape_str(xs));
    used[p] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = xs[perm[i]];
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * xs[i];
  // src_index[j] = flat input offset of output element j
  const std::size_t total = x.numel();
  std::vector<std::size_t> src(total);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t j = 0; j < total; ++j) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < r; ++d) off += idx[d] * in_strides[perm[d]];
    src[j] = off;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<float> out(total);
  auto xd = x.data();
  for (std::size_t j = 0; j < total; ++j) out[j] = xd[src[j]];
  return Tensor::make_result(std::move(out_shape), std::move(out), {x},
                             [src = std::move(src)](Node& n) {
    auto& g = grad_of(n, 0);
    for (std::size_t j = 0; j < src.size(); ++j) g[src[j]] += n.grad[j];
  });
}

Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1) {
  require_defined("transpose", x);
  if (axis0 >= x.rank() || axis1 >= x.rank()) {
    shape_fail("transpose", "axis out of range for " + shape_str(x.shape()));
  }
  std::vector<std::size_t> perm(x.rank());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::swap(perm[axis0], perm[axis1]);
  return permute(x, perm);
}

namespace {

struct ConvGeom {
  std::size_t C, H, W, kh, kw, stride, pad, Ho, Wo;
};

void im2col(const float* img, const ConvGeom& g, float* cols) {
  const std::size_t hw = g.Ho * g.Wo;
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        float* row = cols + ((c * g.kh + ki) * g.kw + kj) * hw;
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.Wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.H) &&
                                ix < static_cast<long>(g.W);
            row[oy * g.Wo + ox] = inside ? img[(c * g.H + iy) * g.W + ix] : 0.0f;
          }
        }
      }
}

void col2im(const float* cols, const ConvGeom& g, float* img) {
  const std::size_t hw = g.Ho * g.Wo;
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const float* row = cols + ((c * g.kh + ki) * g.kw + kj) * hw;
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.H)) continue;
          for (std::size_t ox = 0; ox < g.Wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.W)) continue;
            img[(c * g.H + iy) * g.W + ix] += row[oy * g.Wo + ox];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", weight, 4);
  if (stride == 0) throw InvalidArgument("conv2d", "stride must be positive");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != C) shape_fail("conv2d", "input channels differ: " + shapes(x, weight));
  if (H + 2 * padding < kh || W + 2 * padding < kw) {
    shape_fail("conv2d", "kernel larger than padded input: " + shapes(x, weight));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{O}) shape_fail("conv2d", "bias " + shapes(bias, weight));
  ConvGeom g{C, H, W, kh, kw, stride, padding, (H + 2 * padding - kh) / stride + 1,
             (W + 2 * padding - kw) / stride + 1};
  const std::size_t ckk = C * kh * kw, hw = g.Ho * g.Wo;
  std::vector<float> cols(B * ckk * hw);
  std::vector<float> out(B * O * hw);
  for (std::size_t b = 0; b < B; ++b) {
    float* col = cols.data() + b * ckk * hw;
    im2col(x.data().data() + b * C * H * W, g, col);
    float* ob = out.data() + b * O * hw;
    kernels::gemm(O, hw, ckk, weight.data().data(), false, col, false, ob, false);
    if (has_bias)
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t p = 0; p < hw; ++p) ob[o * hw + p] += bias.data()[o];
  }
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return Tensor::make_result(
      {B, O, g.Ho, g.Wo}, std::move(out), std::move(inputs),
      [g, B, O, ckk, hw, has_bias, cols = std::move(cols)](Node& n) {
        const float* wd = n.parents[1]->data.data();
        std::vector<float> dcol(ckk * hw);
        for (std::size_t b = 0; b < B; ++b) {
          const float* gb = n.grad.data() + b * O * hw;
          if (wants(n, 1))
            kernels::gemm(O, ckk, hw, gb, false, cols.data() + b * ckk * hw, true,
                          grad_of(n, 1).data(), true);
          if (wants(n, 0)) {
            kernels::gemm(ckk, hw, O, wd, true, gb, false, dcol.data(), false);
            col2im(dcol.data(), g, grad_of(n, 0).data() + b * g.C * g.H * g.W);
          }
          if (has_bias && wants(n, 2)) {
            auto& gbias = grad_of(n, 2);
            for (std::size_t o = 0; o < O; ++o)
              for (std::size_t p = 0; p < hw; ++p) gbias[o] += gb[o * hw + p];
          }
        }
      });
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  require_rank("max_pool2d", x, 4);
  if (kernel == 0 || stride == 0) throw InvalidArgument("max_pool2d", "kernel/stride must be positive");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H < kernel || W < kernel) shape_fail("max_pool2d", "kernel exceeds input " + shape_str(x.shape()));
  const std::size_t Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
  std::vector<float> out(B * C * Ho * Wo);
  std::vector<std::size_t> arg(out.size());
  auto xd = x.data();
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = bc * H * W + (oy * stride) * W + ox * stride;
        for (std::size_t i = 0; i < kernel; ++i)
          for (std::size_t j = 0; j < kernel; ++j) {
            const std::size_t p = bc * H * W + (oy * stride + i) * W + ox * stride + j;
            if (xd[p] > xd[best]) best = p;
          }
        const std::size_t o = (bc * Ho + oy) * Wo + ox;
        out[o] = xd[best];
        arg[o] = best;
      }
  return Tensor::make_result({B, C, Ho, Wo}, std::move(out), {x},
                             [arg = std::move(arg)](Node& n) {
    auto& g = grad_of(n, 0);
    for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += n.grad[o];
  });
}

Tensor avg_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  require_rank("avg_pool2d", x, 4);
  if (kernel == 0 || stride == 0) throw InvalidArgument("avg_pool2d", "kernel/stride must be positive");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H < kernel || W < kernel) shape_fail("avg_pool2d", "kernel exceeds input " + shape_str(x.shape()));
  const std::size_t Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
  const float inv = 1.0f / static_cast<float>(kernel * kernel);
  std::vector<float> out(B * C * Ho * Wo);
  auto xd = x.data();
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        float s = 0.0f;
        for (std::size_t i = 0; i < kernel; ++i)
          for (std::size_t j = 0; j < kernel; ++j)
            s += xd[bc * H * W + (oy * stride + i) * W + ox * stride + j];
        out[(bc * Ho + oy) * Wo + ox] = s * inv;
      }
  return Tensor::make_result({B, C, Ho, Wo}, std::move(out), {x},
                             [=](Node& n) {
    auto& g = grad_of(n, 0);
    for (std::size_t bc = 0; bc < B * C; ++bc)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          const float v = n.grad[(bc * Ho + oy) * Wo + ox] * inv;
          for (std::size_t i = 0; i < kernel; ++i)
            for (std::size_t j = 0; j < kernel; ++j)
              g[bc * H * W + (oy * stride + i) * W + ox * stride + j] += v;
        }
  });
}

Tensor relu(const Tensor& x) {
  require_defined("relu", x);
  std::vector<float> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0.0f ? x.data()[i] : 0.0f;
  return Tensor::make_result(x.shape(), std::move(out), {x}, [](Node& n) {
    const auto& xd = n.parents[0]->data;
    auto& g = grad_of(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xd[i] > 0.0f) g[i] += n.grad[i];
  });
}

Tensor gelu(const Tensor& x) {
  require_defined("gelu", x);
  constexpr float inv_sqrt2 = 0.70710678118654752f;
  std::vector<float> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float v = x.data()[i];
    out[i] = 0.5f * v * (1.0f + std::erf(v * inv_sqrt2));
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [](Node& n) {
    constexpr float inv_sqrt2 = 0.70710678118654752f;
    constexpr float inv_sqrt2pi = 0.39894228040143268f;
    const auto& xd = n.parents[0]->data;
    auto& g = grad_of(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const float v = xd[i];
      const float cdf = 0.5f * (1.0f + std::erf(v * inv_sqrt2));
      const float pdf = inv_sqrt2pi * std::exp(-0.5f * v * v);
      g[i] += n.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor softmax(const Tensor& x) {
  require_defined("softmax", x);
  if (x.rank() == 0) shape_fail("softmax", "no last axis on a scalar");
  const std::size_t D = x.shape().back();
  const std::size_t rows = x.numel() / D;
  std::vector<float> out(x.numel());
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = xd.data() + r * D;
    float* o = out.data() + r * D;
    float mx = in[0];
    for (std::size_t j = 1; j < D; ++j) mx = std::max(mx, in[j]);
    float s = 0.0f;
    for (std::size_t j = 0; j < D; ++j) {
      o[j] = std::exp(in[j] - mx);
      s += o[j];
    }
    for (std::size_t j = 0; j < D; ++j) o[j] /= s;
  }
  return Tensor::make_result(x.shape(), out, {x}, [rows, D, y = out](Node& n) {
    auto& g = grad_of(n, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const float* yr = y.data() + r * D;
      const float* gr = n.grad.data() + r * D;
      float dot = 0.0f;
      for (std::size_t j = 0; j < D; ++j) dot += gr[j] * yr[j];
      for (std::size_t j = 0; j < D; ++j) g[r * D + j] += yr[j] * (gr[j] - dot);
    }
  });
}

namespace {

// Normalizes `count` groups of `len` strided elements. Element e of group q
// lives at data[index(q, e)]. Returns normalized values and per-group rstd.
template <typename Index>
void normalize_groups(std::span<const float> x, std::size_t count, std::size_t len, float eps,
                      Index index, std::vector<float>& xhat, std::vector<float>& rstd,
                      std::vector<float>* means = nullptr, std::vector<float>* vars = nullptr) {
  xhat.assign(x.size(), 0.0f);
  rstd.assign(count, 0.0f);
  for (std::size_t q = 0; q < count; ++q) {
    float m = 0.0f;
    for (std::size_t e = 0; e < len; ++e) m += x[index(q, e)];
    m /= static_cast<float>(len);
    float v = 0.0f;
    for (std::size_t e = 0; e < len; ++e) {
      const float d = x[index(q, e)] - m;
      v += d * d;
    }
    v /= static_cast<float>(len);
    const float rs = 1.0f / std::sqrt(v + eps);
    rstd[q] = rs;
    for (std::size_t e = 0; e < len; ++e) {
      const auto i = index(q, e);
      xhat[i] = (x[i] - m) * rs;
    }
    if (means) (*means)[q] = m;
    if (vars) (*vars)[q] = v;
  }
}

// dx for y = xhat per group: rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)).
template <typename Index>
void normalize_backward(const std::vector<float>& dxhat, const std::vector<float>& xhat,
                        const std::vector<float>& rstd, std::size_t count, std::size_t len,
                        Index index, std::vector<float>& dx) {
  for (std::size_t q = 0; q < count; ++q) {
    float s1 = 0.0f, s2 = 0.0f;
    for (std::size_t e = 0; e < len; ++e) {
      const auto i = index(q, e);
      s1 += dxhat[i];
      s2 += dxhat[i] * xhat[i];
    }
    s1 /= static_cast<float>(len);
    s2 /= static_cast<float>(len);
    for (std::size_t e = 0; e < len; ++e) {
      const auto i = index(q, e);
      dx[i] += rstd[q] * (dxhat[i] - s1 - xhat[i] * s2);
    }
  }
}

// y = xhat * gamma[ch(i)] + beta[ch(i)] with its backward.
template <typename Channel>
Tensor affine_result(const Shape& shape, std::vector<float> xhat, std::vector<float> rstd,
                     const Tensor& x, const Tensor& gamma, const Tensor& beta, Channel channel,
                     std::function<void(const std::vector<float>&, const std::vector<float>&,
                                        const std::vector<float>&, std::vector<float>&)>
                         norm_backward) {
  std::vector<float> out(xhat.size());
  auto gd = gamma.data();
  auto bd = beta.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto c = channel(i);
    out[i] = xhat[i] * gd[c] + bd[c];
  }
  return Tensor::make_result(
      shape, std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), rstd = std::move(rstd), channel,
       norm_backward = std::move(norm_backward)](Node& n) {
        const auto& gd = n.parents[1]->data;
        if (wants(n, 1) || wants(n, 2)) {
          auto* gg = wants(n, 1) ? &grad_of(n, 1) : nullptr;
          auto* gb = wants(n, 2) ? &grad_of(n, 2) : nullptr;
          for (std::size_t i = 0; i < xhat.size(); ++i) {
            const auto c = channel(i);
            if (gg) (*gg)[c] += n.grad[i] * xhat[i];
            if (gb) (*gb)[c] += n.grad[i];
          }
        }
        if (wants(n, 0)) {
          std::vector<float> dxhat(xhat.size());
          for (std::size_t i = 0; i < xhat.size(); ++i) dxhat[i] = n.grad[i] * gd[channel(i)];
          norm_backward(dxhat, xhat, rstd, grad_of(n, 0));
        }
      });
}

void require_affine(const char* op, const Tensor& gamma, const Tensor& beta, std::size_t C) {
  require_defined(op, gamma);
  require_defined(op, beta);
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
    shape_fail(op, "scale/shift must be (" + std::to_string(C) + ",), got " + shapes(gamma, beta));
  }
}

}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  require_defined("layer_norm", x);
  if (x.rank() == 0) shape_fail("layer_norm", "no last axis on a scalar");
  const std::size_t D = x.shape().back();
  const std::size_t rows = x.numel() / D;
  require_affine("layer_norm", gamma, beta, D);
  auto index = [D](std::size_t q, std::size_t e) { return q * D + e; };
  std::vector<float> xhat, rstd;
  normalize_groups(x.data(), rows, D, eps, index, xhat, rstd);
  return affine_result(
      x.shape(), std::move(xhat), std::move(rstd), x, gamma, beta,
      [D](std::size_t i) { return i % D; },
      [rows, D, index](const std::vector<float>& dxhat, const std::vector<float>& xh,
                       const std::vector<float>& rs, std::vector<float>& dx) {
        normalize_backward(dxhat, xh, rs, rows, D, index, dx);
      });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                  bool training, float momentum, float eps) {
  require_defined("batch_norm", x);
  if (x.rank() < 2) shape_fail("batch_norm", "expected (B, C, ...), got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1);
  const std::size_t S = x.numel() / (B * C);
  require_affine("batch_norm", gamma, beta, C);
  if (stats.mean.size() != C || stats.var.size() != C) {
    shape_fail("batch_norm", "running statistics sized " + std::to_string(stats.mean.size()) +
                                 " for " + std::to_string(C) + " channels");
  }
  auto channel = [C, S](std::size_t i) { return (i / S) % C; };
  if (!training) {
    // Fixed per-channel affine map; recorded so gradients still reach inputs.
    std::vector<float> xhat(x.numel()), rstd(C);
    for (std::size_t c = 0; c < C; ++c) rstd[c] = 1.0f / std::sqrt(stats.var[c] + eps);
    auto xd = x.data();
    for (std::size_t i = 0; i < xhat.size(); ++i) {
      const auto c = channel(i);
      xhat[i] = (xd[i] - stats.mean[c]) * rstd[c];
    }
    auto r = rstd;
    return affine_result(x.shape(), std::move(xhat), std::move(r), x, gamma, beta, channel,
                         [channel](const std::vector<float>& dxhat, const std::vector<float>&,
                                   const std::vector<float>& rs, std::vector<float>& dx) {
                           for (std::size_t i = 0; i < dxhat.size(); ++i)
                             dx[i] += dxhat[i] * rs[channel(i)];
                         });
  }
  if (B < 2) {
    throw InvalidArgument("batch_norm", "train mode needs batch size >= 2, got " +
                                            std::to_string(B));
  }
  const std::size_t len = B * S;
  auto index = [C, S](std::size_t c, std::size_t e) {
    const std::size_t b = e / S, s = e % S;
    return (b * C + c) * S + s;
  };
  std::vector<float> xhat, rstd, means(C), vars(C);
  normalize_groups(x.data(), C, len, eps, index, xhat, rstd, &means, &vars);
  const float unbias = static_cast<float>(len) / static_cast<float>(len - 1);
  for (std::size_t c = 0; c < C; ++c) {
    stats.mean[c] = (1.0f - momentum) * stats.mean[c] + momentum * means[c];
    stats.var[c] = (1.0f - momentum) * stats.var[c] + momentum * vars[c] * unbias;
  }
  return affine_result(
      x.shape(), std::move(xhat), std::move(rstd), x, gamma, beta, channel,
      [C, len, index](const std::vector<float>& dxhat, const std::vector<float>& xh,
                      const std::vector<float>& rs, std::vector<float>& dx) {
        normalize_backward(dxhat, xh, rs, C, len, index, dx);
      });
}

Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta,
                  float eps) {
  require_defined("group_norm", x);
  if (x.rank() < 2) shape_fail("group_norm", "expected (B, C, ...), got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1);
  if (groups == 0 || C % groups != 0) {
    shape_fail("group_norm", std::to_string(C) + " channels not divisible into " +
                                 std::to_string(groups) + " groups");
  }
  require_affine("group_norm", gamma, beta, C);
  const std::size_t S = x.numel() / (B * C);
  // Channels of one group are contiguous in memory, so a group is a flat run.
  const std::size_t len = (C / groups) * S;
  auto index = [len](std::size_t q, std::size_t e) { return q * len + e; };
  std::vector<float> xhat, rstd;
  normalize_groups(x.data(), B * groups, len, eps, index, xhat, rstd);
  return affine_result(
      x.shape(), std::move(xhat), std::move(rstd), x, gamma, beta,
      [C, S](std::size_t i) { return (i / S) % C; },
      [B, groups, len, index](const std::vector<float>& dxhat, const std::vector<float>& xh,
                              const std::vector<float>& rs, std::vector<float>& dx) {
        normalize_backward(dxhat, xh, rs, B * groups, len, index, dx);
      });
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  require_defined("attention", q);
  require_defined("attention", k);
  require_defined("attention", v);
  if (q.rank() < 2 || q.shape() != k.shape() || k.shape() != v.shape()) {
    shape_fail("attention", "q/k/v must share a (..., T, d) shape: " + shape_str(q.shape()) +
                                ", " + shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(q.shape().back()));
  auto scores = scale(matmul(q, transpose(k, k.rank() - 2, k.rank() - 1)), inv_sqrt_d);
  return matmul(softmax(scores), v);
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  require_rank("embedding", table, 2);
  if (ids.empty()) shape_fail("embedding", "empty id list");
  const std::size_t V = table.dim(0), D = table.dim(1);
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  std::vector<float> out(rows.size() * D);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= V) {
      throw InvalidArgument("embedding", "id " + std::to_string(rows[r]) + " >= table size " +
                                             std::to_string(V));
    }
    std::copy_n(table.data().begin() + rows[r] * D, D, out.begin() + r * D);
  }
  const std::size_t count = rows.size();
  return Tensor::make_result({count, D}, std::move(out), {table},
                             [rows = std::move(rows), D](Node& n) {
    auto& g = grad_of(n, 0);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t j = 0; j < D; ++j) g[rows[r] * D + j] += n.grad[r * D + j];
  });
}

Tensor prepend_token(const Tensor& x, const Tensor& token) {
  require_rank("prepend_token", x, 3);
  require_defined("prepend_token", token);
  const std::size_t B = x.dim(0), N = x.dim(1), D = x.dim(2);
  if (token.numel() != D) shape_fail("prepend_token", "token " + shapes(token, x));
  std::vector<float> out(B * (N + 1) * D);
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(token.data().begin(), D, out.begin() + b * (N + 1) * D);
    std::copy_n(x.data().begin() + b * N * D, N * D, out.begin() + (b * (N + 1) + 1) * D);
  }
  return Tensor::make_result({B, N + 1, D}, std::move(out), {x, token}, [B, N, D](Node& n) {
    for (std::size_t b = 0; b < B; ++b) {
      const float* gb = n.grad.data() + b * (N + 1) * D;
      if (wants(n, 1)) {
        auto& gt = grad_of(n, 1);
        for (std::size_t j = 0; j < D; ++j) gt[j] += gb[j];
      }
      if (wants(n, 0)) {
        auto& gx = grad_of(n, 0);
        for (std::size_t i = 0; i < N * D; ++i) gx[b * N * D + i] += gb[D + i];
      }
    }
  });
}

Tensor select_token(const Tensor& x, std::size_t index) {
  require_rank("select_token", x, 3);
  const std::size_t B = x.dim(0), T = x.dim(1), D = x.dim(2);
  if (index >= T) shape_fail("select_token", "index out of range for " + shape_str(x.shape()));
  std::vector<float> out(B * D);
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(x.data().begin() + (b * T + index) * D, D, out.begin() + b * D);
  return Tensor::make_result({B, D}, std::move(out), {x}, [B, T, D, index](Node& n) {
    auto& g = grad_of(n, 0);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < D; ++j) g[(b * T + index) * D + j] += n.grad[b * D + j];
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_defined("cross_entropy", logits);
  if (logits.rank() != 2) {
    shape_fail("cross_entropy", "expected (B, classes) logits, got " + shape_str(logits.shape()));
  }
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  if (labels.size() != B) {
    shape_fail("cross_entropy", std::to_string(labels.size()) + " labels for " +
                                    shape_str(logits.shape()) + " logits");
  }
  std::vector<int> y(labels.begin(), labels.end());
  std::vector<float> prob(B * C);
  float loss = 0.0f;
  auto ld = logits.data();
  for (std::size_t b = 0; b < B; ++b) {
    if (y[b] < 0 || static_cast<std::size_t>(y[b]) >= C) {
      throw InvalidArgument("cross_entropy", "label " + std::to_string(y[b]) + " outside [0, " +
                                                 std::to_string(C) + ")");
    }
    const float* row = ld.data() + b * C;
    float mx = row[0];
    for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, row[j]);
    float s = 0.0f;
    for (std::size_t j = 0; j < C; ++j) {
      prob[b * C + j] = std::exp(row[j] - mx);
      s += prob[b * C + j];
    }
    for (std::size_t j = 0; j < C; ++j) prob[b * C + j] /= s;
    loss += -(row[y[b]] - mx - std::log(s));
  }
  loss /= static_cast<float>(B);
  return Tensor::make_result({}, {loss}, {logits},
                             [B, C, y = std::move(y), prob = std::move(prob)](Node& n) {
    auto& g = grad_of(n, 0);
    const float s = n.grad[0] / static_cast<float>(B);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < C; ++j) {
        const float t = static_cast<int>(j) == y[b] ? 1.0f : 0.0f;
        g[b * C + j] += s * (prob[b * C + j] - t);
      }
  });
}

}  // namespace flsim::ops
