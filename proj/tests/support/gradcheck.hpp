#pragma once

// Finite-difference gradient oracle. Every op has an independent float64
// reference forward written with plain loops; analytic gradients from the
// float32 autodiff path are compared with central differences (h = 1e-3)
// taken on the float64 reference.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "flsim/ops.hpp"
#include "flsim/rng.hpp"
#include "flsim/tensor.hpp"

namespace flsim::testing {

using Vec = std::vector<double>;

struct GradCase {
  std::string name;
  std::vector<Shape> inputs;
  // Fills input values; default is uniform(-1, 1).
  std::function<void(Rng&, std::vector<Vec>&)> init;
  std::function<Tensor(const std::vector<Tensor>&)> forward;
  std::function<Vec(const std::vector<Vec>&)> reference;
};

struct GradResult {
  double max_rel_error = 0.0;  // |analytic - fd| / (|fd| + 1e-6)
  double max_forward_error = 0.0;
};

inline std::size_t count(const Shape& s) { return numel(s); }

inline GradResult check_gradients(const GradCase& c, std::uint64_t seed) {
  Rng rng(seed * 7919 + 17);
  std::vector<Vec> values(c.inputs.size());
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    values[i].resize(count(c.inputs[i]));
    for (auto& v : values[i]) v = rng.uniform(-1.0, 1.0);
  }
  if (c.init) c.init(rng, values);
  // Values are rounded to float once so both paths see identical inputs.
  for (auto& v : values)
    for (auto& x : v) x = static_cast<float>(x);

  std::vector<Tensor> tensors;
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::vector<float> f(values[i].begin(), values[i].end());
    tensors.push_back(Tensor::from(c.inputs[i], std::move(f), true));
  }
  Tensor out = c.forward(tensors);
  Vec ref_out = c.reference(values);

  GradResult result;
  if (ref_out.size() != out.numel()) {
    result.max_forward_error = 1e30;
    return result;
  }
  Vec weights(out.numel());
  for (auto& w : weights) w = static_cast<float>(rng.uniform(0.5, 1.5) * (rng.uniform() < 0.5 ? -1 : 1));
  for (std::size_t i = 0; i < ref_out.size(); ++i) {
    const double err = std::abs(ref_out[i] - out.data()[i]) / (std::abs(ref_out[i]) + 1e-3);
    result.max_forward_error = std::max(result.max_forward_error, err);
  }

  std::vector<float> wf(weights.begin(), weights.end());
  Tensor loss = ops::sum(ops::mul(out, Tensor::from(out.shape(), wf)));
  loss.backward();

  auto objective = [&](const std::vector<Vec>& v) {
    Vec o = c.reference(v);
    double s = 0.0;
    for (std::size_t i = 0; i < o.size(); ++i) s += weights[i] * o[i];
    return s;
  };
  constexpr double h = 1e-3;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto analytic = tensors[i].grad();
    for (std::size_t j = 0; j < values[i].size(); ++j) {
      auto plus = values;
      auto minus = values;
      plus[i][j] += h;
      minus[i][j] -= h;
      const double fd = (objective(plus) - objective(minus)) / (2.0 * h);
      const double rel = std::abs(analytic[j] - fd) / (std::abs(fd) + 1e-6);
      result.max_rel_error = std::max(result.max_rel_error, rel);
    }
  }
  return result;
}

// ---- float64 reference forwards -------------------------------------------

inline Vec ref_conv2d(const Vec& x, const Vec& w, const Vec* b, std::size_t B, std::size_t C,
                      std::size_t H, std::size_t W, std::size_t O, std::size_t k,
                      std::size_t stride, std::size_t pad) {
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
  Vec out(B * O * Ho * Wo, 0.0);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t xo = 0; xo < Wo; ++xo) {
          double s = b ? (*b)[o] : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < k; ++i)
              for (std::size_t j = 0; j < k; ++j) {
                const long iy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
                const long ix = static_cast<long>(xo * stride + j) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W))
                  continue;
                s += x[((n * C + c) * H + iy) * W + ix] * w[((o * C + c) * k + i) * k + j];
              }
          out[((n * O + o) * Ho + y) * Wo + xo] = s;
        }
  return out;
}

inline Vec ref_normalize(const Vec& x, std::size_t groups, std::size_t len,
                         const std::function<std::size_t(std::size_t, std::size_t)>& index,
                         double eps) {
  Vec out(x.size());
  for (std::size_t q = 0; q < groups; ++q) {
    double m = 0.0;
    for (std::size_t e = 0; e < len; ++e) m += x[index(q, e)];
    m /= static_cast<double>(len);
    double v = 0.0;
    for (std::size_t e = 0; e < len; ++e) v += (x[index(q, e)] - m) * (x[index(q, e)] - m);
    v /= static_cast<double>(len);
    for (std::size_t e = 0; e < len; ++e) out[index(q, e)] = (x[index(q, e)] - m) / std::sqrt(v + eps);
  }
  return out;
}

inline Vec ref_softmax_rows(const Vec& x, std::size_t D) {
  Vec out(x.size());
  for (std::size_t r = 0; r < x.size() / D; ++r) {
    double mx = x[r * D];
    for (std::size_t j = 1; j < D; ++j) mx = std::max(mx, x[r * D + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < D; ++j) s += std::exp(x[r * D + j] - mx);
    for (std::size_t j = 0; j < D; ++j) out[r * D + j] = std::exp(x[r * D + j] - mx) / s;
  }
  return out;
}

// Values with pairwise gaps >= 0.02 so max-selection is stable under +-h.
inline void distinct_values(Rng& rng, Vec& v) {
  std::vector<std::size_t> order(v.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  for (std::size_t i = 0; i < v.size(); ++i) v[order[i]] = -1.0 + 0.02 * static_cast<double>(i);
}

// Values bounded away from zero so relu's kink is never crossed.
inline void away_from_zero(Rng& rng, Vec& v) {
  for (auto& x : v) x = rng.uniform(0.05, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
}

inline std::vector<GradCase> all_grad_cases() {
  std::vector<GradCase> cases;

  cases.push_back({"add_broadcast", {{2, 3, 4}, {4}}, nullptr,
                   [](auto& t) { return ops::add(t[0], t[1]); },
                   [](auto& v) {
                     Vec o = v[0];
                     for (std::size_t i = 0; i < o.size(); ++i) o[i] += v[1][i % 4];
                     return o;
                   }});
  cases.push_back({"sub", {{3, 4}, {3, 4}}, nullptr, [](auto& t) { return ops::sub(t[0], t[1]); },
                   [](auto& v) {
                     Vec o = v[0];
                     for (std::size_t i = 0; i < o.size(); ++i) o[i] -= v[1][i];
                     return o;
                   }});
  cases.push_back({"mul", {{3, 4}, {3, 4}}, nullptr, [](auto& t) { return ops::mul(t[0], t[1]); },
                   [](auto& v) {
                     Vec o = v[0];
                     for (std::size_t i = 0; i < o.size(); ++i) o[i] *= v[1][i];
                     return o;
                   }});
  cases.push_back({"scale_square", {{5}}, nullptr,
                   [](auto& t) { return ops::square(ops::scale(t[0], 1.5f)); },
                   [](auto& v) {
                     Vec o = v[0];
                     for (auto& x : o) x = (1.5 * x) * (1.5 * x);
                     return o;
                   }});
  cases.push_back({"sum_mean", {{2, 5}}, nullptr,
                   [](auto& t) { return ops::add(ops::sum(t[0]), ops::mean(t[0])); },
                   [](auto& v) {
                     double s = 0.0;
                     for (double x : v[0]) s += x;
                     return Vec{s + s / 10.0};
                   }});
  cases.push_back({"matmul_shared", {{2, 3, 4}, {4, 5}}, nullptr,
                   [](auto& t) { return ops::matmul(t[0], t[1]); },
                   [](auto& v) {
                     Vec o(2 * 3 * 5, 0.0);
                     for (std::size_t r = 0; r < 6; ++r)
                       for (std::size_t j = 0; j < 5; ++j)
                         for (std::size_t k = 0; k < 4; ++k) o[r * 5 + j] += v[0][r * 4 + k] * v[1][k * 5 + j];
                     return o;
                   }});
  cases.push_back({"matmul_batched", {{2, 3, 4}, {2, 4, 2}}, nullptr,
                   [](auto& t) { return ops::matmul(t[0], t[1]); },
                   [](auto& v) {
                     Vec o(2 * 3 * 2, 0.0);
                     for (std::size_t b = 0; b < 2; ++b)
                       for (std::size_t i = 0; i < 3; ++i)
                         for (std::size_t j = 0; j < 2; ++j)
                           for (std::size_t k = 0; k < 4; ++k)
                             o[(b * 3 + i) * 2 + j] += v[0][(b * 3 + i) * 4 + k] * v[1][(b * 4 + k) * 2 + j];
                     return o;
                   }});
  cases.push_back({"reshape", {{2, 6}}, nullptr,
                   [](auto& t) { return ops::reshape(t[0], {3, 4}); }, [](auto& v) { return v[0]; }});
  cases.push_back({"permute", {{2, 3, 4}}, nullptr,
                   [](auto& t) { return ops::permute(t[0], {2, 0, 1}); },
                   [](auto& v) {
                     Vec o(24);
                     for (std::size_t a = 0; a < 2; ++a)
                       for (std::size_t b = 0; b < 3; ++b)
                         for (std::size_t c = 0; c < 4; ++c) o[(c * 2 + a) * 3 + b] = v[0][(a * 3 + b) * 4 + c];
                     return o;
                   }});
  cases.push_back({"conv2d_pad1", {{2, 2, 5, 5}, {3, 2, 3, 3}, {3}}, nullptr,
                   [](auto& t) { return ops::conv2d(t[0], t[1], t[2], 1, 1); },
                   [](auto& v) { return ref_conv2d(v[0], v[1], &v[2], 2, 2, 5, 5, 3, 3, 1, 1); }});
  cases.push_back({"conv2d_stride2", {{1, 2, 6, 6}, {2, 2, 3, 3}}, nullptr,
                   [](auto& t) { return ops::conv2d(t[0], t[1], Tensor(), 2, 0); },
                   [](auto& v) { return ref_conv2d(v[0], v[1], nullptr, 1, 2, 6, 6, 2, 3, 2, 0); }});
  cases.push_back({"max_pool2d", {{2, 2, 4, 4}}, [](Rng& r, auto& v) { distinct_values(r, v[0]); },
                   [](auto& t) { return ops::max_pool2d(t[0], 2, 2); },
                   [](auto& v) {
                     Vec o(2 * 2 * 2 * 2);
                     for (std::size_t bc = 0; bc < 4; ++bc)
                       for (std::size_t y = 0; y < 2; ++y)
                         for (std::size_t x = 0; x < 2; ++x) {
                           double m = -1e30;
                           for (std::size_t i = 0; i < 2; ++i)
                             for (std::size_t j = 0; j < 2; ++j)
                               m = std::max(m, v[0][bc * 16 + (2 * y + i) * 4 + 2 * x + j]);
                           o[(bc * 2 + y) * 2 + x] = m;
                         }
                     return o;
                   }});
  cases.push_back({"avg_pool2d", {{1, 2, 4, 4}}, nullptr,
                   [](auto& t) { return ops::avg_pool2d(t[0], 2, 2); },
                   [](auto& v) {
                     Vec o(2 * 2 * 2, 0.0);
                     for (std::size_t c = 0; c < 2; ++c)
                       for (std::size_t y = 0; y < 2; ++y)
                         for (std::size_t x = 0; x < 2; ++x)
                           for (std::size_t i = 0; i < 2; ++i)
                             for (std::size_t j = 0; j < 2; ++j)
                               o[(c * 2 + y) * 2 + x] += 0.25 * v[0][c * 16 + (2 * y + i) * 4 + 2 * x + j];
                     return o;
                   }});
  cases.push_back({"relu", {{3, 5}}, [](Rng& r, auto& v) { away_from_zero(r, v[0]); },
                   [](auto& t) { return ops::relu(t[0]); },
                   [](auto& v) {
                     Vec o = v[0];
                     for (auto& x : o) x = std::max(x, 0.0);
                     return o;
                   }});
  cases.push_back({"gelu", {{3, 5}}, [](Rng& r, auto& v) {
                     for (auto& x : v[0]) x = r.uniform(-3.0, 3.0);
                   },
                   [](auto& t) { return ops::gelu(t[0]); },
                   [](auto& v) {
                     Vec o = v[0];
                     for (auto& x : o) x = 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
                     return o;
                   }});
  cases.push_back({"softmax", {{3, 5}}, [](Rng& r, auto& v) {
                     for (auto& x : v[0]) x = r.uniform(-2.0, 2.0);
                   },
                   [](auto& t) { return ops::softmax(t[0]); },
                   [](auto& v) { return ref_softmax_rows(v[0], 5); }});
  cases.push_back({"layer_norm", {{3, 6}, {6}, {6}}, nullptr,
                   [](auto& t) { return ops::layer_norm(t[0], t[1], t[2]); },
                   [](auto& v) {
                     Vec o = ref_normalize(v[0], 3, 6, [](std::size_t q, std::size_t e) { return q * 6 + e; }, 1e-5);
                     for (std::size_t i = 0; i < o.size(); ++i) o[i] = o[i] * v[1][i % 6] + v[2][i % 6];
                     return o;
                   }});
  cases.push_back({"batch_norm_train", {{3, 2, 2, 2}, {2}, {2}}, nullptr,
                   [](auto& t) {
                     ops::RunningStats stats{{0.0f, 0.0f}, {1.0f, 1.0f}};
                     return ops::batch_norm(t[0], t[1], t[2], stats, true);
                   },
                   [](auto& v) {
                     auto index = [](std::size_t c, std::size_t e) { return ((e / 4) * 2 + c) * 4 + e % 4; };
                     Vec o = ref_normalize(v[0], 2, 12, index, 1e-5);
                     for (std::size_t i = 0; i < o.size(); ++i) {
                       const std::size_t c = (i / 4) % 2;
                       o[i] = o[i] * v[1][c] + v[2][c];
                     }
                     return o;
                   }});
  cases.push_back({"batch_norm_eval", {{2, 3, 2}, {3}, {3}}, nullptr,
                   [](auto& t) {
                     ops::RunningStats stats{{0.1f, -0.2f, 0.3f}, {0.5f, 1.5f, 2.0f}};
                     return ops::batch_norm(t[0], t[1], t[2], stats, false);
                   },
                   [](auto& v) {
                     const double m[3] = {0.1f, -0.2f, 0.3f}, var[3] = {0.5f, 1.5f, 2.0f};
                     Vec o(v[0].size());
                     for (std::size_t i = 0; i < o.size(); ++i) {
                       const std::size_t c = (i / 2) % 3;
                       o[i] = (v[0][i] - m[c]) / std::sqrt(var[c] + 1e-5) * v[1][c] + v[2][c];
                     }
                     return o;
                   }});
  cases.push_back({"group_norm", {{2, 4, 2, 2}, {4}, {4}}, nullptr,
                   [](auto& t) { return ops::group_norm(t[0], 2, t[1], t[2]); },
                   [](auto& v) {
                     Vec o = ref_normalize(v[0], 4, 8, [](std::size_t q, std::size_t e) { return q * 8 + e; }, 1e-5);
                     for (std::size_t i = 0; i < o.size(); ++i) {
                       const std::size_t c = (i / 4) % 4;
                       o[i] = o[i] * v[1][c] + v[2][c];
                     }
                     return o;
                   }});
  cases.push_back({"attention", {{2, 3, 4}, {2, 3, 4}, {2, 3, 4}}, nullptr,
                   [](auto& t) { return ops::scaled_dot_product_attention(t[0], t[1], t[2]); },
                   [](auto& v) {
                     Vec o(24, 0.0);
                     for (std::size_t b = 0; b < 2; ++b)
                       for (std::size_t i = 0; i < 3; ++i) {
                         Vec s(3, 0.0);
                         for (std::size_t j = 0; j < 3; ++j) {
                           for (std::size_t d = 0; d < 4; ++d)
                             s[j] += v[0][(b * 3 + i) * 4 + d] * v[1][(b * 3 + j) * 4 + d];
                           s[j] /= 2.0;
                         }
                         Vec p = ref_softmax_rows(s, 3);
                         for (std::size_t j = 0; j < 3; ++j)
                           for (std::size_t d = 0; d < 4; ++d)
                             o[(b * 3 + i) * 4 + d] += p[j] * v[2][(b * 3 + j) * 4 + d];
                       }
                     return o;
                   }});
  cases.push_back({"embedding", {{4, 3}}, nullptr,
                   [](auto& t) {
                     const std::size_t ids[] = {2, 0, 2, 3};
                     return ops::embedding(t[0], ids);
                   },
                   [](auto& v) {
                     const std::size_t ids[] = {2, 0, 2, 3};
                     Vec o;
                     for (auto id : ids)
                       for (std::size_t j = 0; j < 3; ++j) o.push_back(v[0][id * 3 + j]);
                     return o;
                   }});
  cases.push_back({"prepend_select_token", {{2, 3, 4}, {4}}, nullptr,
                   [](auto& t) {
                     auto seq = ops::prepend_token(t[0], t[1]);
                     return ops::add(ops::select_token(seq, 0), ops::select_token(seq, 2));
                   },
                   [](auto& v) {
                     Vec o(8);
                     for (std::size_t b = 0; b < 2; ++b)
                       for (std::size_t d = 0; d < 4; ++d) o[b * 4 + d] = v[1][d] + v[0][(b * 3 + 1) * 4 + d];
                     return o;
                   }});
  cases.push_back({"cross_entropy", {{4, 5}}, nullptr,
                   [](auto& t) {
                     const int labels[] = {0, 3, 4, 3};
                     return ops::cross_entropy(t[0], labels);
                   },
                   [](auto& v) {
                     const int labels[] = {0, 3, 4, 3};
                     Vec p = ref_softmax_rows(v[0], 5);
                     double l = 0.0;
                     for (std::size_t b = 0; b < 4; ++b) l -= std::log(p[b * 5 + labels[b]]);
                     return Vec{l / 4.0};
                   }});
  return cases;
}

}  // namespace flsim::testing
