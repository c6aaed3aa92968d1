#include "flsim/models.hpp"

#include <cmath>
#include <numeric>

#include "flsim/error.hpp"
#include "flsim/rng.hpp"

namespace flsim {
namespace {

enum class Init { TruncNormal, KaimingUniform, LinearUniform, Zeros, Ones };

void fill(Tensor& t, Init init, std::size_t fan_in, Rng& rng) {
  auto d = t.mutable_data();
  switch (init) {
    case Init::TruncNormal:
      for (auto& v : d) v = static_cast<float>(rng.truncated_normal(0.02));
      break;
    case Init::KaimingUniform: {
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (auto& v : d) v = static_cast<float>(rng.uniform(-bound, bound));
      break;
    }
    case Init::LinearUniform: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : d) v = static_cast<float>(rng.uniform(-bound, bound));
      break;
    }
    case Init::Zeros:
      for (auto& v : d) v = 0.0f;
      break;
    case Init::Ones:
      for (auto& v : d) v = 1.0f;
      break;
  }
}

std::size_t cnn_feature_size(const ModelSpec& s) {
  std::size_t hw = s.image_size;
  for (std::size_t i = 0; i < s.widths.size(); ++i) hw /= 2;
  return s.widths.back() * hw * hw;
}

}  // namespace

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::TinyCnn: return "tiny-cnn";
    case Arch::TinyVit: return "tiny-vit";
    case Arch::Mlp: return "mlp";
  }
  return "?";
}

std::string to_string(NormKind norm) { return norm == NormKind::Batch ? "batch" : "group"; }

void validate(const ModelSpec& s) {
  auto fail = [](const std::string& what) { throw InvalidArgument("model_spec", what); };
  if (s.image_size == 0 || s.channels == 0) fail("image_size and channels must be positive");
  if (s.num_classes < 2) fail("num_classes must be >= 2");
  switch (s.arch) {
    case Arch::TinyCnn:
      if (s.widths.empty()) fail("tiny-cnn needs at least one stage width");
      if (s.image_size >> s.widths.size() == 0) {
        fail("image_size " + std::to_string(s.image_size) + " too small for " +
             std::to_string(s.widths.size()) + " 2x2 pooling stages");
      }
      for (auto w : s.widths) {
        if (w == 0) fail("stage widths must be positive");
        if (s.norm == NormKind::Group && (s.groups == 0 || w % s.groups != 0)) {
          fail("group norm: width " + std::to_string(w) + " not divisible by groups " +
               std::to_string(s.groups));
        }
      }
      break;
    case Arch::TinyVit:
      if (s.patch_size == 0 || s.image_size % s.patch_size != 0) {
        fail("tiny-vit: image_size " + std::to_string(s.image_size) +
             " not divisible by patch_size " + std::to_string(s.patch_size));
      }
      if (s.heads == 0 || s.embed_dim % s.heads != 0) {
        fail("tiny-vit: embed_dim " + std::to_string(s.embed_dim) + " not divisible by heads " +
             std::to_string(s.heads));
      }
      if (s.depth == 0 || s.mlp_ratio == 0) fail("tiny-vit: depth and mlp_ratio must be positive");
      break;
    case Arch::Mlp:
      for (auto h : s.hidden)
        if (h == 0) fail("mlp hidden widths must be positive");
      break;
  }
}

Tensor vit_patchify(const Tensor& images, std::size_t P) {
  if (!images.defined() || images.rank() != 4) {
    throw ShapeError("vit_patchify", "expected (B, C, H, W), got " +
                                         (images.defined() ? shape_str(images.shape()) : "()"));
  }
  const std::size_t B = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  if (P == 0 || H % P != 0 || W % P != 0) {
    throw ShapeError("vit_patchify", "image " + shape_str(images.shape()) +
                                         " not divisible into " + std::to_string(P) + "x" +
                                         std::to_string(P) + " patches");
  }
  auto x = ops::reshape(images, {B, C, H / P, P, W / P, P});
  x = ops::permute(x, {0, 2, 4, 1, 3, 5});
  return ops::reshape(x, {B, (H / P) * (W / P), C * P * P});
}

Tensor& Model::add_param(std::string name, Shape shape) {
  index_[name] = params_.size();
  params_.push_back({std::move(name), Tensor::zeros(std::move(shape), true)});
  return params_.back().tensor;
}

Tensor& Model::parameter(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("model", "no parameter named " + name);
  return params_[it->second].tensor;
}

ops::RunningStats& Model::norm_stats(const std::string& name) {
  for (auto& b : buffers_)
    if (b.name == name) return b.stats;
  throw InvalidArgument("model", "no running statistics named " + name);
}

Model Model::build(const ModelSpec& spec, std::uint64_t seed) {
  validate(spec);
  Model m(spec);
  Rng rng(seed);
  auto make = [&](const std::string& name, Shape shape, Init init, std::size_t fan_in = 1) {
    fill(m.add_param(name, std::move(shape)), init, fan_in, rng);
  };
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out, Init init) {
    make(name + ".weight", {in, out}, init, in);
    make(name + ".bias", {out}, Init::Zeros);
  };

  switch (spec.arch) {
    case Arch::TinyCnn: {
      std::size_t in = spec.channels;
      for (std::size_t i = 0; i < spec.widths.size(); ++i) {
        const auto w = spec.widths[i];
        const std::string stage = "stage" + std::to_string(i);
        make(stage + ".conv.weight", {w, in, 3, 3}, Init::KaimingUniform, in * 9);
        make(stage + ".conv.bias", {w}, Init::Zeros);
        make(stage + ".norm.weight", {w}, Init::Ones);
        make(stage + ".norm.bias", {w}, Init::Zeros);
        if (spec.norm == NormKind::Batch) {
          m.buffers_.push_back({stage + ".norm", {std::vector<float>(w, 0.0f), std::vector<float>(w, 1.0f)}});
        }
        in = w;
      }
      linear("head", cnn_feature_size(spec), spec.num_classes, Init::LinearUniform);
      break;
    }
    case Arch::TinyVit: {
      const auto D = spec.embed_dim;
      const auto P = spec.patch_size;
      const auto N = (spec.image_size / P) * (spec.image_size / P);
      linear("patch_embed", P * P * spec.channels, D, Init::TruncNormal);
      make("cls_token", {D}, Init::TruncNormal);
      make("pos_embed", {N + 1, D}, Init::TruncNormal);
      for (std::size_t l = 0; l < spec.depth; ++l) {
        const std::string blk = "blocks." + std::to_string(l);
        make(blk + ".norm1.weight", {D}, Init::Ones);
        make(blk + ".norm1.bias", {D}, Init::Zeros);
        for (const char* proj : {".attn.q", ".attn.k", ".attn.v", ".attn.proj"})
          linear(blk + proj, D, D, Init::TruncNormal);
        make(blk + ".norm2.weight", {D}, Init::Ones);
        make(blk + ".norm2.bias", {D}, Init::Zeros);
        linear(blk + ".mlp.fc1", D, D * spec.mlp_ratio, Init::TruncNormal);
        linear(blk + ".mlp.fc2", D * spec.mlp_ratio, D, Init::TruncNormal);
      }
      make("norm.weight", {D}, Init::Ones);
      make("norm.bias", {D}, Init::Zeros);
      linear("head", D, spec.num_classes, Init::TruncNormal);
      break;
    }
    case Arch::Mlp: {
      std::size_t in = spec.channels * spec.image_size * spec.image_size;
      for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
        linear("fc" + std::to_string(i), in, spec.hidden[i], Init::LinearUniform);
        in = spec.hidden[i];
      }
      linear("head", in, spec.num_classes, Init::LinearUniform);
      break;
    }
  }
  return m;
}

void Model::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Tensor Model::linear(const Tensor& x, const std::string& prefix) {
  return ops::add(ops::matmul(x, parameter(prefix + ".weight")), parameter(prefix + ".bias"));
}

Tensor Model::forward(const Tensor& batch) {
  const Shape expected{spec_.channels, spec_.image_size, spec_.image_size};
  if (!batch.defined() || batch.rank() != 4 ||
      !std::equal(expected.begin(), expected.end(), batch.shape().begin() + 1)) {
    throw ShapeError("model.forward",
                     "expected (B, " + std::to_string(spec_.channels) + ", " +
                         std::to_string(spec_.image_size) + ", " + std::to_string(spec_.image_size) +
                         "), got " + (batch.defined() ? shape_str(batch.shape()) : "()"));
  }
  switch (spec_.arch) {
    case Arch::TinyCnn: return cnn_forward(batch);
    case Arch::TinyVit: return vit_forward(batch);
    case Arch::Mlp: return mlp_forward(batch);
  }
  return {};
}

Tensor Model::cnn_forward(const Tensor& batch) {
  Tensor x = batch;
  for (std::size_t i = 0; i < spec_.widths.size(); ++i) {
    const std::string stage = "stage" + std::to_string(i);
    x = ops::conv2d(x, parameter(stage + ".conv.weight"), parameter(stage + ".conv.bias"), 1, 1);
    const auto& gamma = parameter(stage + ".norm.weight");
    const auto& beta = parameter(stage + ".norm.bias");
    if (spec_.norm == NormKind::Batch) {
      x = ops::batch_norm(x, gamma, beta, norm_stats(stage + ".norm"), training_);
    } else {
      x = ops::group_norm(x, spec_.groups, gamma, beta);
    }
    x = ops::max_pool2d(ops::relu(x), 2, 2);
  }
  x = ops::reshape(x, {batch.dim(0), x.numel() / batch.dim(0)});
  return linear(x, "head");
}

Tensor Model::vit_embed(const Tensor& batch) {
  auto tokens = linear(vit_patchify(batch, spec_.patch_size), "patch_embed");
  tokens = ops::prepend_token(tokens, parameter("cls_token"));
  const std::size_t T = tokens.dim(1);
  std::vector<std::size_t> positions(T);
  std::iota(positions.begin(), positions.end(), 0);
  auto pos = ops::embedding(parameter("pos_embed"), positions);
  return ops::add(tokens, pos);
}

Tensor Model::vit_blocks(const Tensor& tokens) {
  const std::size_t B = tokens.dim(0), T = tokens.dim(1), D = spec_.embed_dim;
  const std::size_t h = spec_.heads, dh = D / h;
  auto split_heads = [&](const Tensor& t) {
    return ops::permute(ops::reshape(t, {B, T, h, dh}), {0, 2, 1, 3});
  };
  Tensor x = tokens;
  for (std::size_t l = 0; l < spec_.depth; ++l) {
    const std::string blk = "blocks." + std::to_string(l);
    auto y = ops::layer_norm(x, parameter(blk + ".norm1.weight"), parameter(blk + ".norm1.bias"));
    auto q = split_heads(linear(y, blk + ".attn.q"));
    auto k = split_heads(linear(y, blk + ".attn.k"));
    auto v = split_heads(linear(y, blk + ".attn.v"));
    auto a = ops::scaled_dot_product_attention(q, k, v);
    a = ops::reshape(ops::permute(a, {0, 2, 1, 3}), {B, T, D});
    x = ops::add(x, linear(a, blk + ".attn.proj"));

    y = ops::layer_norm(x, parameter(blk + ".norm2.weight"), parameter(blk + ".norm2.bias"));
    y = linear(ops::gelu(linear(y, blk + ".mlp.fc1")), blk + ".mlp.fc2");
    x = ops::add(x, y);
  }
  return x;
}

Tensor Model::vit_forward(const Tensor& batch) {
  auto x = vit_blocks(vit_embed(batch));
  x = ops::layer_norm(x, parameter("norm.weight"), parameter("norm.bias"));
  return linear(ops::select_token(x, 0), "head");
}

Tensor Model::mlp_forward(const Tensor& batch) {
  const std::size_t B = batch.dim(0);
  Tensor x = ops::reshape(batch, {B, batch.numel() / B});
  for (std::size_t i = 0; i < spec_.hidden.size(); ++i)
    x = ops::relu(linear(x, "fc" + std::to_string(i)));
  return linear(x, "head");
}

ParameterSet Model::state() const {
  ParameterSet s;
  for (const auto& p : params_) {
    auto d = p.tensor.data();
    s.add(p.name, p.tensor.shape(), std::vector<double>(d.begin(), d.end()));
  }
  for (const auto& b : buffers_) {
    const auto C = b.stats.mean.size();
    s.add(b.name + ".running_mean", {C},
          std::vector<double>(b.stats.mean.begin(), b.stats.mean.end()), true);
    s.add(b.name + ".running_var", {C},
          std::vector<double>(b.stats.var.begin(), b.stats.var.end()), true);
  }
  return s;
}

void Model::load(const ParameterSet& state) {
  const auto& entries = state.entries();
  if (entries.size() != params_.size() + 2 * buffers_.size()) {
    throw ShapeError("model.load", "state has " + std::to_string(entries.size()) +
                                       " entries, model expects " +
                                       std::to_string(params_.size() + 2 * buffers_.size()));
  }
  auto copy = [](const ParamEntry& e, const std::string& name, const Shape& shape,
                 std::span<float> dst) {
    if (e.name != name || e.shape != shape) {
      throw ShapeError("model.load", "entry " + e.name + shape_str(e.shape) + " where " + name +
                                         shape_str(shape) + " expected");
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(e.values[i]);
  };
  std::size_t k = 0;
  for (auto& p : params_) copy(entries[k++], p.name, p.tensor.shape(), p.tensor.mutable_data());
  for (auto& b : buffers_) {
    const Shape c{b.stats.mean.size()};
    copy(entries[k++], b.name + ".running_mean", c, b.stats.mean);
    copy(entries[k++], b.name + ".running_var", c, b.stats.var);
  }
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

}  // namespace flsim
