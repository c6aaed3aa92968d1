#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "flsim/ops.hpp"
#include "flsim/optim.hpp"
#include "flsim/parameter_set.hpp"
#include "flsim/tensor.hpp"

namespace flsim {

enum class Arch { TinyCnn, TinyVit, Mlp };
enum class NormKind { Batch, Group };

std::string to_string(Arch arch);
std::string to_string(NormKind norm);

struct ModelSpec {
  Arch arch = Arch::TinyCnn;
  std::size_t image_size = 16;  // H == W
  std::size_t channels = 1;
  std::size_t num_classes = 10;

  // tiny-cnn: one (conv3x3 -> norm -> relu -> maxpool2x2) stage per width.
  NormKind norm = NormKind::Batch;
  std::size_t groups = 8;
  std::vector<std::size_t> widths{24, 48, 64};

  // tiny-vit
  std::size_t patch_size = 4;
  std::size_t embed_dim = 40;
  std::size_t depth = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;

  // mlp
  std::vector<std::size_t> hidden{64};

  bool operator==(const ModelSpec&) const = default;
};

// Throws InvalidArgument listing the violated invariant.
void validate(const ModelSpec& spec);

// Published sizes of the full-scale models the toy architectures stand in for.
// Reported alongside desk-scale counts; never derived from code.
inline constexpr double kVitSmallReferenceParams = 21.7e6;
inline constexpr double kResNet50ReferenceParams = 23.5e6;

// (B, C, H, W) -> (B, N, P*P*C): non-overlapping patches in row-major patch
// order, each flattened channel-major (c, row, col).
Tensor vit_patchify(const Tensor& images, std::size_t patch_size);

class Model {
 public:
  // Same (spec, seed) gives bitwise identical weights.
  static Model build(const ModelSpec& spec, std::uint64_t seed);

  // (B, C, H, W) -> (B, num_classes).
  Tensor forward(const Tensor& batch);

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  const ModelSpec& spec() const { return spec_; }
  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  Tensor& parameter(const std::string& name);
  void zero_grad();

  // Weights followed by running statistics (flagged as buffers).
  ParameterSet state() const;
  // Loads a state with this model's exact layout; values are rounded to float.
  void load(const ParameterSet& state);

  // Learned elements only; running statistics excluded.
  std::size_t param_count() const;

  // ViT internals, exposed for tests: patch/class/position embedding, and the
  // transformer blocks applied to an embedded token stream.
  Tensor vit_embed(const Tensor& batch);
  Tensor vit_blocks(const Tensor& tokens);

 private:
  struct NormBuffer {
    std::string name;
    ops::RunningStats stats;
  };

  explicit Model(ModelSpec spec) : spec_(std::move(spec)) {}
  Tensor& add_param(std::string name, Shape shape);
  Tensor linear(const Tensor& x, const std::string& prefix);
  Tensor cnn_forward(const Tensor& batch);
  Tensor vit_forward(const Tensor& batch);
  Tensor mlp_forward(const Tensor& batch);
  ops::RunningStats& norm_stats(const std::string& name);

  ModelSpec spec_;
  bool training_ = true;
  std::vector<NamedTensor> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<NormBuffer> buffers_;
};

inline std::size_t param_count(const Model& model) { return model.param_count(); }

}  // namespace flsim
