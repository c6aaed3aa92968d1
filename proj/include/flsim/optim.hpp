#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "flsim/tensor.hpp"

namespace flsim {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

enum class OptimizerKind { SgdMomentum, AdamW };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::SgdMomentum;
  float momentum = 0.9f;
  float weight_decay = 0.0f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;

  bool operator==(const OptimizerConfig&) const = default;
};

// Per-parameter moment buffers keyed by parameter name.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  // sgd-momentum: v = momentum * v + (grad + wd * p); p -= lr * v.
  // adamw: bias-corrected Adam moments with decoupled decay p -= lr * wd * p.
  void step(std::span<NamedTensor> params, float lr);

  const OptimizerConfig& config() const { return config_; }
  const std::vector<float>& first_moment(const std::string& name) const { return m_.at(name); }
  std::uint64_t steps() const { return t_; }

 private:
  std::vector<float>& buffer(std::map<std::string, std::vector<float>>& store,
                             const NamedTensor& p);

  OptimizerConfig config_;
  std::map<std::string, std::vector<float>> m_;
  std::map<std::string, std::vector<float>> v_;
  std::uint64_t t_ = 0;
};

// Scales all gradients jointly so their global L2 norm is at most max_norm and
// returns the norm before clipping. Norms within 1e-6 relative of max_norm
// are left alone, which makes the operation idempotent under float rounding.
double clip_global_norm(std::span<NamedTensor> params, double max_norm);

enum class ScheduleKind { WarmupCosine, StepDecay, Constant };

struct LrSchedule {
  ScheduleKind kind = ScheduleKind::Constant;
  double base_lr = 0.01;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;
  std::size_t step_period = 1;
  double step_factor = 0.5;

  bool operator==(const LrSchedule&) const = default;
};

void validate(const LrSchedule& schedule);
// warmup-cosine: linear 0 -> base over warmup, then cosine to 0 at total.
// step-decay: base * factor^floor(step / period). Requires step <= total.
double lr_at(const LrSchedule& schedule, std::size_t step);

}  // namespace flsim
