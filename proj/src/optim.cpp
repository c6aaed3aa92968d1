#include "flsim/optim.hpp"

#include <cmath>
#include <numbers>

#include "flsim/error.hpp"

namespace flsim {

std::vector<float>& Optimizer::buffer(std::map<std::string, std::vector<float>>& store,
                                      const NamedTensor& p) {
  auto [it, inserted] = store.try_emplace(p.name);
  if (inserted) it->second.assign(p.tensor.numel(), 0.0f);
  if (it->second.size() != p.tensor.numel()) {
    throw ShapeError("optimizer_step", p.name + ": moment buffer holds " +
                                           std::to_string(it->second.size()) + " values for " +
                                           shape_str(p.tensor.shape()));
  }
  return it->second;
}

void Optimizer::step(std::span<NamedTensor> params, float lr) {
  if (!(lr >= 0.0f)) throw InvalidArgument("optimizer_step", "learning rate must be >= 0");
  ++t_;
  for (auto& p : params) {
    auto w = p.tensor.mutable_data();
    auto g = p.tensor.grad();
    auto& m = buffer(m_, p);
    if (config_.kind == OptimizerKind::SgdMomentum) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        const float gi = g[i] + config_.weight_decay * w[i];
        m[i] = config_.momentum * m[i] + gi;
        w[i] -= lr * m[i];
      }
      continue;
    }
    auto& v = buffer(v_, p);
    const double t = static_cast<double>(t_);
    const float bc1 = static_cast<float>(1.0 - std::pow(config_.beta1, t));
    const float bc2 = static_cast<float>(1.0 - std::pow(config_.beta2, t));
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0f - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0f - config_.beta2) * g[i] * g[i];
      const float mhat = m[i] / bc1;
      const float vhat = v[i] / bc2;
      w[i] -= lr * config_.weight_decay * w[i];
      w[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

double clip_global_norm(std::span<NamedTensor> params, double max_norm) {
  if (!(max_norm > 0.0)) throw InvalidArgument("clip_global_norm", "max_norm must be > 0");
  double sq = 0.0;
  for (const auto& p : params)
    for (float v : p.tensor.grad()) sq += static_cast<double>(v) * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm * (1.0 + 1e-6)) {
    const float factor = static_cast<float>(max_norm / norm);
    for (auto& p : params)
      for (auto& v : p.tensor.mutable_grad()) v *= factor;
  }
  return norm;
}

void validate(const LrSchedule& s) {
  if (!(s.base_lr >= 0.0)) throw InvalidArgument("lr_schedule", "base_lr must be >= 0");
  if (s.total_steps == 0) throw InvalidArgument("lr_schedule", "total_steps must be positive");
  switch (s.kind) {
    case ScheduleKind::WarmupCosine:
      if (s.warmup_steps >= s.total_steps) {
        throw InvalidArgument("lr_schedule", "warmup_steps (" + std::to_string(s.warmup_steps) +
                                                 ") must be below total_steps (" +
                                                 std::to_string(s.total_steps) + ")");
      }
      break;
    case ScheduleKind::StepDecay:
      if (s.step_period == 0) throw InvalidArgument("lr_schedule", "step_period must be positive");
      if (!(s.step_factor > 0.0 && s.step_factor <= 1.0)) {
        throw InvalidArgument("lr_schedule", "step_factor must lie in (0, 1]");
      }
      break;
    case ScheduleKind::Constant:
      break;
  }
}

double lr_at(const LrSchedule& s, std::size_t step) {
  if (step > s.total_steps) {
    throw InvalidArgument("lr_at", "step " + std::to_string(step) + " beyond total_steps " +
                                       std::to_string(s.total_steps));
  }
  switch (s.kind) {
    case ScheduleKind::WarmupCosine: {
      if (step < s.warmup_steps) {
        return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
      }
      const double progress = static_cast<double>(step - s.warmup_steps) /
                              static_cast<double>(s.total_steps - s.warmup_steps);
      return s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
    case ScheduleKind::StepDecay:
      return s.base_lr * std::pow(s.step_factor, static_cast<double>(step / s.step_period));
    case ScheduleKind::Constant:
      return s.base_lr;
  }
  return s.base_lr;
}

}  // namespace flsim
