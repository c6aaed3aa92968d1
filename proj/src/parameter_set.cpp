#include "flsim/parameter_set.hpp"

#include <algorithm>
#include <cmath>

#include "flsim/error.hpp"

namespace flsim {

void ParameterSet::add(std::string name, Shape shape, std::vector<double> values, bool buffer) {
  if (numel(shape) != values.size()) {
    throw ShapeError("parameter_set", name + ": shape " + shape_str(shape) + " vs " +
                                          std::to_string(values.size()) + " values");
  }
  entries_.push_back({std::move(name), std::move(shape), std::move(values), buffer});
}

const ParamEntry& ParameterSet::at(const std::string& name) const {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const ParamEntry& e) { return e.name == name; });
  if (it == entries_.end()) throw InvalidArgument("parameter_set", "no entry named " + name);
  return *it;
}

std::size_t ParameterSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (!e.buffer) n += e.values.size();
  return n;
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.shape != b.shape || a.buffer != b.buffer) return false;
  }
  return true;
}

void ParameterSet::round_to_float() {
  for (auto& e : entries_)
    for (auto& v : e.values) v = static_cast<double>(static_cast<float>(v));
}

void require_same_layout(const char* op, const ParameterSet& a, const ParameterSet& b) {
  if (a.same_layout(b)) return;
  std::string detail = std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " entries";
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    const auto& x = a.entries()[i];
    const auto& y = b.entries()[i];
    if (x.name != y.name || x.shape != y.shape) {
      detail = x.name + shape_str(x.shape) + " vs " + y.name + shape_str(y.shape);
      break;
    }
  }
  throw ShapeError(op, "parameter layouts differ: " + detail);
}

ParameterSet zeros_like(const ParameterSet& p) {
  ParameterSet z;
  for (const auto& e : p.entries())
    z.add(e.name, e.shape, std::vector<double>(e.values.size(), 0.0), e.buffer);
  return z;
}

ParameterSet difference(const ParameterSet& a, const ParameterSet& b) {
  require_same_layout("difference", a, b);
  ParameterSet d = a;
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto& dv = d.entries()[i].values;
    const auto& bv = b.entries()[i].values;
    for (std::size_t j = 0; j < dv.size(); ++j) dv[j] -= bv[j];
  }
  return d;
}

void axpy(ParameterSet& y, double alpha, const ParameterSet& x) {
  require_same_layout("axpy", y, x);
  for (std::size_t i = 0; i < y.size(); ++i) {
    auto& yv = y.entries()[i].values;
    const auto& xv = x.entries()[i].values;
    for (std::size_t j = 0; j < yv.size(); ++j) yv[j] += alpha * xv[j];
  }
}

double l2_norm(const ParameterSet& p) {
  double s = 0.0;
  for (const auto& e : p.entries()) {
    if (e.buffer) continue;
    for (double v : e.values) s += v * v;
  }
  return std::sqrt(s);
}

double max_abs_difference(const ParameterSet& a, const ParameterSet& b) {
  require_same_layout("max_abs_difference", a, b);
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& av = a.entries()[i].values;
    const auto& bv = b.entries()[i].values;
    for (std::size_t j = 0; j < av.size(); ++j) m = std::max(m, std::abs(av[j] - bv[j]));
  }
  return m;
}

}  // namespace flsim
