#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "flsim/tensor.hpp"

namespace flsim {

struct ParamEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
  // Non-learned state (BatchNorm running statistics). Transmitted and
  // averaged with the weights but excluded from counts, norms, and penalties.
  bool buffer = false;

  bool operator==(const ParamEntry&) const = default;
};

// Ordered, named snapshot of a model's weights; the unit clients and server
// exchange. Values are stored in double so that deltas of float weights are
// exact and start + (trained - start) reproduces `trained` bit for bit.
class ParameterSet {
 public:
  void add(std::string name, Shape shape, std::vector<double> values, bool buffer = false);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<ParamEntry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const ParamEntry& at(const std::string& name) const;

  // Element count over learned parameters only.
  std::size_t parameter_count() const;
  bool same_layout(const ParameterSet& other) const;

  // Rounds every value to the nearest float.
  void round_to_float();

  bool operator==(const ParameterSet& other) const = default;

 private:
  std::vector<ParamEntry> entries_;
};

ParameterSet zeros_like(const ParameterSet& p);
// a - b. Throws ShapeError on layout mismatch.
ParameterSet difference(const ParameterSet& a, const ParameterSet& b);
// y += alpha * x over every entry (buffers included).
void axpy(ParameterSet& y, double alpha, const ParameterSet& x);
// L2 norm over the concatenation of learned parameters (buffers excluded).
double l2_norm(const ParameterSet& p);
// Largest |a - b| over all entries.
double max_abs_difference(const ParameterSet& a, const ParameterSet& b);

void require_same_layout(const char* op, const ParameterSet& a, const ParameterSet& b);

}  // namespace flsim
