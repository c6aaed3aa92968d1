#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "flsim/tensor.hpp"

namespace flsim {

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

// Labeled image collection with a global train/val/test tagging.
struct Dataset {
  std::string name;
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<float> pixels;  // (N, C, H, W) row-major
  std::vector<std::uint16_t> labels;
  std::vector<Split> splits;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_numel() const { return channels * height * width; }
  std::vector<std::size_t> indices(Split split) const;
  std::vector<std::size_t> class_counts(std::span<const std::size_t> indices) const;

  // Stacks the selected samples into (B, C, H, W).
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;

  // Throws InvalidArgument when the invariants do not hold.
  void validate() const;

  // Content equality; the display name is not part of a dataset's identity.
  bool operator==(const Dataset& other) const;
};

struct SyntheticSpec {
  std::size_t num_classes = 10;
  std::size_t samples_per_class = 100;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 1;
  double noise_std = 0.3;
  std::uint64_t seed = 0;
  double train_fraction = 0.70;
  double val_fraction = 0.15;

  bool operator==(const SyntheticSpec&) const = default;
};

// Class prototype for (class, channel): a seeded sum of three low-frequency
// 2-D cosine waves, standardized to zero mean and unit variance.
std::vector<float> class_prototype(const SyntheticSpec& spec, std::size_t label);

// Each sample is its class prototype plus Gaussian noise. Samples are laid
// out round-robin over classes; splits are stratified per class.
Dataset generate_synthetic(const SyntheticSpec& spec);

// FLDS v1, little-endian:
//   "FLDS" | u32 version=1 | u32 N | u32 C | u32 H | u32 W | u32 num_classes |
//   N x u16 label | N x u8 split (0 train, 1 val, 2 test) | N*C*H*W x f32 pixels
void write_flds(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_flds(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_flds(const Dataset& dataset);
Dataset decode_flds(std::span<const std::uint8_t> bytes);

struct ChannelStats {
  std::vector<float> mean;
  std::vector<float> std;
};

ChannelStats channel_statistics(const Dataset& dataset, std::span<const std::size_t> indices);
// x' = (x - mean[c]) / std[c]. Every std must be > 0.
Dataset normalize(const Dataset& dataset, std::span<const float> mean, std::span<const float> std);

}  // namespace flsim
