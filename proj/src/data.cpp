#include "flsim/data.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "flsim/error.hpp"
#include "flsim/rng.hpp"

namespace flsim {

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == split) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::class_counts(std::span<const std::size_t> idx) const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (auto i : idx) ++counts[labels[i]];
  return counts;
}

Tensor Dataset::batch(std::span<const std::size_t> idx) const {
  const std::size_t n = sample_numel();
  std::vector<float> out(idx.size() * n);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    if (idx[b] >= size()) throw InvalidArgument("dataset.batch", "index out of range");
    std::copy_n(pixels.begin() + idx[b] * n, n, out.begin() + b * n);
  }
  return Tensor::from({idx.size(), channels, height, width}, std::move(out));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> idx) const {
  std::vector<int> out(idx.size());
  for (std::size_t b = 0; b < idx.size(); ++b) out[b] = labels[idx[b]];
  return out;
}

void Dataset::validate() const {
  auto fail = [](const std::string& what) { throw InvalidArgument("dataset", what); };
  if (channels == 0 || height == 0 || width == 0) fail("image dimensions must be positive");
  if (num_classes == 0) fail("num_classes must be positive");
  if (splits.size() != labels.size()) fail("split tags and labels differ in length");
  if (pixels.size() != labels.size() * sample_numel()) fail("pixel count does not match N*C*H*W");
  for (auto l : labels)
    if (l >= num_classes) fail("label " + std::to_string(l) + " >= num_classes");
  for (auto s : splits)
    if (static_cast<int>(s) > 2) fail("unknown split tag");
}

bool Dataset::operator==(const Dataset& o) const {
  return channels == o.channels && height == o.height && width == o.width &&
         num_classes == o.num_classes && labels == o.labels && splits == o.splits &&
         pixels.size() == o.pixels.size() &&
         std::equal(pixels.begin(), pixels.end(), o.pixels.begin(), [](float a, float b) {
           return std::bit_cast<std::uint32_t>(a) == std::bit_cast<std::uint32_t>(b);
         });
}

std::vector<float> class_prototype(const SyntheticSpec& spec, std::size_t label) {
  const std::size_t H = spec.height, W = spec.width, C = spec.channels;
  std::vector<float> proto(C * H * W);
  for (std::size_t c = 0; c < C; ++c) {
    Rng rng = Rng::derive(spec.seed, 0x70726f746fULL + label, c);
    std::vector<double> img(H * W, 0.0);
    for (int wave = 0; wave < 3; ++wave) {
      std::uint64_t fx, fy;
      do {
        fx = rng.below(4);
        fy = rng.below(4);
      } while (fx == 0 && fy == 0);
      const double amp = rng.uniform(0.5, 1.0);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const double arg = 2.0 * std::numbers::pi *
                                 (static_cast<double>(fx * x) / static_cast<double>(W) +
                                  static_cast<double>(fy * y) / static_cast<double>(H)) +
                             phase;
          img[y * W + x] += amp * std::cos(arg);
        }
    }
    double mean = 0.0, var = 0.0;
    for (double v : img) mean += v;
    mean /= static_cast<double>(img.size());
    for (double v : img) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(img.size()));
    for (std::size_t i = 0; i < img.size(); ++i)
      proto[c * H * W + i] = static_cast<float>(sd > 0 ? (img[i] - mean) / sd : 0.0);
  }
  return proto;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes == 0 || spec.num_classes > 65536)
    throw InvalidArgument("generate_synthetic", "num_classes must lie in [1, 65536]");
  if (spec.samples_per_class < 1) throw InvalidArgument("generate_synthetic", "samples_per_class must be >= 1");
  if (!(spec.noise_std >= 0.0)) throw InvalidArgument("generate_synthetic", "noise_std must be >= 0");
  if (spec.height == 0 || spec.width == 0 || spec.channels == 0)
    throw InvalidArgument("generate_synthetic", "image dimensions must be positive");
  if (!(spec.train_fraction > 0.0 && spec.val_fraction >= 0.0 &&
        spec.train_fraction + spec.val_fraction <= 1.0))
    throw InvalidArgument("generate_synthetic", "split fractions must be nonnegative and sum to <= 1");

  Dataset d;
  d.name = "synthetic";
  d.channels = spec.channels;
  d.height = spec.height;
  d.width = spec.width;
  d.num_classes = spec.num_classes;
  const std::size_t K = spec.num_classes, n = spec.samples_per_class, len = d.sample_numel();
  d.labels.resize(K * n);
  d.splits.resize(K * n);
  d.pixels.resize(K * n * len);

  std::vector<std::vector<float>> protos;
  for (std::size_t k = 0; k < K; ++k) protos.push_back(class_prototype(spec, k));

  Rng noise = Rng::derive(spec.seed, 0x6e6f697365ULL);
  for (std::size_t i = 0; i < K * n; ++i) {
    const std::size_t k = i % K;
    d.labels[i] = static_cast<std::uint16_t>(k);
    for (std::size_t p = 0; p < len; ++p)
      d.pixels[i * len + p] = protos[k][p] + static_cast<float>(spec.noise_std * noise.normal());
  }

  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(n))));
  Rng split_rng = Rng::derive(spec.seed, 0x73706c6974ULL);
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<std::size_t> members(n);
    for (std::size_t j = 0; j < n; ++j) members[j] = j * K + k;
    split_rng.shuffle(members);
    for (std::size_t j = 0; j < n; ++j) {
      d.splits[members[j]] = j < n_train ? Split::Train : (j < n_train + n_val ? Split::Val : Split::Test);
    }
  }
  return d;
}

namespace {

constexpr char kMagic[4] = {'F', 'L', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 6 * 4;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffULL) throw InvalidArgument("write_flds", std::string(what) + " exceeds u32");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::vector<std::uint8_t> encode_flds(const Dataset& d) {
  d.validate();
  if (d.num_classes > 65536) throw InvalidArgument("write_flds", "labels must fit in u16");
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + d.size() * 3 + d.pixels.size() * 4);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u32(out, checked_u32(d.size(), "sample count"));
  put_u32(out, checked_u32(d.channels, "channels"));
  put_u32(out, checked_u32(d.height, "height"));
  put_u32(out, checked_u32(d.width, "width"));
  put_u32(out, checked_u32(d.num_classes, "num_classes"));
  for (auto l : d.labels) {
    out.push_back(static_cast<std::uint8_t>(l & 0xff));
    out.push_back(static_cast<std::uint8_t>(l >> 8));
  }
  for (auto s : d.splits) out.push_back(static_cast<std::uint8_t>(s));
  for (float p : d.pixels) put_u32(out, std::bit_cast<std::uint32_t>(p));
  return out;
}

Dataset decode_flds(std::span<const std::uint8_t> b) {
  auto fail = [](const std::string& what) -> Dataset { throw FormatError("load_flds", what); };
  if (b.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), b.begin())) {
    return fail("bad magic");
  }
  if (b.size() < kHeaderBytes) return fail("truncated header");
  const auto version = get_u32(b, 4);
  if (version != kVersion) return fail("unsupported version " + std::to_string(version));
  Dataset d;
  const std::size_t N = get_u32(b, 8);
  d.channels = get_u32(b, 12);
  d.height = get_u32(b, 16);
  d.width = get_u32(b, 20);
  d.num_classes = get_u32(b, 24);
  if (d.channels == 0 || d.height == 0 || d.width == 0) return fail("zero image dimension");
  if (d.num_classes == 0) return fail("zero num_classes");
  const std::size_t pixels = N * d.sample_numel();
  const std::size_t expected = kHeaderBytes + N * 2 + N + pixels * 4;
  if (b.size() < expected) {
    return fail("truncated payload: " + std::to_string(b.size()) + " bytes, expected " +
                std::to_string(expected));
  }
  if (b.size() > expected) return fail("trailing bytes after payload");
  std::size_t at = kHeaderBytes;
  d.labels.resize(N);
  for (std::size_t i = 0; i < N; ++i, at += 2) {
    d.labels[i] = static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
    if (d.labels[i] >= d.num_classes) {
      return fail("label " + std::to_string(d.labels[i]) + " at sample " + std::to_string(i) +
                  " >= num_classes " + std::to_string(d.num_classes));
    }
  }
  d.splits.resize(N);
  for (std::size_t i = 0; i < N; ++i, ++at) {
    if (b[at] > 2) return fail("split tag " + std::to_string(b[at]) + " at sample " + std::to_string(i));
    d.splits[i] = static_cast<Split>(b[at]);
  }
  d.pixels.resize(pixels);
  for (std::size_t i = 0; i < pixels; ++i, at += 4) d.pixels[i] = std::bit_cast<float>(get_u32(b, at));
  return d;
}

void write_flds(const Dataset& dataset, const std::filesystem::path& path) {
  const auto bytes = encode_flds(dataset);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("write_flds", "cannot open " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write_flds", "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Dataset load_flds(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("load_flds", "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Dataset d = decode_flds(bytes);
  d.name = path.stem().string();
  return d;
}

ChannelStats channel_statistics(const Dataset& d, std::span<const std::size_t> idx) {
  if (idx.empty()) throw InvalidArgument("channel_statistics", "empty sample set");
  const std::size_t C = d.channels, HW = d.height * d.width;
  ChannelStats s{std::vector<float>(C), std::vector<float>(C)};
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0;
    for (auto i : idx)
      for (std::size_t p = 0; p < HW; ++p) sum += d.pixels[(i * C + c) * HW + p];
    const double n = static_cast<double>(idx.size() * HW);
    const double mean = sum / n;
    double sq = 0.0;
    for (auto i : idx)
      for (std::size_t p = 0; p < HW; ++p) {
        const double v = d.pixels[(i * C + c) * HW + p] - mean;
        sq += v * v;
      }
    s.mean[c] = static_cast<float>(mean);
    s.std[c] = static_cast<float>(std::sqrt(sq / n));
  }
  return s;
}

Dataset normalize(const Dataset& d, std::span<const float> mean, std::span<const float> std) {
  if (mean.size() != d.channels || std.size() != d.channels) {
    throw InvalidArgument("normalize", "need one mean/std per channel (" +
                                           std::to_string(d.channels) + ")");
  }
  for (float s : std)
    if (!(s > 0.0f)) throw InvalidArgument("normalize", "std must be > 0 per channel");
  Dataset out = d;
  const std::size_t C = d.channels, HW = d.height * d.width;
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < HW; ++p) {
        auto& v = out.pixels[(i * C + c) * HW + p];
        v = (v - mean[c]) / std[c];
      }
  return out;
}

}  // namespace flsim
