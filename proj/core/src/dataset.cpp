// Copyright 2026 The Fractal Patterns Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fractal/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "json.hpp"

#include "fractal/random.hpp"

namespace fractal {

namespace {

constexpr std::string_view kMagic = "FRCTDSET";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t unsigned_le(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::uint8_t byte() { return static_cast<std::uint8_t>(unsigned_le(1)); }
  std::string_view take(std::size_t n) {
    need(n);
    const std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DatasetError("dataset file truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Tensor Dataset::images(std::span<const std::size_t> indices) const {
  const std::size_t n = image_size();
  Tensor out({static_cast<int>(indices.size()), shape.channels, shape.height, shape.width});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw DatasetError("image index out of range");
    std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(indices[i] * n), n,
                out.raw() + i * n);
  }
  return out;
}

Tensor Dataset::all_images() const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return images(idx);
}

std::vector<int> Dataset::labels_of(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

void Dataset::check() const {
  if (pixels.size() != size() * image_size()) {
    throw DatasetError("pixel buffer does not match label count and image shape");
  }
  for (int l : labels) {
    if (l < 0 || l >= classes) throw DatasetError("label " + std::to_string(l) + " out of range");
  }
}

Dataset parse_cifar(std::span<const std::uint8_t> bytes, CifarKind kind) {
  const std::size_t record = kind == CifarKind::kCifar10 ? kCifar10Record : kCifar100Record;
  if (bytes.empty()) throw DatasetError("CIFAR data is empty");
  if (bytes.size() % record != 0) {
    throw DatasetError("CIFAR data length " + std::to_string(bytes.size()) +
                       " is not a multiple of the " + std::to_string(record) +
                       "-byte record (truncated file?)");
  }
  Dataset data;
  data.shape = {3, 32, 32};
  data.classes = kind == CifarKind::kCifar10 ? 10 : 100;
  data.source = kind == CifarKind::kCifar10 ? "cifar10" : "cifar100";
  const std::size_t count = bytes.size() / record;
  data.labels.reserve(count);
  data.pixels.resize(count * kCifarPixels);
  for (std::size_t r = 0; r < count; ++r) {
    const std::uint8_t* rec = bytes.data() + r * record;
    const int label = kind == CifarKind::kCifar10 ? rec[0] : rec[1];
    if (label >= data.classes) {
      throw DatasetError("record " + std::to_string(r) + " has label " + std::to_string(label) +
                         " >= " + std::to_string(data.classes));
    }
    data.labels.push_back(label);
    const std::uint8_t* px = rec + (record - kCifarPixels);
    double* dst = data.pixels.data() + r * kCifarPixels;
    for (std::size_t i = 0; i < kCifarPixels; ++i) dst[i] = px[i] / 255.0;
  }
  return data;
}

Dataset load_cifar_files(const std::vector<std::string>& paths, CifarKind kind) {
  if (paths.empty()) throw DatasetError("no CIFAR files given");
  Dataset all;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const std::string raw = read_file(paths[i]);
    const auto* p = reinterpret_cast<const std::uint8_t*>(raw.data());
    Dataset part;
    try {
      part = parse_cifar({p, raw.size()}, kind);
    } catch (const DatasetError& e) {
      throw DatasetError(paths[i] + ": " + e.what());
    }
    if (i == 0) {
      all = std::move(part);
    } else {
      all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
      all.pixels.insert(all.pixels.end(), part.pixels.begin(), part.pixels.end());
    }
  }
  return all;
}

std::vector<std::uint8_t> encode_cifar(const Dataset& data, CifarKind kind) {
  if (!(data.shape == TensorShape{3, 32, 32})) throw DatasetError("CIFAR images must be 3x32x32");
  const std::size_t record = kind == CifarKind::kCifar10 ? kCifar10Record : kCifar100Record;
  std::vector<std::uint8_t> out(data.size() * record);
  for (std::size_t r = 0; r < data.size(); ++r) {
    std::uint8_t* rec = out.data() + r * record;
    const auto label = static_cast<std::uint8_t>(data.labels[r]);
    if (kind == CifarKind::kCifar10) {
      rec[0] = label;
    } else {
      rec[0] = static_cast<std::uint8_t>(label / 5);  // coarse label is not modelled
      rec[1] = label;
    }
    const double* src = data.pixels.data() + r * kCifarPixels;
    for (std::size_t i = 0; i < kCifarPixels; ++i) {
      rec[record - kCifarPixels + i] =
          static_cast<std::uint8_t>(std::lround(std::clamp(src[i], 0.0, 1.0) * 255.0));
    }
  }
  return out;
}

ChannelStats channel_stats(const Dataset& data) {
  const int c = data.shape.channels;
  const std::size_t plane = static_cast<std::size_t>(data.shape.height) * data.shape.width;
  ChannelStats stats{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  if (data.size() == 0) throw DatasetError("dataset is empty");
  const double count = static_cast<double>(data.size() * plane);
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (std::size_t n = 0; n < data.size(); ++n) {
      const double* p = data.pixels.data() + (n * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (std::size_t n = 0; n < data.size(); ++n) {
      const double* p = data.pixels.data() + (n * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
    }
    stats.mean[ch] = mean;
    stats.stddev[ch] = std::sqrt(sq / count);
  }
  return stats;
}

void standardize(Dataset& data, const ChannelStats& stats) {
  const int c = data.shape.channels;
  if (static_cast<int>(stats.mean.size()) != c || static_cast<int>(stats.stddev.size()) != c) {
    throw DatasetError("normalization stats do not match channel count");
  }
  const std::size_t plane = static_cast<std::size_t>(data.shape.height) * data.shape.width;
  for (std::size_t n = 0; n < data.size(); ++n) {
    for (int ch = 0; ch < c; ++ch) {
      const double inv = 1.0 / std::max(stats.stddev[ch], 1e-12);
      double* p = data.pixels.data() + (n * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - stats.mean[ch]) * inv;
    }
  }
}

std::string stats_json(const ChannelStats& stats) {
  nlohmann::json j;
  j["mean"] = stats.mean;
  j["std"] = stats.stddev;
  return j.dump(1) + "\n";
}

Dataset seeded_subset(const Dataset& data, std::size_t count, std::uint64_t seed) {
  if (count > data.size()) {
    throw DatasetError("subset of " + std::to_string(count) + " requested from " +
                       std::to_string(data.size()) + " images");
  }
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(mix_seed(seed, 0x5eb5e7ULL));
  shuffle(idx, rng);
  idx.resize(count);
  Dataset out;
  out.shape = data.shape;
  out.classes = data.classes;
  out.source = data.source;
  out.labels = data.labels_of(idx);
  const Tensor px = data.images(idx);
  out.pixels.assign(px.data().begin(), px.data().end());
  return out;
}

Dataset downsample(const Dataset& data, TensorShape target) {
  if (target == data.shape) return data;
  if (target.channels != data.shape.channels || target.height <= 0 || target.width <= 0 ||
      data.shape.height % target.height != 0 || data.shape.width % target.width != 0 ||
      data.shape.height / target.height != data.shape.width / target.width) {
    throw DatasetError("cannot resize images from " + data.shape.to_string() + " to " +
                       target.to_string());
  }
  const int f = data.shape.height / target.height;
  Dataset out;
  out.shape = target;
  out.classes = data.classes;
  out.source = data.source;
  out.labels = data.labels;
  out.pixels.resize(data.size() * static_cast<std::size_t>(target.channels) * target.height *
                    target.width);
  const double norm = 1.0 / (f * f);
  std::size_t o = 0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    for (int c = 0; c < target.channels; ++c) {
      const double* plane =
          data.pixels.data() +
          (n * data.shape.channels + c) * static_cast<std::size_t>(data.shape.height) *
              data.shape.width;
      for (int y = 0; y < target.height; ++y) {
        for (int x = 0; x < target.width; ++x) {
          double s = 0.0;
          for (int dy = 0; dy < f; ++dy) {
            for (int dx = 0; dx < f; ++dx) {
              s += plane[static_cast<std::size_t>(y * f + dy) * data.shape.width + x * f + dx];
            }
          }
          out.pixels[o++] = s * norm;
        }
      }
    }
  }
  return out;
}

Dataset synthetic_cifar(std::size_t count, int classes, std::uint64_t seed,
                        std::uint64_t template_seed) {
  if (classes < 1) throw DatasetError("classes must be positive");
  struct Template {
    double color[3];
    double sign[3];
    double fx, fy;
  };
  std::vector<Template> templates(static_cast<std::size_t>(classes));
  for (int k = 0; k < classes; ++k) {
    Rng t(mix_seed(template_seed, static_cast<std::uint64_t>(k)));
    Template& tp = templates[static_cast<std::size_t>(k)];
    for (int c = 0; c < 3; ++c) {
      tp.color[c] = t.uniform(0.3, 0.7);
      tp.sign[c] = t.bernoulli(0.5) ? 1.0 : -1.0;
    }
    tp.fx = static_cast<double>(t.below(4));
    tp.fy = static_cast<double>(1 + t.below(3));
  }

  constexpr double kTwoPi = 6.283185307179586;
  Dataset data;
  data.shape = {3, 32, 32};
  data.classes = classes;
  data.source = "synthetic";
  data.labels.resize(count);
  data.pixels.resize(count * kCifarPixels);
  Rng rng(mix_seed(seed, 0x5717ULL));
  for (std::size_t n = 0; n < count; ++n) {
    const int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
    data.labels[n] = label;
    const Template& tp = templates[static_cast<std::size_t>(label)];
    const double phase = rng.uniform(0.0, kTwoPi);
    const double amp = rng.uniform(0.1, 0.25);
    double jitter[3];
    for (double& j : jitter) j = rng.uniform(-0.12, 0.12);
    double* dst = data.pixels.data() + n * kCifarPixels;
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) {
          const double wave = std::sin(kTwoPi * (tp.fx * x + tp.fy * y) / 32.0 + phase);
          const double v =
              tp.color[c] + jitter[c] + amp * tp.sign[c] * wave + 0.12 * rng.normal();
          *dst++ = std::clamp(v, 0.0, 1.0);
        }
      }
    }
  }
  return data;
}

std::string encode_dataset(const Dataset& data) {
  data.check();
  std::string out(kMagic);
  put_u32(out, kDatasetVersion);
  put_u64(out, data.size());
  put_u32(out, static_cast<std::uint32_t>(data.shape.channels));
  put_u32(out, static_cast<std::uint32_t>(data.shape.height));
  put_u32(out, static_cast<std::uint32_t>(data.shape.width));
  put_u32(out, static_cast<std::uint32_t>(data.classes));
  for (int l : data.labels) out.push_back(static_cast<char>(l));
  out.reserve(out.size() + data.pixels.size() * 8);
  for (double v : data.pixels) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Dataset decode_dataset(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(kMagic.size()) != kMagic) throw DatasetError("not a dataset file (bad magic)");
  const auto version = static_cast<std::uint32_t>(r.unsigned_le(4));
  if (version != kDatasetVersion) {
    throw DatasetError("unsupported dataset version " + std::to_string(version));
  }
  const std::uint64_t count = r.unsigned_le(8);
  Dataset data;
  data.shape.channels = static_cast<int>(r.unsigned_le(4));
  data.shape.height = static_cast<int>(r.unsigned_le(4));
  data.shape.width = static_cast<int>(r.unsigned_le(4));
  data.classes = static_cast<int>(r.unsigned_le(4));
  if (data.classes > 256) throw DatasetError("class count exceeds one label byte");
  const std::size_t per = data.image_size();
  if (count > bytes.size() || (per != 0 && count * per > bytes.size() / 8)) {
    throw DatasetError("dataset file truncated");
  }
  data.labels.resize(count);
  for (auto& l : data.labels) l = r.byte();
  data.pixels.resize(count * per);
  for (auto& v : data.pixels) v = std::bit_cast<double>(r.unsigned_le(8));
  if (!r.done()) throw DatasetError("trailing bytes after dataset payload");
  data.source = "file";
  data.check();
  return data;
}

void write_dataset(const std::string& path, const Dataset& data) {
  const std::string bytes = encode_dataset(data);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DatasetError("short write to " + path);
}

Dataset read_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

}  // namespace fractal
