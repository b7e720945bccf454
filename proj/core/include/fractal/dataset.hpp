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

#ifndef FRACTAL_DATASET_HPP_
#define FRACTAL_DATASET_HPP_

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fractal/graph_ir.hpp"
#include "fractal/tensor.hpp"

namespace fractal {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Labelled images held as float64 NCHW.
struct Dataset {
  TensorShape shape{3, 32, 32};  // per image
  int classes = 10;
  std::vector<int> labels;
  std::vector<double> pixels;
  std::string source;  // free-form provenance ("cifar10", "synthetic", ...)

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const {
    return static_cast<std::size_t>(shape.channels) * shape.height * shape.width;
  }
  /// (indices.size(), C, H, W) tensor of the chosen images.
  Tensor images(std::span<const std::size_t> indices) const;
  Tensor all_images() const;
  std::vector<int> labels_of(std::span<const std::size_t> indices) const;
  void check() const;
};

// CIFAR binary records: label byte(s) then 3072 plane-major pixel bytes.
inline constexpr std::size_t kCifarPixels = 3072;
inline constexpr std::size_t kCifar10Record = 1 + kCifarPixels;
inline constexpr std::size_t kCifar100Record = 2 + kCifarPixels;

enum class CifarKind { kCifar10, kCifar100 };

/// Parses concatenated records; pixels are scaled to [0,1]. CIFAR-100 uses
/// the fine label. Throws DatasetError on truncation or out-of-range labels.
Dataset parse_cifar(std::span<const std::uint8_t> bytes, CifarKind kind);
Dataset load_cifar_files(const std::vector<std::string>& paths, CifarKind kind);

/// Inverse of parse_cifar for images in [0,1] (rounded to bytes).
std::vector<std::uint8_t> encode_cifar(const Dataset& data, CifarKind kind);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

ChannelStats channel_stats(const Dataset& data);
void standardize(Dataset& data, const ChannelStats& stats);
std::string stats_json(const ChannelStats& stats);

/// First `count` images after a seeded shuffle; throws when count exceeds
/// the dataset size.
Dataset seeded_subset(const Dataset& data, std::size_t count, std::uint64_t seed);

/// Average-pools every image by an integer factor to `target`.
Dataset downsample(const Dataset& data, TensorShape target);

/// Class-structured stand-in for CIFAR-10 when the real files are absent:
/// each class has a fixed colour/orientation template plus seeded noise.
/// Pixels are in [0,1].
Dataset synthetic_cifar(std::size_t count, int classes, std::uint64_t seed,
                        std::uint64_t template_seed = 7);

// Internal format: "FRCTDSET", u32 version, u64 count, u32 C, H, W, u32
// classes, count label bytes, count*C*H*W little-endian float64.
inline constexpr std::uint32_t kDatasetVersion = 1;
std::string encode_dataset(const Dataset& data);
Dataset decode_dataset(std::string_view bytes);
void write_dataset(const std::string& path, const Dataset& data);
Dataset read_dataset(const std::string& path);

}  // namespace fractal

#endif  // FRACTAL_DATASET_HPP_
