#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "that/tensor.hpp"

namespace that {

// Images as rows of [0, 1] pixels in CHW order, with integer labels.
struct Dataset {
  Tensor<float> images;  // [n, channels*height*width]
  std::vector<int> labels;
  std::size_t classes = 0;
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return channels * height * width; }

  // Checks labels in [0, classes) and pixels in [0, 1].
  void validate() const;

  Dataset subset(std::size_t begin, std::size_t end) const;
  Dataset gather(std::span<const std::size_t> rows) const;
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

// IDX containers. Images are either unsigned bytes (magic 0x00000803,
// pixel/255) or big-endian float32 (0x00000D03, stored as is); labels are
// unsigned bytes (0x00000801).
inline constexpr std::uint32_t kIdxUbyteImages = 0x00000803;
inline constexpr std::uint32_t kIdxUbyteLabels = 0x00000801;
inline constexpr std::uint32_t kIdxFloatImages = 0x00000D03;

// Reads an image/label pair. `classes` of 0 means one more than the largest
// label seen.
Dataset parse_idx(const std::string& image_path, const std::string& label_path,
                  std::size_t classes = 0);
Dataset decode_idx(const std::vector<std::uint8_t>& images,
                   const std::vector<std::uint8_t>& labels,
                   std::size_t classes = 0);

// Byte payloads round to the nearest of the 256 levels; float payloads are
// exact.
std::vector<std::uint8_t> encode_idx_images(const Dataset& d, bool as_float);
std::vector<std::uint8_t> encode_idx_labels(const Dataset& d);
void write_idx(const Dataset& d, const std::string& image_path,
               const std::string& label_path, bool as_float);

struct SyntheticConfig {
  std::size_t classes = 10;
  std::size_t dim = 48;
  std::size_t per_class = 150;
  // Distance of every class mean from the centre 0.5 of the cube.
  double radius = 0.25;
  double noise = 0.06;
  std::uint64_t seed = 0;
};

// Gaussian mixture with class means 0.5 + radius * m_c, m_c uniform on the
// unit sphere, isotropic noise, clipped to [0, 1]. Samples are interleaved
// by class; every fifth one goes to the test split.
DatasetSplit gen_synthetic(const SyntheticConfig& cfg);

}  // namespace that
