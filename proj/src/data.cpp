#include "that/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "that/checkpoint.hpp"
#include "that/rng.hpp"

namespace that {

void Dataset::validate() const {
  require(images.rank() == 2 && images.rows() == labels.size(),
          ErrorCode::count_mismatch, "dataset: image and label counts differ");
  require(images.cols() == dim(), ErrorCode::shape_mismatch,
          "dataset: row width does not match channels*height*width");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      fail(ErrorCode::invalid_label, "dataset: label out of range");
  }
  for (float v : images.data()) {
    if (!(v >= 0.0F && v <= 1.0F))
      fail(ErrorCode::invalid_argument, "dataset: pixel outside [0, 1]");
  }
}

Dataset Dataset::subset(std::size_t begin, std::size_t end) const {
  Dataset d = *this;
  d.images = images.slice_rows(begin, end);
  d.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                  labels.begin() + static_cast<std::ptrdiff_t>(end));
  return d;
}

Dataset Dataset::gather(std::span<const std::size_t> rows) const {
  Dataset d;
  d.classes = classes;
  d.channels = channels;
  d.height = height;
  d.width = width;
  d.images = Tensor<float>(Shape{rows.size(), dim()});
  d.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = images.row(rows[i]);
    std::copy(src.begin(), src.end(), d.images.row(i).begin());
    d.labels.push_back(labels[rows[i]]);
  }
  return d;
}

namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  if (at + 4 > b.size()) fail(ErrorCode::truncated_file, "idx: truncated header");
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 24));
  b.push_back(static_cast<std::uint8_t>(v >> 16));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

Dataset decode_idx(const std::vector<std::uint8_t>& images,
                   const std::vector<std::uint8_t>& labels,
                   std::size_t classes) {
  const std::uint32_t im = read_be32(images, 0);
  if (im != kIdxUbyteImages && im != kIdxFloatImages)
    fail(ErrorCode::bad_magic, "idx: not an image file");
  if (read_be32(labels, 0) != kIdxUbyteLabels)
    fail(ErrorCode::bad_magic, "idx: not a label file");

  const std::size_t n = read_be32(images, 4);
  const std::size_t h = read_be32(images, 8);
  const std::size_t w = read_be32(images, 12);
  const std::size_t nl = read_be32(labels, 4);
  if (n != nl) fail(ErrorCode::count_mismatch, "idx: image and label counts differ");
  require(n > 0 && h > 0 && w > 0, ErrorCode::format, "idx: empty dimension");

  const std::size_t elem = im == kIdxFloatImages ? 4 : 1;
  const std::size_t want = 16 + n * h * w * elem;
  if (images.size() < want) fail(ErrorCode::truncated_file, "idx: image payload truncated");
  if (labels.size() < 8 + n) fail(ErrorCode::truncated_file, "idx: label payload truncated");
  require(images.size() == want && labels.size() == 8 + n, ErrorCode::format,
          "idx: trailing bytes");

  Dataset d;
  d.height = h;
  d.width = w;
  d.images = Tensor<float>(Shape{n, h * w});
  const std::uint8_t* p = images.data() + 16;
  for (std::size_t i = 0; i < n * h * w; ++i) {
    if (elem == 1) {
      d.images[i] = static_cast<float>(p[i]) / 255.0F;
    } else {
      const std::uint32_t bits = (std::uint32_t{p[4 * i]} << 24) |
                                 (std::uint32_t{p[4 * i + 1]} << 16) |
                                 (std::uint32_t{p[4 * i + 2]} << 8) |
                                 std::uint32_t{p[4 * i + 3]};
      d.images[i] = std::bit_cast<float>(bits);
    }
  }
  int top = 0;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = labels[8 + i];
    top = std::max(top, d.labels[i]);
  }
  d.classes = classes == 0 ? static_cast<std::size_t>(top) + 1 : classes;
  d.validate();
  return d;
}

Dataset parse_idx(const std::string& image_path, const std::string& label_path,
                  std::size_t classes) {
  return decode_idx(read_file(image_path), read_file(label_path), classes);
}

std::vector<std::uint8_t> encode_idx_images(const Dataset& d, bool as_float) {
  require(d.channels == 1, ErrorCode::invalid_argument,
          "idx: only single-channel images are supported");
  std::vector<std::uint8_t> b;
  b.reserve(16 + d.images.size() * (as_float ? 4 : 1));
  put_be32(b, as_float ? kIdxFloatImages : kIdxUbyteImages);
  put_be32(b, static_cast<std::uint32_t>(d.size()));
  put_be32(b, static_cast<std::uint32_t>(d.height));
  put_be32(b, static_cast<std::uint32_t>(d.width));
  for (float v : d.images.data()) {
    if (as_float) {
      put_be32(b, std::bit_cast<std::uint32_t>(v));
    } else {
      const float c = std::clamp(v, 0.0F, 1.0F);
      b.push_back(static_cast<std::uint8_t>(std::lround(c * 255.0F)));
    }
  }
  return b;
}

std::vector<std::uint8_t> encode_idx_labels(const Dataset& d) {
  std::vector<std::uint8_t> b;
  b.reserve(8 + d.size());
  put_be32(b, kIdxUbyteLabels);
  put_be32(b, static_cast<std::uint32_t>(d.size()));
  for (int y : d.labels) {
    require(y >= 0 && y < 256, ErrorCode::invalid_label,
            "idx: labels must fit in a byte");
    b.push_back(static_cast<std::uint8_t>(y));
  }
  return b;
}

void write_idx(const Dataset& d, const std::string& image_path,
               const std::string& label_path, bool as_float) {
  write_file_atomic(image_path, encode_idx_images(d, as_float));
  write_file_atomic(label_path, encode_idx_labels(d));
}

DatasetSplit gen_synthetic(const SyntheticConfig& cfg) {
  require(cfg.classes >= 2 && cfg.dim >= 1 && cfg.per_class >= 5,
          ErrorCode::config, "synthetic: need >= 2 classes and >= 5 per class");
  require(cfg.radius > 0.0 && cfg.noise >= 0.0, ErrorCode::config,
          "synthetic: radius must be positive and noise non-negative");
  Rng rng(derive_seed(cfg.seed, 0x5eed));
  Tensor<double> means(Shape{cfg.classes, cfg.dim});
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    double n = 0.0;
    for (auto& m : means.row(c)) {
      m = rng.normal();
      n += m * m;
    }
    n = std::sqrt(n);
    for (auto& m : means.row(c)) m = 0.5 + cfg.radius * m / n;
  }

  const std::size_t total = cfg.classes * cfg.per_class;
  Dataset all;
  all.classes = cfg.classes;
  all.width = cfg.dim;
  all.images = Tensor<float>(Shape{total, cfg.dim});
  all.labels.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t c = i % cfg.classes;
    all.labels[i] = static_cast<int>(c);
    auto row = all.images.row(i);
    for (std::size_t k = 0; k < cfg.dim; ++k) {
      const double v = means.at(c, k) + cfg.noise * rng.normal();
      row[k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }

  std::vector<std::size_t> train_rows, test_rows;
  for (std::size_t i = 0; i < total; ++i) {
    // Stride over whole class rounds so both splits stay balanced.
    ((i / cfg.classes) % 5 == 4 ? test_rows : train_rows).push_back(i);
  }
  return {all.gather(train_rows), all.gather(test_rows)};
}

}  // namespace that
