#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace advrep {

/// Images [n×C×H×W] with integer labels in [0, num_classes).
struct LabeledDataset {
  Tensor images;
  std::vector<int> labels;
  int num_classes = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.shape.at(1); }
  std::size_t height() const { return images.shape.at(2); }
  std::size_t width() const { return images.shape.at(3); }
  Shape sample_shape() const { return {channels(), height(), width()}; }
  std::size_t sample_size() const { return channels() * height() * width(); }

  /// Copy of sample i as a [C×H×W] tensor.
  Tensor sample(std::size_t i) const {
    const std::size_t d = sample_size();
    const auto first = images.data.begin() + static_cast<std::ptrdiff_t>(i * d);
    return Tensor(sample_shape(), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(d)));
  }

  std::span<const double> sample_view(std::size_t i) const {
    const std::size_t d = sample_size();
    return std::span<const double>(images.data).subspan(i * d, d);
  }
};

/// Dataset restricted to the given indices, in that order.
inline LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ArgumentError("empty subset of " + ds.name);
  const std::size_t d = ds.sample_size();
  LabeledDataset out;
  out.images = Tensor({indices.size(), ds.channels(), ds.height(), ds.width()});
  out.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= ds.size()) throw ArgumentError("subset index " + std::to_string(i) + " out of range");
    std::copy_n(ds.images.data.begin() + static_cast<std::ptrdiff_t>(i * d), d,
                out.images.data.begin() + static_cast<std::ptrdiff_t>(k * d));
    out.labels.push_back(ds.labels[i]);
  }
  out.num_classes = ds.num_classes;
  out.name = ds.name;
  return out;
}

/// Contiguous slice [begin, begin+count).
inline LabeledDataset slice(const LabeledDataset& ds, std::size_t begin, std::size_t count) {
  if (begin + count > ds.size())
    throw ArgumentError("slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                        ") exceeds dataset of " + std::to_string(ds.size()));
  std::vector<std::size_t> idx(count);
  for (std::size_t k = 0; k < count; ++k) idx[k] = begin + k;
  return subset(ds, idx);
}

// ---------------------------------------------------------------------------
// IDX files
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(is), {});
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const std::filesystem::path& path) {
  if (off + 4 > b.size()) throw IoError("truncated IDX header in " + path.string());
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

inline void put_be32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  os.write(b, 4);
}

}  // namespace detail

/// Reads an IDX image/label file pair. Pixels stay in [0, 255].
inline LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  if (detail::be32(img, 0, images_path) != kIdxImageMagic)
    throw FormatError("bad IDX image magic in " + images_path.string());
  if (detail::be32(lab, 0, labels_path) != kIdxLabelMagic)
    throw FormatError("bad IDX label magic in " + labels_path.string());
  const std::size_t n = detail::be32(img, 4, images_path);
  const std::size_t rows = detail::be32(img, 8, images_path);
  const std::size_t cols = detail::be32(img, 12, images_path);
  const std::size_t nl = detail::be32(lab, 4, labels_path);
  if (n != nl)
    throw ConsistencyError("image count " + std::to_string(n) + " in " + images_path.string() +
                           " != label count " + std::to_string(nl) + " in " + labels_path.string());
  if (n == 0 || rows == 0 || cols == 0) throw FormatError("empty IDX dataset " + images_path.string());
  if (img.size() < 16 + n * rows * cols) throw IoError("truncated IDX payload in " + images_path.string());
  if (lab.size() < 8 + n) throw IoError("truncated IDX payload in " + labels_path.string());

  LabeledDataset ds;
  ds.images = Tensor({n, 1, rows, cols});
  for (std::size_t i = 0; i < n * rows * cols; ++i) ds.images.data[i] = static_cast<double>(img[16 + i]);
  ds.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = max_label + 1;
  ds.name = images_path.stem().string();
  return ds;
}

/// Writes a single-channel raw dataset (pixels rounded into [0,255]) as IDX.
inline void write_idx(const LabeledDataset& ds, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path) {
  if (ds.channels() != 1) throw DimensionError("IDX export needs single-channel images");
  std::ofstream im(images_path, std::ios::binary);
  std::ofstream lb(labels_path, std::ios::binary);
  if (!im || !lb) throw IoError("cannot write IDX files at " + images_path.string());
  detail::put_be32(im, kIdxImageMagic);
  detail::put_be32(im, static_cast<std::uint32_t>(ds.size()));
  detail::put_be32(im, static_cast<std::uint32_t>(ds.height()));
  detail::put_be32(im, static_cast<std::uint32_t>(ds.width()));
  for (double v : ds.images.data) im.put(static_cast<char>(static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L))));
  detail::put_be32(lb, kIdxLabelMagic);
  detail::put_be32(lb, static_cast<std::uint32_t>(ds.size()));
  for (int y : ds.labels) lb.put(static_cast<char>(y));
  if (!im || !lb) throw IoError("failed writing IDX files at " + images_path.string());
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Placement of an h×w image inside a C×H×W model input.
struct PadSpec {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t inner_height = 0;
  std::size_t inner_width = 0;
  /// Top-left corner of the inner image; centered when unset.
  std::optional<std::pair<std::size_t, std::size_t>> offset;

  std::size_t top() const { return offset ? offset->first : (height - inner_height) / 2; }
  std::size_t left() const { return offset ? offset->second : (width - inner_width) / 2; }

  void validate() const {
    if (!channels || !height || !width || !inner_height || !inner_width)
      throw DimensionError("pad spec extents must be positive");
    if (inner_height > height || inner_width > width)
      throw DimensionError("inner image " + std::to_string(inner_height) + "x" + std::to_string(inner_width) +
                           " larger than target " + std::to_string(height) + "x" + std::to_string(width));
    if (top() + inner_height > height || left() + inner_width > width)
      throw DimensionError("inner image offset places it outside the target");
  }
};

/// Maps raw [0,255] pixels linearly onto [-1,1], embeds each image in a zero
/// field of the target size and replicates grayscale across channels.
inline LabeledDataset preprocess(const LabeledDataset& ds, const PadSpec& spec) {
  spec.validate();
  if (ds.height() > spec.height || ds.width() > spec.width)
    throw DimensionError("image " + std::to_string(ds.height()) + "x" + std::to_string(ds.width()) +
                         " larger than target " + std::to_string(spec.height) + "x" + std::to_string(spec.width));
  if (ds.height() != spec.inner_height || ds.width() != spec.inner_width)
    throw DimensionError("dataset images are " + std::to_string(ds.height()) + "x" + std::to_string(ds.width()) +
                         " but pad spec expects " + std::to_string(spec.inner_height) + "x" +
                         std::to_string(spec.inner_width));
  if (ds.channels() != 1 && ds.channels() != spec.channels)
    throw DimensionError("cannot map " + std::to_string(ds.channels()) + " channels onto " +
                         std::to_string(spec.channels));
  const std::size_t n = ds.size(), C = spec.channels, H = spec.height, W = spec.width;
  const std::size_t h = ds.height(), w = ds.width(), top = spec.top(), left = spec.left();
  LabeledDataset out;
  out.images = Tensor({n, C, H, W});
  out.labels = ds.labels;
  out.num_classes = ds.num_classes;
  out.name = ds.name;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t src_c = ds.channels() == 1 ? 0 : c;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double raw = ds.images.data[((i * ds.channels() + src_c) * h + y) * w + x];
          out.images.data[((i * C + c) * H + top + y) * W + left + x] = raw / 127.5 - 1.0;
        }
    }
  return out;
}

/// Per-channel mean and population standard deviation over all samples and pixels.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

inline ChannelStats channel_stats(const LabeledDataset& ds) {
  const std::size_t C = ds.channels(), plane = ds.height() * ds.width();
  ChannelStats st{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  const double count = static_cast<double>(ds.size() * plane);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      for (std::size_t p = 0; p < plane; ++p) s += ds.images.data[(i * C + c) * plane + p];
    const double m = s / count;
    double v = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      for (std::size_t p = 0; p < plane; ++p) {
        const double d = ds.images.data[(i * C + c) * plane + p] - m;
        v += d * d;
      }
    st.mean[c] = m;
    st.stddev[c] = std::sqrt(v / count);
    if (!(st.stddev[c] > 0.0)) st.stddev[c] = 1.0;
  }
  return st;
}

// ---------------------------------------------------------------------------
// Synthetic target domain
// ---------------------------------------------------------------------------

struct SynthOptions {
  int num_classes = 10;
  std::size_t per_class = 100;
  std::size_t height = 28;
  std::size_t width = 28;
  /// Peak stroke value in raw [0,255] units.
  double intensity = 90.0;
  /// Standard deviation of additive pixel noise, in raw [0,255] units.
  double noise = 10.0;
  /// Maximum absolute translation in pixels (uniform integer per axis).
  int max_shift = 1;
};

namespace detail {

inline void draw_segment(std::vector<double>& img, std::size_t h, std::size_t w, double x0, double y0, double x1,
                         double y1, int thickness) {
  constexpr int kSteps = 80;
  for (int s = 0; s < kSteps; ++s) {
    const double t = static_cast<double>(s) / (kSteps - 1);
    const long cx = std::lround(x0 + (x1 - x0) * t);
    const long cy = std::lround(y0 + (y1 - y0) * t);
    for (long dy = -thickness; dy <= thickness; ++dy)
      for (long dx = -thickness; dx <= thickness; ++dx) {
        const long yy = cy + dy, xx = cx + dx;
        if (yy >= 0 && xx >= 0 && yy < static_cast<long>(h) && xx < static_cast<long>(w))
          img[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)] = 255.0;
      }
  }
}

}  // namespace detail

/// Seven-segment codes (segments a..g) for the ten glyph classes.
inline constexpr std::array<const char*, 10> kSegmentCodes = {"abcdef", "bc",     "abged", "abgcd", "fgbc",
                                                               "afgcd",  "afgedc", "abc",   "abcdefg", "abcdfg"};

/// Noise-free class templates, raw values in {0, intensity}, one h×w image
/// per class.
inline std::vector<std::vector<double>> glyph_templates(const SynthOptions& opt) {
  if (opt.num_classes < 1 || opt.num_classes > static_cast<int>(kSegmentCodes.size()))
    throw ArgumentError("synthetic glyphs support 1..10 classes");
  if (opt.height < 8 || opt.width < 8) throw DimensionError("synthetic glyphs need at least 8x8 pixels");
  const double h = static_cast<double>(opt.height), w = static_cast<double>(opt.width);
  const double mx = opt.width >= 28 ? 0.3 : 0.2, my = opt.height >= 28 ? 0.2 : 0.1;
  const double left = mx * w, right = (1 - mx) * w, top = my * h, mid = 0.5 * h, bottom = (1 - my) * h;
  auto ends = [&](char seg) -> std::array<double, 4> {
    switch (seg) {
      case 'a': return {left, top, right, top};
      case 'b': return {right, top, right, mid};
      case 'c': return {right, mid, right, bottom};
      case 'd': return {left, bottom, right, bottom};
      case 'e': return {left, mid, left, bottom};
      case 'f': return {left, top, left, mid};
      default: return {left, mid, right, mid};  // 'g'
    }
  };
  std::vector<std::vector<double>> out;
  for (int c = 0; c < opt.num_classes; ++c) {
    std::vector<double> img(opt.height * opt.width, 0.0);
    for (const char* seg = kSegmentCodes[static_cast<std::size_t>(c)]; *seg; ++seg) {
      const auto e = ends(*seg);
      detail::draw_segment(img, opt.height, opt.width, e[0], e[1], e[2], e[3], 1);
    }
    for (double& v : img) v *= opt.intensity / 255.0;
    out.push_back(std::move(img));
  }
  return out;
}

/// Deterministic class-conditional glyph images; sample i has class i mod K.
/// Each sample is its class template shifted by a seeded offset (zero fill),
/// plus seeded Gaussian noise, clipped to [0,255].
inline LabeledDataset synth_target_dataset(std::uint64_t seed, const SynthOptions& opt) {
  if (opt.per_class < 1) throw ArgumentError("per_class must be >= 1");
  if (opt.max_shift < 0 || opt.noise < 0.0 || opt.intensity < 0.0 || opt.intensity > 255.0)
    throw ArgumentError("invalid synthetic dataset options");
  const auto templates = glyph_templates(opt);
  const std::size_t k = templates.size(), h = opt.height, w = opt.width, n = opt.per_class * k;
  LabeledDataset ds;
  ds.images = Tensor({n, 1, h, w});
  ds.labels.resize(n);
  ds.num_classes = opt.num_classes;
  ds.name = "synth-glyphs";
  Rng rng = Rng::derive(seed, {0x5e7a11ULL});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % k;
    ds.labels[i] = static_cast<int>(c);
    const long dx = rng.between(-opt.max_shift, opt.max_shift);
    const long dy = rng.between(-opt.max_shift, opt.max_shift);
    double* out = ds.images.data.data() + i * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const long sy = static_cast<long>(y) - dy, sx = static_cast<long>(x) - dx;
        const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<long>(h) && sx < static_cast<long>(w);
        double v = inside ? templates[c][static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)] : 0.0;
        if (opt.noise > 0.0) v += opt.noise * rng.normal();
        out[y * w + x] = std::clamp(v, 0.0, 255.0);
      }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Shuffled full batches for one epoch; the permutation depends only on
/// (seed, epoch) and the trailing remainder is dropped.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                          std::uint64_t epoch) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (batch_size > n)
    throw ConfigError("batch size " + std::to_string(batch_size) + " exceeds dataset size " + std::to_string(n));
  Rng rng = Rng::derive(seed, {0xba7c4ULL, epoch});
  const auto perm = rng.permutation(n);
  std::vector<std::vector<std::size_t>> batches(n / batch_size);
  for (std::size_t b = 0; b < batches.size(); ++b)
    batches[b].assign(perm.begin() + static_cast<std::ptrdiff_t>(b * batch_size),
                      perm.begin() + static_cast<std::ptrdiff_t>((b + 1) * batch_size));
  return batches;
}

}  // namespace advrep
