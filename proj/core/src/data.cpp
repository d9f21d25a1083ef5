// SPDX-License-Identifier: Apache-2.0
#include "leafnet/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <numbers>
#include <set>

#include "leafnet/error.hpp"
#include "leafnet/parallel.hpp"
#include "leafnet/random.hpp"

namespace leafnet {

namespace fs = std::filesystem;

namespace {

constexpr const char* kSplits[] = {"train", "test"};

std::string fold_case(const std::string& s) {
  std::string out = s;
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Bilinear sample of one channel plane at continuous pixel coordinates
// (pixel centers at integer positions); out-of-range coordinates replicate
// the nearest edge.
double sample_bilinear(const double* plane, std::size_t h, std::size_t w, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  const double top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
  const double bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
  return top * (1.0 - fy) + bottom * fy;
}

// Resamples every channel through an inverse map (output pixel -> source pixel).
template <class Map>
std::vector<double> remap(const std::vector<double>& src, std::size_t c, std::size_t h, std::size_t w,
                          Map&& inverse) {
  std::vector<double> dst(src.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const auto [sy, sx] = inverse(static_cast<double>(y), static_cast<double>(x));
      for (std::size_t ch = 0; ch < c; ++ch) {
        dst[(ch * h + y) * w + x] = sample_bilinear(src.data() + ch * h * w, h, w, sy, sx);
      }
    }
  }
  return dst;
}

std::vector<double> image_values(const LabeledImage& img) { return img.pixels.to_vector(); }

LabeledImage with_values(const LabeledImage& like, std::vector<double> values) {
  LabeledImage out;
  for (auto& v : values) v = clamp01(v);
  out.pixels = Tensor::from_values(like.pixels.shape(), values, like.pixels.dtype());
  out.label = like.label;
  out.id = like.id;
  return out;
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int sector = static_cast<int>(std::floor(hh)) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

}  // namespace

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(class_names.size(), 0);
  for (const auto& s : samples) {
    require(s.label < counts.size(), ErrorCode::LabelOutOfRange, "sample label exceeds class count");
    ++counts[s.label];
  }
  return counts;
}

DatasetManifest scan_dataset(const fs::path& root) {
  DatasetManifest manifest;
  manifest.root = root;

  std::error_code ec;
  std::set<std::string> names;
  for (const char* split : kSplits) {
    const fs::path dir = root / split;
    if (!fs::is_directory(dir, ec)) continue;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_directory()) names.insert(entry.path().filename().string());
    }
  }
  require(!names.empty(), ErrorCode::EmptyDataset, "no class directories under " + root.string());

  // Names that differ only by case would land in one directory on
  // case-insensitive file systems.
  std::set<std::string> folded;
  for (const auto& n : names) {
    require(folded.insert(fold_case(n)).second, ErrorCode::DuplicateClassName, "duplicate class name: " + n);
  }
  manifest.class_names.assign(names.begin(), names.end());

  std::size_t total = 0;
  for (const char* split : kSplits) {
    const fs::path dir = root / split;
    if (!fs::is_directory(dir, ec)) continue;
    SplitListing listing;
    listing.counts.assign(manifest.class_names.size(), 0);
    for (std::size_t k = 0; k < manifest.class_names.size(); ++k) {
      const fs::path class_dir = dir / manifest.class_names[k];
      if (!fs::is_directory(class_dir, ec)) continue;
      std::vector<fs::path> files;
      for (const auto& entry : fs::directory_iterator(class_dir)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        const ImageFormat fmt = sniff_format(f);
        if (fmt == ImageFormat::Unknown || (fmt == ImageFormat::Jpeg && !jpeg_supported())) {
          manifest.unreadable.push_back({f, fmt == ImageFormat::Unknown ? "unrecognized format"
                                                                         : "JPEG support not built"});
          continue;
        }
        listing.files.push_back({f, k});
        ++listing.counts[k];
      }
    }
    total += listing.files.size();
    manifest.splits.emplace(split, std::move(listing));
  }
  require(total > 0, ErrorCode::EmptyDataset, "no readable images under " + root.string());
  require(manifest.class_names.size() >= 2, ErrorCode::EmptyDataset, "at least two classes are required");
  return manifest;
}

std::vector<double> resize_bilinear(const std::vector<double>& src, std::size_t channels, std::size_t in_h,
                                    std::size_t in_w, std::size_t out_h, std::size_t out_w) {
  require(src.size() == channels * in_h * in_w, ErrorCode::InvalidShape, "resize: buffer size mismatch");
  if (in_h == out_h && in_w == out_w) return src;
  const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
  std::vector<double> dst(channels * out_h * out_w);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const double* plane = src.data() + ch * in_h * in_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
      for (std::size_t x = 0; x < out_w; ++x) {
        const double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
        dst[(ch * out_h + y) * out_w + x] = sample_bilinear(plane, in_h, in_w, fy, fx);
      }
    }
  }
  return dst;
}

LabeledImage image_from_raw(const RawImage& raw, std::size_t height, std::size_t width, DType dtype) {
  require(height > 0 && width > 0, ErrorCode::InvalidArgument, "target size must be positive");
  require(raw.channels >= 1 && raw.channels <= 4, ErrorCode::DecodeFailure, "unsupported channel count");
  require(raw.pixels.size() == raw.height * raw.width * raw.channels, ErrorCode::DecodeFailure,
          "pixel buffer size mismatch");
  const std::size_t plane = raw.height * raw.width;
  std::vector<double> planar(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      // Gray (+alpha) replicates the first channel; alpha is dropped.
      const std::size_t src_ch = raw.channels >= 3 ? ch : 0;
      planar[ch * plane + i] = static_cast<double>(raw.pixels[i * raw.channels + src_ch]);
    }
  }
  auto resized = resize_bilinear(planar, 3, raw.height, raw.width, height, width);
  for (auto& v : resized) v = clamp01(v / 255.0);
  LabeledImage out;
  out.pixels = Tensor::from_values({3, height, width}, resized, dtype);
  return out;
}

LabeledImage load_image(const fs::path& path, std::size_t height, std::size_t width, DType dtype) {
  LabeledImage img = image_from_raw(read_image(path), height, width, dtype);
  img.id = path.string();
  return img;
}

Dataset load_split(const DatasetManifest& manifest, const std::string& split, std::size_t height,
                   std::size_t width, DType dtype) {
  auto it = manifest.splits.find(split);
  require(it != manifest.splits.end() && !it->second.files.empty(), ErrorCode::EmptyDataset,
          "split '" + split + "' has no images");
  Dataset data;
  data.class_names = manifest.class_names;
  const auto& files = it->second.files;
  data.samples.resize(files.size());
  parallel_for(files.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      data.samples[i] = load_image(files[i].path, height, width, dtype);
      data.samples[i].label = files[i].label;
      data.samples[i].id = fs::relative(files[i].path, manifest.root).generic_string();
    }
  });
  return data;
}

void write_dataset_tree(const Dataset& data, const fs::path& root, const std::string& split) {
  std::vector<std::size_t> next(data.class_count(), 0);
  for (const auto& s : data.samples) {
    require(s.label < data.class_count(), ErrorCode::LabelOutOfRange, "sample label exceeds class count");
    const auto& shape = s.pixels.shape();
    require(shape.size() == 3 && shape[0] == 3, ErrorCode::InvalidShape, "expected [3 x H x W] pixels");
    const fs::path dir = root / split / data.class_names[s.label];
    fs::create_directories(dir);
    RawImage raw;
    raw.height = shape[1];
    raw.width = shape[2];
    raw.channels = 3;
    raw.pixels.resize(raw.height * raw.width * 3);
    const auto v = s.pixels.to_vector();
    const std::size_t plane = raw.height * raw.width;
    for (std::size_t i = 0; i < plane; ++i) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        raw.pixels[i * 3 + ch] = static_cast<std::uint8_t>(std::lround(clamp01(v[ch * plane + i]) * 255.0));
      }
    }
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.pdimg", next[s.label]++);
    write_pdimg(dir / name, raw);
  }
}

void AugmentConfig::validate() const {
  require(rotation_degrees >= 0.0, ErrorCode::InvalidArgument, "rotation range must be non-negative");
  require(flip_probability >= 0.0 && flip_probability <= 1.0, ErrorCode::InvalidArgument,
          "flip probability must be in [0, 1]");
  require(zoom_min > 0.0 && zoom_min <= zoom_max, ErrorCode::InvalidArgument, "zoom range must be 0 < min <= max");
  require(contrast_min >= 0.0 && contrast_min <= contrast_max, ErrorCode::InvalidArgument,
          "contrast range must be 0 <= min <= max");
}

std::uint64_t augment_seed(std::uint64_t dataset_seed, std::size_t epoch, std::size_t sample_index) {
  return derive_seed(dataset_seed, {epoch, sample_index});
}

AugmentDraw draw_augment(const AugmentConfig& cfg, std::uint64_t sample_seed) {
  cfg.validate();
  Rng rng(sample_seed);
  // Draw order is part of the reproducibility contract.
  AugmentDraw d;
  d.angle_degrees = rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees);
  d.flip = rng.bernoulli(cfg.flip_probability);
  d.zoom = rng.uniform(cfg.zoom_min, cfg.zoom_max);
  d.contrast = rng.uniform(cfg.contrast_min, cfg.contrast_max);
  return d;
}

LabeledImage apply_augment(const LabeledImage& img, const AugmentDraw& draw) {
  const auto& shape = img.pixels.shape();
  require(shape.size() == 3, ErrorCode::InvalidShape, "augment expects [C x H x W]");
  const std::size_t c = shape[0], h = shape[1], w = shape[2];
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  auto v = image_values(img);

  if (draw.angle_degrees != 0.0) {
    const double a = draw.angle_degrees * std::numbers::pi / 180.0;
    const double ca = std::cos(a), sa = std::sin(a);
    v = remap(v, c, h, w, [&](double y, double x) {
      const double dy = y - cy, dx = x - cx;
      return std::pair{cy + ca * dy - sa * dx, cx + sa * dy + ca * dx};
    });
  }
  if (draw.flip) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        double* row = v.data() + (ch * h + y) * w;
        std::reverse(row, row + w);
      }
    }
  }
  if (draw.zoom != 1.0) {
    // z > 1 magnifies the center (crop-and-resize); z < 1 shrinks the image
    // and fills the border by edge replication.
    const double inv = 1.0 / draw.zoom;
    v = remap(v, c, h, w, [&](double y, double x) {
      return std::pair{cy + (y - cy) * inv, cx + (x - cx) * inv};
    });
  }
  if (draw.contrast != 1.0) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    for (auto& x : v) x = mean + draw.contrast * (x - mean);
  }
  return with_values(img, std::move(v));
}

LabeledImage augment(const LabeledImage& img, const AugmentConfig& cfg, std::uint64_t sample_seed) {
  if (!cfg.enabled) return img;
  return apply_augment(img, draw_augment(cfg, sample_seed));
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t epoch, bool shuffle) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (!shuffle) return order;
  Rng rng(derive_seed(seed, {0x5348554646ULL, epoch}));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

BatchStream::BatchStream(const Dataset& data, BatchOptions options) : data_(data), options_(std::move(options)) {
  require(options_.batch_size >= 1, ErrorCode::InvalidArgument, "batch size must be at least 1");
  require(options_.prefetch_chunk >= 1, ErrorCode::InvalidArgument, "prefetch chunk must be at least 1");
  if (options_.augment) options_.augment->validate();
  order_ = epoch_permutation(data_.size(), options_.seed, options_.epoch, options_.shuffle);
  ready_.resize(order_.size());
}

std::size_t BatchStream::batch_count() const {
  return (order_.size() + options_.batch_size - 1) / options_.batch_size;
}

void BatchStream::prefetch() {
  const std::size_t begin = prefetched_;
  const std::size_t end = std::min(order_.size(), begin + options_.prefetch_chunk);
  parallel_for(end - begin, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = begin + b; i < begin + e; ++i) {
      const std::size_t idx = order_[i];
      const LabeledImage& src = data_.samples[idx];
      Tensor px = src.pixels;
      if (options_.augment && options_.augment->enabled) {
        // Seeded by dataset position, not batch position, so draws do not
        // depend on shuffling, chunking or worker count.
        px = augment(src, *options_.augment, augment_seed(options_.seed, options_.epoch, idx)).pixels;
      }
      ready_[i] = px.dtype() == options_.dtype ? px : px.to(options_.dtype);
    }
  });
  prefetched_ = end;
}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), cursor_ + options_.batch_size);
  while (prefetched_ < end) prefetch();

  const Shape item = ready_[cursor_].shape();
  Shape shape{end - cursor_};
  shape.insert(shape.end(), item.begin(), item.end());
  const std::size_t per = shape_numel(item);

  Batch batch;
  batch.images = Tensor::zeros(shape, options_.dtype);
  visit_dtype(options_.dtype, [&](auto tag) {
    using T = decltype(tag);
    auto dst = batch.images.template mutable_values<T>();
    for (std::size_t i = cursor_; i < end; ++i) {
      require(ready_[i].shape() == item, ErrorCode::ShapeMismatch, "dataset images differ in shape");
      auto src = ready_[i].template values<T>();
      std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>((i - cursor_) * per));
      batch.labels.push_back(data_.samples[order_[i]].label);
      batch.indices.push_back(order_[i]);
      ready_[i] = Tensor();
    }
  });
  cursor_ = end;
  return batch;
}

std::vector<Batch> batches(const Dataset& data, const BatchOptions& options) {
  BatchStream stream(data, options);
  std::vector<Batch> out;
  while (auto b = stream.next()) out.push_back(std::move(*b));
  return out;
}

Dataset synth_dataset(std::size_t classes, std::size_t per_class, std::size_t height, std::size_t width,
                      std::uint64_t seed, const SynthOptions& options, DType dtype) {
  require(classes >= 2, ErrorCode::InvalidArgument, "synthetic dataset needs at least 2 classes");
  require(per_class >= 4, ErrorCode::InvalidArgument, "synthetic dataset needs at least 4 samples per class");
  require(height > 0 && width > 0, ErrorCode::InvalidArgument, "image size must be positive");

  Dataset data;
  const std::size_t digits = std::to_string(classes - 1).size();
  for (std::size_t k = 0; k < classes; ++k) {
    std::string idx = std::to_string(k);
    data.class_names.push_back("class_" + std::string(digits - idx.size(), '0') + idx);
  }

  // A variant keeps the same family of patterns but shifts orientation and
  // hue and lowers saturation, so color alone separates classes less well.
  const double shift = options.variant == 0 ? 0.0 : 0.5 + 0.17 * static_cast<double>(options.variant);
  const double saturation = options.variant == 0 ? 0.65 : 0.35;
  const std::size_t plane = height * width;

  data.samples.resize(classes * per_class);
  for (std::size_t k = 0; k < classes; ++k) {
    const double kk = static_cast<double>(k) + shift;
    const double theta = std::numbers::pi * kk / static_cast<double>(classes);
    const double cycles = 1.5 + static_cast<double>((k + options.variant) % 3);
    const auto hue = hsv_to_rgb(kk / static_cast<double>(classes), saturation, 1.0);
    for (std::size_t i = 0; i < per_class; ++i) {
      Rng rng(derive_seed(seed, {options.variant, k, i}));
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      std::vector<double> px(3 * plane);
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(width) - 0.5;
          const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(height) - 0.5;
          const double t = u * std::cos(theta) + v * std::sin(theta);
          const double g = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * cycles * t + phase);
          for (std::size_t ch = 0; ch < 3; ++ch) {
            px[ch * plane + y * width + x] = hue[ch] * (0.25 + 0.6 * g);
          }
        }
      }
      for (auto& p : px) p = clamp01(p + rng.normal(0.0, options.noise_sigma));
      LabeledImage& s = data.samples[k * per_class + i];
      s.pixels = Tensor::from_values({3, height, width}, px, dtype);
      s.label = k;
      s.id = data.class_names[k] + "/" + std::to_string(i);
    }
  }
  return data;
}

}  // namespace leafnet
