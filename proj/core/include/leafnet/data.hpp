// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "leafnet/image_io.hpp"
#include "leafnet/tensor.hpp"

namespace leafnet {

/// Pixels are [3 x H x W] in [0, 1].
struct LabeledImage {
  Tensor pixels;
  std::size_t label = 0;
  std::string id;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<LabeledImage> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::size_t class_count() const { return class_names.size(); }
  std::vector<std::size_t> class_counts() const;
};

struct ManifestEntry {
  std::filesystem::path path;
  std::size_t label = 0;
};

struct SplitListing {
  std::vector<std::size_t> counts;  // per class
  std::vector<ManifestEntry> files;
};

struct UnreadableFile {
  std::filesystem::path path;
  std::string reason;
};

/// Contents of a `root/{train,test}/<class>/<image>` tree. Class indices
/// follow the lexicographically sorted union of class directory names.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> class_names;
  std::map<std::string, SplitListing> splits;  // "train" and/or "test"
  std::vector<UnreadableFile> unreadable;

  bool has_split(const std::string& split) const { return splits.count(split) > 0; }
};

DatasetManifest scan_dataset(const std::filesystem::path& root);

/// Bilinear resize with half-pixel centers and edge clamping; channel-planar
/// [C x H x W] buffers of doubles.
std::vector<double> resize_bilinear(const std::vector<double>& src, std::size_t channels, std::size_t in_h,
                                    std::size_t in_w, std::size_t out_h, std::size_t out_w);

/// Decodes to RGB (gray replicated, alpha dropped), resizes to target,
/// scales by 1/255.
LabeledImage image_from_raw(const RawImage& raw, std::size_t height, std::size_t width, DType dtype = DType::F32);
LabeledImage load_image(const std::filesystem::path& path, std::size_t height, std::size_t width,
                        DType dtype = DType::F32);

/// Loads one split of a scanned tree into memory.
Dataset load_split(const DatasetManifest& manifest, const std::string& split, std::size_t height,
                   std::size_t width, DType dtype = DType::F32);

/// Writes a dataset as PDIMG files under root/split/<class>/.
void write_dataset_tree(const Dataset& data, const std::filesystem::path& root, const std::string& split);

struct AugmentConfig {
  bool enabled = true;
  double rotation_degrees = 20.0;  // angle ~ U[-r, r]
  double flip_probability = 0.5;
  double zoom_min = 0.8;
  double zoom_max = 1.2;
  double contrast_min = 0.8;
  double contrast_max = 1.2;

  void validate() const;
};

/// Fixed draws for one augmentation; exposed so each transform can be tested
/// in isolation.
struct AugmentDraw {
  double angle_degrees = 0.0;
  bool flip = false;
  double zoom = 1.0;
  double contrast = 1.0;
};

AugmentDraw draw_augment(const AugmentConfig& cfg, std::uint64_t sample_seed);

/// rotation -> horizontal flip -> zoom -> contrast, with results clamped to [0, 1].
LabeledImage apply_augment(const LabeledImage& img, const AugmentDraw& draw);
LabeledImage augment(const LabeledImage& img, const AugmentConfig& cfg, std::uint64_t sample_seed);

std::uint64_t augment_seed(std::uint64_t dataset_seed, std::size_t epoch, std::size_t sample_index);

struct Batch {
  Tensor images;  // [N x 3 x H x W]
  std::vector<std::size_t> labels;
  std::vector<std::size_t> indices;  // positions in the source dataset
};

struct BatchOptions {
  std::size_t batch_size = 32;
  bool shuffle = true;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::optional<AugmentConfig> augment;  // training batches only
  DType dtype = DType::F32;
  /// Samples decoded/augmented per prefetch round; no numerical effect.
  std::size_t prefetch_chunk = 128;
};

/// Seeded permutation of [0, n) for one epoch.
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t epoch, bool shuffle);

/// Streams ceil(n / batch_size) batches in permutation order.
class BatchStream {
 public:
  BatchStream(const Dataset& data, BatchOptions options);

  std::optional<Batch> next();
  std::size_t batch_count() const;

 private:
  void prefetch();

  const Dataset& data_;
  BatchOptions options_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;     // next position in order_ to hand out
  std::size_t prefetched_ = 0;  // positions [0, prefetched_) are ready
  std::vector<Tensor> ready_;
};

std::vector<Batch> batches(const Dataset& data, const BatchOptions& options);

struct SynthOptions {
  /// Task variant: 0 is the base family, other values rotate the class
  /// orientations and hues to produce a related, shifted task.
  std::size_t variant = 0;
  double noise_sigma = 0.08;
};

/// Class k: oriented sinusoidal gradient plus class hue, seeded Gaussian
/// pixel noise, clamped to [0, 1].
Dataset synth_dataset(std::size_t classes, std::size_t per_class, std::size_t height, std::size_t width,
                      std::uint64_t seed, const SynthOptions& options = {}, DType dtype = DType::F32);

}  // namespace leafnet
