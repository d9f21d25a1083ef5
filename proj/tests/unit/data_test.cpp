// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "leafnet/data.hpp"
#include "leafnet/error.hpp"
#include "leafnet/image_io.hpp"
#include "leafnet/parallel.hpp"
#include "test_util.hpp"

namespace leafnet {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

RawImage solid(std::size_t h, std::size_t w, std::uint8_t value) {
  return RawImage{h, w, 3, std::vector<std::uint8_t>(h * w * 3, value)};
}

LabeledImage planar(std::size_t c, std::size_t h, std::size_t w, std::vector<double> v) {
  return LabeledImage{Tensor::from_values({c, h, w}, v, DType::F64), 0, "x"};
}

Dataset counting_dataset(std::size_t n, std::size_t classes = 3) {
  Dataset d;
  for (std::size_t k = 0; k < classes; ++k) d.class_names.push_back("c" + std::to_string(k));
  for (std::size_t i = 0; i < n; ++i) {
    d.samples.push_back({Tensor::full({3, 4, 4}, static_cast<double>(i) / static_cast<double>(n), DType::F64),
                         i % classes, std::to_string(i)});
  }
  return d;
}

TEST(Scan, SortsClassesAndCountsFiles) {
  TempDir dir;
  for (const char* cls : {"tomato", "apple", "corn"}) {
    fs::create_directories(dir.path() / "train" / cls);
    write_png(dir.path() / "train" / cls / "a.png", solid(4, 4, 10));
  }
  write_png(dir.path() / "train" / "apple" / "b.png", solid(4, 4, 10));
  fs::create_directories(dir.path() / "test" / "corn");
  write_pdimg(dir.path() / "test" / "corn" / "z.pdimg", solid(4, 4, 10));
  std::ofstream(dir.path() / "train" / "corn" / "notes.txt") << "not an image";

  const auto m = scan_dataset(dir.path());
  EXPECT_EQ(m.class_names, (std::vector<std::string>{"apple", "corn", "tomato"}));
  ASSERT_TRUE(m.has_split("train"));
  ASSERT_TRUE(m.has_split("test"));
  EXPECT_EQ(m.splits.at("train").counts, (std::vector<std::size_t>{2, 1, 1}));
  EXPECT_EQ(m.splits.at("test").counts, (std::vector<std::size_t>{0, 1, 0}));
  ASSERT_EQ(m.unreadable.size(), 1u);
  EXPECT_EQ(m.unreadable[0].path.filename(), "notes.txt");
}

TEST(Scan, EmptyTreeIsAnError) {
  TempDir dir;
  auto expect_empty = [&] {
    try {
      (void)scan_dataset(dir.path());
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::EmptyDataset);
    }
  };
  expect_empty();
  fs::create_directories(dir.path() / "train" / "a");
  fs::create_directories(dir.path() / "train" / "b");
  expect_empty();  // classes but no images
}

TEST(Scan, CaseFoldedDuplicateClass) {
  TempDir dir;
  for (const char* cls : {"Apple", "apple"}) {
    fs::create_directories(dir.path() / "train" / cls);
    write_png(dir.path() / "train" / cls / "a.png", solid(2, 2, 0));
  }
  try {
    (void)scan_dataset(dir.path());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicateClassName);
  }
}

TEST(Load, WhiteImageScalesToOne) {
  TempDir dir;
  write_png(dir / "w.png", solid(5, 7, 255));
  const auto img = load_image(dir / "w.png", 8, 8);
  EXPECT_EQ(img.pixels.shape(), (Shape{3, 8, 8}));
  for (double v : img.pixels.to_vector()) EXPECT_EQ(v, 1.0);
}

TEST(Load, GrayIsReplicatedAndAlphaDropped) {
  const RawImage gray{1, 2, 1, {0, 255}};
  auto img = image_from_raw(gray, 1, 2, DType::F64);
  EXPECT_EQ(img.pixels.to_vector(), (std::vector<double>{0, 1, 0, 1, 0, 1}));
  const RawImage rgba{1, 1, 4, {51, 102, 153, 7}};
  img = image_from_raw(rgba, 1, 1, DType::F64);
  testing::expect_all_near(img.pixels.to_vector(), {0.2, 0.4, 0.6}, 1e-15);
}

TEST(Resize, IdentityAtSameSize) {
  Rng rng(1);
  std::vector<double> v(2 * 3 * 5);
  for (auto& x : v) x = rng.uniform();
  EXPECT_EQ(resize_bilinear(v, 2, 3, 5, 3, 5), v);
}

TEST(Resize, UpsampleTwoByTwo) {
  // Half-pixel centers: output samples land at -0.25, 0.25, 0.75, 1.25 in
  // source coordinates, clamped to the edge, giving weights 0, .25, .75, 1.
  const std::vector<double> src{1, 2, 3, 4};
  const double t[] = {0.0, 0.25, 0.75, 1.0};
  std::vector<double> want;
  for (double ty : t)
    for (double tx : t) {
      const double top = 1 + tx * (2 - 1), bottom = 3 + tx * (4 - 3);
      want.push_back(top + ty * (bottom - top));
    }
  testing::expect_all_near(resize_bilinear(src, 1, 2, 2, 4, 4), want, 1e-15);
}

TEST(Resize, ConstantStaysConstant) {
  const std::vector<double> src(3 * 7 * 9, 0.37);
  for (double v : resize_bilinear(src, 3, 7, 9, 4, 13)) EXPECT_NEAR(v, 0.37, 1e-15);
}

TEST(Augment, FlipReversesRows) {
  const auto img = planar(1, 2, 2, {0.1, 0.2, 0.3, 0.4});
  const auto out = apply_augment(img, AugmentDraw{0.0, true, 1.0, 1.0});
  EXPECT_EQ(out.pixels.to_vector(), (std::vector<double>{0.2, 0.1, 0.4, 0.3}));
}

TEST(Augment, NeutralDrawIsIdentity) {
  Rng rng(2);
  const auto img = LabeledImage{testing::random_tensor({3, 6, 5}, rng, 0, 1), 1, "x"};
  const auto out = apply_augment(img, AugmentDraw{});
  EXPECT_TRUE(out.pixels.bitwise_equal(img.pixels));
  AugmentConfig off;
  off.enabled = false;
  EXPECT_TRUE(augment(img, off, 123).pixels.bitwise_equal(img.pixels));
}

TEST(Augment, QuarterTurnPermutesPixels) {
  std::vector<double> v(9);
  for (std::size_t i = 0; i < 9; ++i) v[i] = 0.1 * static_cast<double>(i);
  const auto out = apply_augment(planar(1, 3, 3, v), AugmentDraw{90.0, false, 1.0, 1.0}).pixels.to_vector();
  // Output (y, x) samples source (cy - dx, cx + dy).
  std::vector<double> want(9);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 3; ++x) want[y * 3 + x] = v[(2 - x) * 3 + y];
  testing::expect_all_near(out, want, 1e-12);
}

TEST(Augment, ZoomOutReplicatesEdges) {
  const auto img = planar(1, 4, 4, std::vector<double>(16, 0.6));
  for (double v : apply_augment(img, AugmentDraw{0, false, 0.8, 1.0}).pixels.to_vector()) EXPECT_NEAR(v, 0.6, 1e-15);
}

TEST(Augment, ContrastPivotsOnMeanAndClamps) {
  const auto img = planar(1, 1, 4, {0.2, 0.4, 0.6, 0.8});
  auto out = apply_augment(img, AugmentDraw{0, false, 1.0, 1.5}).pixels.to_vector();
  testing::expect_all_near(out, {0.05, 0.35, 0.65, 0.95}, 1e-15);
  out = apply_augment(img, AugmentDraw{0, false, 1.0, 3.0}).pixels.to_vector();
  EXPECT_EQ(out.front(), 0.0);
  EXPECT_EQ(out.back(), 1.0);
}

TEST(Augment, DrawsRespectRangesAndSeeds) {
  AugmentConfig cfg;
  std::size_t flips = 0;
  for (std::uint64_t s = 0; s < 2000; ++s) {
    const auto d = draw_augment(cfg, s);
    EXPECT_LE(std::abs(d.angle_degrees), 20.0);
    EXPECT_GE(d.zoom, 0.8);
    EXPECT_LE(d.zoom, 1.2);
    EXPECT_GE(d.contrast, 0.8);
    EXPECT_LE(d.contrast, 1.2);
    flips += d.flip;
  }
  EXPECT_NEAR(flips, 1000, 120);
  const auto a = draw_augment(cfg, 77), b = draw_augment(cfg, 77);
  EXPECT_EQ(a.angle_degrees, b.angle_degrees);
  EXPECT_EQ(a.zoom, b.zoom);
}

TEST(Augment, InvalidConfig) {
  AugmentConfig cfg;
  cfg.zoom_min = 1.5;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.flip_probability = 2;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Batching, SizesAndCoverage) {
  const auto data = counting_dataset(100);
  BatchOptions opt;
  opt.seed = 9;
  const auto bs = batches(data, opt);
  std::vector<std::size_t> sizes;
  std::multiset<std::size_t> seen;
  for (const auto& b : bs) {
    sizes.push_back(b.labels.size());
    EXPECT_EQ(b.images.dim(0), b.labels.size());
    for (std::size_t j = 0; j < b.indices.size(); ++j) {
      seen.insert(b.indices[j]);
      EXPECT_EQ(b.labels[j], data.samples[b.indices[j]].label);
    }
  }
  EXPECT_EQ(sizes, (std::vector<std::size_t>{32, 32, 32, 4}));
  std::multiset<std::size_t> all;
  for (std::size_t i = 0; i < 100; ++i) all.insert(i);
  EXPECT_EQ(seen, all);
}

TEST(Batching, PermutationDeterminism) {
  EXPECT_EQ(epoch_permutation(50, 1, 3, true), epoch_permutation(50, 1, 3, true));
  EXPECT_NE(epoch_permutation(50, 1, 3, true), epoch_permutation(50, 1, 4, true));
  EXPECT_NE(epoch_permutation(50, 1, 3, true), epoch_permutation(50, 2, 3, true));
  auto id = epoch_permutation(50, 1, 3, false);
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(id[i], i);
  auto p = epoch_permutation(50, 1, 3, true);
  std::sort(p.begin(), p.end());
  EXPECT_EQ(p, id);
}

TEST(Batching, ChunkingAndWorkersDoNotChangeBatches) {
  const auto data = synth_dataset(3, 10, 16, 16, 4);
  BatchOptions base;
  base.batch_size = 7;
  base.seed = 5;
  base.epoch = 2;
  base.augment = AugmentConfig{};
  const std::size_t saved = num_threads();
  set_num_threads(1);
  base.prefetch_chunk = 1000;
  const auto ref = batches(data, base);
  for (std::size_t chunk : {1u, 3u, 8u}) {
    for (std::size_t workers : {1u, 4u}) {
      set_num_threads(workers);
      auto opt = base;
      opt.prefetch_chunk = chunk;
      const auto got = batches(data, opt);
      ASSERT_EQ(got.size(), ref.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        EXPECT_EQ(got[i].indices, ref[i].indices);
        EXPECT_TRUE(got[i].images.bitwise_equal(ref[i].images));
      }
    }
  }
  set_num_threads(saved);
}

TEST(Batching, AugmentDependsOnSampleNotPosition) {
  const auto data = synth_dataset(2, 6, 16, 16, 4);
  BatchOptions a;
  a.batch_size = 4;
  a.augment = AugmentConfig{};
  a.seed = 3;
  auto b = a;
  b.shuffle = false;
  const auto ba = batches(data, a), bb = batches(data, b);
  std::map<std::size_t, std::vector<double>> by_index;
  for (const auto& batch : bb) {
    const auto v = batch.images.to_vector();
    const std::size_t per = v.size() / batch.indices.size();
    for (std::size_t j = 0; j < batch.indices.size(); ++j)
      by_index[batch.indices[j]].assign(v.begin() + j * per, v.begin() + (j + 1) * per);
  }
  for (const auto& batch : ba) {
    const auto v = batch.images.to_vector();
    const std::size_t per = v.size() / batch.indices.size();
    for (std::size_t j = 0; j < batch.indices.size(); ++j)
      EXPECT_TRUE(std::equal(v.begin() + j * per, v.begin() + (j + 1) * per, by_index[batch.indices[j]].begin()));
  }
}

TEST(Synth, DeterministicAndBalanced) {
  const auto a = synth_dataset(4, 5, 16, 16, 11);
  const auto b = synth_dataset(4, 5, 16, 16, 11);
  const auto c = synth_dataset(4, 5, 16, 16, 12);
  EXPECT_EQ(a.class_counts(), (std::vector<std::size_t>{5, 5, 5, 5}));
  EXPECT_EQ(a.class_names[3], "class_3");
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(a.samples[i].pixels.bitwise_equal(b.samples[i].pixels));
    differs |= !a.samples[i].pixels.bitwise_equal(c.samples[i].pixels);
    for (double v : a.samples[i].pixels.to_vector()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
  EXPECT_TRUE(differs);
}

TEST(Synth, ClassesAreSeparableByNearestCentroid) {
  const std::size_t k = 4;
  const auto train = synth_dataset(k, 64, 16, 16, 1, {}, DType::F64);
  const auto test = synth_dataset(k, 64, 16, 16, 2, {}, DType::F64);
  const std::size_t dim = 3 * 16 * 16;
  std::vector<std::vector<double>> centroid(k, std::vector<double>(dim, 0.0));
  for (const auto& s : train.samples) {
    const auto v = s.pixels.to_vector();
    for (std::size_t j = 0; j < dim; ++j) centroid[s.label][j] += v[j] / 64.0;
  }
  std::size_t correct = 0;
  for (const auto& s : test.samples) {
    const auto v = s.pixels.to_vector();
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t c = 0; c < k; ++c) {
      double d = 0;
      for (std::size_t j = 0; j < dim; ++j) d += (v[j] - centroid[c][j]) * (v[j] - centroid[c][j]);
      if (d < best_d) best_d = d, best = c;
    }
    correct += best == s.label;
  }
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(test.size()), 0.9);
}

TEST(ImageIo, PngAndPdimgRoundTrip) {
  TempDir dir;
  RawImage img{3, 5, 3, {}};
  for (std::size_t i = 0; i < 45; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i * 5));
  write_png(dir / "a.png", img);
  write_pdimg(dir / "a.pdimg", img);
  for (const char* name : {"a.png", "a.pdimg"}) {
    const auto back = read_image(dir / name);
    EXPECT_EQ(back.height, 3u);
    EXPECT_EQ(back.width, 5u);
    EXPECT_EQ(back.channels, 3u);
    EXPECT_EQ(back.pixels, img.pixels);
  }
  EXPECT_EQ(sniff_format(dir / "a.png"), ImageFormat::Png);
  EXPECT_EQ(sniff_format(dir / "a.pdimg"), ImageFormat::Pdimg);
}

TEST(ImageIo, TreeRoundTripThroughLoader) {
  TempDir dir;
  const auto data = synth_dataset(3, 4, 8, 8, 5);
  write_dataset_tree(data, dir.path(), "train");
  const auto m = scan_dataset(dir.path());
  EXPECT_EQ(m.class_names, data.class_names);
  const auto loaded = load_split(m, "train", 8, 8);
  ASSERT_EQ(loaded.size(), data.size());
  EXPECT_EQ(loaded.class_counts(), data.class_counts());
  // 8-bit quantization bounds the round-trip error.
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    EXPECT_EQ(loaded.samples[i].label, data.samples[i].label);
    testing::expect_all_near(loaded.samples[i].pixels.to_vector(), data.samples[i].pixels.to_vector(), 0.5 / 255 + 1e-6);
  }
}

TEST(ImageIo, CorruptFileRaises) {
  TempDir dir;
  std::ofstream(dir / "bad.png", std::ios::binary) << "\x89PNG\r\n\x1a\ntruncated";
  EXPECT_THROW((void)read_image(dir / "bad.png"), Error);
}

}  // namespace
}  // namespace leafnet
