// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace leafnet {

/// Decoded 8-bit image, row-major, channel-interleaved.
struct RawImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;
};

enum class ImageFormat { Unknown, Pdimg, Png, Jpeg };

ImageFormat sniff_format(const std::filesystem::path& path);

/// PDIMG: "PDIM", u32 LE height, width, channels, then H*W*C bytes.
RawImage read_pdimg(const std::filesystem::path& path);
void write_pdimg(const std::filesystem::path& path, const RawImage& image);

RawImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RawImage& image);

/// Available when built with LEAFNET_WITH_JPEG; otherwise throws UnsupportedFormat.
RawImage read_jpeg(const std::filesystem::path& path);
bool jpeg_supported();

/// Dispatches on the file's magic bytes.
RawImage read_image(const std::filesystem::path& path);

}  // namespace leafnet
