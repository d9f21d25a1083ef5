// SPDX-License-Identifier: Apache-2.0
#include "leafnet/image_io.hpp"

#include <png.h>

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#ifdef LEAFNET_WITH_JPEG
#include <csetjmp>

#include <jpeglib.h>
#endif

#include "leafnet/error.hpp"

namespace leafnet {

namespace {

std::uint32_t read_u32_le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  require(f != nullptr, ErrorCode::IoFailure, "cannot open " + path.string());
  return f;
}

}  // namespace

ImageFormat sniff_format(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return ImageFormat::Unknown;
  std::array<unsigned char, 8> head{};
  in.read(reinterpret_cast<char*>(head.data()), head.size());
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got >= 4 && std::memcmp(head.data(), "PDIM", 4) == 0) return ImageFormat::Pdimg;
  static constexpr unsigned char kPng[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (got >= 8 && std::memcmp(head.data(), kPng, 8) == 0) return ImageFormat::Png;
  if (got >= 3 && head[0] == 0xFF && head[1] == 0xD8 && head[2] == 0xFF) return ImageFormat::Jpeg;
  return ImageFormat::Unknown;
}

RawImage read_pdimg(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(bytes.size() >= 16 && std::memcmp(bytes.data(), "PDIM", 4) == 0, ErrorCode::DecodeFailure,
          path.string() + ": not a PDIMG file");
  RawImage img;
  img.height = read_u32_le(bytes.data() + 4);
  img.width = read_u32_le(bytes.data() + 8);
  img.channels = read_u32_le(bytes.data() + 12);
  require(img.height > 0 && img.width > 0 && img.channels > 0, ErrorCode::DecodeFailure,
          path.string() + ": zero-sized PDIMG");
  const std::size_t n = img.height * img.width * img.channels;
  require(bytes.size() == 16 + n, ErrorCode::DecodeFailure, path.string() + ": PDIMG payload size mismatch");
  img.pixels.assign(bytes.begin() + 16, bytes.end());
  return img;
}

void write_pdimg(const std::filesystem::path& path, const RawImage& image) {
  require(image.pixels.size() == image.height * image.width * image.channels, ErrorCode::InvalidArgument,
          "pixel buffer does not match image dimensions");
  std::vector<std::uint8_t> out{'P', 'D', 'I', 'M'};
  put_u32_le(out, static_cast<std::uint32_t>(image.height));
  put_u32_le(out, static_cast<std::uint32_t>(image.width));
  put_u32_le(out, static_cast<std::uint32_t>(image.channels));
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorCode::IoFailure, "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  require(static_cast<bool>(f), ErrorCode::IoFailure, "short write to " + path.string());
}

RawImage read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  require(png_image_begin_read_from_file(&image, path.c_str()) != 0, ErrorCode::DecodeFailure,
          path.string() + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  RawImage out;
  out.height = image.height;
  out.width = image.width;
  out.channels = 3;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  const int ok = png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr);
  const std::string message = image.message;
  png_image_free(&image);
  require(ok != 0, ErrorCode::DecodeFailure, path.string() + ": " + message);
  return out;
}

void write_png(const std::filesystem::path& path, const RawImage& img) {
  require(img.channels == 1 || img.channels == 3 || img.channels == 4, ErrorCode::InvalidArgument,
          "PNG writer supports 1, 3 or 4 channels");
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_RGBA;
  const int ok = png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr);
  require(ok != 0, ErrorCode::IoFailure, path.string() + ": " + image.message);
}

bool jpeg_supported() {
#ifdef LEAFNET_WITH_JPEG
  return true;
#else
  return false;
#endif
}

RawImage read_jpeg(const std::filesystem::path& path) {
#ifdef LEAFNET_WITH_JPEG
  FilePtr f = open_file(path, "rb");
  // libjpeg's default error handler calls exit(); recover with longjmp.
  struct ErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
  };
  jpeg_decompress_struct cinfo;
  ErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = [](j_common_ptr info) {
    auto* self = reinterpret_cast<ErrorManager*>(info->err);
    (*info->err->format_message)(info, self->message);
    std::longjmp(self->jump, 1);
  };
  RawImage out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error(ErrorCode::DecodeFailure, path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = cinfo.output_width;
  out.height = cinfo.output_height;
  out.channels = 3;
  out.pixels.resize(out.width * out.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + cinfo.output_scanline * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
#else
  throw Error(ErrorCode::UnsupportedFormat, path.string() + ": JPEG support not built");
#endif
}

RawImage read_image(const std::filesystem::path& path) {
  switch (sniff_format(path)) {
    case ImageFormat::Pdimg: return read_pdimg(path);
    case ImageFormat::Png: return read_png(path);
    case ImageFormat::Jpeg: return read_jpeg(path);
    case ImageFormat::Unknown: break;
  }
  require(std::filesystem::exists(path), ErrorCode::IoFailure, "missing file " + path.string());
  throw Error(ErrorCode::UnsupportedFormat, path.string() + ": unrecognized image container");
}

}  // namespace leafnet
