#pragma once

// PNG/JPEG decode and PNG encode for 8-bit RGB images, backed by libpng and
// libjpeg. Formats are detected from magic bytes, not file extensions.

#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "mtvit/image.hpp"
#include "mtvit/params.hpp"

namespace mtvit {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline ImageTensor<float> from_rgb8(const std::vector<unsigned char>& rgb, int h, int w) {
  ImageTensor<float> img(h, w);
  for (size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = static_cast<float>(rgb[i]) / 255.0f;
  return img;
}

inline ImageTensor<float> read_png(std::FILE* f, const std::string& name) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng init failed for " + name);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng init failed for " + name);
  }
  std::vector<unsigned char> rgb;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to decode PNG " + name);
  }
  png_init_io(png, f);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unexpected channel count in PNG " + name);
  }
  rgb.resize(static_cast<size_t>(h) * w * 3);
  rows.resize(h);
  for (int y = 0; y < h; ++y) rows[y] = rgb.data() + static_cast<size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return from_rgb8(rgb, h, w);
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  longjmp(reinterpret_cast<JpegErrorMgr*>(cinfo->err)->jump, 1);
}

inline ImageTensor<float> read_jpeg(std::FILE* f, const std::string& name) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError("failed to decode JPEG " + name);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const int w = static_cast<int>(cinfo.output_width);
  const int h = static_cast<int>(cinfo.output_height);
  std::vector<unsigned char> rgb(static_cast<size_t>(h) * w * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    unsigned char* row = rgb.data() + static_cast<size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_rgb8(rgb, h, w);
}

}  // namespace detail

inline ImageTensor<float> read_image(const std::filesystem::path& path) {
  detail::FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw IoError("cannot open image " + path.string());
  unsigned char magic[4] = {0, 0, 0, 0};
  const size_t n = std::fread(magic, 1, sizeof(magic), f.get());
  std::rewind(f.get());
  if (n >= 4 && magic[0] == 0x89 && magic[1] == 'P' && magic[2] == 'N' && magic[3] == 'G')
    return detail::read_png(f.get(), path.string());
  if (n >= 2 && magic[0] == 0xFF && magic[1] == 0xD8)
    return detail::read_jpeg(f.get(), path.string());
  throw IoError("unsupported image format (want PNG or JPEG): " + path.string());
}

template <typename T>
void write_png(const std::filesystem::path& path, const ImageTensor<T>& img) {
  detail::FilePtr f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw IoError("cannot open for write: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng init failed for " + path.string());
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng init failed for " + path.string());
  }
  std::vector<unsigned char> rgb(static_cast<size_t>(img.height) * img.width * 3);
  for (size_t i = 0; i < rgb.size(); ++i) {
    const double v = std::clamp(static_cast<double>(img.data[i]), 0.0, 1.0);
    rgb[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = rgb.data() + static_cast<size_t>(y) * img.width * 3;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to encode PNG " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace mtvit
