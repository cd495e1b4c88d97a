#pragma once

// PNG and baseline JPEG I/O for Frame. libpng and libjpeg are used as opaque codecs.

#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "vbd/image.hpp"

namespace vbd {

/// Thrown for I/O and codec failures (unreadable file, corrupt data, unwritable path).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when the input decodes but is not an 8-bit 3-channel image we accept.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

enum class ImageFormat { png, jpeg };

struct SaveOptions {
  ImageFormat format = ImageFormat::png;
  int quality = 100;  // JPEG quality factor, 1..100

  static SaveOptions png() { return {}; }
  static SaveOptions jpeg(int qf) { return {ImageFormat::jpeg, qf}; }
};

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

inline void jpeg_silent(j_common_ptr) {}

inline bool is_png(const std::vector<std::uint8_t>& b) {
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  return b.size() >= 8 && std::memcmp(b.data(), sig, 8) == 0;
}

inline bool is_jpeg(const std::vector<std::uint8_t>& b) {
  return b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF;
}

inline Frame decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw IoError(std::string("png decode: ") + image.message);
  const auto fmt = image.format;
  if (!(fmt & PNG_FORMAT_FLAG_COLOR) || (fmt & PNG_FORMAT_FLAG_ALPHA) || (fmt & PNG_FORMAT_FLAG_LINEAR)) {
    png_image_free(&image);
    throw FormatError("png is not an 8-bit 3-channel image");
  }
  image.format = PNG_FORMAT_RGB;
  Frame f(static_cast<int>(image.width), static_cast<int>(image.height));
  if (!png_image_finish_read(&image, nullptr, f.samples.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError(std::string("png decode: ") + image.message);
  }
  return f;
}

inline std::vector<std::uint8_t> encode_png(const Frame& f) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(f.width);
  image.height = static_cast<png_uint_32>(f.height);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, f.samples.data(), 0, nullptr))
    throw IoError(std::string("png encode: ") + image.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, f.samples.data(), 0, nullptr))
    throw IoError(std::string("png encode: ") + image.message);
  out.resize(size);
  return out;
}

}  // namespace detail

inline Frame decode_jpeg(const std::vector<std::uint8_t>& bytes) {
  jpeg_decompress_struct cinfo;
  detail::JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = detail::jpeg_error_exit;
  err.pub.output_message = detail::jpeg_silent;
  // No C++ objects with destructors are live between setjmp and longjmp.
  std::vector<std::uint8_t> pixels;
  int width = 0, height = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError(std::string("jpeg decode: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  if (cinfo.num_components != 3) {
    jpeg_destroy_decompress(&cinfo);
    throw FormatError("jpeg is not a 3-channel image");
  }
  cinfo.out_color_space = JCS_RGB;
  cinfo.dct_method = JDCT_ISLOW;
  jpeg_start_decompress(&cinfo);
  width = static_cast<int>(cinfo.output_width);
  height = static_cast<int>(cinfo.output_height);
  pixels.resize(static_cast<std::size_t>(width) * height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return Frame(width, height, std::move(pixels));
}

/// Baseline JPEG encode with the standard IJG quality scaling of the quantization tables.
inline std::vector<std::uint8_t> encode_jpeg(const Frame& f, int quality) {
  if (quality < 1 || quality > 100) throw std::invalid_argument("jpeg quality must be in [1,100]");
  jpeg_compress_struct cinfo;
  detail::JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = detail::jpeg_error_exit;
  err.pub.output_message = detail::jpeg_silent;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    throw IoError(std::string("jpeg encode: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(f.width);
  cinfo.image_height = static_cast<JDIMENSION>(f.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  cinfo.dct_method = JDCT_ISLOW;
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPROW>(f.samples.data() + static_cast<std::size_t>(cinfo.next_scanline) * f.width * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::vector<std::uint8_t> out(buffer, buffer + size);
  std::free(buffer);
  return out;
}

/// Encode at `quality` then decode; the JPEG attack step.
inline Frame jpeg_roundtrip(const Frame& f, int quality) { return decode_jpeg(encode_jpeg(f, quality)); }

inline Frame decode_image(const std::vector<std::uint8_t>& bytes) {
  if (detail::is_png(bytes)) return detail::decode_png(bytes);
  if (detail::is_jpeg(bytes)) return decode_jpeg(bytes);
  throw FormatError("unsupported image format");
}

inline Frame load_frame(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw IoError("not a readable file: " + path.string());
  try {
    return decode_image(detail::read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline void save_frame(const Frame& f, const std::filesystem::path& path, const SaveOptions& opts = {}) {
  if (opts.format == ImageFormat::jpeg)
    detail::write_file_bytes(path, encode_jpeg(f, opts.quality));
  else
    detail::write_file_bytes(path, detail::encode_png(f));
}

}  // namespace vbd
