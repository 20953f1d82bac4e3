#include "intseg/imageio.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

namespace intseg {

namespace fs = std::filesystem;

namespace {

enum class Format { png, jpeg, unknown };

Format sniff(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DatasetError(path, "cannot open file");
  std::array<unsigned char, 8> sig{};
  is.read(reinterpret_cast<char*>(sig.data()), sig.size());
  if (is.gcount() >= 8 && png_sig_cmp(sig.data(), 0, 8) == 0) return Format::png;
  if (is.gcount() >= 3 && sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF) return Format::jpeg;
  return Format::unknown;
}

struct Raster {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<unsigned char> pixels;
};

Raster read_png(const fs::path& path, bool gray) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw DatasetError(path, std::string("unreadable PNG: ") + img.message);
  }
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Raster r;
  r.height = static_cast<int>(img.height);
  r.width = static_cast<int>(img.width);
  r.channels = gray ? 1 : 3;
  r.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, r.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DatasetError(path, "unreadable PNG: " + msg);
  }
  return r;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// Only trivially destructible state lives across setjmp.
Raster read_jpeg(const fs::path& path, bool gray, bool header_only) {
  std::FILE* file = std::fopen(path.string().c_str(), "rb");
  if (file == nullptr) throw DatasetError(path, "cannot open file");
  jpeg_decompress_struct cinfo;
  JpegErrorManager jerr;
  cinfo.err = jpeg_std_error(&jerr.base);
  jerr.base.error_exit = jpeg_error_exit;
  Raster* out = new Raster();
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    std::fclose(file);
    delete out;
    throw DatasetError(path, std::string("unreadable JPEG: ") + jerr.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file);
  jpeg_read_header(&cinfo, TRUE);
  out->height = static_cast<int>(cinfo.image_height);
  out->width = static_cast<int>(cinfo.image_width);
  if (!header_only) {
    cinfo.out_color_space = gray ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);
    out->channels = static_cast<int>(cinfo.output_components);
    const std::size_t stride = static_cast<std::size_t>(cinfo.output_width) * out->channels;
    out->pixels.resize(stride * cinfo.output_height);
    while (cinfo.output_scanline < cinfo.output_height) {
      JSAMPROW row = out->pixels.data() + stride * cinfo.output_scanline;
      jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
  }
  jpeg_destroy_decompress(&cinfo);
  std::fclose(file);
  Raster result = std::move(*out);
  delete out;
  return result;
}

Raster read_raster(const fs::path& path, bool gray) {
  switch (sniff(path)) {
    case Format::png: return read_png(path, gray);
    case Format::jpeg: return read_jpeg(path, gray, false);
    case Format::unknown: break;
  }
  throw DatasetError(path, "unsupported image format (expected PNG or JPEG)");
}

void write_png_raw(const fs::path& path, int h, int w, bool gray, const std::vector<unsigned char>& px) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, px.data(), 0, nullptr)) {
    throw DatasetError(path, std::string("cannot write PNG: ") + img.message);
  }
}

}  // namespace

bool is_image_file(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

Image read_image(const fs::path& path) {
  const Raster r = read_raster(path, false);
  Image img(r.height, r.width);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = r.pixels[i] / 255.0;
  return img;
}

ImageSize read_image_size(const fs::path& path) {
  switch (sniff(path)) {
    case Format::png: {
      png_image img;
      std::memset(&img, 0, sizeof img);
      img.version = PNG_IMAGE_VERSION;
      if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
        throw DatasetError(path, std::string("unreadable PNG: ") + img.message);
      }
      const ImageSize size{static_cast<int>(img.height), static_cast<int>(img.width)};
      png_image_free(&img);
      return size;
    }
    case Format::jpeg: {
      const Raster r = read_jpeg(path, false, true);
      return {r.height, r.width};
    }
    case Format::unknown: break;
  }
  throw DatasetError(path, "unsupported image format (expected PNG or JPEG)");
}

BinaryMask read_mask(const fs::path& path) {
  const Raster r = read_raster(path, true);
  BinaryMask m(r.height, r.width, 0);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = r.pixels[i] >= 128 ? 1 : 0;
  return m;
}

void write_png(const fs::path& path, const Image& image) {
  std::vector<unsigned char> px(image.rgb.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = static_cast<unsigned char>(std::clamp(image.rgb[i], 0.0, 1.0) * 255.0 + 0.5);
  }
  write_png_raw(path, image.height, image.width, false, px);
}

void write_mask_png(const fs::path& path, const BinaryMask& mask) {
  std::vector<unsigned char> px(mask.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = mask[i] ? 255 : 0;
  write_png_raw(path, mask.height(), mask.width(), true, px);
}

}  // namespace intseg
