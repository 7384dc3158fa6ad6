#include "wsseg/io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

namespace wsseg {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(const fs::path& path, const std::string& what) {
  throw IoError(path.string() + ": " + what);
}

std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open file");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open file for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(path, "write failed");
}

// ---------------------------------------------------------------------------
// libpng glue. Errors longjmp back into the caller's setjmp frame; the
// message is stashed so it can be rethrown as an IoError.

struct PngReadSource {
  const std::vector<unsigned char>* bytes;
  std::size_t offset;
};

struct PngErrorState {
  std::string message;
};

void png_error_fn(png_structp png, png_const_charp msg) {
  static_cast<PngErrorState*>(png_get_error_ptr(png))->message = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

void png_read_fn(png_structp png, png_bytep out, png_size_t len) {
  auto* src = static_cast<PngReadSource*>(png_get_io_ptr(png));
  if (src->offset + len > src->bytes->size()) png_error(png, "truncated PNG data");
  std::copy_n(src->bytes->data() + src->offset, len, out);
  src->offset += len;
}

void png_write_fn(png_structp png, png_bytep data, png_size_t len) {
  auto* dst = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
  dst->insert(dst->end(), data, data + len);
}

void png_flush_fn(png_structp) {}

bool is_png(const std::vector<unsigned char>& bytes) {
  return bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0;
}

struct DecodedPng {
  int width = 0, height = 0, channels = 0;
  int color_type = 0;
  std::vector<unsigned char> pixels;  // 8 bits per sample
};

enum class PngMode { rgb, index };

DecodedPng decode_png(const std::vector<unsigned char>& bytes, const fs::path& path, PngMode mode) {
  PngErrorState err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (!png) fail(path, "out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(path, "out of memory");
  }
  PngReadSource src{&bytes, 0};
  // everything with a destructor lives outside the setjmp frame
  DecodedPng out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, err.message);
  }
  png_set_read_fn(png, &src, png_read_fn);
  png_read_info(png, info);

  const int depth = png_get_bit_depth(png, info);
  out.color_type = png_get_color_type(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  if (depth > 8) png_error(png, "unsupported bit depth (16-bit PNG)");

  if (mode == PngMode::index) {
    if (out.color_type != PNG_COLOR_TYPE_PALETTE && out.color_type != PNG_COLOR_TYPE_GRAY)
      png_error(png, "mask must be an indexed or grayscale PNG");
    if (depth < 8) png_set_packing(png);
  } else {
    if (out.color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (out.color_type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (out.color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);
  out.channels = png_get_channels(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  out.pixels.resize(rowbytes * out.height);
  rows.resize(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = out.pixels.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

struct PngWriteSpec {
  int width, height, color_type;
  const std::vector<Rgb8>* palette;  // for PNG_COLOR_TYPE_PALETTE
  const std::vector<unsigned char>* pixels;
};

std::vector<unsigned char> encode_png(const PngWriteSpec& spec, const fs::path& path) {
  PngErrorState err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (!png) fail(path, "out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(path, "out of memory");
  }
  std::vector<unsigned char> bytes;
  std::vector<png_color> plte;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(path, err.message);
  }
  png_set_write_fn(png, &bytes, png_write_fn, png_flush_fn);
  png_set_IHDR(png, info, spec.width, spec.height, 8, spec.color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (spec.color_type == PNG_COLOR_TYPE_PALETTE) {
    for (const Rgb8& c : *spec.palette) plte.push_back({c.r, c.g, c.b});
    png_set_PLTE(png, info, plte.data(), static_cast<int>(plte.size()));
  }
  png_write_info(png, info);
  const std::size_t stride = spec.pixels->size() / spec.height;
  for (int y = 0; y < spec.height; ++y)
    png_write_row(png, const_cast<png_bytep>(spec.pixels->data() + y * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return bytes;
}

// ---------------------------------------------------------------------------

ImageBuffer decode_pnm(const std::vector<unsigned char>& bytes, const fs::path& path) {
  std::size_t pos = 2;
  auto next_int = [&]() {
    for (;;) {
      while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) fail(path, "malformed PNM header");
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > (1L << 30)) fail(path, "malformed PNM header");
    }
    return v;
  };
  const bool color = bytes[1] == '6';
  const long width = next_int();
  const long height = next_int();
  const long maxval = next_int();
  if (width < 1 || height < 1) fail(path, "empty image");
  if (maxval != 255) fail(path, "unsupported bit depth (maxval " + std::to_string(maxval) + ")");
  ++pos;  // single whitespace byte after maxval
  const int channels = color ? 3 : 1;
  const std::size_t need = static_cast<std::size_t>(width) * height * channels;
  if (bytes.size() < pos + need) fail(path, "truncated PNM data");

  std::vector<double> rgb(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < static_cast<std::size_t>(width) * height; ++i)
    for (int c = 0; c < 3; ++c) rgb[i * 3 + c] = bytes[pos + i * channels + (color ? c : 0)];
  return ImageBuffer(static_cast<int>(height), static_cast<int>(width), std::move(rgb));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
}

}  // namespace

ImageBuffer load_image(const fs::path& path) {
  const auto bytes = read_file(path);
  if (is_png(bytes)) {
    const DecodedPng png = decode_png(bytes, path, PngMode::rgb);
    std::vector<double> rgb(static_cast<std::size_t>(png.width) * png.height * 3);
    for (std::size_t i = 0; i < static_cast<std::size_t>(png.width) * png.height; ++i)
      for (int c = 0; c < 3; ++c) rgb[i * 3 + c] = png.pixels[i * png.channels + (png.channels >= 3 ? c : 0)];
    return ImageBuffer(png.height, png.width, std::move(rgb));
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '6' || bytes[1] == '5')) return decode_pnm(bytes, path);
  fail(path, "unsupported image format (expected PNG or binary PPM/PGM)");
}

void save_image_png(const ImageBuffer& img, const fs::path& path) {
  std::vector<unsigned char> pixels(img.pixels() * 3);
  const auto rgb = img.data();
  for (std::size_t i = 0; i < pixels.size(); ++i)
    pixels[i] = static_cast<unsigned char>(std::lround(std::clamp(rgb[i], 0.0, 255.0)));
  write_file(path, encode_png({img.width(), img.height(), PNG_COLOR_TYPE_RGB, nullptr, &pixels}, path));
}

LabelMask load_mask(const fs::path& path, int classes, int ignore) {
  const auto bytes = read_file(path);
  if (!is_png(bytes)) fail(path, "masks must be PNG files");
  const DecodedPng png = decode_png(bytes, path, PngMode::index);
  std::vector<int> labels(png.pixels.begin(), png.pixels.end());
  for (int l : labels)
    if (l != ignore && l >= classes)
      fail(path, "label " + std::to_string(l) + " is not below the class count " + std::to_string(classes));
  return LabelMask(png.height, png.width, std::move(labels), ignore);
}

void save_mask(const LabelMask& mask, const ClassPalette& palette, const fs::path& path) {
  std::vector<unsigned char> pixels(mask.pixels());
  for (std::size_t i = 0; i < mask.pixels(); ++i) {
    if (mask.is_ignore(i)) {
      pixels[i] = 255;
      continue;
    }
    const int l = mask[i];
    if (l < 0 || l >= palette.classes() || l >= 255)
      throw std::invalid_argument("label " + std::to_string(l) + " has no palette entry");
    pixels[i] = static_cast<unsigned char>(l);
  }
  // 256 entries so index 255 (ignore) is always valid; it takes VOC's boundary color
  std::vector<Rgb8> colors(256, Rgb8{0, 0, 0});
  for (int c = 0; c < std::min(palette.classes(), 255); ++c) colors[c] = palette.color(c);
  colors[255] = Rgb8{224, 224, 192};
  write_file(path, encode_png({mask.width(), mask.height(), PNG_COLOR_TYPE_PALETTE, &colors, &pixels}, path));
}

UnaryField load_unary(const fs::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < kUnaryHeaderBytes || !std::equal(bytes.begin(), bytes.begin() + 4, "UNR1"))
    fail(path, "not a UNR1 file");
  const std::uint64_t h = get_u32(&bytes[4]), w = get_u32(&bytes[8]), c = get_u32(&bytes[12]);
  if (h == 0 || w == 0 || c == 0) fail(path, "UNR1 header declares an empty field");
  const std::uint64_t count = h * w * c;
  if (bytes.size() - kUnaryHeaderBytes != count * 4)
    fail(path, "UNR1 payload is " + std::to_string(bytes.size() - kUnaryHeaderBytes) + " bytes, header declares " +
                   std::to_string(count * 4) + (bytes.size() - kUnaryHeaderBytes < count * 4 ? " (truncated)" : ""));
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float f = std::bit_cast<float>(get_u32(&bytes[kUnaryHeaderBytes + 4 * i]));
    if (!std::isfinite(f)) fail(path, "non-finite value (NaN or infinity) at element " + std::to_string(i));
    values[i] = f;
  }
  return UnaryField(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c), std::move(values));
}

void save_unary(const UnaryField& field, const fs::path& path) {
  std::vector<unsigned char> out;
  out.reserve(kUnaryHeaderBytes + field.data().size() * 4);
  out.insert(out.end(), {'U', 'N', 'R', '1'});
  put_u32(out, static_cast<std::uint32_t>(field.height()));
  put_u32(out, static_cast<std::uint32_t>(field.width()));
  put_u32(out, static_cast<std::uint32_t>(field.classes()));
  for (double v : field.data()) {
    const float f = static_cast<float>(v);
    if (!std::isfinite(f)) throw std::invalid_argument("cannot store a non-finite value in a UNR1 file");
    put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  write_file(path, out);
}

std::vector<ManifestEntry> load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(path, "cannot open manifest");
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& field, int line_no) -> std::optional<fs::path> {
    if (field.empty() || field == "-") return std::nullopt;
    fs::path p(field);
    if (p.is_relative()) p = base / p;
    if (!fs::exists(p)) fail(path, "line " + std::to_string(line_no) + ": missing file " + p.string());
    return p;
  };

  std::vector<ManifestEntry> entries;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
    if (fields.size() < 2 || fields.size() > 4)
      fail(path, "line " + std::to_string(line_no) + ": expected 2 to 4 tab-separated fields");
    fields.resize(4);
    ManifestEntry e;
    auto image = resolve(fields[0], line_no);
    auto scribbles = resolve(fields[1], line_no);
    if (!image || !scribbles) fail(path, "line " + std::to_string(line_no) + ": image and scribbles are required");
    e.image = *image;
    e.scribbles = *scribbles;
    e.ground_truth = resolve(fields[2], line_no);
    e.unary = resolve(fields[3], line_no);
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace wsseg
