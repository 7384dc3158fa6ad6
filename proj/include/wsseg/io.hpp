#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "wsseg/core.hpp"

namespace wsseg {

/// Unreadable, malformed or unsupported input data.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit RGB or grayscale PNG, or binary PPM/PGM. Grayscale is replicated to
/// three channels, alpha is dropped.
ImageBuffer load_image(const std::filesystem::path& path);
void save_image_png(const ImageBuffer& img, const std::filesystem::path& path);

/// Indexed (or 8-bit grayscale) PNG whose index is the class.
LabelMask load_mask(const std::filesystem::path& path, int classes, int ignore = kDefaultIgnore);
/// Indexed PNG with the palette's colors; ignore pixels are written as 255.
void save_mask(const LabelMask& mask, const ClassPalette& palette, const std::filesystem::path& path);

// UNR1: "UNR1", u32 LE height, width, classes, then float32 LE payload in
// (y, x, c) channel-fastest order.
inline constexpr std::size_t kUnaryHeaderBytes = 16;
UnaryField load_unary(const std::filesystem::path& path);
void save_unary(const UnaryField& field, const std::filesystem::path& path);

struct ManifestEntry {
  std::filesystem::path image;
  std::filesystem::path scribbles;
  std::optional<std::filesystem::path> ground_truth;
  std::optional<std::filesystem::path> unary;
};

/// One tab-separated sample per line: image, scribbles[, gt[, unary]].
/// Blank lines and lines starting with '#' are skipped, an empty or "-"
/// field means absent, relative paths resolve against the manifest's
/// directory. Every referenced file must exist.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

}  // namespace wsseg
