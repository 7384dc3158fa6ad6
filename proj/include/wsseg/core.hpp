#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace wsseg {

inline constexpr int kDefaultIgnore = 255;

/// Row-major H x W RGB image, channel values in [0, 255].
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int height, int width);
  ImageBuffer(int height, int width, std::vector<double> rgb);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t pixels() const { return static_cast<std::size_t>(height_) * width_; }

  double at(int y, int x, int c) const { return rgb_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
  void set(int y, int x, std::array<double, 3> color);

  std::span<const double> data() const { return rgb_; }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> rgb_;
};

/// Hard labels with an ignore value. Houses both ground truth and scribbles.
class LabelMask {
 public:
  LabelMask() = default;
  LabelMask(int height, int width, int fill = kDefaultIgnore, int ignore_value = kDefaultIgnore);
  LabelMask(int height, int width, std::vector<int> labels, int ignore_value = kDefaultIgnore);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t pixels() const { return labels_.size(); }
  int ignore_value() const { return ignore_; }

  int at(int y, int x) const { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  int operator[](std::size_t i) const { return labels_[i]; }
  void set(int y, int x, int label) { labels_[static_cast<std::size_t>(y) * width_ + x] = label; }
  void set(std::size_t i, int label) { labels_[i] = label; }

  bool is_ignore(std::size_t i) const { return labels_[i] == ignore_; }
  bool complete() const;
  std::size_t labeled_count() const;

  /// Throws std::invalid_argument if a non-ignore label is outside [0, classes).
  void validate(int classes) const;

  std::span<const int> data() const { return labels_; }
  bool operator==(const LabelMask&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int ignore_ = kDefaultIgnore;
  std::vector<int> labels_;
};

namespace detail {

// Shared storage for the two H x W x C fields. Layout is channel-fastest:
// element (y, x, c) lives at (y * W + x) * C + c.
class PixelClassField {
 public:
  PixelClassField() = default;
  PixelClassField(int height, int width, int classes, double fill = 0.0);
  PixelClassField(int height, int width, int classes, std::vector<double> values);

  int height() const { return height_; }
  int width() const { return width_; }
  int classes() const { return classes_; }
  std::size_t pixels() const { return static_cast<std::size_t>(height_) * width_; }

  std::span<const double> pixel(std::size_t i) const {
    return {values_.data() + i * classes_, static_cast<std::size_t>(classes_)};
  }
  std::span<double> pixel(std::size_t i) {
    return {values_.data() + i * classes_, static_cast<std::size_t>(classes_)};
  }
  double at(int y, int x, int c) const {
    return values_[(static_cast<std::size_t>(y) * width_ + x) * classes_ + c];
  }

  std::span<const double> data() const { return values_; }
  std::span<double> data() { return values_; }

  bool same_shape(const PixelClassField& o) const {
    return height_ == o.height_ && width_ == o.width_ && classes_ == o.classes_;
  }
  bool operator==(const PixelClassField&) const = default;

 protected:
  int height_ = 0;
  int width_ = 0;
  int classes_ = 0;
  std::vector<double> values_;
};

}  // namespace detail

/// Real-valued logits. phi_p(l) = -log softmax(logits_p)(l).
class UnaryField : public detail::PixelClassField {
 public:
  UnaryField() = default;
  UnaryField(int height, int width, int classes, double fill = 0.0);
  UnaryField(int height, int width, int classes, std::vector<double> logits);

  /// Throws if any entry is non-finite.
  void validate() const;
};

/// Per-pixel class distribution.
class SoftSeg : public detail::PixelClassField {
 public:
  SoftSeg() = default;
  SoftSeg(int height, int width, int classes, double fill = 0.0);
  SoftSeg(int height, int width, int classes, std::vector<double> probs);

  /// Throws unless entries lie in [0, 1] and every pixel sums to 1 within tol.
  void validate(double tol = 1e-6) const;
};

struct Rgb8 {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb8&) const = default;
};

class ClassPalette {
 public:
  ClassPalette(std::vector<Rgb8> colors, std::vector<std::string> names);

  /// The standard 21-class VOC palette and class names.
  static ClassPalette voc();
  /// VOC colormap for an arbitrary class count; names are VOC names where available.
  static ClassPalette voc_colormap(int classes);

  int classes() const { return static_cast<int>(colors_.size()); }
  const Rgb8& color(int c) const { return colors_.at(c); }
  const std::string& name(int c) const { return names_.at(c); }

 private:
  std::vector<Rgb8> colors_;
  std::vector<std::string> names_;
};

/// Max-shifted softmax per pixel.
SoftSeg softmax_over_classes(const UnaryField& u);

/// Lowest class index attaining the maximum wins.
LabelMask argmax_labeling(const SoftSeg& s, int ignore_value = kDefaultIgnore);

SoftSeg one_hot(const LabelMask& mask, int classes);

}  // namespace wsseg
