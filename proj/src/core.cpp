#include "wsseg/core.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>

namespace wsseg {

namespace {

void check_dims(int height, int width) {
  if (height < 1 || width < 1)
    throw std::invalid_argument("image dimensions must be positive, got " + std::to_string(height) + "x" +
                                std::to_string(width));
}

const char* const kVocNames[] = {"background", "aeroplane", "bicycle", "bird",        "boat",
                                 "bottle",     "bus",       "car",     "cat",         "chair",
                                 "cow",        "diningtable", "dog",   "horse",       "motorbike",
                                 "person",     "pottedplant", "sheep", "sofa",        "train",
                                 "tvmonitor"};

}  // namespace

ImageBuffer::ImageBuffer(int height, int width) : height_(height), width_(width) {
  check_dims(height, width);
  rgb_.assign(pixels() * 3, 0.0);
}

ImageBuffer::ImageBuffer(int height, int width, std::vector<double> rgb)
    : height_(height), width_(width), rgb_(std::move(rgb)) {
  check_dims(height, width);
  if (rgb_.size() != pixels() * 3) throw std::invalid_argument("rgb payload does not match image dimensions");
  for (double v : rgb_)
    if (!std::isfinite(v) || v < 0.0 || v > 255.0)
      throw std::invalid_argument("image channel value outside [0, 255]");
}

void ImageBuffer::set(int y, int x, std::array<double, 3> color) {
  for (double v : color)
    if (!std::isfinite(v) || v < 0.0 || v > 255.0)
      throw std::invalid_argument("image channel value outside [0, 255]");
  std::copy(color.begin(), color.end(), rgb_.begin() + (static_cast<std::ptrdiff_t>(y) * width_ + x) * 3);
}

LabelMask::LabelMask(int height, int width, int fill, int ignore_value)
    : height_(height), width_(width), ignore_(ignore_value) {
  check_dims(height, width);
  labels_.assign(static_cast<std::size_t>(height) * width, fill);
}

LabelMask::LabelMask(int height, int width, std::vector<int> labels, int ignore_value)
    : height_(height), width_(width), ignore_(ignore_value), labels_(std::move(labels)) {
  check_dims(height, width);
  if (labels_.size() != static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("label payload does not match mask dimensions");
}

bool LabelMask::complete() const {
  return std::none_of(labels_.begin(), labels_.end(), [&](int l) { return l == ignore_; });
}

std::size_t LabelMask::labeled_count() const {
  return static_cast<std::size_t>(
      std::count_if(labels_.begin(), labels_.end(), [&](int l) { return l != ignore_; }));
}

void LabelMask::validate(int classes) const {
  for (int l : labels_)
    if (l != ignore_ && (l < 0 || l >= classes))
      throw std::invalid_argument("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
}

namespace detail {

PixelClassField::PixelClassField(int height, int width, int classes, double fill)
    : height_(height), width_(width), classes_(classes) {
  check_dims(height, width);
  if (classes < 1) throw std::invalid_argument("class count must be positive");
  values_.assign(pixels() * classes, fill);
}

PixelClassField::PixelClassField(int height, int width, int classes, std::vector<double> values)
    : height_(height), width_(width), classes_(classes), values_(std::move(values)) {
  check_dims(height, width);
  if (classes < 1) throw std::invalid_argument("class count must be positive");
  if (values_.size() != pixels() * classes)
    throw std::invalid_argument("field payload does not match H x W x C");
}

}  // namespace detail

UnaryField::UnaryField(int height, int width, int classes, double fill)
    : PixelClassField(height, width, classes, fill) {
  validate();
}

UnaryField::UnaryField(int height, int width, int classes, std::vector<double> logits)
    : PixelClassField(height, width, classes, std::move(logits)) {
  validate();
}

void UnaryField::validate() const {
  for (double v : values_)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite logit in unary field");
}

SoftSeg::SoftSeg(int height, int width, int classes, double fill) : PixelClassField(height, width, classes, fill) {}

SoftSeg::SoftSeg(int height, int width, int classes, std::vector<double> probs)
    : PixelClassField(height, width, classes, std::move(probs)) {}

void SoftSeg::validate(double tol) const {
  for (std::size_t i = 0; i < pixels(); ++i) {
    double sum = 0.0;
    for (double v : pixel(i)) {
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("soft segmentation entry outside [0, 1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > tol) throw std::invalid_argument("soft segmentation pixel does not sum to 1");
  }
}

ClassPalette::ClassPalette(std::vector<Rgb8> colors, std::vector<std::string> names)
    : colors_(std::move(colors)), names_(std::move(names)) {
  if (colors_.empty()) throw std::invalid_argument("palette needs at least one class");
  if (names_.size() != colors_.size()) throw std::invalid_argument("palette names and colors differ in length");
  std::set<std::tuple<int, int, int>> seen;
  for (const auto& c : colors_)
    if (!seen.emplace(c.r, c.g, c.b).second) throw std::invalid_argument("palette colors must be distinct");
}

ClassPalette ClassPalette::voc() { return voc_colormap(21); }

ClassPalette ClassPalette::voc_colormap(int classes) {
  if (classes < 1 || classes > 255) throw std::invalid_argument("palette supports 1..255 classes");
  std::vector<Rgb8> colors;
  std::vector<std::string> names;
  for (int c = 0; c < classes; ++c) {
    int r = 0, g = 0, b = 0, id = c;
    for (int bit = 7; bit >= 0 && id; --bit, id >>= 3) {
      r |= ((id >> 0) & 1) << bit;
      g |= ((id >> 1) & 1) << bit;
      b |= ((id >> 2) & 1) << bit;
    }
    colors.push_back({static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)});
    names.emplace_back(c < 21 ? kVocNames[c] : "class_" + std::to_string(c));
  }
  return ClassPalette(std::move(colors), std::move(names));
}

SoftSeg softmax_over_classes(const UnaryField& u) {
  SoftSeg s(u.height(), u.width(), u.classes());
  for (std::size_t i = 0; i < u.pixels(); ++i) {
    auto in = u.pixel(i);
    auto out = s.pixel(i);
    const double m = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) z += (out[c] = std::exp(in[c] - m));
    for (double& v : out) v /= z;
  }
  return s;
}

LabelMask argmax_labeling(const SoftSeg& s, int ignore_value) {
  LabelMask mask(s.height(), s.width(), 0, ignore_value);
  for (std::size_t i = 0; i < s.pixels(); ++i) {
    auto p = s.pixel(i);
    mask.set(i, static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
  }
  return mask;
}

SoftSeg one_hot(const LabelMask& mask, int classes) {
  if (!mask.complete()) throw std::invalid_argument("cannot one-hot partial mask");
  mask.validate(classes);
  SoftSeg s(mask.height(), mask.width(), classes, 0.0);
  for (std::size_t i = 0; i < mask.pixels(); ++i) s.pixel(i)[mask[i]] = 1.0;
  return s;
}

}  // namespace wsseg
