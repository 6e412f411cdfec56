#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "wsds/tensor.hpp"

namespace wsds {

/// Per-pixel class of a weak annotation. The values double as the grayscale
/// codes of the trimap PNG encoding.
enum class WeakLabel : std::uint8_t { kBackground = 0, kUnknown = 128, kForeground = 255 };

/// Trimap of one image: foreground scribble, background scribble, unknown.
class WeakLabelMap {
 public:
  WeakLabelMap() = default;
  /// All pixels start UNKNOWN.
  WeakLabelMap(std::size_t height, std::size_t width);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return labels_.size(); }

  WeakLabel at(std::size_t y, std::size_t x) const { return labels_.at(y * width_ + x); }
  void set(std::size_t y, std::size_t x, WeakLabel label) { labels_.at(y * width_ + x) = label; }
  WeakLabel operator[](std::size_t i) const { return labels_[i]; }
  const std::vector<WeakLabel>& labels() const { return labels_; }

  std::size_t labeled_count() const;
  std::size_t foreground_count() const;
  std::size_t background_count() const;

  /// [1,H,W] indicator of the labeled set B_l.
  Tensor labeled_mask() const;
  /// [1,H,W] indicator of the foreground set B_l^f (also the target y on B_l).
  Tensor foreground_mask() const;

  bool operator==(const WeakLabelMap&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<WeakLabel> labels_;
};

}  // namespace wsds
