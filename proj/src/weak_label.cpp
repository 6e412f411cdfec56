#include "wsds/weak_label.hpp"

#include <algorithm>

#include "wsds/errors.hpp"

namespace wsds {

WeakLabelMap::WeakLabelMap(std::size_t height, std::size_t width)
    : height_(height), width_(width), labels_(height * width, WeakLabel::kUnknown) {
  if (height == 0 || width == 0) throw ShapeError("label map extents must be positive");
}

std::size_t WeakLabelMap::labeled_count() const {
  return labels_.size() - static_cast<std::size_t>(
                              std::count(labels_.begin(), labels_.end(), WeakLabel::kUnknown));
}

std::size_t WeakLabelMap::foreground_count() const {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), WeakLabel::kForeground));
}

std::size_t WeakLabelMap::background_count() const {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), WeakLabel::kBackground));
}

Tensor WeakLabelMap::labeled_mask() const {
  Tensor t({1, height_, width_});
  for (std::size_t i = 0; i < labels_.size(); ++i) t[i] = labels_[i] != WeakLabel::kUnknown;
  return t;
}

Tensor WeakLabelMap::foreground_mask() const {
  Tensor t({1, height_, width_});
  for (std::size_t i = 0; i < labels_.size(); ++i) t[i] = labels_[i] == WeakLabel::kForeground;
  return t;
}

}  // namespace wsds
