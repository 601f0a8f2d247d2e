#pragma once

#include <cstddef>
#include <vector>

#include "mseed/tensor.hpp"

namespace mseed {

/// H x W map of category ids in [0, num_classes).
class LabelMap {
public:
    LabelMap() = default;
    LabelMap(std::size_t height, std::size_t width, std::size_t num_classes, int fill = 0);
    LabelMap(std::size_t height, std::size_t width, std::size_t num_classes, std::vector<int> labels);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t num_classes() const noexcept { return num_classes_; }
    std::size_t size() const noexcept { return labels_.size(); }

    int operator()(std::size_t y, std::size_t x) const { return labels_[y * width_ + x]; }
    int operator[](std::size_t i) const { return labels_[i]; }
    void set(std::size_t y, std::size_t x, int label);

    const std::vector<int>& labels() const noexcept { return labels_; }

    /// N x H x W one-hot encoding.
    Tensor one_hot() const;

    bool operator==(const LabelMap&) const = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::size_t num_classes_ = 0;
    std::vector<int> labels_;
};

/// Per-pixel argmax over channels of an N x H x W tensor; ties go to the
/// lowest class id.
LabelMap argmax_labels(const Tensor& scores);

} // namespace mseed
