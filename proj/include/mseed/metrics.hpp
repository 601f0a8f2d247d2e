#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include <json.hpp>

#include "mseed/label_map.hpp"

namespace mseed::metrics {

/// Exact squared Euclidean distance from every pixel to the nearest site
/// (two-pass lower-envelope transform). Pixels with no site anywhere get
/// +infinity.
std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& sites, std::size_t height,
                                               std::size_t width);

/// Per-class scores; classes excluded from the mean hold std::nullopt. A class
/// is excluded when neither map contains it. A present class with an empty
/// boundary (F-score) or band (BIoU) on both sides scores 1.
struct ClassScores {
    std::vector<std::optional<double>> per_class;
    double mean = 0.0;
};

struct MetricsReport {
    std::size_t num_classes = 0;
    ClassScores iou;
    std::map<int, ClassScores> fscore; // keyed by pixel threshold
    std::map<int, ClassScores> biou;
    std::uint64_t images = 0;
    std::uint64_t pixels = 0;
    std::vector<std::uint64_t> gt_pixels;   // per class
    std::vector<std::uint64_t> pred_pixels; // per class
};

nlohmann::json to_json(const MetricsReport& report);

/// Dataset-level accumulation: integer counts from every image are summed
/// before any ratio is taken.
class MetricsAccumulator {
public:
    MetricsAccumulator(std::size_t num_classes, std::vector<int> fscore_thresholds, std::vector<int> biou_thresholds);

    void add(const LabelMap& pred, const LabelMap& gt);
    void merge(const MetricsAccumulator& other);
    MetricsReport report() const;

private:
    struct RatioCounts {
        std::vector<std::uint64_t> num, den;
    };
    struct BoundaryCounts {
        std::vector<std::uint64_t> pred_total, pred_matched, gt_total, gt_matched;
    };

    std::size_t num_classes_;
    std::vector<int> fscore_thresholds_;
    std::vector<int> biou_thresholds_;
    std::uint64_t images_ = 0;
    std::uint64_t pixels_ = 0;
    std::vector<std::uint64_t> gt_pixels_, pred_pixels_;
    RatioCounts iou_;
    std::vector<BoundaryCounts> fscore_;
    std::vector<RatioCounts> biou_;
};

/// Single-image convenience wrappers.
ClassScores miou(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes);
ClassScores boundary_fscore(const LabelMap& pred, const LabelMap& gt, int d_px, std::size_t num_classes);
ClassScores biou(const LabelMap& pred, const LabelMap& gt, int d_px, std::size_t num_classes);

} // namespace mseed::metrics
