#include "mseed/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mseed/boundary_ops.hpp"
#include "mseed/errors.hpp"

namespace mseed::metrics {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared distance transform of a sampled function (lower envelope of
// parabolas). Entries equal to +inf are not sites.
void distance_1d(const std::vector<double>& f, std::vector<double>& out) {
    const std::size_t n = f.size();
    std::vector<std::size_t> v;
    std::vector<double> z;
    v.reserve(n);
    z.reserve(n + 1);
    for (std::size_t q = 0; q < n; ++q) {
        if (!std::isfinite(f[q])) continue;
        const double fq = f[q] + static_cast<double>(q * q);
        while (!v.empty()) {
            const std::size_t p = v.back();
            const double s = (fq - (f[p] + static_cast<double>(p * p))) / (2.0 * (static_cast<double>(q) - static_cast<double>(p)));
            if (s <= z.back()) {
                v.pop_back();
                z.pop_back();
                if (v.empty()) z.clear();
            } else {
                v.push_back(q);
                z.push_back(s);
                break;
            }
        }
        if (v.empty()) {
            v.push_back(q);
            z.assign(1, -kInf);
        }
    }
    out.assign(n, kInf);
    if (v.empty()) return;
    z.push_back(kInf);
    std::size_t k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        while (z[k + 1] < static_cast<double>(q)) ++k;
        const double d = static_cast<double>(q) - static_cast<double>(v[k]);
        out[q] = d * d + f[v[k]];
    }
}

void check_pair(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes) {
    if (pred.height() != gt.height() || pred.width() != gt.width()) {
        throw ContractError("metrics: prediction and ground truth sizes differ");
    }
    if (pred.num_classes() > num_classes || gt.num_classes() > num_classes) {
        throw ConfigError("metrics: label map class count exceeds " + std::to_string(num_classes));
    }
}

// Pixels of `mask` whose Euclidean distance to the nearest non-mask pixel
// (the image exterior counts as non-mask) is at most d.
std::vector<std::uint8_t> boundary_band(const std::vector<std::uint8_t>& mask, std::size_t h, std::size_t w, int d) {
    std::vector<std::uint8_t> complement(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) complement[i] = mask[i] ? 0 : 1;
    const auto dist = squared_distance_transform(complement, h, w);
    const double d2 = static_cast<double>(d) * d;
    std::vector<std::uint8_t> band(mask.size(), 0);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t i = y * w + x;
            if (!mask[i]) continue;
            const double frame = static_cast<double>(std::min({y + 1, h - y, x + 1, w - x}));
            band[i] = std::min(dist[i], frame * frame) <= d2 ? 1 : 0;
        }
    }
    return band;
}

double safe_ratio(std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

void finalize_mean(ClassScores& scores) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& v : scores.per_class) {
        if (v) {
            sum += *v;
            ++n;
        }
    }
    scores.mean = n == 0 ? 0.0 : sum / static_cast<double>(n);
}

nlohmann::json scores_json(const ClassScores& s) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& v : s.per_class) per.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    return {{"per_class", per}, {"mean", s.mean}};
}

} // namespace

std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& sites, std::size_t height,
                                               std::size_t width) {
    if (sites.size() != height * width) throw ContractError("distance transform: site mask size mismatch");
    std::vector<double> grid(sites.size(), kInf);
    std::vector<double> f, out;
    f.resize(height);
    for (std::size_t x = 0; x < width; ++x) {
        for (std::size_t y = 0; y < height; ++y) f[y] = sites[y * width + x] ? 0.0 : kInf;
        distance_1d(f, out);
        for (std::size_t y = 0; y < height; ++y) grid[y * width + x] = out[y];
    }
    f.resize(width);
    for (std::size_t y = 0; y < height; ++y) {
        std::copy_n(grid.begin() + static_cast<long>(y * width), width, f.begin());
        distance_1d(f, out);
        std::copy(out.begin(), out.end(), grid.begin() + static_cast<long>(y * width));
    }
    return grid;
}

MetricsAccumulator::MetricsAccumulator(std::size_t num_classes, std::vector<int> fscore_thresholds,
                                       std::vector<int> biou_thresholds)
    : num_classes_(num_classes),
      fscore_thresholds_(std::move(fscore_thresholds)),
      biou_thresholds_(std::move(biou_thresholds)),
      gt_pixels_(num_classes, 0),
      pred_pixels_(num_classes, 0) {
    if (num_classes == 0) throw ConfigError("metrics: num_classes must be positive");
    for (int d : fscore_thresholds_) {
        if (d < 1) throw ConfigError("metrics: F-score threshold must be >= 1 pixel");
    }
    for (int d : biou_thresholds_) {
        if (d < 1) throw ConfigError("metrics: BIoU threshold must be >= 1 pixel");
    }
    iou_ = {std::vector<std::uint64_t>(num_classes, 0), std::vector<std::uint64_t>(num_classes, 0)};
    for (std::size_t t = 0; t < fscore_thresholds_.size(); ++t) {
        const std::vector<std::uint64_t> zero(num_classes, 0);
        fscore_.push_back({zero, zero, zero, zero});
    }
    for (std::size_t t = 0; t < biou_thresholds_.size(); ++t) {
        biou_.push_back({std::vector<std::uint64_t>(num_classes, 0), std::vector<std::uint64_t>(num_classes, 0)});
    }
}

void MetricsAccumulator::add(const LabelMap& pred, const LabelMap& gt) {
    check_pair(pred, gt, num_classes_);
    const std::size_t h = gt.height(), w = gt.width(), hw = h * w;
    ++images_;
    pixels_ += hw;
    for (std::size_t i = 0; i < hw; ++i) {
        const auto p = static_cast<std::size_t>(pred[i]);
        const auto g = static_cast<std::size_t>(gt[i]);
        ++pred_pixels_[p];
        ++gt_pixels_[g];
        if (p == g) {
            ++iou_.num[p];
            ++iou_.den[p];
        } else {
            ++iou_.den[p];
            ++iou_.den[g];
        }
    }

    if (!fscore_thresholds_.empty()) {
        const LabelMap pred_n(h, w, num_classes_, pred.labels());
        const LabelMap gt_n(h, w, num_classes_, gt.labels());
        const Tensor pred_b = semantic_boundary_label(pred_n, 1);
        const Tensor gt_b = semantic_boundary_label(gt_n, 1);
        for (std::size_t k = 0; k < num_classes_; ++k) {
            std::vector<std::uint8_t> ps(hw), gs(hw);
            bool any_p = false, any_g = false;
            for (std::size_t i = 0; i < hw; ++i) {
                ps[i] = pred_b[k * hw + i] > 0.5 ? 1 : 0;
                gs[i] = gt_b[k * hw + i] > 0.5 ? 1 : 0;
                any_p = any_p || ps[i];
                any_g = any_g || gs[i];
            }
            if (!any_p && !any_g) continue;
            const auto dist_to_gt = squared_distance_transform(gs, h, w);
            const auto dist_to_pred = squared_distance_transform(ps, h, w);
            for (std::size_t t = 0; t < fscore_thresholds_.size(); ++t) {
                const double d2 = static_cast<double>(fscore_thresholds_[t]) * fscore_thresholds_[t];
                auto& c = fscore_[t];
                for (std::size_t i = 0; i < hw; ++i) {
                    if (ps[i]) {
                        ++c.pred_total[k];
                        if (dist_to_gt[i] <= d2) ++c.pred_matched[k];
                    }
                    if (gs[i]) {
                        ++c.gt_total[k];
                        if (dist_to_pred[i] <= d2) ++c.gt_matched[k];
                    }
                }
            }
        }
    }

    for (std::size_t k = 0; k < num_classes_ && !biou_thresholds_.empty(); ++k) {
        std::vector<std::uint8_t> pm(hw), gm(hw);
        bool any = false;
        for (std::size_t i = 0; i < hw; ++i) {
            pm[i] = static_cast<std::size_t>(pred[i]) == k ? 1 : 0;
            gm[i] = static_cast<std::size_t>(gt[i]) == k ? 1 : 0;
            any = any || pm[i] || gm[i];
        }
        if (!any) continue;
        for (std::size_t t = 0; t < biou_thresholds_.size(); ++t) {
            const auto pb = boundary_band(pm, h, w, biou_thresholds_[t]);
            const auto gb = boundary_band(gm, h, w, biou_thresholds_[t]);
            for (std::size_t i = 0; i < hw; ++i) {
                if (pb[i] && gb[i]) ++biou_[t].num[k];
                if (pb[i] || gb[i]) ++biou_[t].den[k];
            }
        }
    }
}

void MetricsAccumulator::merge(const MetricsAccumulator& other) {
    if (other.num_classes_ != num_classes_ || other.fscore_thresholds_ != fscore_thresholds_ ||
        other.biou_thresholds_ != biou_thresholds_) {
        throw ContractError("metrics: cannot merge accumulators with different settings");
    }
    auto add_vec = [](std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    images_ += other.images_;
    pixels_ += other.pixels_;
    add_vec(gt_pixels_, other.gt_pixels_);
    add_vec(pred_pixels_, other.pred_pixels_);
    add_vec(iou_.num, other.iou_.num);
    add_vec(iou_.den, other.iou_.den);
    for (std::size_t t = 0; t < fscore_.size(); ++t) {
        add_vec(fscore_[t].pred_total, other.fscore_[t].pred_total);
        add_vec(fscore_[t].pred_matched, other.fscore_[t].pred_matched);
        add_vec(fscore_[t].gt_total, other.fscore_[t].gt_total);
        add_vec(fscore_[t].gt_matched, other.fscore_[t].gt_matched);
    }
    for (std::size_t t = 0; t < biou_.size(); ++t) {
        add_vec(biou_[t].num, other.biou_[t].num);
        add_vec(biou_[t].den, other.biou_[t].den);
    }
}

MetricsReport MetricsAccumulator::report() const {
    MetricsReport r;
    r.num_classes = num_classes_;
    r.images = images_;
    r.pixels = pixels_;
    r.gt_pixels = gt_pixels_;
    r.pred_pixels = pred_pixels_;
    auto present = [&](std::size_t k) { return gt_pixels_[k] > 0 || pred_pixels_[k] > 0; };

    r.iou.per_class.resize(num_classes_);
    for (std::size_t k = 0; k < num_classes_; ++k) {
        if (present(k)) r.iou.per_class[k] = safe_ratio(iou_.num[k], iou_.den[k]);
    }
    finalize_mean(r.iou);

    for (std::size_t t = 0; t < fscore_thresholds_.size(); ++t) {
        ClassScores s;
        s.per_class.resize(num_classes_);
        const auto& c = fscore_[t];
        for (std::size_t k = 0; k < num_classes_; ++k) {
            if (c.pred_total[k] == 0 && c.gt_total[k] == 0) {
                // present but uniform on both sides: nothing to miss
                if (present(k)) s.per_class[k] = 1.0;
                continue;
            }
            const double p = safe_ratio(c.pred_matched[k], c.pred_total[k]);
            const double rc = safe_ratio(c.gt_matched[k], c.gt_total[k]);
            s.per_class[k] = p + rc == 0.0 ? 0.0 : 2.0 * p * rc / (p + rc);
        }
        finalize_mean(s);
        r.fscore[fscore_thresholds_[t]] = std::move(s);
    }

    for (std::size_t t = 0; t < biou_thresholds_.size(); ++t) {
        ClassScores s;
        s.per_class.resize(num_classes_);
        for (std::size_t k = 0; k < num_classes_; ++k) {
            if (!present(k)) continue;
            // both bands empty only when both masks are empty, which `present` excludes
            s.per_class[k] = biou_[t].den[k] == 0 ? 1.0 : safe_ratio(biou_[t].num[k], biou_[t].den[k]);
        }
        finalize_mean(s);
        r.biou[biou_thresholds_[t]] = std::move(s);
    }
    return r;
}

nlohmann::json to_json(const MetricsReport& report) {
    nlohmann::json j;
    j["num_classes"] = report.num_classes;
    j["images"] = report.images;
    j["pixels"] = report.pixels;
    j["gt_pixels"] = report.gt_pixels;
    j["pred_pixels"] = report.pred_pixels;
    j["iou"] = scores_json(report.iou);
    j["miou"] = report.iou.mean;
    nlohmann::json f = nlohmann::json::object();
    for (const auto& [d, s] : report.fscore) f[std::to_string(d)] = scores_json(s);
    j["fscore"] = f;
    nlohmann::json b = nlohmann::json::object();
    for (const auto& [d, s] : report.biou) b[std::to_string(d)] = scores_json(s);
    j["biou"] = b;
    return j;
}

ClassScores miou(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes) {
    MetricsAccumulator acc(num_classes, {}, {});
    acc.add(pred, gt);
    return acc.report().iou;
}

ClassScores boundary_fscore(const LabelMap& pred, const LabelMap& gt, int d_px, std::size_t num_classes) {
    MetricsAccumulator acc(num_classes, {d_px}, {});
    acc.add(pred, gt);
    return acc.report().fscore.at(d_px);
}

ClassScores biou(const LabelMap& pred, const LabelMap& gt, int d_px, std::size_t num_classes) {
    MetricsAccumulator acc(num_classes, {}, {d_px});
    acc.add(pred, gt);
    return acc.report().biou.at(d_px);
}

} // namespace mseed::metrics
