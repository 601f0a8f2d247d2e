#include "mseed/boundary_ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mseed/errors.hpp"

namespace mseed {

LabelMap::LabelMap(std::size_t height, std::size_t width, std::size_t num_classes, int fill)
    : LabelMap(height, width, num_classes, std::vector<int>(height * width, fill)) {}

LabelMap::LabelMap(std::size_t height, std::size_t width, std::size_t num_classes, std::vector<int> labels)
    : height_(height), width_(width), num_classes_(num_classes), labels_(std::move(labels)) {
    if (height == 0 || width == 0 || num_classes == 0) throw ContractError("LabelMap: dimensions must be positive");
    if (labels_.size() != height * width) throw ContractError("LabelMap: label count does not match H x W");
    for (int v : labels_) {
        if (v < 0 || static_cast<std::size_t>(v) >= num_classes) {
            throw ContractError("LabelMap: label " + std::to_string(v) + " outside [0, " + std::to_string(num_classes) +
                                ")");
        }
    }
}

void LabelMap::set(std::size_t y, std::size_t x, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes_) {
        throw ContractError("LabelMap::set: label " + std::to_string(label) + " out of range");
    }
    labels_[y * width_ + x] = label;
}

Tensor LabelMap::one_hot() const {
    Tensor t({num_classes_, height_, width_});
    const std::size_t hw = height_ * width_;
    for (std::size_t i = 0; i < hw; ++i) t[static_cast<std::size_t>(labels_[i]) * hw + i] = 1.0;
    return t;
}

LabelMap argmax_labels(const Tensor& scores) {
    require_rank(scores, 3, "argmax_labels");
    const std::size_t n = scores.dim(0), h = scores.dim(1), w = scores.dim(2);
    const std::size_t hw = h * w;
    std::vector<int> labels(hw, 0);
    for (std::size_t i = 0; i < hw; ++i) {
        double best = scores[i];
        for (std::size_t k = 1; k < n; ++k) {
            if (scores[k * hw + i] > best) {
                best = scores[k * hw + i];
                labels[i] = static_cast<int>(k);
            }
        }
    }
    return LabelMap(h, w, n, std::move(labels));
}

DiamondTemplate diamond_offsets(int radius) {
    if (radius < 1) throw ConfigError("diamond radius must be >= 1, got " + std::to_string(radius));
    DiamondTemplate t;
    t.radius = radius;
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            const int d = std::abs(dy) + std::abs(dx);
            if (d >= 1 && d <= radius) t.offsets.push_back({dy, dx});
        }
    }
    return t;
}

namespace {

template <typename Visit>
void for_each_neighbor(std::size_t h, std::size_t w, std::size_t y, std::size_t x, const DiamondTemplate& tpl,
                       Visit&& visit) {
    for (std::size_t o = 0; o < tpl.offsets.size(); ++o) {
        const long ny = static_cast<long>(y) + tpl.offsets[o].dy;
        const long nx = static_cast<long>(x) + tpl.offsets[o].dx;
        if (ny < 0 || nx < 0 || ny >= static_cast<long>(h) || nx >= static_cast<long>(w)) continue;
        visit(o, static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx));
    }
}

} // namespace

Tensor binary_boundary_label(const LabelMap& labels, int radius) {
    const auto tpl = diamond_offsets(radius);
    const std::size_t h = labels.height(), w = labels.width();
    Tensor out({h, w});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const int own = labels(y, x);
            bool edge = false;
            for_each_neighbor(h, w, y, x, tpl, [&](std::size_t, std::size_t q) { edge = edge || labels[q] != own; });
            out[y * w + x] = edge ? 1.0 : 0.0;
        }
    }
    return out;
}

Tensor semantic_boundary_label(const LabelMap& labels, int radius) {
    const auto tpl = diamond_offsets(radius);
    const std::size_t h = labels.height(), w = labels.width(), hw = h * w;
    Tensor out({labels.num_classes(), h, w});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t p = y * w + x;
            const int own = labels[p];
            for_each_neighbor(h, w, y, x, tpl, [&](std::size_t, std::size_t q) {
                const int other = labels[q];
                if (other == own) return;
                out[static_cast<std::size_t>(own) * hw + p] = 1.0;
                out[static_cast<std::size_t>(other) * hw + p] = 1.0;
            });
        }
    }
    return out;
}

PseudoBoundary pseudo_semantic_boundary(const Tensor& probs, int radius) {
    if (probs.empty()) throw ContractError("pseudo_semantic_boundary: empty tensor");
    require_rank(probs, 3, "pseudo_semantic_boundary");
    const auto tpl = diamond_offsets(radius);
    const std::size_t n = probs.dim(0), h = probs.dim(1), w = probs.dim(2), hw = h * w;
    PseudoBoundary res{Tensor(probs.shape()), std::vector<int>(probs.size(), -1), radius};
    for (std::size_t k = 0; k < n; ++k) {
        const double* s = probs.storage().data() + k * hw;
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t p = y * w + x;
                double best = -1.0;
                int arg = -1;
                for_each_neighbor(h, w, y, x, tpl, [&](std::size_t o, std::size_t q) {
                    const double d = std::abs(s[q] - s[p]);
                    if (d > best) {
                        best = d;
                        arg = static_cast<int>(o);
                    }
                });
                res.value[k * hw + p] = arg < 0 ? 0.0 : best;
                res.argmax[k * hw + p] = arg;
            }
        }
    }
    return res;
}

Tensor pseudo_semantic_boundary_backward(const Tensor& grad_out, const Tensor& probs, const PseudoBoundary& forward) {
    require_same_shape(grad_out, probs, "pseudo_semantic_boundary_backward");
    require_same_shape(forward.value, probs, "pseudo_semantic_boundary_backward");
    const auto tpl = diamond_offsets(forward.radius);
    const std::size_t n = probs.dim(0), h = probs.dim(1), w = probs.dim(2), hw = h * w;
    Tensor grad(probs.shape());
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t idx = k * hw + y * w + x;
                const int arg = forward.argmax[idx];
                if (arg < 0 || grad_out[idx] == 0.0) continue;
                const auto off = tpl.offsets[static_cast<std::size_t>(arg)];
                const std::size_t qidx = k * hw + static_cast<std::size_t>(static_cast<long>(y) + off.dy) * w +
                                         static_cast<std::size_t>(static_cast<long>(x) + off.dx);
                const double diff = probs[qidx] - probs[idx];
                const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                grad[qidx] += grad_out[idx] * sign;
                grad[idx] -= grad_out[idx] * sign;
            }
        }
    }
    return grad;
}

} // namespace mseed
