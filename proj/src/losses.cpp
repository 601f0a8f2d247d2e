#include "mseed/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mseed/errors.hpp"
#include "mseed/ops.hpp"

namespace mseed::losses {
namespace {

void check_labels(const Tensor& logits, const LabelMap& labels, const char* what) {
    require_rank(logits, 3, what);
    if (logits.dim(1) != labels.height() || logits.dim(2) != labels.width()) {
        throw ContractError(std::string(what) + ": label map size does not match predictions");
    }
    if (labels.num_classes() > logits.dim(0)) {
        throw ContractError(std::string(what) + ": label map has " + std::to_string(labels.num_classes()) +
                            " classes but predictions have " + std::to_string(logits.dim(0)));
    }
}

// -log softmax(z)_y at pixel p, and optionally accumulates scale * (softmax - onehot) into grad.
double pixel_ce(const Tensor& logits, std::size_t p, int label, double scale, Tensor* grad) {
    const std::size_t n = logits.dim(0);
    const std::size_t hw = logits.dim(1) * logits.dim(2);
    double m = logits[p];
    for (std::size_t k = 1; k < n; ++k) m = std::max(m, logits[k * hw + p]);
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) z += std::exp(logits[k * hw + p] - m);
    const double lse = m + std::log(z);
    if (grad) {
        for (std::size_t k = 0; k < n; ++k) {
            const double prob = std::exp(logits[k * hw + p] - lse);
            (*grad)[k * hw + p] += scale * (prob - (static_cast<int>(k) == label ? 1.0 : 0.0));
        }
    }
    return lse - logits[static_cast<std::size_t>(label) * hw + p];
}

void check_weights(const LossWeights& w) {
    if (!(w.epsilon > 0.0 && w.epsilon < 1.0)) throw ConfigError("loss.epsilon must lie in (0, 1)");
    if (w.lambda_cls < 0.0 || w.lambda_reg < 0.0) throw ConfigError("loss lambdas must be nonnegative");
}

} // namespace

LossValue cross_entropy(const Tensor& logits, const LabelMap& labels) {
    check_labels(logits, labels, "cross_entropy");
    const std::size_t hw = labels.size();
    const double scale = 1.0 / static_cast<double>(hw);
    LossValue out{0.0, Tensor(logits.shape())};
    double total = 0.0;
    for (std::size_t p = 0; p < hw; ++p) total += pixel_ce(logits, p, labels[p], scale, &out.grad);
    out.value = total * scale;
    return out;
}

LossValue binary_cross_entropy(const Tensor& logits, const Tensor& target) {
    require_same_shape(logits, target, "binary_cross_entropy");
    const double scale = 1.0 / static_cast<double>(logits.size());
    LossValue out{0.0, Tensor(logits.shape())};
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double z = logits[i];
        const double t = target[i];
        total += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
        const double prob = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        out.grad[i] = scale * (prob - t);
    }
    out.value = total * scale;
    return out;
}

ClsLoss l_cls(const Tensor& s_logits, const Tensor& sf_logits, const Tensor& b_logits, const LabelMap& labels,
              const Tensor& gt_binary) {
    auto aux = cross_entropy(s_logits, labels);
    auto fused = cross_entropy(sf_logits, labels);
    auto bce = binary_cross_entropy(b_logits, gt_binary);
    ClsLoss out;
    out.ce_aux = aux.value;
    out.ce_fused = fused.value;
    out.bce_boundary = bce.value;
    out.value = aux.value + fused.value + bce.value;
    out.grad_s_logits = std::move(aux.grad);
    out.grad_sf_logits = std::move(fused.grad);
    out.grad_b_logits = std::move(bce.grad);
    return out;
}

LossValue l_s2b(const Tensor& sf_probs, const Tensor& gt_semantic, int radius) {
    require_same_shape(sf_probs, gt_semantic, "l_s2b");
    const auto pseudo = pseudo_semantic_boundary(sf_probs, radius);
    const double scale = 1.0 / static_cast<double>(sf_probs.size());
    Tensor d_pseudo(sf_probs.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < sf_probs.size(); ++i) {
        const double diff = pseudo.value[i] - gt_semantic[i];
        total += std::abs(diff);
        d_pseudo[i] = diff > 0.0 ? scale : (diff < 0.0 ? -scale : 0.0);
    }
    return {total * scale, pseudo_semantic_boundary_backward(d_pseudo, sf_probs, pseudo)};
}

B2sLoss l_b2s(const Tensor& sf_logits, const LabelMap& labels, const Tensor& b_probs, const Tensor& gt_binary,
              double epsilon) {
    check_labels(sf_logits, labels, "l_b2s");
    require_same_shape(b_probs, gt_binary, "l_b2s");
    if (b_probs.dim(0) != labels.height() || b_probs.dim(1) != labels.width()) {
        throw ContractError("l_b2s: boundary map size does not match labels");
    }
    const std::size_t hw = labels.size();
    B2sLoss out;
    out.grad_sf_logits = Tensor(sf_logits.shape());
    for (std::size_t p = 0; p < hw; ++p) {
        if (b_probs[p] > epsilon || gt_binary[p] == 1.0) ++out.selected;
    }
    if (out.selected == 0) return out;
    const double scale = 1.0 / static_cast<double>(out.selected);
    double total = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
        if (!(b_probs[p] > epsilon || gt_binary[p] == 1.0)) continue;
        total += pixel_ce(sf_logits, p, labels[p], scale, &out.grad_sf_logits);
    }
    out.value = total * scale;
    return out;
}

TotalLoss total_loss(const Tensor& s_logits, const Tensor& sf_logits, const Tensor& b_logits, const LabelMap& labels,
                     const Tensor& gt_binary, const Tensor& gt_semantic, const LossWeights& weights, int radius,
                     const LossTerms& terms) {
    check_weights(weights);
    require_same_shape(s_logits, sf_logits, "total_loss");
    require_same_shape(sf_logits, gt_semantic, "total_loss");
    TotalLoss out;
    out.grad_s_logits = Tensor(s_logits.shape());
    out.grad_sf_logits = Tensor(sf_logits.shape());
    out.grad_b_logits = Tensor(b_logits.shape());
    auto& r = out.report;
    const double l1 = weights.lambda_cls;
    const double l2 = weights.lambda_reg;

    if (terms.ce_aux) {
        auto ce = cross_entropy(s_logits, labels);
        r.l_ce_aux = ce.value;
        ops::scale_inplace(ce.grad, l1);
        ops::add_inplace(out.grad_s_logits, ce.grad);
    }
    if (terms.ce_fused) {
        auto ce = cross_entropy(sf_logits, labels);
        r.l_ce_fused = ce.value;
        ops::scale_inplace(ce.grad, l1);
        ops::add_inplace(out.grad_sf_logits, ce.grad);
    }
    if (terms.bce_boundary) {
        auto bce = binary_cross_entropy(b_logits, gt_binary);
        r.l_bce_boundary = bce.value;
        ops::scale_inplace(bce.grad, l1);
        ops::add_inplace(out.grad_b_logits, bce.grad);
    }
    if (terms.regularization) {
        const Tensor sf_probs = ops::softmax(sf_logits, 0);
        auto s2b = l_s2b(sf_probs, gt_semantic, radius);
        r.l_s2b = s2b.value;
        Tensor d_logits = ops::softmax_backward(s2b.grad, sf_probs, 0);
        ops::scale_inplace(d_logits, l2);
        ops::add_inplace(out.grad_sf_logits, d_logits);

        const Tensor b_probs = ops::sigmoid(b_logits);
        auto b2s = l_b2s(sf_logits, labels, b_probs, gt_binary, weights.epsilon);
        r.l_b2s = b2s.value;
        r.selected_pixel_count = b2s.selected;
        ops::scale_inplace(b2s.grad_sf_logits, l2);
        ops::add_inplace(out.grad_sf_logits, b2s.grad_sf_logits);
    }
    r.total = l1 * (r.l_ce_aux + r.l_ce_fused + r.l_bce_boundary) + l2 * (r.l_s2b + r.l_b2s);
    return out;
}

} // namespace mseed::losses
