#pragma once

#include <cstddef>

#include "mseed/boundary_ops.hpp"
#include "mseed/label_map.hpp"
#include "mseed/tensor.hpp"

namespace mseed::losses {

struct LossWeights {
    double lambda_cls = 1.0; // weight of the classification terms
    double lambda_reg = 1.0; // weight of the dual-task regularization
    double epsilon = 0.8;    // boundary confidence gate
};

/// Which terms enter the objective. Disabled terms are not evaluated and
/// report 0.
struct LossTerms {
    bool ce_aux = true;
    bool ce_fused = true;
    bool bce_boundary = true;
    bool regularization = true;
};

struct LossValue {
    double value = 0.0;
    Tensor grad;
};

/// Mean pixel cross-entropy from N x H x W logits. grad is w.r.t. logits.
LossValue cross_entropy(const Tensor& logits, const LabelMap& labels);

/// Mean pixel binary cross-entropy from H x W logits against targets in [0,1].
LossValue binary_cross_entropy(const Tensor& logits, const Tensor& target);

struct ClsLoss {
    double ce_aux = 0.0;
    double ce_fused = 0.0;
    double bce_boundary = 0.0;
    double value = 0.0;
    Tensor grad_s_logits;
    Tensor grad_sf_logits;
    Tensor grad_b_logits;
};

/// CE(s) + CE(s_f) + BCE(b), each averaged over pixels.
ClsLoss l_cls(const Tensor& s_logits, const Tensor& sf_logits, const Tensor& b_logits, const LabelMap& labels,
              const Tensor& gt_binary);

/// Mean over all N*H*W entries of |pseudo_boundary(s_f) - gt_semantic|.
/// grad is w.r.t. the probabilities s_f.
LossValue l_s2b(const Tensor& sf_probs, const Tensor& gt_semantic, int radius);

struct B2sLoss {
    double value = 0.0;
    std::size_t selected = 0;
    Tensor grad_sf_logits;
};

/// Cross-entropy of s_f averaged over pixels with b > epsilon or gt_binary = 1.
/// b is a stop-gradient gate. Returns 0 when nothing is selected.
B2sLoss l_b2s(const Tensor& sf_logits, const LabelMap& labels, const Tensor& b_probs, const Tensor& gt_binary,
              double epsilon);

struct LossReport {
    double l_ce_aux = 0.0;
    double l_ce_fused = 0.0;
    double l_bce_boundary = 0.0;
    double l_s2b = 0.0;
    double l_b2s = 0.0;
    double total = 0.0;
    std::size_t selected_pixel_count = 0;
};

struct TotalLoss {
    LossReport report;
    Tensor grad_s_logits;  // N x H x W
    Tensor grad_sf_logits; // N x H x W
    Tensor grad_b_logits;  // H x W
};

/// lambda_cls * L_cls + lambda_reg * (L_s2b + L_b2s). Inputs are logits; the
/// probabilities needed by the regularizers are derived internally.
TotalLoss total_loss(const Tensor& s_logits, const Tensor& sf_logits, const Tensor& b_logits, const LabelMap& labels,
                     const Tensor& gt_binary, const Tensor& gt_semantic, const LossWeights& weights, int radius,
                     const LossTerms& terms = {});

} // namespace mseed::losses
