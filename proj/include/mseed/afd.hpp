#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "mseed/ops.hpp"
#include "mseed/params.hpp"
#include "mseed/tensor.hpp"

// Active fusion decoder: input-conditioned channel weights for a semantic
// and a boundary feature map, fused through a residual connection and
// classified by a 1x1 head.
namespace mseed::afd {

/// Two-layer perceptron C -> C/reduction -> C with a relu between.
struct Mlp {
    LinearParams fc1;
    LinearParams fc2;
};

struct AfdParams {
    std::size_t channels = 0; // C
    std::size_t groups = 0;   // G_h; 2C must be divisible by it
    Mlp mlp_s;
    Mlp mlp_b;
    LinearParams proj_q; // G_h x G_h, applied along the group axis
    LinearParams proj_k;
    LinearParams proj_v;
    ConvParams head;     // N x C x 1 x 1

    std::vector<Parameter*> parameters();
    /// Number of channel slots per group, 2C / G_h.
    std::size_t slots() const { return 2 * channels / groups; }
};

AfdParams make_afd_params(std::size_t channels, std::size_t groups, std::size_t reduction, std::size_t num_classes,
                          std::mt19937_64& rng, const std::string& prefix = "afd");

// ---- channel attention ---------------------------------------------------

struct MlpCache {
    Tensor input;
    Tensor hidden_pre;
    Tensor hidden;
};

struct AttentionResult {
    Tensor s_att; // C
    Tensor b_att; // C
    MlpCache cache_s;
    MlpCache cache_b;
    Shape feature_shape;
};

/// GAP of each stream followed by its MLP.
AttentionResult attention_vectors(const Tensor& f_s, const Tensor& f_b, const AfdParams& params);

struct StreamGrads {
    Tensor f_s;
    Tensor f_b;
};

/// Accumulates MLP gradients into params; returns feature-map gradients.
StreamGrads attention_vectors_backward(const Tensor& d_s_att, const Tensor& d_b_att, const AttentionResult& fwd,
                                       AfdParams& params);

// ---- affinity ------------------------------------------------------------

struct AffinityResult {
    Tensor w_s;      // C
    Tensor w_b;      // C
    Tensor affinity; // G x G, row-stochastic
    Tensor tokens;   // G x G_h view of the concatenated attention vector
    Tensor q, k, v;  // G x G_h
};

/// Splits the 2C attention vector into G_h contiguous groups, treats the
/// G = 2C/G_h slots as tokens with G_h features, and computes
/// W = softmax_rows(Q K^T / sqrt(G_h)) V. W flattens back to (w_s, w_b).
AffinityResult affinity_and_weights(const Tensor& fused_att, const AfdParams& params);

/// Accumulates projection gradients; returns the gradient of the 2C vector.
Tensor affinity_and_weights_backward(const Tensor& d_w_s, const Tensor& d_w_b, const AffinityResult& fwd,
                                     AfdParams& params);

// ---- residual fusion -----------------------------------------------------

/// (1 + w_s) F_s + (1 + w_b) F_b, per channel.
Tensor fuse(const Tensor& f_s, const Tensor& f_b, const Tensor& w_s, const Tensor& w_b);

struct FuseGrads {
    Tensor f_s;
    Tensor f_b;
    Tensor w_s;
    Tensor w_b;
};

FuseGrads fuse_backward(const Tensor& d_fused, const Tensor& f_s, const Tensor& f_b, const Tensor& w_s,
                        const Tensor& w_b);

// ---- composite -----------------------------------------------------------

struct FusionState {
    Tensor f_s;
    Tensor f_b;
    AttentionResult attention;
    Tensor fused_att; // 2C
    AffinityResult affinity;
    Tensor fused;     // C x H x W
};

struct AfdOutput {
    Tensor fused;  // F_f
    Tensor logits; // N x H x W
    FusionState state;
};

AfdOutput afd_forward(const Tensor& f_s, const Tensor& f_b, const AfdParams& params);

/// Backward from the head logits. Accumulates every AfdParams gradient.
StreamGrads afd_backward(const Tensor& d_logits, const FusionState& state, AfdParams& params);

} // namespace mseed::afd
