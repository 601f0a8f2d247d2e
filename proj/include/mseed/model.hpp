#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mseed/afd.hpp"
#include "mseed/ops.hpp"
#include "mseed/params.hpp"
#include "mseed/tensor.hpp"

namespace mseed::model {

enum class FusionMode { add, cat, afd };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& text);

struct ModelConfig {
    std::size_t num_classes = 4;
    std::vector<std::size_t> stage_channels{16, 24, 32, 48};
    std::size_t stem_channels = 8;
    std::size_t afd_channels = 48;
    std::size_t gn_groups = 4;
    std::size_t afd_groups = 4;    // G_h
    std::size_t afd_reduction = 4; // MLP reduction ratio
    std::size_t boundary_width = 32;
    FusionMode fusion = FusionMode::afd;
    double gn_eps = 1e-5;

    /// Throws ConfigError on any inconsistent width or divisibility.
    void validate() const;
    /// Output stride of the deepest semantic stage.
    std::size_t deepest_stride() const;
    /// Image height and width must be multiples of this.
    std::size_t size_divisor() const;
};

struct StageParams {
    ConvNormParams down;   // 3x3, stride 2 (stride 1 for the first stage)
    ConvNormParams refine; // 3x3, stride 1
};

struct ModelParams {
    std::array<ConvNormParams, 2> stem;      // two stride-2 blocks: /2 and /4
    std::vector<StageParams> stages;         // semantic stream
    std::vector<ConvNormParams> converters;  // boundary stream, one per tapped map
    ConvNormParams boundary_reduce;          // 1x1 over the concatenated maps
    ConvParams boundary_logit;               // 1x1 -> 1
    ConvParams aux_head;                     // 1x1 -> N, training-only
    ConvParams semantic_proj;                // 1x1 -> C
    ConvParams boundary_proj;                // 3x3 stride 2 -> C
    std::optional<afd::AfdParams> afd;       // FusionMode::afd
    std::optional<ConvParams> fusion_head;   // FusionMode::add / cat

    /// Bumped on every in-place parameter update; guards stale caches.
    std::uint64_t generation = 0;

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    std::size_t parameter_count() const;
    void zero_grad();
};

ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

struct Predictions {
    Tensor s;         // N x H x W auxiliary semantic probabilities
    Tensor s_f;       // N x H x W fused semantic probabilities
    Tensor b;         // H x W boundary probabilities
    Tensor s_logits;
    Tensor sf_logits;
    Tensor b_logits;
};

struct ConvNormCache {
    Tensor input;
    ops::GroupNormCache norm;
    Tensor normed; // pre-activation
    int stride = 1;
    int padding = 1;
};

struct ForwardOptions {
    /// false reproduces the semantic-stream-only ablation: the boundary
    /// stream is skipped, F_b is zero and b is the constant 0.5.
    bool boundary_stream = true;
};

struct ForwardCache {
    std::uint64_t generation = 0;
    bool boundary_stream = true;
    std::size_t height = 0, width = 0;
    std::array<ConvNormCache, 2> stem;
    std::vector<std::array<ConvNormCache, 2>> stages;
    std::vector<Tensor> stage_out;
    std::vector<ConvNormCache> converters;
    std::vector<Shape> converter_shapes;
    ConvNormCache boundary_reduce;
    Tensor boundary_feature;
    Tensor boundary_logit_low;
    Tensor semantic_low;
    Tensor f_s; // C x H/4 x W/4
    Tensor f_b;
    std::optional<afd::FusionState> afd_state;
    Tensor fused; // add/cat fused map
    Tensor fused_logits_low;
};

struct ForwardResult {
    Predictions predictions;
    ForwardCache cache;
};

ForwardResult forward(const Tensor& image, const ModelParams& params, const ModelConfig& config,
                      const ForwardOptions& options = {});

/// Upstream gradients w.r.t. the three logit maps.
struct OutputGrads {
    Tensor s_logits;
    Tensor sf_logits;
    Tensor b_logits;
};

/// Accumulates gradients into every parameter. Throws ContractError when the
/// cache predates the last parameter update.
void backward(const OutputGrads& grads, const ForwardCache& cache, ModelParams& params, const ModelConfig& config);

} // namespace mseed::model
