#include "mseed/model.hpp"

#include <algorithm>
#include <random>
#include <string>

#include "mseed/errors.hpp"

namespace mseed::model {
namespace {

Tensor conv_norm_relu(const Tensor& x, const ConvNormParams& p, int stride, int padding, const ModelConfig& config,
                      ConvNormCache& cache) {
    cache.input = x;
    cache.stride = stride;
    cache.padding = padding;
    const Tensor conv = ops::conv2d(x, p.conv.weight.value, p.conv.bias.value, stride, padding);
    cache.normed = ops::group_norm(conv, config.gn_groups, p.gamma.value, p.beta.value, config.gn_eps, &cache.norm);
    return ops::relu(cache.normed);
}

Tensor conv_norm_relu_backward(const Tensor& d_out, const ConvNormCache& cache, ConvNormParams& p) {
    const Tensor d_normed = ops::relu_backward(d_out, cache.normed);
    auto gn = ops::group_norm_backward(d_normed, cache.norm, p.gamma.value);
    ops::add_inplace(p.gamma.grad, gn.gamma);
    ops::add_inplace(p.beta.grad, gn.beta);
    auto conv = ops::conv2d_backward(gn.input, cache.input, p.conv.weight.value, cache.stride, cache.padding);
    ops::add_inplace(p.conv.weight.grad, conv.weight);
    ops::add_inplace(p.conv.bias.grad, conv.bias);
    return std::move(conv.input);
}

Tensor conv_apply(const Tensor& x, const ConvParams& p, int stride, int padding) {
    return ops::conv2d(x, p.weight.value, p.bias.value, stride, padding);
}

Tensor conv_apply_backward(const Tensor& d_out, const Tensor& input, ConvParams& p, int stride, int padding) {
    auto g = ops::conv2d_backward(d_out, input, p.weight.value, stride, padding);
    ops::add_inplace(p.weight.grad, g.weight);
    ops::add_inplace(p.bias.grad, g.bias);
    return std::move(g.input);
}

void accumulate(Tensor& acc, const Tensor& x) {
    if (acc.empty()) {
        acc = x;
    } else {
        ops::add_inplace(acc, x);
    }
}

} // namespace

std::string to_string(FusionMode mode) {
    switch (mode) {
    case FusionMode::add: return "add";
    case FusionMode::cat: return "cat";
    case FusionMode::afd: return "afd";
    }
    return "afd";
}

FusionMode parse_fusion_mode(const std::string& text) {
    if (text == "add") return FusionMode::add;
    if (text == "cat") return FusionMode::cat;
    if (text == "afd") return FusionMode::afd;
    throw ConfigError("unknown fusion mode '" + text + "' (expected add, cat or afd)");
}

void ModelConfig::validate() const {
    if (num_classes < 2) throw ConfigError("model.num_classes must be >= 2");
    if (stage_channels.size() < 2) throw ConfigError("model.stage_channels needs at least 2 stages");
    if (gn_groups == 0) throw ConfigError("model.gn_groups must be positive");
    auto check_width = [&](std::size_t c, const std::string& key) {
        if (c == 0) throw ConfigError(key + " must be positive");
        if (c % gn_groups != 0) {
            throw ConfigError(key + " = " + std::to_string(c) + " not divisible by model.gn_groups = " +
                              std::to_string(gn_groups));
        }
    };
    check_width(stem_channels, "model.stem_channels");
    for (std::size_t i = 0; i < stage_channels.size(); ++i) {
        check_width(stage_channels[i], "model.stage_channels[" + std::to_string(i) + "]");
    }
    check_width(boundary_width, "model.boundary_width");
    if (afd_channels == 0) throw ConfigError("model.afd_channels must be positive");
    if (afd_groups == 0 || (2 * afd_channels) % afd_groups != 0) {
        throw ConfigError("model.afd_groups must divide 2 * model.afd_channels");
    }
    if (afd_reduction == 0 || afd_channels % afd_reduction != 0) {
        throw ConfigError("model.afd_reduction must divide model.afd_channels");
    }
    if (!(gn_eps > 0.0)) throw ConfigError("model.gn_eps must be positive");
}

std::size_t ModelConfig::deepest_stride() const { return std::size_t{4} << (stage_channels.size() - 1); }

std::size_t ModelConfig::size_divisor() const { return std::max<std::size_t>(4, deepest_stride() / 2); }

std::vector<Parameter*> ModelParams::parameters() {
    std::vector<Parameter*> out;
    for (auto& s : stem) append(out, s);
    for (auto& s : stages) {
        append(out, s.down);
        append(out, s.refine);
    }
    for (auto& c : converters) append(out, c);
    append(out, boundary_reduce);
    append(out, boundary_logit);
    append(out, aux_head);
    append(out, semantic_proj);
    append(out, boundary_proj);
    if (afd) {
        for (auto* p : afd->parameters()) out.push_back(p);
    }
    if (fusion_head) append(out, *fusion_head);
    return out;
}

std::vector<const Parameter*> ModelParams::parameters() const {
    auto mutable_list = const_cast<ModelParams*>(this)->parameters();
    return {mutable_list.begin(), mutable_list.end()};
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->value.size();
    return n;
}

void ModelParams::zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    ModelParams p;
    const std::size_t m = config.stage_channels.size();
    p.stem[0] = make_conv_norm("stem.0", config.stem_channels, 3, 3, rng);
    p.stem[1] = make_conv_norm("stem.1", config.stem_channels, config.stem_channels, 3, rng);
    std::size_t in_c = config.stem_channels;
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t c = config.stage_channels[i];
        const std::string name = "semantic.stage" + std::to_string(i);
        p.stages.push_back({make_conv_norm(name + ".down", c, in_c, 3, rng), make_conv_norm(name + ".refine", c, c, 3, rng)});
        in_c = c;
    }
    std::vector<std::size_t> tapped{config.stem_channels};
    tapped.insert(tapped.end(), config.stage_channels.begin(), config.stage_channels.end());
    std::size_t concat_c = 0;
    for (std::size_t j = 0; j < tapped.size(); ++j) {
        p.converters.push_back(make_conv_norm("boundary.convert" + std::to_string(j), tapped[j], tapped[j], 3, rng));
        concat_c += tapped[j];
    }
    p.boundary_reduce = make_conv_norm("boundary.reduce", config.boundary_width, concat_c, 1, rng);
    p.boundary_logit = make_conv("boundary.logit", 1, config.boundary_width, 1, rng);
    const std::size_t last = config.stage_channels.back();
    p.aux_head = make_conv("aux_head", config.num_classes, last, 1, rng);
    p.semantic_proj = make_conv("fusion.semantic_proj", config.afd_channels, last, 1, rng);
    p.boundary_proj = make_conv("fusion.boundary_proj", config.afd_channels, config.boundary_width, 3, rng);
    switch (config.fusion) {
    case FusionMode::afd:
        p.afd = afd::make_afd_params(config.afd_channels, config.afd_groups, config.afd_reduction, config.num_classes,
                                     rng, "fusion.afd");
        break;
    case FusionMode::add:
        p.fusion_head = make_conv("fusion.head", config.num_classes, config.afd_channels, 1, rng);
        break;
    case FusionMode::cat:
        p.fusion_head = make_conv("fusion.head", config.num_classes, 2 * config.afd_channels, 1, rng);
        break;
    }
    return p;
}

ForwardResult forward(const Tensor& image, const ModelParams& params, const ModelConfig& config,
                      const ForwardOptions& options) {
    require_rank(image, 3, "model forward");
    if (image.dim(0) != 3) throw ContractError("model forward: image must have 3 channels");
    const std::size_t h = image.dim(1), w = image.dim(2);
    const std::size_t div = config.size_divisor();
    if (h % div != 0 || w % div != 0) {
        throw ConfigError("image size " + std::to_string(h) + "x" + std::to_string(w) + " must be a multiple of " +
                          std::to_string(div));
    }
    if (params.stages.size() != config.stage_channels.size()) {
        throw ContractError("model forward: parameters do not match the configuration");
    }
    if ((config.fusion == FusionMode::afd) != params.afd.has_value()) {
        throw ContractError("model forward: parameters were built for a different fusion mode");
    }

    ForwardResult result;
    ForwardCache& c = result.cache;
    c.generation = params.generation;
    c.boundary_stream = options.boundary_stream;
    c.height = h;
    c.width = w;

    const Tensor e1 = conv_norm_relu(image, params.stem[0], 2, 1, config, c.stem[0]);
    const Tensor e2 = conv_norm_relu(e1, params.stem[1], 2, 1, config, c.stem[1]);

    const std::size_t m = params.stages.size();
    c.stages.resize(m);
    Tensor x = e2;
    for (std::size_t i = 0; i < m; ++i) {
        const Tensor d = conv_norm_relu(x, params.stages[i].down, i == 0 ? 1 : 2, 1, config, c.stages[i][0]);
        x = conv_norm_relu(d, params.stages[i].refine, 1, 1, config, c.stages[i][1]);
        c.stage_out.push_back(x);
    }
    const Tensor& top = c.stage_out.back();
    const std::size_t h2 = h / 2, w2 = w / 2, h4 = h / 4, w4 = w / 4;

    Predictions& pred = result.predictions;
    c.semantic_low = conv_apply(top, params.aux_head, 1, 0);
    pred.s_logits = ops::bilinear_upsample(c.semantic_low, h, w);

    c.f_s = ops::bilinear_upsample(conv_apply(top, params.semantic_proj, 1, 0), h4, w4);

    if (options.boundary_stream) {
        std::vector<const Tensor*> taps{&e1};
        for (const auto& s : c.stage_out) taps.push_back(&s);
        c.converters.resize(taps.size());
        std::vector<Tensor> upsampled;
        for (std::size_t j = 0; j < taps.size(); ++j) {
            const Tensor conv = conv_norm_relu(*taps[j], params.converters[j], 1, 1, config, c.converters[j]);
            c.converter_shapes.push_back(conv.shape());
            upsampled.push_back(ops::bilinear_upsample(conv, h2, w2));
        }
        const Tensor cat = ops::concat_channels(upsampled);
        c.boundary_feature = conv_norm_relu(cat, params.boundary_reduce, 1, 0, config, c.boundary_reduce);
        c.boundary_logit_low = conv_apply(c.boundary_feature, params.boundary_logit, 1, 0);
        pred.b_logits = ops::bilinear_upsample(c.boundary_logit_low, h, w).reshaped({h, w});
        c.f_b = conv_apply(c.boundary_feature, params.boundary_proj, 2, 1);
    } else {
        pred.b_logits = Tensor({h, w});
        c.f_b = Tensor(c.f_s.shape());
    }

    switch (config.fusion) {
    case FusionMode::afd: {
        auto out = afd::afd_forward(c.f_s, c.f_b, *params.afd);
        c.fused_logits_low = std::move(out.logits);
        c.afd_state = std::move(out.state);
        break;
    }
    case FusionMode::add:
        c.fused = ops::add(c.f_s, c.f_b);
        c.fused_logits_low = conv_apply(c.fused, *params.fusion_head, 1, 0);
        break;
    case FusionMode::cat: {
        const Tensor parts[] = {c.f_s, c.f_b};
        c.fused = ops::concat_channels(parts);
        c.fused_logits_low = conv_apply(c.fused, *params.fusion_head, 1, 0);
        break;
    }
    }
    pred.sf_logits = ops::bilinear_upsample(c.fused_logits_low, h, w);

    pred.s = ops::softmax(pred.s_logits, 0);
    pred.s_f = ops::softmax(pred.sf_logits, 0);
    pred.b = ops::sigmoid(pred.b_logits);
    return result;
}

void backward(const OutputGrads& grads, const ForwardCache& c, ModelParams& params, const ModelConfig& config) {
    if (c.generation != params.generation) {
        throw ContractError("model backward: cache is stale (parameters changed since forward)");
    }
    if (c.stage_out.size() != params.stages.size()) throw ContractError("model backward: cache/parameter mismatch");
    const std::size_t h = c.height, w = c.width;
    const std::size_t n = config.num_classes;
    if (grads.s_logits.shape() != Shape{n, h, w} || grads.sf_logits.shape() != Shape{n, h, w} ||
        grads.b_logits.shape() != Shape{h, w}) {
        throw ContractError("model backward: upstream gradient shapes do not match the forward pass");
    }
    const std::size_t m = params.stages.size();
    std::vector<Tensor> d_stage(m);
    Tensor d_e1;

    // fused semantic branch
    const Tensor d_fused_low =
        ops::bilinear_upsample_backward(grads.sf_logits, c.fused_logits_low.dim(1), c.fused_logits_low.dim(2));
    Tensor d_fs, d_fb;
    switch (config.fusion) {
    case FusionMode::afd: {
        auto g = afd::afd_backward(d_fused_low, *c.afd_state, *params.afd);
        d_fs = std::move(g.f_s);
        d_fb = std::move(g.f_b);
        break;
    }
    case FusionMode::add: {
        Tensor d = conv_apply_backward(d_fused_low, c.fused, *params.fusion_head, 1, 0);
        d_fs = d;
        d_fb = std::move(d);
        break;
    }
    case FusionMode::cat: {
        const Tensor d = conv_apply_backward(d_fused_low, c.fused, *params.fusion_head, 1, 0);
        const std::size_t split[] = {c.f_s.dim(0), c.f_b.dim(0)};
        auto parts = ops::split_channels(d, split);
        d_fs = std::move(parts[0]);
        d_fb = std::move(parts[1]);
        break;
    }
    }

    const Tensor& top = c.stage_out.back();
    {
        const Tensor d_proj = ops::bilinear_upsample_backward(d_fs, top.dim(1), top.dim(2));
        accumulate(d_stage[m - 1], conv_apply_backward(d_proj, top, params.semantic_proj, 1, 0));
        const Tensor d_aux = ops::bilinear_upsample_backward(grads.s_logits, top.dim(1), top.dim(2));
        accumulate(d_stage[m - 1], conv_apply_backward(d_aux, top, params.aux_head, 1, 0));
    }

    if (c.boundary_stream) {
        Tensor d_bfeat = conv_apply_backward(d_fb, c.boundary_feature, params.boundary_proj, 2, 1);
        const Tensor d_blow = ops::bilinear_upsample_backward(grads.b_logits.reshaped({1, h, w}),
                                                              c.boundary_logit_low.dim(1), c.boundary_logit_low.dim(2));
        ops::add_inplace(d_bfeat, conv_apply_backward(d_blow, c.boundary_feature, params.boundary_logit, 1, 0));
        const Tensor d_cat = conv_norm_relu_backward(d_bfeat, c.boundary_reduce, params.boundary_reduce);
        std::vector<std::size_t> widths;
        for (const auto& s : c.converter_shapes) widths.push_back(s[0]);
        auto d_parts = ops::split_channels(d_cat, widths);
        for (std::size_t j = 0; j < d_parts.size(); ++j) {
            const Tensor d_conv =
                ops::bilinear_upsample_backward(d_parts[j], c.converter_shapes[j][1], c.converter_shapes[j][2]);
            Tensor d_tap = conv_norm_relu_backward(d_conv, c.converters[j], params.converters[j]);
            if (j == 0) {
                d_e1 = std::move(d_tap);
            } else {
                accumulate(d_stage[j - 1], d_tap);
            }
        }
    }

    Tensor d_x;
    for (std::size_t i = m; i-- > 0;) {
        Tensor d_out = std::move(d_stage[i]);
        if (!d_x.empty()) accumulate(d_out, d_x);
        if (d_out.empty()) d_out = Tensor(c.stage_out[i].shape());
        const Tensor d_mid = conv_norm_relu_backward(d_out, c.stages[i][1], params.stages[i].refine);
        d_x = conv_norm_relu_backward(d_mid, c.stages[i][0], params.stages[i].down);
    }
    Tensor d_e1_total = conv_norm_relu_backward(d_x, c.stem[1], params.stem[1]);
    if (!d_e1.empty()) ops::add_inplace(d_e1_total, d_e1);
    conv_norm_relu_backward(d_e1_total, c.stem[0], params.stem[0]);
}

} // namespace mseed::model
