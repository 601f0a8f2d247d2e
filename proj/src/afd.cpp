#include "mseed/afd.hpp"

#include <cmath>
#include <string>

#include "mseed/errors.hpp"

namespace mseed::afd {
namespace {

MlpCache mlp_forward(const Tensor& input, const Mlp& mlp, Tensor& output) {
    MlpCache cache;
    cache.input = input;
    cache.hidden_pre = ops::linear(input, mlp.fc1.weight.value, mlp.fc1.bias.value);
    cache.hidden = ops::relu(cache.hidden_pre);
    output = ops::linear(cache.hidden, mlp.fc2.weight.value, mlp.fc2.bias.value);
    return cache;
}

Tensor mlp_backward(const Tensor& d_out, const MlpCache& cache, Mlp& mlp) {
    auto g2 = ops::linear_backward(d_out, cache.hidden, mlp.fc2.weight.value);
    ops::add_inplace(mlp.fc2.weight.grad, g2.weight);
    ops::add_inplace(mlp.fc2.bias.grad, g2.bias);
    const Tensor d_pre = ops::relu_backward(g2.input, cache.hidden_pre);
    auto g1 = ops::linear_backward(d_pre, cache.input, mlp.fc1.weight.value);
    ops::add_inplace(mlp.fc1.weight.grad, g1.weight);
    ops::add_inplace(mlp.fc1.bias.grad, g1.bias);
    return g1.input;
}

// rows x G_h token matrix times a G_h x G_h projection (y = x W^T + b).
Tensor project_tokens(const Tensor& tokens, const LinearParams& proj) {
    const std::size_t rows = tokens.dim(0), cols = tokens.dim(1);
    const auto& w = proj.weight.value;
    Tensor out({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t o = 0; o < cols; ++o) {
            double s = proj.bias.value[o];
            for (std::size_t j = 0; j < cols; ++j) s += tokens[i * cols + j] * w[o * cols + j];
            out[i * cols + o] = s;
        }
    }
    return out;
}

// Accumulates projection grads and adds dL/d(tokens) into d_tokens.
void project_tokens_backward(const Tensor& d_out, const Tensor& tokens, LinearParams& proj, Tensor& d_tokens) {
    const std::size_t rows = tokens.dim(0), cols = tokens.dim(1);
    const auto& w = proj.weight.value;
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t o = 0; o < cols; ++o) {
            const double g = d_out[i * cols + o];
            proj.bias.grad[o] += g;
            for (std::size_t j = 0; j < cols; ++j) {
                proj.weight.grad[o * cols + j] += g * tokens[i * cols + j];
                d_tokens[i * cols + j] += g * w[o * cols + j];
            }
        }
    }
}

void check_params(const AfdParams& params) {
    if (params.groups == 0 || (2 * params.channels) % params.groups != 0) {
        throw ConfigError("afd: 2C = " + std::to_string(2 * params.channels) + " not divisible by " +
                          std::to_string(params.groups) + " groups");
    }
}

} // namespace

std::vector<Parameter*> AfdParams::parameters() {
    std::vector<Parameter*> out;
    append(out, mlp_s.fc1);
    append(out, mlp_s.fc2);
    append(out, mlp_b.fc1);
    append(out, mlp_b.fc2);
    append(out, proj_q);
    append(out, proj_k);
    append(out, proj_v);
    append(out, head);
    return out;
}

AfdParams make_afd_params(std::size_t channels, std::size_t groups, std::size_t reduction, std::size_t num_classes,
                          std::mt19937_64& rng, const std::string& prefix) {
    if (channels == 0 || reduction == 0 || channels % reduction != 0) {
        throw ConfigError("afd: channels " + std::to_string(channels) + " not divisible by reduction " +
                          std::to_string(reduction));
    }
    AfdParams p;
    p.channels = channels;
    p.groups = groups;
    check_params(p);
    const std::size_t hidden = channels / reduction;
    p.mlp_s = Mlp{make_linear(prefix + ".mlp_s.fc1", hidden, channels, rng),
                  make_linear(prefix + ".mlp_s.fc2", channels, hidden, rng)};
    p.mlp_b = Mlp{make_linear(prefix + ".mlp_b.fc1", hidden, channels, rng),
                  make_linear(prefix + ".mlp_b.fc2", channels, hidden, rng)};
    p.proj_q = make_linear(prefix + ".proj_q", groups, groups, rng);
    p.proj_k = make_linear(prefix + ".proj_k", groups, groups, rng);
    p.proj_v = make_linear(prefix + ".proj_v", groups, groups, rng);
    p.head = make_conv(prefix + ".head", num_classes, channels, 1, rng);
    return p;
}

AttentionResult attention_vectors(const Tensor& f_s, const Tensor& f_b, const AfdParams& params) {
    require_rank(f_s, 3, "attention_vectors");
    require_same_shape(f_s, f_b, "attention_vectors");
    if (f_s.dim(0) != params.channels) throw ContractError("attention_vectors: channel count does not match AFD width");
    AttentionResult r;
    r.feature_shape = f_s.shape();
    r.cache_s = mlp_forward(ops::gap(f_s), params.mlp_s, r.s_att);
    r.cache_b = mlp_forward(ops::gap(f_b), params.mlp_b, r.b_att);
    return r;
}

StreamGrads attention_vectors_backward(const Tensor& d_s_att, const Tensor& d_b_att, const AttentionResult& fwd,
                                       AfdParams& params) {
    const Tensor d_gap_s = mlp_backward(d_s_att, fwd.cache_s, params.mlp_s);
    const Tensor d_gap_b = mlp_backward(d_b_att, fwd.cache_b, params.mlp_b);
    return {ops::gap_backward(d_gap_s, fwd.feature_shape), ops::gap_backward(d_gap_b, fwd.feature_shape)};
}

AffinityResult affinity_and_weights(const Tensor& fused_att, const AfdParams& params) {
    check_params(params);
    require_rank(fused_att, 1, "affinity_and_weights");
    if (fused_att.dim(0) != 2 * params.channels) {
        throw ContractError("affinity_and_weights: expected a vector of length 2C");
    }
    const std::size_t gh = params.groups;
    const std::size_t slots = params.slots();

    AffinityResult r;
    r.tokens = Tensor({slots, gh});
    for (std::size_t j = 0; j < gh; ++j) {
        for (std::size_t i = 0; i < slots; ++i) r.tokens[i * gh + j] = fused_att[j * slots + i];
    }
    r.q = project_tokens(r.tokens, params.proj_q);
    r.k = project_tokens(r.tokens, params.proj_k);
    r.v = project_tokens(r.tokens, params.proj_v);

    const double scale = 1.0 / std::sqrt(static_cast<double>(gh));
    Tensor scores({slots, slots});
    for (std::size_t i = 0; i < slots; ++i) {
        for (std::size_t j = 0; j < slots; ++j) {
            double s = 0.0;
            for (std::size_t d = 0; d < gh; ++d) s += r.q[i * gh + d] * r.k[j * gh + d];
            scores[i * slots + j] = s * scale;
        }
    }
    r.affinity = ops::softmax(scores, 1);

    Tensor weights({slots, gh});
    for (std::size_t i = 0; i < slots; ++i) {
        for (std::size_t d = 0; d < gh; ++d) {
            double s = 0.0;
            for (std::size_t j = 0; j < slots; ++j) s += r.affinity[i * slots + j] * r.v[j * gh + d];
            weights[i * gh + d] = s;
        }
    }
    const std::size_t c = params.channels;
    r.w_s = Tensor({c});
    r.w_b = Tensor({c});
    for (std::size_t j = 0; j < gh; ++j) {
        for (std::size_t i = 0; i < slots; ++i) {
            const std::size_t flat = j * slots + i;
            (flat < c ? r.w_s[flat] : r.w_b[flat - c]) = weights[i * gh + j];
        }
    }
    return r;
}

Tensor affinity_and_weights_backward(const Tensor& d_w_s, const Tensor& d_w_b, const AffinityResult& fwd,
                                     AfdParams& params) {
    const std::size_t gh = params.groups;
    const std::size_t slots = params.slots();
    const std::size_t c = params.channels;
    require_same_shape(d_w_s, fwd.w_s, "affinity_and_weights_backward");
    require_same_shape(d_w_b, fwd.w_b, "affinity_and_weights_backward");

    Tensor d_weights({slots, gh});
    for (std::size_t j = 0; j < gh; ++j) {
        for (std::size_t i = 0; i < slots; ++i) {
            const std::size_t flat = j * slots + i;
            d_weights[i * gh + j] = flat < c ? d_w_s[flat] : d_w_b[flat - c];
        }
    }

    // W = A V
    Tensor d_aff({slots, slots});
    Tensor d_v({slots, gh});
    for (std::size_t i = 0; i < slots; ++i) {
        for (std::size_t j = 0; j < slots; ++j) {
            double s = 0.0;
            for (std::size_t d = 0; d < gh; ++d) s += d_weights[i * gh + d] * fwd.v[j * gh + d];
            d_aff[i * slots + j] = s;
        }
    }
    for (std::size_t j = 0; j < slots; ++j) {
        for (std::size_t d = 0; d < gh; ++d) {
            double s = 0.0;
            for (std::size_t i = 0; i < slots; ++i) s += fwd.affinity[i * slots + j] * d_weights[i * gh + d];
            d_v[j * gh + d] = s;
        }
    }

    const Tensor d_scores = ops::softmax_backward(d_aff, fwd.affinity, 1);
    const double scale = 1.0 / std::sqrt(static_cast<double>(gh));
    Tensor d_q({slots, gh});
    Tensor d_k({slots, gh});
    for (std::size_t i = 0; i < slots; ++i) {
        for (std::size_t j = 0; j < slots; ++j) {
            const double g = d_scores[i * slots + j] * scale;
            if (g == 0.0) continue;
            for (std::size_t d = 0; d < gh; ++d) {
                d_q[i * gh + d] += g * fwd.k[j * gh + d];
                d_k[j * gh + d] += g * fwd.q[i * gh + d];
            }
        }
    }

    Tensor d_tokens({slots, gh});
    project_tokens_backward(d_q, fwd.tokens, params.proj_q, d_tokens);
    project_tokens_backward(d_k, fwd.tokens, params.proj_k, d_tokens);
    project_tokens_backward(d_v, fwd.tokens, params.proj_v, d_tokens);

    Tensor d_att({2 * c});
    for (std::size_t j = 0; j < gh; ++j) {
        for (std::size_t i = 0; i < slots; ++i) d_att[j * slots + i] = d_tokens[i * gh + j];
    }
    return d_att;
}

Tensor fuse(const Tensor& f_s, const Tensor& f_b, const Tensor& w_s, const Tensor& w_b) {
    require_rank(f_s, 3, "fuse");
    require_same_shape(f_s, f_b, "fuse");
    const std::size_t c = f_s.dim(0);
    if (w_s.shape() != Shape{c} || w_b.shape() != Shape{c}) {
        throw ContractError("fuse: weight vectors must have one entry per channel");
    }
    Tensor out(f_s.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double a = 1.0 + w_s[ch];
        const double b = 1.0 + w_b[ch];
        const auto s = f_s.plane(ch);
        const auto bd = f_b.plane(ch);
        auto o = out.plane(ch);
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = a * s[i] + b * bd[i];
    }
    return out;
}

FuseGrads fuse_backward(const Tensor& d_fused, const Tensor& f_s, const Tensor& f_b, const Tensor& w_s,
                        const Tensor& w_b) {
    require_same_shape(d_fused, f_s, "fuse_backward");
    const std::size_t c = f_s.dim(0);
    FuseGrads g{Tensor(f_s.shape()), Tensor(f_b.shape()), Tensor({c}), Tensor({c})};
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double a = 1.0 + w_s[ch];
        const double b = 1.0 + w_b[ch];
        const auto d = d_fused.plane(ch);
        const auto s = f_s.plane(ch);
        const auto bd = f_b.plane(ch);
        auto gs = g.f_s.plane(ch);
        auto gb = g.f_b.plane(ch);
        double dws = 0.0, dwb = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            gs[i] = a * d[i];
            gb[i] = b * d[i];
            dws += d[i] * s[i];
            dwb += d[i] * bd[i];
        }
        g.w_s[ch] = dws;
        g.w_b[ch] = dwb;
    }
    return g;
}

AfdOutput afd_forward(const Tensor& f_s, const Tensor& f_b, const AfdParams& params) {
    AfdOutput out;
    auto& st = out.state;
    st.f_s = f_s;
    st.f_b = f_b;
    st.attention = attention_vectors(f_s, f_b, params);
    const Tensor parts[] = {st.attention.s_att.reshaped({params.channels, 1, 1}),
                            st.attention.b_att.reshaped({params.channels, 1, 1})};
    st.fused_att = ops::concat_channels(parts).reshaped({2 * params.channels});
    st.affinity = affinity_and_weights(st.fused_att, params);
    st.fused = fuse(f_s, f_b, st.affinity.w_s, st.affinity.w_b);
    out.fused = st.fused;
    out.logits = ops::conv2d(st.fused, params.head.weight.value, params.head.bias.value, 1, 0);
    return out;
}

StreamGrads afd_backward(const Tensor& d_logits, const FusionState& state, AfdParams& params) {
    auto head = ops::conv2d_backward(d_logits, state.fused, params.head.weight.value, 1, 0);
    ops::add_inplace(params.head.weight.grad, head.weight);
    ops::add_inplace(params.head.bias.grad, head.bias);

    auto fg = fuse_backward(head.input, state.f_s, state.f_b, state.affinity.w_s, state.affinity.w_b);
    const Tensor d_att = affinity_and_weights_backward(fg.w_s, fg.w_b, state.affinity, params);
    const std::size_t c = params.channels;
    Tensor d_s_att({c}), d_b_att({c});
    for (std::size_t i = 0; i < c; ++i) {
        d_s_att[i] = d_att[i];
        d_b_att[i] = d_att[c + i];
    }
    auto streams = attention_vectors_backward(d_s_att, d_b_att, state.attention, params);
    ops::add_inplace(streams.f_s, fg.f_s);
    ops::add_inplace(streams.f_b, fg.f_b);
    return streams;
}

} // namespace mseed::afd
