#include "mseed/gradcheck_suite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "mseed/afd.hpp"
#include "mseed/boundary_ops.hpp"
#include "mseed/losses.hpp"
#include "mseed/ops.hpp"

namespace mseed {
namespace {

using Rng = std::mt19937_64;

constexpr std::size_t kMaxProbesPerGroup = 48;

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(shape);
    for (auto& v : t.storage()) v = u(rng);
    return t;
}

// Values bounded away from zero so relu kinks stay out of the stencil.
Tensor away_from_zero(const Shape& shape, Rng& rng) {
    std::uniform_real_distribution<double> u(0.1, 1.0);
    std::bernoulli_distribution sign(0.5);
    Tensor t(shape);
    for (auto& v : t.storage()) v = sign(rng) ? u(rng) : -u(rng);
    return t;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

LabelMap blocky_labels(std::size_t h, std::size_t w, std::size_t n, std::size_t block, Rng& rng) {
    std::uniform_int_distribution<int> cls(0, static_cast<int>(n) - 1);
    const std::size_t bh = (h + block - 1) / block, bw = (w + block - 1) / block;
    std::vector<int> blocks(bh * bw);
    for (auto& b : blocks) b = cls(rng);
    std::vector<int> lab(h * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) lab[y * w + x] = blocks[(y / block) * bw + x / block];
    }
    return LabelMap(h, w, n, std::move(lab));
}

// Logits whose sigmoid stays clear of the confidence gate.
Tensor gate_safe_logits(const Shape& shape, double epsilon, Rng& rng) {
    Tensor t = random_tensor(shape, rng, -3.0, 3.0);
    const double cut = std::log(epsilon / (1.0 - epsilon));
    for (auto& v : t.storage()) {
        if (std::abs(v - cut) < 0.05) v = cut + (v < cut ? -0.05 : 0.05);
    }
    return t;
}

std::vector<std::size_t> sample_indices(std::size_t size, std::size_t k, Rng& rng) {
    std::vector<std::size_t> all(size);
    for (std::size_t i = 0; i < size; ++i) all[i] = i;
    if (size <= k) return all;
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, size - 1);
        std::swap(all[i], all[pick(rng)]);
    }
    all.resize(k);
    std::sort(all.begin(), all.end());
    return all;
}

class Runner {
public:
    Runner(const GradCheckOptions& o, GradCheckSuite& s) : opts_(o), suite_(s) {}

    void check(const std::string& name, const Tensor& x, const ScalarFunction& f) {
        check_piecewise(name, x, [&f](const Tensor& p, Tensor* g, Fingerprint*) { return f(p, g); });
    }

    void check_piecewise(const std::string& name, const Tensor& x, const PiecewiseFunction& f,
                         std::optional<std::vector<std::size_t>> candidates = std::nullopt, std::size_t want = 0) {
        PiecewiseCheckOptions o;
        o.step = opts_.step;
        o.min_step = opts_.min_step;
        o.tol = opts_.tol;
        o.order = 4;
        o.candidates = std::move(candidates);
        o.want = want;
        GradCheckEntry e{name, grad_check_piecewise(f, x, o)};
        suite_.passed = suite_.passed && e.report.passed;
        suite_.max_rel_error = std::max(suite_.max_rel_error, e.report.max_rel_error);
        suite_.entries.push_back(std::move(e));
    }

private:
    const GradCheckOptions& opts_;
    GradCheckSuite& suite_;
};

// Branches of the regularization terms: pseudo-boundary winners, the sign of
// each winning difference and of the L1 residual, and the confidence gate.
void loss_branches(const Tensor& sf_logits, const Tensor& b_logits, const Tensor& gt_binary, const Tensor& gt_semantic,
                   int radius, double epsilon, Fingerprint& fp) {
    const Tensor probs = ops::softmax(sf_logits, 0);
    const auto pb = pseudo_semantic_boundary(probs, radius);
    const auto offsets = diamond_offsets(radius);
    const std::size_t n = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t i = (k * h + y) * w + x;
                const int a = pb.argmax[i];
                fp.add(static_cast<std::uint64_t>(a + 1));
                if (a >= 0) {
                    const auto& o = offsets.offsets[static_cast<std::size_t>(a)];
                    const std::size_t qy = static_cast<std::size_t>(static_cast<long>(y) + o.dy);
                    const std::size_t qx = static_cast<std::size_t>(static_cast<long>(x) + o.dx);
                    fp.add_sign(probs[(k * h + qy) * w + qx] - probs[i]);
                }
                fp.add_sign(pb.value[i] - gt_semantic[i]);
            }
        }
    }
    const Tensor b = ops::sigmoid(b_logits);
    for (std::size_t i = 0; i < b.size(); ++i) fp.add(b[i] > epsilon || gt_binary[i] == 1.0 ? 1U : 0U);
}

void op_checks(Runner& run, Rng& rng) {
    // convolution: three geometries, each w.r.t. input, weight and bias
    struct Geo {
        const char* tag;
        std::size_t k;
        int stride, pad;
    };
    for (const Geo g : {Geo{"3x3", 3, 1, 1}, Geo{"3x3/s2", 3, 2, 1}, Geo{"1x1", 1, 1, 0}}) {
        const Tensor in = random_tensor({3, 6, 7}, rng);
        const Tensor w = random_tensor({4, 3, g.k, g.k}, rng);
        const Tensor b = random_tensor({4}, rng);
        const Tensor r = random_tensor(ops::conv2d(in, w, b, g.stride, g.pad).shape(), rng);
        const std::string base = std::string("conv2d ") + g.tag;
        run.check(base + " input", in, [&](const Tensor& x, Tensor* grad) {
            if (grad) *grad = ops::conv2d_backward(r, x, w, g.stride, g.pad).input;
            return dot(r, ops::conv2d(x, w, b, g.stride, g.pad));
        });
        run.check(base + " weight", w, [&](const Tensor& x, Tensor* grad) {
            if (grad) *grad = ops::conv2d_backward(r, in, x, g.stride, g.pad).weight;
            return dot(r, ops::conv2d(in, x, b, g.stride, g.pad));
        });
        run.check(base + " bias", b, [&](const Tensor& x, Tensor* grad) {
            if (grad) *grad = ops::conv2d_backward(r, in, w, g.stride, g.pad).bias;
            return dot(r, ops::conv2d(in, w, x, g.stride, g.pad));
        });
    }

    {
        const Tensor in = random_tensor({6, 4, 5}, rng);
        const Tensor gamma = random_tensor({6}, rng, 0.5, 1.5);
        const Tensor beta = random_tensor({6}, rng);
        const Tensor r = random_tensor(in.shape(), rng);
        auto gn = [&](const Tensor& x, const Tensor& g, const Tensor& b, ops::GroupNormGrads* grads) {
            ops::GroupNormCache cache;
            const Tensor y = ops::group_norm(x, 3, g, b, 1e-5, &cache);
            if (grads) *grads = ops::group_norm_backward(r, cache, g);
            return dot(r, y);
        };
        run.check("group_norm input", in, [&](const Tensor& x, Tensor* grad) {
            ops::GroupNormGrads g;
            const double v = gn(x, gamma, beta, grad ? &g : nullptr);
            if (grad) *grad = g.input;
            return v;
        });
        run.check("group_norm gamma", gamma, [&](const Tensor& x, Tensor* grad) {
            ops::GroupNormGrads g;
            const double v = gn(in, x, beta, grad ? &g : nullptr);
            if (grad) *grad = g.gamma;
            return v;
        });
        run.check("group_norm beta", beta, [&](const Tensor& x, Tensor* grad) {
            ops::GroupNormGrads g;
            const double v = gn(in, gamma, x, grad ? &g : nullptr);
            if (grad) *grad = g.beta;
            return v;
        });
    }

    {
        const Tensor in = away_from_zero({3, 4, 4}, rng);
        const Tensor r = random_tensor(in.shape(), rng);
        run.check_piecewise("relu", in, [&](const Tensor& x, Tensor* grad, Fingerprint* fp) {
            if (grad) *grad = ops::relu_backward(r, x);
            if (fp) fp->add_signs(x);
            return dot(r, ops::relu(x));
        });
    }
    {
        const Tensor in = random_tensor({3, 4, 4}, rng, -4.0, 4.0);
        const Tensor r = random_tensor(in.shape(), rng);
        run.check("sigmoid", in, [&](const Tensor& x, Tensor* grad) {
            const Tensor y = ops::sigmoid(x);
            if (grad) *grad = ops::sigmoid_backward(r, y);
            return dot(r, y);
        });
    }
    for (std::size_t axis : {std::size_t{0}, std::size_t{2}}) {
        const Tensor in = random_tensor({4, 3, 5}, rng, -3.0, 3.0);
        const Tensor r = random_tensor(in.shape(), rng);
        run.check("softmax axis " + std::to_string(axis), in, [&, axis](const Tensor& x, Tensor* grad) {
            const Tensor y = ops::softmax(x, axis);
            if (grad) *grad = ops::softmax_backward(r, y, axis);
            return dot(r, y);
        });
    }
    {
        const Tensor a = random_tensor({2, 3, 4}, rng);
        const Tensor b = random_tensor({2, 3, 4}, rng);
        const Tensor r = random_tensor(a.shape(), rng);
        run.check("mul lhs", a, [&](const Tensor& x, Tensor* grad) {
            if (grad) *grad = ops::mul_backward(r, x, b).first;
            return dot(r, ops::mul(x, b));
        });
        run.check("mul rhs", b, [&](const Tensor& x, Tensor* grad) {
            if (grad) *grad = ops::mul_backward(r, a, x).second;
            return dot(r, ops::mul(a, x));
        });
    }
    {
        const Tensor a = random_tensor({2, 3, 3}, rng);
        const Tensor b = random_tensor({3, 3, 3}, rng);
        const Tensor r = random_tensor({5, 3, 3}, rng);
        const std::vector<std::size_t> split{2, 3};
        run.check("concat_channels", a, [&](const Tensor& x, Tensor* grad) {
            const std::vector<Tensor> parts{x, b};
            if (grad) *grad = ops::split_channels(r, split)[0];
            return dot(r, ops::concat_channels(parts));
        });
    }
    {
        const Tensor in = random_tensor({5, 3, 4}, rng);
        const Tensor r = random_tensor({5}, rng);
        run.check("gap", in, [&](const Tensor& x, Tensor* grad) {
            if (grad) *grad = ops::gap_backward(r, x.shape());
            return dot(r, ops::gap(x));
        });
    }
    {
        const Tensor in = random_tensor({6}, rng);
        const Tensor w = random_tensor({4, 6}, rng);
        const Tensor b = random_tensor({4}, rng);
        const Tensor r = random_tensor({4}, rng);
        run.check("linear input", in, [&](const Tensor& x, Tensor* grad) {
            if (grad) *grad = ops::linear_backward(r, x, w).input;
            return dot(r, ops::linear(x, w, b));
        });
        run.check("linear weight", w, [&](const Tensor& x, Tensor* grad) {
            if (grad) *grad = ops::linear_backward(r, in, x).weight;
            return dot(r, ops::linear(in, x, b));
        });
        run.check("linear bias", b, [&](const Tensor& x, Tensor* grad) {
            if (grad) *grad = ops::linear_backward(r, in, w).bias;
            return dot(r, ops::linear(in, w, x));
        });
    }
    for (const auto& [oh, ow] : {std::pair<std::size_t, std::size_t>{8, 10}, {7, 11}}) {
        const Tensor in = random_tensor({2, 4, 5}, rng);
        const Tensor r = random_tensor({2, oh, ow}, rng);
        run.check("bilinear_upsample " + std::to_string(oh) + "x" + std::to_string(ow), in,
                  [&, oh, ow](const Tensor& x, Tensor* grad) {
                      if (grad) *grad = ops::bilinear_upsample_backward(r, x.dim(1), x.dim(2));
                      return dot(r, ops::bilinear_upsample(x, oh, ow));
                  });
    }
    for (int radius : {1, 2}) {
        Tensor probs = ops::softmax(random_tensor({3, 6, 6}, rng, -2.0, 2.0), 0);
        const Tensor r = random_tensor(probs.shape(), rng);
        run.check_piecewise("pseudo_semantic_boundary r=" + std::to_string(radius), probs,
                            [&, radius](const Tensor& x, Tensor* grad, Fingerprint* fp) {
                                const auto pb = pseudo_semantic_boundary(x, radius);
                                if (grad) *grad = pseudo_semantic_boundary_backward(r, x, pb);
                                if (fp) {
                                    for (int a : pb.argmax) fp->add(static_cast<std::uint64_t>(a + 1));
                                }
                                return dot(r, pb.value);
                            });
    }
}

void afd_checks(Runner& run, const model::ModelConfig& config, Rng& rng) {
    const std::size_t c = config.afd_channels;
    afd::AfdParams params = afd::make_afd_params(c, config.afd_groups, config.afd_reduction, config.num_classes, rng);
    const Tensor f_s = random_tensor({c, 4, 5}, rng);
    const Tensor f_b = random_tensor({c, 4, 5}, rng);
    // Mean-scaled projection, so the objective is of loss magnitude.
    Tensor r = random_tensor({config.num_classes, 4, 5}, rng);
    ops::scale_inplace(r, 1.0 / static_cast<double>(r.size()));

    auto objective = [&](const Tensor& s, const Tensor& b, afd::StreamGrads* grads, Fingerprint* fp) {
        const auto out = afd::afd_forward(s, b, params);
        if (grads) {
            for (auto* p : params.parameters()) p->zero_grad();
            *grads = afd::afd_backward(r, out.state, params);
        }
        if (fp) {
            fp->add_signs(out.state.attention.cache_s.hidden_pre);
            fp->add_signs(out.state.attention.cache_b.hidden_pre);
        }
        return dot(r, out.logits);
    };
    run.check_piecewise("afd semantic features", f_s, [&](const Tensor& x, Tensor* grad, Fingerprint* fp) {
        afd::StreamGrads g;
        const double v = objective(x, f_b, grad ? &g : nullptr, fp);
        if (grad) *grad = g.f_s;
        return v;
    });
    run.check_piecewise("afd boundary features", f_b, [&](const Tensor& x, Tensor* grad, Fingerprint* fp) {
        afd::StreamGrads g;
        const double v = objective(f_s, x, grad ? &g : nullptr, fp);
        if (grad) *grad = g.f_b;
        return v;
    });
    for (auto* p : params.parameters()) {
        run.check_piecewise("afd param " + p->name, p->value, [&, p](const Tensor& x, Tensor* grad, Fingerprint* fp) {
            const Tensor saved = p->value;
            p->value = x;
            afd::StreamGrads g;
            const double v = objective(f_s, f_b, grad ? &g : nullptr, fp);
            if (grad) *grad = p->grad;
            p->value = saved;
            return v;
        });
    }
}

void loss_checks(Runner& run, std::size_t n, Rng& rng) {
    const std::size_t h = 8, w = 9;
    const LabelMap labels = blocky_labels(h, w, n, 3, rng);
    const losses::LossWeights weights{0.7, 1.3, 0.8};
    const int radius = 2;
    const Tensor gt_binary = binary_boundary_label(labels, radius);
    const Tensor gt_semantic = semantic_boundary_label(labels, radius);
    const Tensor s_logits = random_tensor({n, h, w}, rng, -2.0, 2.0);
    const Tensor sf_logits = random_tensor({n, h, w}, rng, -2.0, 2.0);
    const Tensor b_logits = gate_safe_logits({h, w}, weights.epsilon, rng);

    run.check("cross_entropy", sf_logits, [&](const Tensor& x, Tensor* grad) {
        auto l = losses::cross_entropy(x, labels);
        if (grad) *grad = l.grad;
        return l.value;
    });
    run.check("binary_cross_entropy", b_logits, [&](const Tensor& x, Tensor* grad) {
        auto l = losses::binary_cross_entropy(x, gt_binary);
        if (grad) *grad = l.grad;
        return l.value;
    });
    {
        const Tensor probs = ops::softmax(sf_logits, 0);
        run.check_piecewise("semantic-to-boundary loss", probs, [&](const Tensor& x, Tensor* grad, Fingerprint* fp) {
            auto l = losses::l_s2b(x, gt_semantic, radius);
            if (grad) *grad = l.grad;
            if (fp) {
                const auto pb = pseudo_semantic_boundary(x, radius);
                for (int a : pb.argmax) fp->add(static_cast<std::uint64_t>(a + 1));
                for (std::size_t i = 0; i < x.size(); ++i) fp->add_sign(pb.value[i] - gt_semantic[i]);
            }
            return l.value;
        });
    }
    {
        const Tensor b = ops::sigmoid(b_logits);
        run.check("boundary-to-semantic loss", sf_logits, [&](const Tensor& x, Tensor* grad) {
            auto l = losses::l_b2s(x, labels, b, gt_binary, weights.epsilon);
            if (grad) *grad = l.grad_sf_logits;
            return l.value;
        });
    }
    auto total = [&](const Tensor& s, const Tensor& sf, const Tensor& b, Fingerprint* fp) {
        if (fp) loss_branches(sf, b, gt_binary, gt_semantic, radius, weights.epsilon, *fp);
        return losses::total_loss(s, sf, b, labels, gt_binary, gt_semantic, weights, radius);
    };
    run.check_piecewise("total loss wrt auxiliary logits", s_logits, [&](const Tensor& x, Tensor* grad, Fingerprint* fp) {
        auto l = total(x, sf_logits, b_logits, fp);
        if (grad) *grad = l.grad_s_logits;
        return l.report.total;
    });
    run.check_piecewise("total loss wrt fused logits", sf_logits, [&](const Tensor& x, Tensor* grad, Fingerprint* fp) {
        auto l = total(s_logits, x, b_logits, fp);
        if (grad) *grad = l.grad_sf_logits;
        return l.report.total;
    });
    run.check_piecewise("total loss wrt boundary logits", b_logits, [&](const Tensor& x, Tensor* grad, Fingerprint* fp) {
        auto l = total(s_logits, sf_logits, x, fp);
        if (grad) *grad = l.grad_b_logits;
        return l.report.total;
    });
}

void model_branches(const model::ForwardCache& c, Fingerprint& fp) {
    for (const auto& s : c.stem) fp.add_signs(s.normed);
    for (const auto& st : c.stages) {
        for (const auto& s : st) fp.add_signs(s.normed);
    }
    if (c.boundary_stream) {
        for (const auto& s : c.converters) fp.add_signs(s.normed);
        fp.add_signs(c.boundary_reduce.normed);
    }
    if (c.afd_state) {
        fp.add_signs(c.afd_state->attention.cache_s.hidden_pre);
        fp.add_signs(c.afd_state->attention.cache_b.hidden_pre);
    }
}

void model_checks(Runner& run, const model::ModelConfig& base, const GradCheckOptions& opts, Rng& rng) {
    const std::size_t h = opts.model_height, w = opts.model_width, n = base.num_classes;
    const int radius = 2;
    const losses::LossWeights weights;
    const Tensor image = random_tensor({3, h, w}, rng, 0.0, 1.0);
    const LabelMap labels = blocky_labels(h, w, n, 4, rng);
    const Tensor gt_binary = binary_boundary_label(labels, radius);
    const Tensor gt_semantic = semantic_boundary_label(labels, radius);

    for (auto mode : {model::FusionMode::afd, model::FusionMode::add, model::FusionMode::cat}) {
        model::ModelConfig config = base;
        config.fusion = mode;
        model::ModelParams params = model::init_params(config, opts.seed + 11);
        auto objective = [&](bool with_grad, Fingerprint* fp) {
            ++params.generation;
            const auto fwd = model::forward(image, params, config);
            const auto& p = fwd.predictions;
            auto loss = losses::total_loss(p.s_logits, p.sf_logits, p.b_logits, labels, gt_binary, gt_semantic,
                                           weights, radius);
            if (fp) {
                model_branches(fwd.cache, *fp);
                loss_branches(p.sf_logits, p.b_logits, gt_binary, gt_semantic, radius, weights.epsilon, *fp);
            }
            if (with_grad) {
                params.zero_grad();
                model::backward({loss.grad_s_logits, loss.grad_sf_logits, loss.grad_b_logits}, fwd.cache, params,
                                config);
            }
            return loss.report.total;
        };
        for (auto* p : params.parameters()) {
            // Probe order is a random permutation; the first accepted probes count.
            auto order = sample_indices(p->value.size(), kMaxProbesPerGroup, rng);
            std::shuffle(order.begin(), order.end(), rng);
            run.check_piecewise(
                "model[" + model::to_string(mode) + "] " + p->name, p->value,
                [&, p](const Tensor& x, Tensor* grad, Fingerprint* fp) {
                    const Tensor saved = p->value;
                    p->value = x;
                    const double v = objective(grad != nullptr, fp);
                    if (grad) *grad = p->grad;
                    p->value = saved;
                    ++params.generation;
                    return v;
                },
                std::move(order), opts.samples_per_group);
        }
    }
}

} // namespace

GradCheckSuite run_gradcheck_suite(const model::ModelConfig& config, const GradCheckOptions& options) {
    config.validate();
    const auto start = std::chrono::steady_clock::now();
    GradCheckSuite suite;
    Runner run(options, suite);
    Rng rng(options.seed);
    op_checks(run, rng);
    afd_checks(run, config, rng);
    loss_checks(run, config.num_classes, rng);
    model_checks(run, config, options, rng);
    suite.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return suite;
}

nlohmann::json to_json(const GradCheckSuite& suite) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : suite.entries) {
        entries.push_back({{"name", e.name},
                           {"max_rel_error", e.report.max_rel_error},
                           {"worst_index", e.report.worst_index},
                           {"analytic", e.report.analytic_at_worst},
                           {"numeric", e.report.numeric_at_worst},
                           {"checked", e.report.checked},
                           {"skipped", e.report.skipped},
                           {"passed", e.report.passed}});
    }
    return {{"passed", suite.passed},
            {"max_rel_error", suite.max_rel_error},
            {"seconds", suite.seconds},
            {"entries", entries}};
}

} // namespace mseed
