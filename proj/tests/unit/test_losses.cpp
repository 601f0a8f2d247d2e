#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mseed/boundary_ops.hpp"
#include "mseed/errors.hpp"
#include "mseed/grad_check.hpp"
#include "mseed/losses.hpp"
#include "mseed/ops.hpp"
#include "oracles.hpp"

using namespace mseed;
using namespace mseed::losses;

namespace {

double ce_at(const Tensor& logits, std::size_t p, int label) {
    const std::size_t hw = logits.dim(1) * logits.dim(2);
    double z = 0.0;
    for (std::size_t k = 0; k < logits.dim(0); ++k) z += std::exp(logits[k * hw + p]);
    return std::log(z) - logits[static_cast<std::size_t>(label) * hw + p];
}

Tensor scaled_one_hot(const LabelMap& lm, double scale) {
    Tensor t = lm.one_hot();
    ops::scale_inplace(t, scale);
    return t;
}

struct Fixture {
    LabelMap labels;
    Tensor gt_binary, gt_semantic, s, sf, b;
};

Fixture make_fixture(std::uint64_t seed, std::size_t h = 8, std::size_t w = 9, std::size_t n = 3) {
    std::mt19937_64 rng(seed);
    Fixture f;
    f.labels = oracle::random_blobs(h, w, n, rng);
    f.gt_binary = binary_boundary_label(f.labels, 2);
    f.gt_semantic = semantic_boundary_label(f.labels, 2);
    f.s = oracle::random_tensor({n, h, w}, rng, -2.0, 2.0);
    f.sf = oracle::random_tensor({n, h, w}, rng, -2.0, 2.0);
    f.b = oracle::random_tensor({h, w}, rng, -3.0, 3.0);
    return f;
}

} // namespace

TEST(CrossEntropy, UniformIsLogN) {
    const LabelMap lm(3, 4, 5, 2);
    EXPECT_NEAR(cross_entropy(Tensor({5, 3, 4}, 0.7), lm).value, std::log(5.0), 1e-14);
}

TEST(CrossEntropy, DecreasesTowardZeroWithConfidence) {
    std::mt19937_64 rng(41);
    const LabelMap lm = oracle::random_blobs(6, 6, 3, rng);
    double prev = 1e300;
    for (double scale : {1.0, 4.0, 16.0, 64.0}) {
        const double v = cross_entropy(scaled_one_hot(lm, scale), lm).value;
        EXPECT_LT(v, prev);
        prev = v;
    }
    EXPECT_LT(prev, 1e-20);
}

TEST(CrossEntropy, MatchesDirectFormulaAndGradient) {
    const auto f = make_fixture(42);
    const auto ce = cross_entropy(f.s, f.labels);
    double expect = 0.0;
    for (std::size_t p = 0; p < f.labels.size(); ++p) expect += ce_at(f.s, p, f.labels[p]);
    EXPECT_NEAR(ce.value, expect / static_cast<double>(f.labels.size()), 1e-13);
    auto fn = [&](const Tensor& x, Tensor* grad) {
        const auto r = cross_entropy(x, f.labels);
        if (grad) *grad = r.grad;
        return r.value;
    };
    EXPECT_TRUE(grad_check(fn, f.s, 1e-3, 1e-4).passed);
}

TEST(BinaryCrossEntropy, ValueAndGradient) {
    const auto f = make_fixture(43);
    double expect = 0.0;
    for (std::size_t i = 0; i < f.b.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-f.b[i]));
        expect -= f.gt_binary[i] * std::log(p) + (1.0 - f.gt_binary[i]) * std::log(1.0 - p);
    }
    EXPECT_NEAR(binary_cross_entropy(f.b, f.gt_binary).value, expect / static_cast<double>(f.b.size()), 1e-13);
    auto fn = [&](const Tensor& x, Tensor* grad) {
        const auto r = binary_cross_entropy(x, f.gt_binary);
        if (grad) *grad = r.grad;
        return r.value;
    };
    EXPECT_TRUE(grad_check(fn, f.b, 1e-3, 1e-4).passed);
    EXPECT_TRUE(std::isfinite(binary_cross_entropy(Tensor({2, 2}, 800.0), Tensor({2, 2}, 0.0)).value));
}

TEST(SemanticToBoundary, PerfectPredictionIsZero) {
    std::mt19937_64 rng(44);
    const LabelMap lm = oracle::random_blobs(10, 10, 4, rng);
    EXPECT_EQ(l_s2b(lm.one_hot(), semantic_boundary_label(lm, 2), 2).value, 0.0);
}

TEST(SemanticToBoundary, UniformPredictionCostsMeanTarget) {
    std::mt19937_64 rng(45);
    const LabelMap lm = oracle::random_blobs(10, 10, 4, rng);
    const Tensor target = semantic_boundary_label(lm, 2);
    EXPECT_NEAR(l_s2b(Tensor({4, 10, 10}, 0.25), target, 2).value, ops::sum(target) / 400.0, 1e-15);
}

TEST(SemanticToBoundary, MatchesBruteForceAndGradient) {
    const auto f = make_fixture(46);
    const Tensor probs = ops::softmax(f.sf, 0);
    const Tensor pb = oracle::pseudo_boundary(probs, 2);
    double expect = 0.0;
    for (std::size_t i = 0; i < pb.size(); ++i) expect += std::abs(pb[i] - f.gt_semantic[i]);
    EXPECT_NEAR(l_s2b(probs, f.gt_semantic, 2).value, expect / static_cast<double>(pb.size()), 1e-15);

    PiecewiseFunction fn = [&](const Tensor& x, Tensor* grad, Fingerprint* fp) {
        const auto r = l_s2b(x, f.gt_semantic, 2);
        if (grad) *grad = r.grad;
        if (fp) {
            const auto fw = pseudo_semantic_boundary(x, 2);
            for (int a : fw.argmax) fp->add(static_cast<std::uint64_t>(a + 1));
            for (std::size_t i = 0; i < fw.value.size(); ++i) fp->add_sign(fw.value[i] - f.gt_semantic[i]);
        }
        return r.value;
    };
    PiecewiseCheckOptions opts;
    opts.step = 1e-4;
    opts.min_step = 1e-7;
    const auto rep = grad_check_piecewise(fn, probs, opts);
    EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(BoundaryToSemantic, EmptySelection) {
    const auto f = make_fixture(47);
    const Tensor low({8, 9}, 0.1);
    const auto r = l_b2s(f.sf, f.labels, low, Tensor({8, 9}), 0.8);
    EXPECT_EQ(r.value, 0.0);
    EXPECT_EQ(r.selected, 0u);
    for (double v : r.grad_sf_logits.data()) EXPECT_EQ(v, 0.0);
}

TEST(BoundaryToSemantic, FullSelectionIsPlainCrossEntropy) {
    const auto f = make_fixture(48);
    const auto r = l_b2s(f.sf, f.labels, Tensor({8, 9}, 0.95), Tensor({8, 9}), 0.8);
    EXPECT_EQ(r.selected, 72u);
    EXPECT_NEAR(r.value, cross_entropy(f.sf, f.labels).value, 1e-14);
}

TEST(BoundaryToSemantic, MatchesEnumeratedSelection) {
    const auto f = make_fixture(49);
    std::mt19937_64 rng(50);
    const Tensor b = oracle::random_tensor({8, 9}, rng, 0.0, 1.0);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t p = 0; p < 72; ++p) {
        if (b[p] > 0.8 || f.gt_binary[p] == 1.0) {
            total += ce_at(f.sf, p, f.labels[p]);
            ++count;
        }
    }
    const auto r = l_b2s(f.sf, f.labels, b, f.gt_binary, 0.8);
    EXPECT_EQ(r.selected, count);
    EXPECT_NEAR(r.value, total / static_cast<double>(count), 1e-13);
    auto fn = [&](const Tensor& x, Tensor* grad) {
        const auto v = l_b2s(x, f.labels, b, f.gt_binary, 0.8);
        if (grad) *grad = v.grad_sf_logits;
        return v.value;
    };
    EXPECT_TRUE(grad_check(fn, f.sf, 1e-3, 1e-4).passed);
}

TEST(TotalLoss, ReportReconstructsTotal) {
    for (std::uint64_t seed = 51; seed < 56; ++seed) {
        const auto f = make_fixture(seed);
        LossWeights w;
        w.lambda_cls = 0.7;
        w.lambda_reg = 1.3;
        const auto r = total_loss(f.s, f.sf, f.b, f.labels, f.gt_binary, f.gt_semantic, w, 2).report;
        const double expect = 0.7 * (r.l_ce_aux + r.l_ce_fused + r.l_bce_boundary) + 1.3 * (r.l_s2b + r.l_b2s);
        EXPECT_NEAR(r.total, expect, 1e-12);
    }
}

TEST(TotalLoss, ZeroRegularizationWeightIsClassificationLoss) {
    const auto f = make_fixture(57);
    LossWeights w;
    w.lambda_reg = 0.0;
    const auto t = total_loss(f.s, f.sf, f.b, f.labels, f.gt_binary, f.gt_semantic, w, 2);
    const auto c = l_cls(f.s, f.sf, f.b, f.labels, f.gt_binary);
    EXPECT_EQ(t.report.total, c.value);
    EXPECT_EQ(t.grad_s_logits, c.grad_s_logits);
    EXPECT_EQ(t.grad_b_logits, c.grad_b_logits);
}

TEST(TotalLoss, DefaultWeights) {
    const LossWeights w;
    EXPECT_EQ(w.lambda_cls, 1.0);
    EXPECT_EQ(w.lambda_reg, 1.0);
    EXPECT_EQ(w.epsilon, 0.8);
}

TEST(TotalLoss, DisabledTermsReportZero) {
    const auto f = make_fixture(58);
    LossTerms terms;
    terms.bce_boundary = false;
    terms.regularization = false;
    const auto t = total_loss(f.s, f.sf, f.b, f.labels, f.gt_binary, f.gt_semantic, {}, 2, terms);
    EXPECT_EQ(t.report.l_bce_boundary, 0.0);
    EXPECT_EQ(t.report.l_s2b, 0.0);
    EXPECT_EQ(t.report.l_b2s, 0.0);
    for (double v : t.grad_b_logits.data()) EXPECT_EQ(v, 0.0);
}

TEST(TotalLoss, RejectsBadInputs) {
    const auto f = make_fixture(59);
    LossWeights w;
    w.epsilon = 1.5;
    EXPECT_THROW(total_loss(f.s, f.sf, f.b, f.labels, f.gt_binary, f.gt_semantic, w, 2), ConfigError);
    const LabelMap wrong(4, 4, 3);
    EXPECT_THROW(cross_entropy(f.s, wrong), ContractError);
}
