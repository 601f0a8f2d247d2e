#include <gtest/gtest.h>

#include <random>

#include "mseed/boundary_ops.hpp"
#include "mseed/errors.hpp"
#include "mseed/grad_check.hpp"
#include "mseed/ops.hpp"
#include "oracles.hpp"

using namespace mseed;

TEST(Diamond, OffsetsPerRadius) {
    const auto r1 = diamond_offsets(1).offsets;
    const std::vector<Offset> expect{{-1, 0}, {0, -1}, {0, 1}, {1, 0}};
    EXPECT_EQ(r1, expect);
    EXPECT_EQ(diamond_offsets(3).offsets.size(), 24u);
    EXPECT_THROW(diamond_offsets(0), ConfigError);
}

TEST(Diamond, RadiusTwoMatchesFilterLayout) {
    // nonzero, non-center entries of the 5x5 template
    const int layout[5][5] = {{0, 0, 1, 0, 0}, {0, 1, 1, 1, 0}, {1, 1, 0, 1, 1}, {0, 1, 1, 1, 0}, {0, 0, 1, 0, 0}};
    std::vector<Offset> expect;
    for (int y = 0; y < 5; ++y) {
        for (int x = 0; x < 5; ++x) {
            if (layout[y][x]) expect.push_back({y - 2, x - 2});
        }
    }
    EXPECT_EQ(diamond_offsets(2).offsets, expect);
}

TEST(BoundaryLabels, ConstantMapHasNoBoundary) {
    const LabelMap lm(6, 7, 3, 2);
    for (const auto out = binary_boundary_label(lm, 2); double v : out.data()) EXPECT_EQ(v, 0.0);
    for (const auto out = semantic_boundary_label(lm, 2); double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(BoundaryLabels, TwoColumnSplit) {
    LabelMap lm(4, 4, 2);
    for (std::size_t y = 0; y < 4; ++y) {
        lm.set(y, 2, 1);
        lm.set(y, 3, 1);
    }
    const Tensor b = binary_boundary_label(lm, 1);
    for (std::size_t y = 0; y < 4; ++y) {
        for (std::size_t x = 0; x < 4; ++x) EXPECT_EQ(b[y * 4 + x], (x == 1 || x == 2) ? 1.0 : 0.0);
    }
    const Tensor s = semantic_boundary_label(lm, 1);
    for (std::size_t k = 0; k < 2; ++k) {
        for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(s[k * 16 + i], b[i]);
    }
}

TEST(BoundaryLabels, MatchBruteForce) {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 2 + rng() % 4;
        const int r = 1 + static_cast<int>(rng() % 3);
        const LabelMap lm = trial % 2 ? oracle::random_labels(9, 11, n, rng) : oracle::random_blobs(9, 11, n, rng);
        EXPECT_EQ(binary_boundary_label(lm, r), oracle::binary_boundary(lm, r));
        EXPECT_EQ(semantic_boundary_label(lm, r), oracle::semantic_boundary(lm, r));
    }
}

TEST(BoundaryLabels, BinaryIsUnionOfSemanticChannels) {
    std::mt19937_64 rng(22);
    const LabelMap lm = oracle::random_blobs(12, 10, 4, rng);
    const Tensor b = binary_boundary_label(lm, 2), s = semantic_boundary_label(lm, 2);
    for (std::size_t i = 0; i < 120; ++i) {
        double any = 0.0;
        for (std::size_t k = 0; k < 4; ++k) any = std::max(any, s[k * 120 + i]);
        EXPECT_EQ(any, b[i]);
    }
}

TEST(PseudoBoundary, OneHotReproducesLabels) {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        const LabelMap lm = oracle::random_blobs(10, 13, 3, rng);
        for (int r : {1, 2}) EXPECT_EQ(pseudo_semantic_boundary(lm.one_hot(), r).value, semantic_boundary_label(lm, r));
    }
    const LabelMap flat(5, 5, 3, 1);
    for (const auto out = pseudo_semantic_boundary(flat.one_hot(), 2); double v : out.value.data()) EXPECT_EQ(v, 0.0);
}

TEST(PseudoBoundary, SoftValuesMatchBruteForce) {
    std::mt19937_64 rng(24);
    const Tensor probs = ops::softmax(oracle::random_tensor({3, 7, 8}, rng, -2.0, 2.0), 0);
    for (int r : {1, 2, 3}) EXPECT_EQ(pseudo_semantic_boundary(probs, r).value, oracle::pseudo_boundary(probs, r));
}

TEST(PseudoBoundary, GradientAwayFromTies) {
    std::mt19937_64 rng(25);
    const Tensor probs = oracle::random_tensor({2, 6, 7}, rng, 0.0, 1.0);
    const Tensor r = oracle::random_tensor({2, 6, 7}, rng);
    PiecewiseFunction f = [&](const Tensor& p, Tensor* grad, Fingerprint* fp) {
        const auto fw = pseudo_semantic_boundary(p, 2);
        if (grad) *grad = pseudo_semantic_boundary_backward(r, p, fw);
        if (fp) {
            for (int a : fw.argmax) fp->add(static_cast<std::uint64_t>(a + 1));
        }
        double s = 0.0;
        for (std::size_t i = 0; i < r.size(); ++i) s += r[i] * fw.value[i];
        return s;
    };
    PiecewiseCheckOptions opts;
    opts.step = 1e-4;
    opts.min_step = 1e-7;
    const auto rep = grad_check_piecewise(f, probs, opts);
    EXPECT_TRUE(rep.passed) << rep.max_rel_error;
    EXPECT_GT(rep.checked, probs.size() * 3 / 4);
}
