#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "mseed/tensor.hpp"

namespace mseed {

/// Scalar objective. When `grad` is non-null the callee writes the analytic
/// gradient (same shape as x) into it.
using ScalarFunction = std::function<double(const Tensor& x, Tensor* grad)>;

/// Order-sensitive hash of the discrete choices a piecewise-smooth objective
/// makes (relu masks, max winners, signs under |.|, threshold gates).
class Fingerprint {
public:
    void add(std::uint64_t v) noexcept {
        for (int i = 0; i < 8; ++i) {
            hash_ ^= (v >> (8 * i)) & 0xffU;
            hash_ *= 0x100000001b3ULL;
        }
    }
    void add_sign(double v) noexcept { add(v > 0.0 ? 2U : (v < 0.0 ? 0U : 1U)); }
    void add_signs(const Tensor& t) noexcept {
        for (double v : t.data()) add_sign(v);
    }
    std::uint64_t value() const noexcept { return hash_; }

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

/// Objective that also reports the fingerprint of its branch choices at x.
using PiecewiseFunction = std::function<double(const Tensor& x, Tensor* grad, Fingerprint* branches)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
    std::size_t checked = 0;
    /// Probes rejected because a branch switched inside the stencil.
    std::size_t skipped = 0;
    bool passed = true;
};

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

/// Compares the analytic gradient of f at x against central differences
/// (f(x + h e_i) - f(x - h e_i)) / 2h. Checks every coordinate unless
/// `indices` restricts the set. Throws NumericError naming the coordinate if
/// any evaluation is non-finite.
GradCheckReport grad_check(const ScalarFunction& f, const Tensor& x, double step, double tol,
                           const std::optional<std::vector<std::size_t>>& indices = std::nullopt);

struct PiecewiseCheckOptions {
    double step = 1e-4;
    /// A probe that straddles a kink is retried with the step divided by 4
    /// while it stays at or above this floor.
    double min_step = 1e-4;
    double tol = 1e-4;
    /// 2: (f(x+h) - f(x-h)) / 2h
    /// 4: (f(x-2h) - 8 f(x-h) + 8 f(x+h) - f(x+2h)) / 12h
    int order = 4;
    /// Candidate coordinates in probe order; all coordinates when empty.
    std::optional<std::vector<std::size_t>> candidates;
    /// Stop after this many accepted probes; 0 probes every candidate.
    std::size_t want = 0;
};

/// Central-difference check for piecewise-smooth objectives. A probe whose
/// stencil points do not all share the branch fingerprint of x straddles a
/// kink, where finite differences do not estimate the derivative; it is
/// retried with smaller steps down to `min_step`, then counted in `skipped`
/// and replaced by the next candidate.
GradCheckReport grad_check_piecewise(const PiecewiseFunction& f, const Tensor& x, const PiecewiseCheckOptions& options);

} // namespace mseed
