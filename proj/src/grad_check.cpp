#include "mseed/grad_check.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "mseed/errors.hpp"

namespace mseed {
namespace {

void require_finite(double v, std::size_t index) {
    if (!std::isfinite(v)) {
        throw NumericError("grad_check: non-finite objective when perturbing index " + std::to_string(index));
    }
}

void record(GradCheckReport& report, std::size_t i, double analytic, double numeric) {
    const double err = relative_error(analytic, numeric);
    ++report.checked;
    if (err > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = err;
        report.worst_index = i;
        report.analytic_at_worst = analytic;
        report.numeric_at_worst = numeric;
    }
}

Tensor base_gradient(const PiecewiseFunction& f, const Tensor& x, std::uint64_t& branches) {
    Tensor analytic(x.shape());
    Fingerprint fp;
    const double f0 = f(x, &analytic, &fp);
    if (!std::isfinite(f0)) throw NumericError("grad_check: objective is non-finite at the base point");
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        if (!std::isfinite(analytic[i])) {
            throw NumericError("grad_check: analytic gradient non-finite at index " + std::to_string(i));
        }
    }
    branches = fp.value();
    return analytic;
}

} // namespace

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const ScalarFunction& f, const Tensor& x, double step, double tol,
                           const std::optional<std::vector<std::size_t>>& indices) {
    PiecewiseCheckOptions opts;
    opts.step = step;
    opts.tol = tol;
    opts.min_step = step;
    opts.order = 2;
    opts.candidates = indices;
    return grad_check_piecewise([&f](const Tensor& p, Tensor* g, Fingerprint*) { return f(p, g); }, x, opts);
}

GradCheckReport grad_check_piecewise(const PiecewiseFunction& f, const Tensor& x, const PiecewiseCheckOptions& options) {
    if (!(options.step > 0.0)) throw ConfigError("grad_check: step must be positive");
    if (options.order != 2 && options.order != 4) throw ConfigError("grad_check: order must be 2 or 4");
    std::uint64_t base_branches = 0;
    const Tensor analytic = base_gradient(f, x, base_branches);

    std::vector<std::size_t> all;
    if (!options.candidates) {
        all.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) all[i] = i;
    }
    const auto& which = options.candidates ? *options.candidates : all;

    const double min_step = std::min(options.min_step, options.step);
    GradCheckReport report;
    Tensor probe = x;
    // Returns false when some stencil point lies on another branch.
    auto estimate = [&](std::size_t i, double h, double& numeric) {
        const std::array<double, 4> offsets{h, -h, 2 * h, -2 * h};
        std::array<double, 4> vals{};
        const double orig = probe[i];
        bool same_branch = true;
        for (int k = 0; k < options.order && same_branch; ++k) {
            probe[i] = orig + offsets[static_cast<std::size_t>(k)];
            Fingerprint fp;
            vals[static_cast<std::size_t>(k)] = f(probe, nullptr, &fp);
            require_finite(vals[static_cast<std::size_t>(k)], i);
            same_branch = fp.value() == base_branches;
        }
        probe[i] = orig;
        if (!same_branch) return false;
        numeric = options.order == 2 ? (vals[0] - vals[1]) / (2.0 * h)
                                     : (8.0 * (vals[0] - vals[1]) - (vals[2] - vals[3])) / (12.0 * h);
        return true;
    };
    for (std::size_t i : which) {
        if (options.want != 0 && report.checked == options.want) break;
        if (i >= x.size()) throw ContractError("grad_check: index out of range");
        double numeric = 0.0;
        bool ok = false;
        for (double h = options.step; h >= min_step * (1.0 - 1e-12) && !ok; h /= 4.0) ok = estimate(i, h, numeric);
        if (!ok) {
            ++report.skipped;
            continue;
        }
        record(report, i, analytic[i], numeric);
    }
    report.passed = report.checked > 0 && report.max_rel_error <= options.tol;
    return report;
}

} // namespace mseed
