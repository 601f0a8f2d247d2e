#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mseed/tensor.hpp"

namespace mseed {

struct AdamWHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

/// Adam with decoupled weight decay and bias-corrected moments. Moment
/// buffers are matched to parameters by position.
class AdamW {
public:
    AdamW() = default;
    explicit AdamW(AdamWHyper hyper) : hyper_(hyper) {}

    /// One update with learning rate hyper.lr * lr_scale. Throws NumericError
    /// (leaving every parameter untouched) if any gradient is non-finite.
    void step(std::span<Parameter* const> params, double lr_scale = 1.0);

    const AdamWHyper& hyper() const noexcept { return hyper_; }
    std::uint64_t steps() const noexcept { return step_; }

    std::vector<Tensor>& first_moments() noexcept { return m_; }
    std::vector<Tensor>& second_moments() noexcept { return v_; }
    const std::vector<Tensor>& first_moments() const noexcept { return m_; }
    const std::vector<Tensor>& second_moments() const noexcept { return v_; }
    void restore(std::uint64_t steps, std::vector<Tensor> m, std::vector<Tensor> v);

private:
    AdamWHyper hyper_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::uint64_t step_ = 0;
};

} // namespace mseed
