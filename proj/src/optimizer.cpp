#include "mseed/optimizer.hpp"

#include <cmath>
#include <string>

#include "mseed/errors.hpp"

namespace mseed {

void AdamW::step(std::span<Parameter* const> params, double lr_scale) {
    for (const auto* p : params) {
        for (std::size_t i = 0; i < p->grad.size(); ++i) {
            if (!std::isfinite(p->grad[i])) {
                throw NumericError("adamw: non-finite gradient in '" + p->name + "' at index " + std::to_string(i));
            }
        }
    }
    if (m_.empty()) {
        for (const auto* p : params) {
            m_.emplace_back(p->value.shape());
            v_.emplace_back(p->value.shape());
        }
    }
    if (m_.size() != params.size()) throw ContractError("adamw: parameter list changed between steps");

    ++step_;
    const double lr = hyper_.lr * lr_scale;
    const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(step_));
    const double decay = 1.0 - lr * hyper_.weight_decay;
    for (std::size_t j = 0; j < params.size(); ++j) {
        Parameter& p = *params[j];
        if (m_[j].shape() != p.value.shape()) throw ContractError("adamw: moment shape mismatch for '" + p.name + "'");
        auto& m = m_[j];
        auto& v = v_[j];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            m[i] = hyper_.beta1 * m[i] + (1.0 - hyper_.beta1) * g;
            v[i] = hyper_.beta2 * v[i] + (1.0 - hyper_.beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p.value[i] = p.value[i] * decay - lr * m_hat / (std::sqrt(v_hat) + hyper_.eps);
        }
    }
}

void AdamW::restore(std::uint64_t steps, std::vector<Tensor> m, std::vector<Tensor> v) {
    if (m.size() != v.size()) throw ContractError("adamw: moment lists differ in length");
    step_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
}

} // namespace mseed
