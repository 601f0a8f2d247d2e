#include "mseed/params.hpp"

#include <cmath>

namespace mseed {
namespace {

void fill_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.storage()) v = dist(rng);
}

} // namespace

ConvParams make_conv(const std::string& name, std::size_t out_c, std::size_t in_c, std::size_t k, std::mt19937_64& rng) {
    ConvParams p{Parameter(name + ".weight", Tensor({out_c, in_c, k, k})), Parameter(name + ".bias", Tensor({out_c}))};
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_c * k * k));
    fill_uniform(p.weight.value, bound, rng);
    fill_uniform(p.bias.value, bound, rng);
    return p;
}

LinearParams make_linear(const std::string& name, std::size_t out_d, std::size_t in_d, std::mt19937_64& rng) {
    LinearParams p{Parameter(name + ".weight", Tensor({out_d, in_d})), Parameter(name + ".bias", Tensor({out_d}))};
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_d));
    fill_uniform(p.weight.value, bound, rng);
    fill_uniform(p.bias.value, bound, rng);
    return p;
}

ConvNormParams make_conv_norm(const std::string& name, std::size_t out_c, std::size_t in_c, std::size_t k,
                              std::mt19937_64& rng) {
    return ConvNormParams{make_conv(name + ".conv", out_c, in_c, k, rng),
                          Parameter(name + ".gn.gamma", Tensor({out_c}, 1.0)),
                          Parameter(name + ".gn.beta", Tensor({out_c}))};
}

void append(std::vector<Parameter*>& out, ConvParams& p) {
    out.push_back(&p.weight);
    out.push_back(&p.bias);
}

void append(std::vector<Parameter*>& out, LinearParams& p) {
    out.push_back(&p.weight);
    out.push_back(&p.bias);
}

void append(std::vector<Parameter*>& out, ConvNormParams& p) {
    append(out, p.conv);
    out.push_back(&p.gamma);
    out.push_back(&p.beta);
}

} // namespace mseed
