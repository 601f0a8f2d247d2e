#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "mseed/tensor.hpp"

namespace mseed {

/// Convolution weight (C_out x C_in x k x k) and bias (C_out).
struct ConvParams {
    Parameter weight;
    Parameter bias;
};

/// Dense weight (D_out x D_in) and bias (D_out).
struct LinearParams {
    Parameter weight;
    Parameter bias;
};

/// Convolution followed by group normalization.
struct ConvNormParams {
    ConvParams conv;
    Parameter gamma;
    Parameter beta;
};

/// Weights and biases drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
ConvParams make_conv(const std::string& name, std::size_t out_c, std::size_t in_c, std::size_t k, std::mt19937_64& rng);
LinearParams make_linear(const std::string& name, std::size_t out_d, std::size_t in_d, std::mt19937_64& rng);
/// gamma = 1, beta = 0.
ConvNormParams make_conv_norm(const std::string& name, std::size_t out_c, std::size_t in_c, std::size_t k,
                              std::mt19937_64& rng);

void append(std::vector<Parameter*>& out, ConvParams& p);
void append(std::vector<Parameter*>& out, LinearParams& p);
void append(std::vector<Parameter*>& out, ConvNormParams& p);

} // namespace mseed
