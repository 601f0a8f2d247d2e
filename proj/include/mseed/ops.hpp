#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "mseed/tensor.hpp"

// Differentiable primitives. Every forward has a paired *_backward that maps
// the upstream gradient to gradients of the forward's inputs.
namespace mseed::ops {

// ---- convolution --------------------------------------------------------

/// Cross-correlation with zero padding. input C_in x H x W, weight
/// C_out x C_in x k x k (k odd), bias C_out. Output spatial size is
/// floor((H + 2p - k) / stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding);

struct Conv2dGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};

Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weight, int stride,
                            int padding);

std::size_t conv_output_size(std::size_t in, std::size_t kernel, int stride, int padding);

// ---- group normalization ------------------------------------------------

struct GroupNormCache {
    Tensor normalized;           // pre-affine output
    std::vector<double> inv_std; // one per group
    std::size_t groups = 0;
};

Tensor group_norm(const Tensor& input, std::size_t groups, const Tensor& gamma, const Tensor& beta, double eps,
                  GroupNormCache* cache = nullptr);

struct GroupNormGrads {
    Tensor input;
    Tensor gamma;
    Tensor beta;
};

GroupNormGrads group_norm_backward(const Tensor& grad_out, const GroupNormCache& cache, const Tensor& gamma);

// ---- pointwise ----------------------------------------------------------

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& grad_out, const Tensor& input);

Tensor sigmoid(const Tensor& x);
/// Takes the forward *output*.
Tensor sigmoid_backward(const Tensor& grad_out, const Tensor& output);

Tensor softmax(const Tensor& x, std::size_t axis);
/// Takes the forward *output*.
Tensor softmax_backward(const Tensor& grad_out, const Tensor& output, std::size_t axis);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> mul_backward(const Tensor& grad_out, const Tensor& a, const Tensor& b);

/// Concatenates C_i x H x W maps along the channel axis.
Tensor concat_channels(std::span<const Tensor> parts);
/// Inverse of concat_channels for gradients: splits by channel counts.
std::vector<Tensor> split_channels(const Tensor& x, std::span<const std::size_t> channels);

// ---- pooling / dense ----------------------------------------------------

/// Global average pooling C x H x W -> C.
Tensor gap(const Tensor& input);
Tensor gap_backward(const Tensor& grad_out, const Shape& input_shape);

/// weight D_out x D_in, bias D_out.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

struct LinearGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};

LinearGrads linear_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weight);

// ---- resampling ---------------------------------------------------------

/// Bilinear upsampling with half-pixel centers; out_h >= H and out_w >= W.
Tensor bilinear_upsample(const Tensor& input, std::size_t out_h, std::size_t out_w);
Tensor bilinear_upsample_backward(const Tensor& grad_out, std::size_t in_h, std::size_t in_w);

// ---- helpers ------------------------------------------------------------

void add_inplace(Tensor& acc, const Tensor& x);
void scale_inplace(Tensor& x, double s);
double sum(const Tensor& x);

} // namespace mseed::ops
