#include "mseed/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "mseed/errors.hpp"

namespace mseed::ops {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct ConvGeometry {
    std::size_t in_c, in_h, in_w;
    std::size_t out_c, k;
    std::size_t out_h, out_w;
    int stride, padding;
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight, int stride, int padding) {
    require_rank(input, 3, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    if (weight.dim(1) != input.dim(0)) {
        throw ContractError("conv2d: weight expects " + std::to_string(weight.dim(1)) + " input channels, got " +
                            std::to_string(input.dim(0)));
    }
    if (weight.dim(2) != weight.dim(3) || weight.dim(2) % 2 == 0) {
        throw ConfigError("conv2d: kernel must be square with odd size, got " + shape_to_string(weight.shape()));
    }
    if (stride < 1 || padding < 0) throw ConfigError("conv2d: stride must be >= 1 and padding >= 0");
    ConvGeometry g{};
    g.in_c = input.dim(0);
    g.in_h = input.dim(1);
    g.in_w = input.dim(2);
    g.out_c = weight.dim(0);
    g.k = weight.dim(2);
    g.stride = stride;
    g.padding = padding;
    g.out_h = conv_output_size(g.in_h, g.k, stride, padding);
    g.out_w = conv_output_size(g.in_w, g.k, stride, padding);
    return g;
}

bool is_pointwise(const ConvGeometry& g) { return g.k == 1 && g.stride == 1 && g.padding == 0; }

// col has shape (in_c * k * k) x (out_h * out_w).
void im2col(const Tensor& input, const ConvGeometry& g, std::vector<double>& col) {
    const std::size_t cols = g.out_h * g.out_w;
    col.assign(g.in_c * g.k * g.k * cols, 0.0);
    const auto& x = input.storage();
    for (std::size_t c = 0; c < g.in_c; ++c) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                double* row = col.data() + ((c * g.k + ky) * g.k + kx) * cols;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long iy = static_cast<long>(oy) * g.stride - g.padding + static_cast<long>(ky);
                    if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
                    const double* src = x.data() + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
                    double* dst = row + oy * g.out_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long ix = static_cast<long>(ox) * g.stride - g.padding + static_cast<long>(kx);
                        if (ix < 0 || ix >= static_cast<long>(g.in_w)) continue;
                        dst[ox] = src[ix];
                    }
                }
            }
        }
    }
}

void col2im(const std::vector<double>& col, const ConvGeometry& g, Tensor& grad_input) {
    const std::size_t cols = g.out_h * g.out_w;
    auto& dx = grad_input.storage();
    for (std::size_t c = 0; c < g.in_c; ++c) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const double* row = col.data() + ((c * g.k + ky) * g.k + kx) * cols;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long iy = static_cast<long>(oy) * g.stride - g.padding + static_cast<long>(ky);
                    if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
                    double* dst = dx.data() + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
                    const double* src = row + oy * g.out_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long ix = static_cast<long>(ox) * g.stride - g.padding + static_cast<long>(kx);
                        if (ix < 0 || ix >= static_cast<long>(g.in_w)) continue;
                        dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

// Splits a tensor shape around `axis` into (outer, axis length, inner).
void axis_extents(const Shape& shape, std::size_t axis, std::size_t& outer, std::size_t& len, std::size_t& inner) {
    if (axis >= shape.size()) throw ContractError("softmax: axis out of range");
    outer = 1;
    inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    len = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
}

struct AxisWeights {
    std::vector<std::size_t> lo, hi;
    std::vector<double> frac;
};

// Half-pixel-center source coordinates, clamped to the valid range.
AxisWeights axis_weights(std::size_t in, std::size_t out) {
    AxisWeights w;
    w.lo.resize(out);
    w.hi.resize(out);
    w.frac.resize(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t d = 0; d < out; ++d) {
        double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<std::size_t>(std::floor(src));
        w.lo[d] = lo;
        w.hi[d] = std::min(lo + 1, in - 1);
        w.frac[d] = src - static_cast<double>(lo);
    }
    return w;
}

} // namespace

std::size_t conv_output_size(std::size_t in, std::size_t kernel, int stride, int padding) {
    const long span = static_cast<long>(in) + 2L * padding - static_cast<long>(kernel);
    if (span < 0) {
        throw ConfigError("conv2d: kernel " + std::to_string(kernel) + " larger than padded input " +
                          std::to_string(in + 2 * static_cast<std::size_t>(padding)));
    }
    return static_cast<std::size_t>(span / stride) + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
    const ConvGeometry g = conv_geometry(input, weight, stride, padding);
    require_rank(bias, 1, "conv2d bias");
    if (bias.dim(0) != g.out_c) throw ContractError("conv2d: bias length does not match output channels");

    Tensor out({g.out_c, g.out_h, g.out_w});
    const std::size_t cols = g.out_h * g.out_w;
    const std::size_t depth = g.in_c * g.k * g.k;
    ConstMatrixMap w(weight.storage().data(), static_cast<long>(g.out_c), static_cast<long>(depth));
    MatrixMap y(out.storage().data(), static_cast<long>(g.out_c), static_cast<long>(cols));
    if (is_pointwise(g)) {
        ConstMatrixMap x(input.storage().data(), static_cast<long>(depth), static_cast<long>(cols));
        y.noalias() = w * x;
    } else {
        std::vector<double> col;
        im2col(input, g, col);
        ConstMatrixMap x(col.data(), static_cast<long>(depth), static_cast<long>(cols));
        y.noalias() = w * x;
    }
    for (std::size_t c = 0; c < g.out_c; ++c) {
        y.row(static_cast<long>(c)).array() += bias[c];
    }
    return out;
}

Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weight, int stride,
                            int padding) {
    const ConvGeometry g = conv_geometry(input, weight, stride, padding);
    if (grad_out.shape() != Shape{g.out_c, g.out_h, g.out_w}) {
        throw ContractError("conv2d_backward: upstream gradient shape " + shape_to_string(grad_out.shape()) +
                            " does not match forward output");
    }
    const std::size_t cols = g.out_h * g.out_w;
    const std::size_t depth = g.in_c * g.k * g.k;
    Conv2dGrads grads{Tensor(input.shape()), Tensor(weight.shape()), Tensor({g.out_c})};

    ConstMatrixMap dy(grad_out.storage().data(), static_cast<long>(g.out_c), static_cast<long>(cols));
    ConstMatrixMap w(weight.storage().data(), static_cast<long>(g.out_c), static_cast<long>(depth));
    MatrixMap dw(grads.weight.storage().data(), static_cast<long>(g.out_c), static_cast<long>(depth));
    for (std::size_t c = 0; c < g.out_c; ++c) grads.bias[c] = dy.row(static_cast<long>(c)).sum();

    if (is_pointwise(g)) {
        ConstMatrixMap x(input.storage().data(), static_cast<long>(depth), static_cast<long>(cols));
        dw.noalias() = dy * x.transpose();
        MatrixMap dx(grads.input.storage().data(), static_cast<long>(depth), static_cast<long>(cols));
        dx.noalias() = w.transpose() * dy;
        return grads;
    }
    std::vector<double> col;
    im2col(input, g, col);
    ConstMatrixMap x(col.data(), static_cast<long>(depth), static_cast<long>(cols));
    dw.noalias() = dy * x.transpose();
    std::vector<double> dcol(depth * cols);
    MatrixMap dc(dcol.data(), static_cast<long>(depth), static_cast<long>(cols));
    dc.noalias() = w.transpose() * dy;
    col2im(dcol, g, grads.input);
    return grads;
}

Tensor group_norm(const Tensor& input, std::size_t groups, const Tensor& gamma, const Tensor& beta, double eps,
                  GroupNormCache* cache) {
    require_rank(input, 3, "group_norm input");
    const std::size_t channels = input.dim(0);
    if (groups == 0 || channels % groups != 0) {
        throw ConfigError("group_norm: " + std::to_string(channels) + " channels not divisible into " +
                          std::to_string(groups) + " groups");
    }
    if (!(eps > 0.0)) throw ConfigError("group_norm: eps must be positive");
    if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
        throw ContractError("group_norm: gamma/beta must have one entry per channel");
    }
    const std::size_t hw = input.dim(1) * input.dim(2);
    const std::size_t per_group = channels / groups;
    const std::size_t count = per_group * hw;

    Tensor normalized(input.shape());
    std::vector<double> inv_std(groups);
    const auto& x = input.storage();
    auto& xn = normalized.storage();
    for (std::size_t gi = 0; gi < groups; ++gi) {
        const std::size_t begin = gi * count;
        double mean = 0.0;
        for (std::size_t i = 0; i < count; ++i) mean += x[begin + i];
        mean /= static_cast<double>(count);
        double var = 0.0;
        for (std::size_t i = 0; i < count; ++i) {
            const double d = x[begin + i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(count);
        const double rstd = 1.0 / std::sqrt(var + eps);
        inv_std[gi] = rstd;
        for (std::size_t i = 0; i < count; ++i) xn[begin + i] = (x[begin + i] - mean) * rstd;
    }

    Tensor out(input.shape());
    auto& y = out.storage();
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t i = 0; i < hw; ++i) y[c * hw + i] = gamma[c] * xn[c * hw + i] + beta[c];
    }
    if (cache) {
        cache->normalized = std::move(normalized);
        cache->inv_std = std::move(inv_std);
        cache->groups = groups;
    }
    return out;
}

GroupNormGrads group_norm_backward(const Tensor& grad_out, const GroupNormCache& cache, const Tensor& gamma) {
    require_same_shape(grad_out, cache.normalized, "group_norm_backward");
    const std::size_t channels = grad_out.dim(0);
    const std::size_t hw = grad_out.dim(1) * grad_out.dim(2);
    const std::size_t per_group = channels / cache.groups;
    const std::size_t count = per_group * hw;

    GroupNormGrads grads{Tensor(grad_out.shape()), Tensor({channels}), Tensor({channels})};
    const auto& dy = grad_out.storage();
    const auto& xn = cache.normalized.storage();
    for (std::size_t c = 0; c < channels; ++c) {
        double dg = 0.0;
        double db = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
            dg += dy[c * hw + i] * xn[c * hw + i];
            db += dy[c * hw + i];
        }
        grads.gamma[c] = dg;
        grads.beta[c] = db;
    }
    auto& dx = grads.input.storage();
    const double inv_count = 1.0 / static_cast<double>(count);
    for (std::size_t gi = 0; gi < cache.groups; ++gi) {
        double sum_d = 0.0;
        double sum_dx = 0.0;
        for (std::size_t c = gi * per_group; c < (gi + 1) * per_group; ++c) {
            for (std::size_t i = 0; i < hw; ++i) {
                const double d = dy[c * hw + i] * gamma[c];
                sum_d += d;
                sum_dx += d * xn[c * hw + i];
            }
        }
        const double rstd = cache.inv_std[gi];
        for (std::size_t c = gi * per_group; c < (gi + 1) * per_group; ++c) {
            for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t j = c * hw + i;
                const double d = dy[j] * gamma[c];
                dx[j] = rstd * (d - inv_count * sum_d - xn[j] * inv_count * sum_dx);
            }
        }
    }
    return grads;
}

Tensor relu(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    return y;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& input) {
    require_same_shape(grad_out, input, "relu_backward");
    Tensor dx(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) dx[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
    return dx;
}

Tensor sigmoid(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        if (v >= 0.0) {
            y[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            y[i] = e / (1.0 + e);
        }
    }
    return y;
}

Tensor sigmoid_backward(const Tensor& grad_out, const Tensor& output) {
    require_same_shape(grad_out, output, "sigmoid_backward");
    Tensor dx(output.shape());
    for (std::size_t i = 0; i < output.size(); ++i) dx[i] = grad_out[i] * output[i] * (1.0 - output[i]);
    return dx;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    std::size_t outer, len, inner;
    axis_extents(x.shape(), axis, outer, len, inner);
    Tensor y(x.shape());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * len * inner + i;
            double m = x[base];
            for (std::size_t k = 1; k < len; ++k) m = std::max(m, x[base + k * inner]);
            double z = 0.0;
            for (std::size_t k = 0; k < len; ++k) {
                const double e = std::exp(x[base + k * inner] - m);
                y[base + k * inner] = e;
                z += e;
            }
            for (std::size_t k = 0; k < len; ++k) y[base + k * inner] /= z;
        }
    }
    return y;
}

Tensor softmax_backward(const Tensor& grad_out, const Tensor& output, std::size_t axis) {
    require_same_shape(grad_out, output, "softmax_backward");
    std::size_t outer, len, inner;
    axis_extents(output.shape(), axis, outer, len, inner);
    Tensor dx(output.shape());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * len * inner + i;
            double dot = 0.0;
            for (std::size_t k = 0; k < len; ++k) dot += grad_out[base + k * inner] * output[base + k * inner];
            for (std::size_t k = 0; k < len; ++k) {
                const std::size_t j = base + k * inner;
                dx[j] = output[j] * (grad_out[j] - dot);
            }
        }
    }
    return dx;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor y(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
    return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor y(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] * b[i];
    return y;
}

std::pair<Tensor, Tensor> mul_backward(const Tensor& grad_out, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul_backward");
    require_same_shape(grad_out, a, "mul_backward");
    return {mul(grad_out, b), mul(grad_out, a)};
}

Tensor concat_channels(std::span<const Tensor> parts) {
    if (parts.empty()) throw ContractError("concat_channels: no inputs");
    const std::size_t h = parts[0].dim(1);
    const std::size_t w = parts[0].dim(2);
    std::size_t channels = 0;
    for (const auto& p : parts) {
        require_rank(p, 3, "concat_channels");
        if (p.dim(1) != h || p.dim(2) != w) {
            throw ContractError("concat_channels: spatial size mismatch " + shape_to_string(p.shape()) + " vs " +
                                shape_to_string(parts[0].shape()));
        }
        channels += p.dim(0);
    }
    Tensor out({channels, h, w});
    auto it = out.storage().begin();
    for (const auto& p : parts) it = std::copy(p.storage().begin(), p.storage().end(), it);
    return out;
}

std::vector<Tensor> split_channels(const Tensor& x, std::span<const std::size_t> channels) {
    require_rank(x, 3, "split_channels");
    std::size_t total = 0;
    for (auto c : channels) total += c;
    if (total != x.dim(0)) throw ContractError("split_channels: channel counts do not sum to input channels");
    const std::size_t hw = x.dim(1) * x.dim(2);
    std::vector<Tensor> parts;
    parts.reserve(channels.size());
    std::size_t offset = 0;
    for (auto c : channels) {
        Tensor p({c, x.dim(1), x.dim(2)});
        std::copy_n(x.storage().begin() + static_cast<long>(offset * hw), c * hw, p.storage().begin());
        offset += c;
        parts.push_back(std::move(p));
    }
    return parts;
}

Tensor gap(const Tensor& input) {
    require_rank(input, 3, "gap");
    const std::size_t channels = input.dim(0);
    const std::size_t hw = input.dim(1) * input.dim(2);
    Tensor out({channels});
    for (std::size_t c = 0; c < channels; ++c) {
        double s = 0.0;
        for (double v : input.plane(c)) s += v;
        out[c] = s / static_cast<double>(hw);
    }
    return out;
}

Tensor gap_backward(const Tensor& grad_out, const Shape& input_shape) {
    if (input_shape.size() != 3 || grad_out.shape() != Shape{input_shape[0]}) {
        throw ContractError("gap_backward: shape mismatch");
    }
    Tensor dx(input_shape);
    const double inv = 1.0 / static_cast<double>(input_shape[1] * input_shape[2]);
    for (std::size_t c = 0; c < input_shape[0]; ++c) {
        for (double& v : dx.plane(c)) v = grad_out[c] * inv;
    }
    return dx;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require_rank(input, 1, "linear input");
    require_rank(weight, 2, "linear weight");
    if (weight.dim(1) != input.dim(0) || bias.shape() != Shape{weight.dim(0)}) {
        throw ContractError("linear: inconsistent shapes input " + shape_to_string(input.shape()) + ", weight " +
                            shape_to_string(weight.shape()) + ", bias " + shape_to_string(bias.shape()));
    }
    const std::size_t rows = weight.dim(0);
    const std::size_t cols = weight.dim(1);
    Tensor out({rows});
    for (std::size_t r = 0; r < rows; ++r) {
        double s = bias[r];
        for (std::size_t c = 0; c < cols; ++c) s += weight[r * cols + c] * input[c];
        out[r] = s;
    }
    return out;
}

LinearGrads linear_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weight) {
    const std::size_t rows = weight.dim(0);
    const std::size_t cols = weight.dim(1);
    if (grad_out.shape() != Shape{rows} || input.shape() != Shape{cols}) {
        throw ContractError("linear_backward: shape mismatch");
    }
    LinearGrads g{Tensor({cols}), Tensor(weight.shape()), grad_out};
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            g.weight[r * cols + c] = grad_out[r] * input[c];
            g.input[c] += weight[r * cols + c] * grad_out[r];
        }
    }
    return g;
}

Tensor bilinear_upsample(const Tensor& input, std::size_t out_h, std::size_t out_w) {
    require_rank(input, 3, "bilinear_upsample");
    if (out_h == 0 || out_w == 0) throw ConfigError("bilinear_upsample: zero-sized output");
    const std::size_t channels = input.dim(0);
    const std::size_t in_h = input.dim(1);
    const std::size_t in_w = input.dim(2);
    if (out_h < in_h || out_w < in_w) {
        throw ConfigError("bilinear_upsample: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                          " smaller than input " + std::to_string(in_h) + "x" + std::to_string(in_w));
    }
    if (out_h == in_h && out_w == in_w) return input;
    const AxisWeights wy = axis_weights(in_h, out_h);
    const AxisWeights wx = axis_weights(in_w, out_w);
    Tensor out({channels, out_h, out_w});
    for (std::size_t c = 0; c < channels; ++c) {
        const auto src = input.plane(c);
        auto dst = out.plane(c);
        for (std::size_t y = 0; y < out_h; ++y) {
            const double* r0 = src.data() + wy.lo[y] * in_w;
            const double* r1 = src.data() + wy.hi[y] * in_w;
            const double fy = wy.frac[y];
            for (std::size_t x = 0; x < out_w; ++x) {
                const double fx = wx.frac[x];
                // lerp form keeps constant inputs bit-exact
                const double top = r0[wx.lo[x]] + fx * (r0[wx.hi[x]] - r0[wx.lo[x]]);
                const double bot = r1[wx.lo[x]] + fx * (r1[wx.hi[x]] - r1[wx.lo[x]]);
                dst[y * out_w + x] = top + fy * (bot - top);
            }
        }
    }
    return out;
}

Tensor bilinear_upsample_backward(const Tensor& grad_out, std::size_t in_h, std::size_t in_w) {
    require_rank(grad_out, 3, "bilinear_upsample_backward");
    const std::size_t channels = grad_out.dim(0);
    const std::size_t out_h = grad_out.dim(1);
    const std::size_t out_w = grad_out.dim(2);
    if (out_h == in_h && out_w == in_w) return grad_out;
    const AxisWeights wy = axis_weights(in_h, out_h);
    const AxisWeights wx = axis_weights(in_w, out_w);
    Tensor dx({channels, in_h, in_w});
    for (std::size_t c = 0; c < channels; ++c) {
        const auto g = grad_out.plane(c);
        auto dst = dx.plane(c);
        for (std::size_t y = 0; y < out_h; ++y) {
            double* r0 = dst.data() + wy.lo[y] * in_w;
            double* r1 = dst.data() + wy.hi[y] * in_w;
            const double fy = wy.frac[y];
            for (std::size_t x = 0; x < out_w; ++x) {
                const double fx = wx.frac[x];
                const double v = g[y * out_w + x];
                r0[wx.lo[x]] += v * (1.0 - fx) * (1.0 - fy);
                r0[wx.hi[x]] += v * fx * (1.0 - fy);
                r1[wx.lo[x]] += v * (1.0 - fx) * fy;
                r1[wx.hi[x]] += v * fx * fy;
            }
        }
    }
    return dx;
}

void add_inplace(Tensor& acc, const Tensor& x) {
    require_same_shape(acc, x, "add_inplace");
    for (std::size_t i = 0; i < x.size(); ++i) acc[i] += x[i];
}

void scale_inplace(Tensor& x, double s) {
    for (double& v : x.storage()) v *= s;
}

double sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.storage()) s += v;
    return s;
}

} // namespace mseed::ops
