#include "mseed/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mseed/errors.hpp"

namespace mseed {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    for (auto d : shape_) {
        if (d == 0) throw ContractError("tensor dimensions must be positive: " + shape_to_string(shape_));
    }
    data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto d : shape_) {
        if (d == 0) throw ContractError("tensor dimensions must be positive: " + shape_to_string(shape_));
    }
    if (data_.size() != shape_numel(shape_)) {
        throw ContractError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                            shape_to_string(shape_));
    }
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) throw ContractError("tensor axis out of range");
    return shape_[axis];
}

std::span<double> Tensor::plane(std::size_t c) {
    const std::size_t hw = shape_[1] * shape_[2];
    return std::span<double>(data_).subspan(c * hw, hw);
}

std::span<const double> Tensor::plane(std::size_t c) const {
    const std::size_t hw = shape_[1] * shape_[2];
    return std::span<const double>(data_).subspan(c * hw, hw);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
        throw ContractError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ContractError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                            shape_to_string(b.shape()));
    }
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank) {
        throw ContractError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                            shape_to_string(t.shape()));
    }
}

} // namespace mseed
