#include "aqcast/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "aqcast/error.hpp"

namespace aqcast {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ',';
        out << shape[i];
    }
    out << ')';
    return out.str();
}

namespace {

void check_shape(const Shape& shape) {
    if (shape.empty()) throw ContractError("tensor shape must have at least one axis");
    for (auto d : shape)
        if (d == 0) throw ContractError("tensor dimensions must be >= 1, got " + shape_string(shape));
}

}  // namespace

Tensor::Tensor() : shape_{1}, data_(1, 0.0) {}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    check_shape(shape_);
    if (data_.size() != shape_size(shape_))
        throw ContractError("tensor of shape " + shape_string(shape_) + " needs " +
                            std::to_string(shape_size(shape_)) + " values, got " + std::to_string(data_.size()));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, value); }

Tensor Tensor::like(const Tensor& other, double fill) { return Tensor(other.shape_, fill); }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) throw ContractError("axis out of range");
    return shape_[axis];
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size())
        throw ContractError("index rank does not match tensor rank " + shape_string(shape_));
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= shape_[axis]) throw ContractError("index out of range for shape " + shape_string(shape_));
        off = off * shape_[axis] + i;
        ++axis;
    }
    return off;
}

double Tensor::item() const {
    if (data_.size() != 1) throw ContractError("item() on non-scalar tensor " + shape_string(shape_));
    return data_[0];
}

Tensor Tensor::slab(std::size_t index) const {
    if (shape_.size() < 2) throw ContractError("slab() needs rank >= 2");
    if (index >= shape_[0]) throw ContractError("slab index out of range");
    Shape inner(shape_.begin() + 1, shape_.end());
    const auto n = shape_size(inner);
    std::vector<double> values(data_.begin() + static_cast<std::ptrdiff_t>(index * n),
                               data_.begin() + static_cast<std::ptrdiff_t>((index + 1) * n));
    return Tensor(std::move(inner), std::move(values));
}

void Tensor::set_slab(std::size_t index, const Tensor& value) {
    if (shape_.size() < 2 || index >= shape_[0] || !std::equal(shape_.begin() + 1, shape_.end(),
                                                               value.shape_.begin(), value.shape_.end()))
        throw ContractError("set_slab shape mismatch: " + shape_string(value.shape_) + " into " +
                            shape_string(shape_));
    std::copy(value.data_.begin(), value.data_.end(),
              data_.begin() + static_cast<std::ptrdiff_t>(index * value.size()));
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
        throw ContractError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ContractError("max_abs_diff shape mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

}  // namespace aqcast
