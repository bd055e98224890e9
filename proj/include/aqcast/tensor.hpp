#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace aqcast {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Sequences use the axis order (time, [batch,] y, x, channel) and single
/// fields (y, x, channel). Every dimension is at least 1; a scalar is a
/// tensor of shape {1}.
class Tensor {
public:
    Tensor();
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double value);
    static Tensor like(const Tensor& other, double fill = 0.0);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }

    // Channel count (last axis) and number of channel vectors.
    std::size_t channels() const noexcept { return shape_.back(); }
    std::size_t rows() const noexcept { return data_.size() / shape_.back(); }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    std::size_t offset(std::initializer_list<std::size_t> index) const;
    double& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
    double at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

    double item() const;

    // Copy of the sub-tensor at position `index` of the leading axis.
    Tensor slab(std::size_t index) const;
    void set_slab(std::size_t index, const Tensor& value);

    Tensor reshaped(Shape shape) const;
    void fill(double value);
    bool all_finite() const;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace aqcast
