#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fedbug {

/// Dense row-major tensor of doubles.
///
/// The only invariant is `product(shape) == size()`; constructors enforce it and
/// throw ConfigError otherwise. Rank-2 tensors are treated as (rows, cols) by
/// the layer kernels, rank-1 tensors as a single row.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }
    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    // Rank-2 element access.
    double& at(std::size_t row, std::size_t col) { return values_[row * shape_[1] + col]; }
    double at(std::size_t row, std::size_t col) const { return values_[row * shape_[1] + col]; }

    bool all_finite() const noexcept;
    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

    /// True when both shape and every value match bit for bit.
    bool bit_equal(const Tensor& other) const noexcept;

    std::string shape_string() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> values_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

}  // namespace fedbug
