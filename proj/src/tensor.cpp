#include "fedbug/tensor.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>

#include "fedbug/error.hpp"

namespace fedbug {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const std::vector<std::size_t>& shape) {
    if (shape.empty()) {
        throw ConfigError("tensor shape must have at least one dimension");
    }
    for (auto d : shape) {
        if (d == 0) {
            throw ConfigError("tensor shape " + shape_string(shape) + " has a zero dimension");
        }
    }
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ", ";
        out << shape[i];
    }
    out << ')';
    return out.str();
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    values_.assign(shape_product(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    check_shape(shape_);
    if (shape_product(shape_) != values_.size()) {
        throw ConfigError("tensor shape " + fedbug::shape_string(shape_) + " does not match " +
                          std::to_string(values_.size()) + " values");
    }
}

bool Tensor::all_finite() const noexcept {
    for (double v : values_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

bool Tensor::bit_equal(const Tensor& other) const noexcept {
    return shape_ == other.shape_ &&
           (values_.empty() ||
            std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(double)) == 0);
}

std::string Tensor::shape_string() const { return fedbug::shape_string(shape_); }

}  // namespace fedbug
