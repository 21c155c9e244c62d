#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "nfce/errors.hpp"

namespace nfce {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major float64 tensor. Invariant: data().size() == shape_size(shape()).
class Tensor {
public:
    Tensor() : shape_{0}, data_{} {}

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {
        NFCE_REQUIRE(!shape_.empty(), "tensor rank must be >= 1");
    }

    Tensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        NFCE_REQUIRE(!shape_.empty(), "tensor rank must be >= 1");
        NFCE_REQUIRE(data_.size() == shape_size(shape_),
                     "tensor data size " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_[axis]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
    double at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    // Row-major strides.
    std::vector<std::size_t> strides() const {
        std::vector<std::size_t> st(shape_.size(), 1);
        for (std::size_t i = shape_.size(); i-- > 1;) st[i - 1] = st[i] * shape_[i];
        return st;
    }

private:
    std::size_t offset(std::initializer_list<std::size_t> idx) const {
        NFCE_REQUIRE(idx.size() == shape_.size(), "index rank mismatch");
        std::size_t off = 0, axis = 0;
        auto st = strides();
        for (std::size_t i : idx) {
            NFCE_REQUIRE(i < shape_[axis], "index out of range");
            off += i * st[axis];
            ++axis;
        }
        return off;
    }

    Shape shape_;
    std::vector<double> data_;
};

}  // namespace nfce
