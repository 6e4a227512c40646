#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace twintower {

// Dense row-major tensor of 64-bit floats. Rank is small (<= 3 in practice);
// shape checks live in the ops layer, not here.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
        std::size_t n = 1;
        for (auto d : shape_) n *= d;
        data_.assign(n, 0.0);
    }
    Tensor(std::initializer_list<std::size_t> shape)
        : Tensor(std::vector<std::size_t>(shape)) {}

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-d accessors; row stride is dim(1).
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::string shape_str(const std::vector<std::size_t>& s);

} // namespace twintower
