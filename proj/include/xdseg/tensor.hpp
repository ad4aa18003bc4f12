#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "xdseg/errors.hpp"

namespace xdseg {

// Dense row-major float32 tensor. Model parameters and activations use this;
// losses run in double on plain vectors.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, float fill = 0.0f)
        : shape_(std::move(shape)), data_(count_(shape_), fill) {}

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i)
            s += (i ? "x" : "") + std::to_string(shape_[i]);
        return s + "]";
    }

  private:
    static std::size_t count_(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return s.empty() ? 0 : n;
    }

    std::vector<std::size_t> shape_;
    std::vector<float> data_;
};

}  // namespace xdseg
