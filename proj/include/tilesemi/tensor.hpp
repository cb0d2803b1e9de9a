#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "tilesemi/rng.hpp"

namespace tilesemi {

// Dense row-major tensor. Network activations use the (N, C, H, W) layout;
// smaller objects (cluster centers, feature matrices) use 2-3 dims.
template <class T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<std::size_t>(numel_of(shape_)), T(0));
    }

    Tensor(std::initializer_list<std::int64_t> shape)
        : Tensor(std::vector<std::int64_t>(shape)) {}

    static Tensor full(std::vector<std::int64_t> shape, T value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    static Tensor randn(std::vector<std::int64_t> shape, Rng& rng, T stddev = T(1)) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) v = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    static Tensor rand_uniform(std::vector<std::int64_t> shape, Rng& rng, T lo, T hi) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t ndim() const { return shape_.size(); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // 4-d accessors for the NCHW case
    T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
        return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    const T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }

    T& at(std::int64_t i, std::int64_t j) {
        return data_[static_cast<std::size_t>(i * shape_[1] + j)];
    }
    const T& at(std::int64_t i, std::int64_t j) const {
        return data_[static_cast<std::size_t>(i * shape_[1] + j)];
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }
    void zero() { fill(T(0)); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
        return out;
    }

    static std::int64_t numel_of(const std::vector<std::int64_t>& shape) {
        std::int64_t n = 1;
        for (auto d : shape) {
            if (d < 0) throw std::invalid_argument("tensor dims must be nonnegative");
            n *= d;
        }
        return n;
    }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ", ";
            s += std::to_string(shape_[i]);
        }
        return s + ")";
    }

private:
    std::vector<std::int64_t> shape_;
    std::vector<T> data_;
};

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
}

}  // namespace tilesemi
