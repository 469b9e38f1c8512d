#ifndef SAGAN_TENSOR_HPP
#define SAGAN_TENSOR_HPP

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "sagan/common.hpp"

namespace sagan {

// Dense row-major double tensor. Rank up to 4 is used (NCHW images,
// (N,P) parameter batches, flat vectors).
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
    }
    Tensor(std::vector<int64_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != numel_of(shape))
            throw ShapeError("tensor data length does not match shape");
    }

    static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int64_t> s, double v) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor from_vector(std::vector<double> v) {
        auto n = static_cast<int64_t>(v.size());
        return Tensor({n}, std::move(v));
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) n *= d;
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // NCHW accessors.
    double& at(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    double at(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    // (N, P) accessors.
    double& at(int64_t n, int64_t p) {
        return data[static_cast<size_t>(n * shape[1] + p)];
    }
    double at(int64_t n, int64_t p) const {
        return data[static_cast<size_t>(n * shape[1] + p)];
    }

    Tensor reshaped(std::vector<int64_t> s) const {
        if (numel_of(s) != numel()) throw ShapeError("reshape changes element count");
        return Tensor(std::move(s), data);
    }

    std::string shape_str() const {
        std::string r = "(";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) r += ",";
            r += std::to_string(shape[i]);
        }
        return r + ")";
    }
};

bool all_finite(const Tensor& t);

}  // namespace sagan

#endif  // SAGAN_TENSOR_HPP
