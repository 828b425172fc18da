#pragma once

#include "ovhhir/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ovhhir {

// Dense row-major tensor of doubles. Rank 1..3 is all this project needs.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
    }

    static int64_t numel_of(const std::vector<int64_t> & s) {
        int64_t n = 1;
        for (int64_t d : s) {
            if (d < 0) {
                throw config_error("tensor: negative dimension");
            }
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int64_t> s, double v) {
        Tensor t(std::move(s));
        for (auto & x : t.data) {
            x = v;
        }
        return t;
    }

    static Tensor randn(std::vector<int64_t> s, Rng & rng, double stddev) {
        Tensor t(std::move(s));
        for (auto & x : t.data) {
            x = rng.gaussian() * stddev;
        }
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

    int64_t rows() const { return shape[0]; }
    int64_t cols() const { return shape[1]; }

    double & operator()(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    double operator()(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }

    double & at3(int64_t i, int64_t j, int64_t k) {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    double at3(int64_t i, int64_t j, int64_t k) const {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }

    bool same_shape(const Tensor & o) const { return shape == o.shape; }

    bool all_finite() const;

    // checksum over the raw byte image of the data, used for frozen-weight
    // contracts and checkpoint integrity
    uint64_t checksum() const {
        return fnv1a64(data.data(), data.size() * sizeof(double));
    }
};

std::string shape_str(const std::vector<int64_t> & s);

// A named weight array. `trainable` decides whether backward accumulates
// into `grad`; frozen parameters keep an all-zero grad by construction.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Tensor v, bool train)
        : name(std::move(n)), value(std::move(v)), trainable(train) {
        grad = Tensor::zeros(value.shape);
    }

    void zero_grad() {
        for (auto & g : grad.data) {
            g = 0.0;
        }
    }
};

} // namespace ovhhir
