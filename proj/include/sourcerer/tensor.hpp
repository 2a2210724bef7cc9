#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace sourcerer {

/// Error carrying a description of a dimension mismatch.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major tensor of 32-bit floats.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<float> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> dims, float fill = 0.0f)
        : shape(std::move(dims)) {
        std::size_t n = 1;
        for (std::size_t d : shape) {
            if (d == 0) throw ShapeError("tensor dimension must be positive");
            n *= d;
        }
        data.assign(n, fill);
    }

    static Tensor zeros(std::vector<std::size_t> dims) { return Tensor(std::move(dims), 0.0f); }

    static Tensor full(std::vector<std::size_t> dims, float value) {
        return Tensor(std::move(dims), value);
    }

    static Tensor from(std::vector<std::size_t> dims, std::vector<float> values) {
        Tensor t;
        t.shape = std::move(dims);
        std::size_t n = 1;
        for (std::size_t d : t.shape) n *= d;
        if (n != values.size())
            throw ShapeError("value count " + std::to_string(values.size()) +
                             " does not match shape product " + std::to_string(n));
        t.data = std::move(values);
        return t;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t dim(std::size_t i) const {
        if (i >= shape.size()) throw ShapeError("dimension index out of range");
        return shape[i];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    float& operator[](std::size_t i) { return data[i]; }
    float operator[](std::size_t i) const { return data[i]; }

    // 2-d and 3-d row-major access
    float& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    float at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    float& at(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    float at(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline std::string shape_string(const Tensor& t) {
    std::string s = "[";
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(t.shape[i]);
    }
    return s + "]";
}

inline void require_shape(const Tensor& t, const std::vector<std::size_t>& expected,
                          const std::string& what) {
    if (t.shape != expected) {
        Tensor e;
        e.shape = expected;
        throw ShapeError(what + ": expected shape " + shape_string(e) + ", got " +
                         shape_string(t));
    }
}

inline void require_rank(const Tensor& t, std::size_t r, const std::string& what) {
    if (t.rank() != r)
        throw ShapeError(what + ": expected rank " + std::to_string(r) + ", got " +
                         std::to_string(t.rank()) + " " + shape_string(t));
}

}  // namespace sourcerer
