#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace midres {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

/// Dense row-major tensor with an explicit shape. The scalar type is a
/// construction-time choice: double for gradient checking, float is fine
/// for training. Invariant: product(shape) == data.size(), all dims > 0.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(Shape s) : shape(std::move(s)) {
        check_shape();
        data.assign(shape_numel(shape), T(0));
    }

    Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        check_shape();
        if (shape_numel(shape) != data.size()) {
            throw std::invalid_argument("tensor shape " + shape_str(shape) + " expects " +
                                        std::to_string(shape_numel(shape)) + " elements, got " +
                                        std::to_string(data.size()));
        }
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t dim(std::size_t i) const { return shape.at(i); }

    // rank-2 indexing [rows, cols]
    T& at2(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    const T& at2(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    // rank-4 indexing [n, c, h, w]
    std::size_t index4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return ((n * shape[1] + c) * shape[2] + h) * shape[3] + w;
    }
    T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data[index4(n, c, h, w)];
    }
    const T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data[index4(n, c, h, w)];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (const T& v : data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    void fill(T v) { data.assign(data.size(), v); }

private:
    void check_shape() const {
        if (shape.empty()) throw std::invalid_argument("tensor rank must be at least 1");
        for (auto d : shape) {
            if (d == 0) throw std::invalid_argument("tensor dims must be positive, got " + shape_str(shape));
        }
    }
};

}  // namespace midres
