#pragma once

#include <string>
#include <utility>

#include "midres/tensor.hpp"

namespace midres {

/// A trainable tensor paired with its accumulated gradient. The name is the
/// stable identity the optimizer keys its velocity state on. value and grad
/// always share a shape; grad starts (and is reset to) all zeros.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Parameter() = default;

    Parameter(std::string id, Tensor<T> v) : name(std::move(id)), value(std::move(v)), grad(value.shape) {}

    void zero_grad() { grad.fill(T(0)); }
};

}  // namespace midres
