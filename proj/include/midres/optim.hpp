#pragma once

#include <deque>
#include <map>
#include <stdexcept>
#include <string>

#include "midres/parameter.hpp"
#include "midres/tensor.hpp"

namespace midres {

/// Stochastic gradient descent with classic momentum: v <- mu*v + g,
/// value <- value - lr*v. Velocity is keyed by parameter name and must be
/// initialized from the same model the step is applied to.
template <typename T>
class SgdMomentum {
public:
    SgdMomentum(T learning_rate, T momentum) : lr_(learning_rate), momentum_(momentum) {
        if (!(lr_ > T(0))) throw std::invalid_argument("learning rate must be positive");
        if (momentum_ < T(0) || momentum_ >= T(1)) {
            throw std::invalid_argument("momentum must lie in [0,1)");
        }
    }

    template <typename Params>
    void init(const Params& params) {
        velocity_.clear();
        for (const Parameter<T>& p : params) {
            if (!velocity_.emplace(p.name, Tensor<T>(p.value.shape)).second) {
                throw std::invalid_argument("duplicate parameter name '" + p.name + "'");
            }
        }
    }

    T learning_rate() const { return lr_; }
    T momentum() const { return momentum_; }
    const std::map<std::string, Tensor<T>>& velocity() const { return velocity_; }

    template <typename Params>
    void step(Params& params) {
        for (Parameter<T>& p : params) {
            auto it = velocity_.find(p.name);
            if (it == velocity_.end()) {
                throw std::invalid_argument("no velocity for parameter '" + p.name +
                                            "'; optimizer initialized for a different model");
            }
            Tensor<T>& v = it->second;
            for (std::size_t i = 0; i < p.value.numel(); ++i) {
                v.data[i] = momentum_ * v.data[i] + p.grad.data[i];
                p.value.data[i] -= lr_ * v.data[i];
            }
        }
    }

private:
    T lr_;
    T momentum_;
    std::map<std::string, Tensor<T>> velocity_;
};

}  // namespace midres
