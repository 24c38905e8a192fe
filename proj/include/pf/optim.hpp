#pragma once

#include <cmath>
#include <vector>

#include "pf/tensor.hpp"

namespace pf {

struct AdamParams {
    double lr = 0.03;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Bias-corrected Adam over a fixed set of leaf tensors.
class Adam {
public:
    Adam(std::vector<TensorPtr> params, AdamParams hp) : params_(std::move(params)), hp_(hp) {
        for (const auto& p : params_) {
            m_.emplace_back(p->size(), 0.0);
            v_.emplace_back(p->size(), 0.0);
        }
    }

    // consumes p->grad, leaves it untouched; caller zeroes grads when done
    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(hp_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(hp_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = *params_[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double g = p.grad[j];
                m_[i][j] = hp_.beta1 * m_[i][j] + (1.0 - hp_.beta1) * g;
                v_[i][j] = hp_.beta2 * v_[i][j] + (1.0 - hp_.beta2) * g * g;
                const double mhat = m_[i][j] / c1;
                const double vhat = v_[i][j] / c2;
                p.values[j] -= hp_.lr * mhat / (std::sqrt(vhat) + hp_.epsilon);
            }
        }
    }

private:
    std::vector<TensorPtr> params_;
    AdamParams hp_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

} // namespace pf
