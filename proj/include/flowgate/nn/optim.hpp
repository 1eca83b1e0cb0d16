// optim.hpp - AdamW with decoupled weight decay, triangular cyclic LR

#ifndef FLOWGATE_NN_OPTIM_HPP
#define FLOWGATE_NN_OPTIM_HPP

#include <cmath>
#include <stdexcept>
#include <vector>

#include "flowgate/nn/tensor.hpp"

namespace flowgate::nn {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

template <typename Scalar>
struct AdamState {
    Mat<Scalar> m;
    Mat<Scalar> v;
    long step = 0;
};

/// One AdamW update of `w`.  Weight decay shrinks the weights directly
/// (w *= 1 - lr * wd) before the bias-corrected Adam step.
template <typename Scalar>
void adamw_step(Mat<Scalar> &w, const Mat<Scalar> &g, AdamState<Scalar> &state, double lr,
                const AdamWConfig &cfg) {
    if (g.rows() != w.rows() || g.cols() != w.cols()) {
        throw std::invalid_argument("adamw: gradient shape mismatch");
    }
    if (!g.allFinite()) {
        throw std::runtime_error("adamw: non-finite gradient");
    }
    if (state.m.size() == 0) {
        state.m = Mat<Scalar>::Zero(w.rows(), w.cols());
        state.v = Mat<Scalar>::Zero(w.rows(), w.cols());
    } else if (state.m.rows() != w.rows() || state.m.cols() != w.cols()) {
        throw std::invalid_argument("adamw: state shape mismatch");
    }
    ++state.step;
    const auto b1 = static_cast<Scalar>(cfg.beta1);
    const auto b2 = static_cast<Scalar>(cfg.beta2);
    w *= static_cast<Scalar>(1.0 - lr * cfg.weight_decay);
    state.m = b1 * state.m + (Scalar(1) - b1) * g;
    state.v = b2 * state.v + (Scalar(1) - b2) * g.cwiseProduct(g);
    const auto c1 = static_cast<Scalar>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.step)));
    const auto c2 = static_cast<Scalar>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.step)));
    const auto eps = static_cast<Scalar>(cfg.eps);
    w.array() -= static_cast<Scalar>(lr) * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + eps);
}

template <typename Scalar>
class AdamW {
public:
    AdamW(std::vector<ParamRef<Scalar>> params, AdamWConfig cfg)
        : params_(std::move(params)), cfg_(cfg), state_(params_.size()) {}

    void step(double lr) {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            adamw_step(*params_[i].value, *params_[i].grad, state_[i], lr, cfg_);
        }
    }

    const AdamWConfig &config() const { return cfg_; }

private:
    std::vector<ParamRef<Scalar>> params_;
    AdamWConfig cfg_;
    std::vector<AdamState<Scalar>> state_;
};

/// Triangular cyclic learning rate: base -> max over the first half of each
/// cycle, max -> base over the second half.
inline double cyclic_lr(long step, long steps_per_cycle, double base, double max) {
    if (steps_per_cycle <= 0) {
        throw std::invalid_argument("cyclic_lr: steps_per_cycle must be positive");
    }
    const long pos = ((step % steps_per_cycle) + steps_per_cycle) % steps_per_cycle;
    const double half = static_cast<double>(steps_per_cycle) / 2.0;
    const double x = static_cast<double>(pos);
    if (x <= half) {
        return base + (max - base) * x / half;
    }
    return max - (max - base) * (x - half) / (static_cast<double>(steps_per_cycle) - half);
}

} // namespace flowgate::nn

#endif // FLOWGATE_NN_OPTIM_HPP
