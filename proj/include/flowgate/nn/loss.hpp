// loss.hpp - softmax, LogSumExp, cross-entropy and SimLoss

#ifndef FLOWGATE_NN_LOSS_HPP
#define FLOWGATE_NN_LOSS_HPP

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "flowgate/nn/tensor.hpp"

namespace flowgate::nn {

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived> &x) {
    using Scalar = typename Derived::Scalar;
    const Scalar m = x.maxCoeff();
    return m + std::log((x.array() - m).exp().sum());
}

template <typename Derived>
Vec<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived> &x) {
    using Scalar = typename Derived::Scalar;
    const Scalar m = x.maxCoeff();
    Vec<Scalar> e = (x.array() - m).exp().matrix();
    return e / e.sum();
}

/// Column-wise softmax of a K x batch logit matrix.
template <typename Scalar>
Mat<Scalar> softmax_columns(const Mat<Scalar> &logits) {
    Mat<Scalar> out(logits.rows(), logits.cols());
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        out.col(j) = softmax(logits.col(j));
    }
    return out;
}

template <typename Scalar>
struct LossResult {
    Scalar loss;
    Vec<Scalar> grad;  ///< dL/dlogits
};

/// -log softmax(logits)[label]; gradient softmax - onehot.
template <typename Scalar>
LossResult<Scalar> loss_ce(const Vec<Scalar> &logits, int label) {
    if (label < 0 || label >= logits.size()) {
        throw std::out_of_range("loss_ce: label out of range");
    }
    LossResult<Scalar> r;
    r.loss = log_sum_exp(logits) - logits(label);
    r.grad = softmax(logits);
    r.grad(label) -= Scalar(1);
    return r;
}

/// Class-similarity matrix: 1 on the diagonal, alpha between distinct
/// classes of the same group, 0 otherwise.
template <typename Scalar>
Mat<Scalar> sim_matrix(std::span<const int> group_of_class, Scalar alpha) {
    const auto k = static_cast<Eigen::Index>(group_of_class.size());
    Mat<Scalar> s = Mat<Scalar>::Zero(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
        for (Eigen::Index j = 0; j < k; ++j) {
            if (i == j) {
                s(i, j) = Scalar(1);
            } else if (group_of_class[static_cast<std::size_t>(i)] == group_of_class[static_cast<std::size_t>(j)]) {
                s(i, j) = alpha;
            }
        }
    }
    return s;
}

/// SimLoss: -log(sum_k S[label][k] * p_k) with p = softmax(logits / T).
/// The gradient is w.r.t. the unscaled logits:
///   dL/dlogit_j = (p_j - S[label][j] p_j / s) / T,  s = sum_k S[label][k] p_k.
template <typename Scalar>
LossResult<Scalar> loss_simloss(const Vec<Scalar> &logits, int label, const Mat<Scalar> &sim,
                                Scalar temperature = Scalar(1)) {
    if (label < 0 || label >= logits.size()) {
        throw std::out_of_range("loss_simloss: label out of range");
    }
    if (sim.rows() != logits.size() || sim.cols() != logits.size()) {
        throw std::invalid_argument("loss_simloss: similarity matrix shape mismatch");
    }
    const Vec<Scalar> p = softmax(Vec<Scalar>(logits / temperature));
    const Vec<Scalar> w = sim.row(label).transpose();
    const Scalar s = w.dot(p);
    LossResult<Scalar> r;
    r.loss = -std::log(s);
    r.grad = (p.array() - w.array() * p.array() / s).matrix() / temperature;
    return r;
}

/// Mean cross-entropy over a K x batch logit matrix; gradient is scaled
/// by 1 / batch.
template <typename Scalar>
Scalar loss_ce_batch(const Mat<Scalar> &logits, std::span<const int> labels, Mat<Scalar> &grad) {
    if (static_cast<std::size_t>(logits.cols()) != labels.size()) {
        throw std::invalid_argument("loss_ce_batch: label count mismatch");
    }
    const Scalar inv_n = Scalar(1) / static_cast<Scalar>(logits.cols());
    grad.resize(logits.rows(), logits.cols());
    Scalar total = 0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        auto r = loss_ce<Scalar>(logits.col(j), labels[static_cast<std::size_t>(j)]);
        total += r.loss;
        grad.col(j) = r.grad * inv_n;
    }
    return total * inv_n;
}

} // namespace flowgate::nn

#endif // FLOWGATE_NN_LOSS_HPP
