// tensor.hpp - dense types and parameter handles for the nn core

#ifndef FLOWGATE_NN_TENSOR_HPP
#define FLOWGATE_NN_TENSOR_HPP

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace flowgate::nn {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class Mode { train, eval };

/// A trainable tensor together with its gradient slot.  Biases and
/// batch-norm affine terms are stored as n x 1 matrices.
template <typename Scalar>
struct ParamRef {
    Mat<Scalar> *value;
    Mat<Scalar> *grad;
    std::string name;
};

} // namespace flowgate::nn

#endif // FLOWGATE_NN_TENSOR_HPP
