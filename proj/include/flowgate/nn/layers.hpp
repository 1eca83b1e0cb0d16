// layers.hpp
//
// Layers of the multimodal network.  Activations are column-batched:
//   - feature layout: features x batch (Linear, dense BatchNorm)
//   - sequence layout: channels x (length * batch), sample b occupying
//     the column block [b * length, (b + 1) * length)  (Conv1d)
// BatchNorm normalizes each row over all columns, so it serves both
// layouts.  forward() caches what backward() needs; infer() is the const
// evaluation path used for concurrent scoring.

#ifndef FLOWGATE_NN_LAYERS_HPP
#define FLOWGATE_NN_LAYERS_HPP

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowgate/nn/tensor.hpp"
#include "flowgate/rng.hpp"

namespace flowgate::nn {

template <typename Scalar>
class Layer {
public:
    using Matrix = Mat<Scalar>;

    virtual ~Layer() = default;

    virtual Matrix forward(const Matrix &x, Mode mode) = 0;
    virtual Matrix infer(const Matrix &x) const = 0;
    /// Gradient w.r.t. the input of the last forward(); overwrites the
    /// parameter gradients.
    virtual Matrix backward(const Matrix &dy) = 0;

    virtual std::vector<ParamRef<Scalar>> params() { return {}; }
    /// non-trainable state that is part of a saved model
    virtual std::vector<Matrix *> buffers() { return {}; }
    virtual std::unique_ptr<Layer> clone() const = 0;
    virtual std::string kind() const = 0;
};

/// Fan-in uniform initialisation: weights and biases on U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename Scalar>
void fan_in_uniform(Mat<Scalar> &w, Mat<Scalar> &b, int fan_in, Rng &rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            w(i, j) = static_cast<Scalar>(rng.uniform(-bound, bound));
        }
    }
    for (Eigen::Index i = 0; i < b.rows(); ++i) {
        b(i, 0) = static_cast<Scalar>(rng.uniform(-bound, bound));
    }
}

template <typename Scalar>
class Linear final : public Layer<Scalar> {
public:
    using Matrix = Mat<Scalar>;

    Linear(int in, int out) : weight_(Matrix::Zero(out, in)), bias_(Matrix::Zero(out, 1)) {
        if (in <= 0 || out <= 0) {
            throw std::invalid_argument("linear: dimensions must be positive");
        }
        dweight_ = Matrix::Zero(out, in);
        dbias_ = Matrix::Zero(out, 1);
    }

    void init(Rng &rng) { fan_in_uniform(weight_, bias_, in(), rng); }

    Matrix forward(const Matrix &x, Mode) override {
        x_ = x;
        return infer(x);
    }

    Matrix infer(const Matrix &x) const override {
        if (x.rows() != weight_.cols()) {
            throw std::invalid_argument("linear: input has " + std::to_string(x.rows()) + " rows, expected " +
                                        std::to_string(weight_.cols()));
        }
        Matrix y = weight_ * x;
        y.colwise() += bias_.col(0);
        return y;
    }

    Matrix backward(const Matrix &dy) override {
        dweight_.noalias() = dy * x_.transpose();
        dbias_ = dy.rowwise().sum();
        return weight_.transpose() * dy;
    }

    std::vector<ParamRef<Scalar>> params() override {
        return {{&weight_, &dweight_, "weight"}, {&bias_, &dbias_, "bias"}};
    }

    std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Linear>(*this); }
    std::string kind() const override { return "linear"; }

    int in() const { return static_cast<int>(weight_.cols()); }
    int out() const { return static_cast<int>(weight_.rows()); }
    Matrix &weight() { return weight_; }
    Matrix &bias() { return bias_; }
    const Matrix &weight() const { return weight_; }
    const Matrix &bias() const { return bias_; }
    const Matrix &weight_grad() const { return dweight_; }

private:
    Matrix weight_, bias_, dweight_, dbias_;
    Matrix x_;
};

template <typename Scalar>
class Conv1d final : public Layer<Scalar> {
public:
    using Matrix = Mat<Scalar>;

    Conv1d(int in_channels, int out_channels, int kernel, int stride, int padding, int in_len)
        : cin_(in_channels), cout_(out_channels), k_(kernel), stride_(stride), pad_(padding), lin_(in_len) {
        if (cin_ <= 0 || cout_ <= 0 || k_ <= 0 || stride_ <= 0 || pad_ < 0 || lin_ <= 0) {
            throw std::invalid_argument("conv1d: invalid geometry");
        }
        if (out_len() <= 0) {
            throw std::invalid_argument("conv1d: kernel larger than padded input");
        }
        weight_ = Matrix::Zero(cout_, cin_ * k_);
        bias_ = Matrix::Zero(cout_, 1);
        dweight_ = weight_;
        dbias_ = bias_;
    }

    void init(Rng &rng) { fan_in_uniform(weight_, bias_, cin_ * k_, rng); }

    int out_len() const { return (lin_ + 2 * pad_ - k_) / stride_ + 1; }
    int in_len() const { return lin_; }
    int out_channels() const { return cout_; }

    Matrix forward(const Matrix &x, Mode) override {
        cols_ = im2col(x);
        Matrix y = weight_ * cols_;
        y.colwise() += bias_.col(0);
        return y;
    }

    Matrix infer(const Matrix &x) const override {
        Matrix y = weight_ * im2col(x);
        y.colwise() += bias_.col(0);
        return y;
    }

    Matrix backward(const Matrix &dy) override {
        dweight_.noalias() = dy * cols_.transpose();
        dbias_ = dy.rowwise().sum();
        const Matrix dcols = weight_.transpose() * dy;
        const Eigen::Index batch = dy.cols() / out_len();
        Matrix dx = Matrix::Zero(cin_, lin_ * batch);
        const int lout = out_len();
        for (Eigen::Index b = 0; b < batch; ++b) {
            for (int t = 0; t < lout; ++t) {
                const Eigen::Index col = b * lout + t;
                for (int j = 0; j < k_; ++j) {
                    const int pos = t * stride_ + j - pad_;
                    if (pos < 0 || pos >= lin_) {
                        continue;
                    }
                    for (int c = 0; c < cin_; ++c) {
                        dx(c, b * lin_ + pos) += dcols(c * k_ + j, col);
                    }
                }
            }
        }
        return dx;
    }

    std::vector<ParamRef<Scalar>> params() override {
        return {{&weight_, &dweight_, "weight"}, {&bias_, &dbias_, "bias"}};
    }

    std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Conv1d>(*this); }
    std::string kind() const override { return "conv1d"; }

private:
    Matrix im2col(const Matrix &x) const {
        if (x.rows() != cin_ || x.cols() % lin_ != 0) {
            throw std::invalid_argument("conv1d: input shape mismatch");
        }
        const Eigen::Index batch = x.cols() / lin_;
        const int lout = out_len();
        Matrix cols = Matrix::Zero(cin_ * k_, lout * batch);
        for (Eigen::Index b = 0; b < batch; ++b) {
            for (int t = 0; t < lout; ++t) {
                const Eigen::Index col = b * lout + t;
                for (int c = 0; c < cin_; ++c) {
                    for (int j = 0; j < k_; ++j) {
                        const int pos = t * stride_ + j - pad_;
                        if (pos >= 0 && pos < lin_) {
                            cols(c * k_ + j, col) = x(c, b * lin_ + pos);
                        }
                    }
                }
            }
        }
        return cols;
    }

    int cin_, cout_, k_, stride_, pad_, lin_;
    Matrix weight_, bias_, dweight_, dbias_;
    Matrix cols_;
};

/// Per-row batch normalization over all columns of the input.
template <typename Scalar>
class BatchNorm final : public Layer<Scalar> {
public:
    using Matrix = Mat<Scalar>;

    explicit BatchNorm(int channels, Scalar eps = Scalar(1e-5), Scalar momentum = Scalar(0.1))
        : eps_(eps), momentum_(momentum) {
        if (channels <= 0) {
            throw std::invalid_argument("batchnorm: channels must be positive");
        }
        gamma_ = Matrix::Ones(channels, 1);
        beta_ = Matrix::Zero(channels, 1);
        dgamma_ = Matrix::Zero(channels, 1);
        dbeta_ = Matrix::Zero(channels, 1);
        running_mean_ = Matrix::Zero(channels, 1);
        running_var_ = Matrix::Ones(channels, 1);
    }

    Matrix forward(const Matrix &x, Mode mode) override {
        check(x);
        mode_ = mode;
        if (mode == Mode::eval) {
            invstd_ = (running_var_.array() + eps_).rsqrt().matrix();
            xhat_ = invstd_.col(0).asDiagonal() * (x.colwise() - running_mean_.col(0));
        } else {
            const Scalar n = static_cast<Scalar>(x.cols());
            const Matrix mu = x.rowwise().mean();
            const Matrix xc = x.colwise() - mu.col(0);
            const Matrix var = xc.array().square().rowwise().sum().matrix() / n;
            invstd_ = (var.array() + eps_).rsqrt().matrix();
            xhat_ = invstd_.col(0).asDiagonal() * xc;
            const Scalar unbias = n > 1 ? n / (n - 1) : Scalar(1);
            running_mean_ = (Scalar(1) - momentum_) * running_mean_ + momentum_ * mu;
            running_var_ = (Scalar(1) - momentum_) * running_var_ + momentum_ * unbias * var;
        }
        Matrix y = gamma_.col(0).asDiagonal() * xhat_;
        y.colwise() += beta_.col(0);
        return y;
    }

    Matrix infer(const Matrix &x) const override {
        check(x);
        const Matrix scale = (gamma_.array() * (running_var_.array() + eps_).rsqrt()).matrix();
        Matrix y = scale.col(0).asDiagonal() * (x.colwise() - running_mean_.col(0));
        y.colwise() += beta_.col(0);
        return y;
    }

    Matrix backward(const Matrix &dy) override {
        dgamma_ = dy.cwiseProduct(xhat_).rowwise().sum();
        dbeta_ = dy.rowwise().sum();
        const Matrix dxhat = gamma_.col(0).asDiagonal() * dy;
        if (mode_ == Mode::eval) {
            return invstd_.col(0).asDiagonal() * dxhat;
        }
        const Scalar n = static_cast<Scalar>(dy.cols());
        const Matrix sum_dxhat = dxhat.rowwise().sum();
        const Matrix sum_dxhat_xhat = dxhat.cwiseProduct(xhat_).rowwise().sum();
        Matrix dx = n * dxhat;
        dx.colwise() -= sum_dxhat.col(0);
        dx -= sum_dxhat_xhat.col(0).asDiagonal() * xhat_;
        return (invstd_ / n).col(0).asDiagonal() * dx;
    }

    std::vector<ParamRef<Scalar>> params() override {
        return {{&gamma_, &dgamma_, "gamma"}, {&beta_, &dbeta_, "beta"}};
    }
    std::vector<Matrix *> buffers() override { return {&running_mean_, &running_var_}; }

    std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<BatchNorm>(*this); }
    std::string kind() const override { return "batchnorm"; }

    /// normalized input of the last forward(), before the affine transform
    const Matrix &normalized() const { return xhat_; }
    Matrix &running_mean() { return running_mean_; }
    Matrix &running_var() { return running_var_; }

private:
    void check(const Matrix &x) const {
        if (x.rows() != gamma_.rows()) {
            throw std::invalid_argument("batchnorm: channel count mismatch");
        }
    }

    Scalar eps_, momentum_;
    Matrix gamma_, beta_, dgamma_, dbeta_;
    Matrix running_mean_, running_var_;
    Matrix xhat_, invstd_;
    Mode mode_ = Mode::train;
};

template <typename Scalar>
class ReLU final : public Layer<Scalar> {
public:
    using Matrix = Mat<Scalar>;

    Matrix forward(const Matrix &x, Mode) override {
        mask_ = (x.array() > Scalar(0)).template cast<Scalar>().matrix();
        return x.cwiseMax(Scalar(0));
    }
    Matrix infer(const Matrix &x) const override { return x.cwiseMax(Scalar(0)); }
    Matrix backward(const Matrix &dy) override { return dy.cwiseProduct(mask_); }

    std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<ReLU>(*this); }
    std::string kind() const override { return "relu"; }

private:
    Matrix mask_;
};

/// Inverted dropout: kept units are scaled by 1 / (1 - rate) in training,
/// evaluation is the identity.
template <typename Scalar>
class Dropout final : public Layer<Scalar> {
public:
    using Matrix = Mat<Scalar>;

    Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
        if (!(rate >= 0.0 && rate < 1.0)) {
            throw std::invalid_argument("dropout: rate must be in [0, 1)");
        }
    }

    Matrix forward(const Matrix &x, Mode mode) override {
        if (mode == Mode::eval || rate_ == 0.0) {
            mask_ = Matrix::Ones(x.rows(), x.cols());
            return x;
        }
        if (!frozen_ || mask_.rows() != x.rows() || mask_.cols() != x.cols()) {
            mask_.resize(x.rows(), x.cols());
            const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - rate_));
            for (Eigen::Index j = 0; j < x.cols(); ++j) {
                for (Eigen::Index i = 0; i < x.rows(); ++i) {
                    mask_(i, j) = rng_.uniform() < rate_ ? Scalar(0) : keep_scale;
                }
            }
        }
        return x.cwiseProduct(mask_);
    }
    Matrix infer(const Matrix &x) const override { return x; }
    Matrix backward(const Matrix &dy) override { return dy.cwiseProduct(mask_); }

    /// Reuse the current mask on subsequent training passes (gradient checks).
    void freeze_mask(bool frozen) { frozen_ = frozen; }
    void reseed(std::uint64_t seed) { rng_ = Rng(seed); }
    double rate() const { return rate_; }

    std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Dropout>(*this); }
    std::string kind() const override { return "dropout"; }

private:
    double rate_;
    Rng rng_;
    Matrix mask_;
    bool frozen_ = false;
};

/// channels x (length * batch)  ->  (channels * length) x batch, feature
/// index c * length + t.
template <typename Scalar>
class Flatten final : public Layer<Scalar> {
public:
    using Matrix = Mat<Scalar>;

    Flatten(int channels, int length) : c_(channels), l_(length) {}

    Matrix forward(const Matrix &x, Mode) override { return infer(x); }

    Matrix infer(const Matrix &x) const override {
        if (x.rows() != c_ || x.cols() % l_ != 0) {
            throw std::invalid_argument("flatten: input shape mismatch");
        }
        const Eigen::Index batch = x.cols() / l_;
        Matrix y(c_ * l_, batch);
        for (Eigen::Index b = 0; b < batch; ++b) {
            for (int c = 0; c < c_; ++c) {
                y.col(b).segment(c * l_, l_) = x.row(c).segment(b * l_, l_).transpose();
            }
        }
        return y;
    }

    Matrix backward(const Matrix &dy) override {
        const Eigen::Index batch = dy.cols();
        Matrix dx(c_, l_ * batch);
        for (Eigen::Index b = 0; b < batch; ++b) {
            for (int c = 0; c < c_; ++c) {
                dx.row(c).segment(b * l_, l_) = dy.col(b).segment(c * l_, l_).transpose();
            }
        }
        return dx;
    }

    std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Flatten>(*this); }
    std::string kind() const override { return "flatten"; }

private:
    int c_, l_;
};

template <typename Scalar>
class Sequential {
public:
    using Matrix = Mat<Scalar>;

    Sequential() = default;
    Sequential(const Sequential &other) {
        for (const auto &l : other.layers_) {
            layers_.push_back(l->clone());
        }
    }
    Sequential &operator=(const Sequential &other) {
        if (this != &other) {
            Sequential tmp(other);
            layers_.swap(tmp.layers_);
        }
        return *this;
    }
    Sequential(Sequential &&) noexcept = default;
    Sequential &operator=(Sequential &&) noexcept = default;

    template <typename L>
    L &add(L layer) {
        layers_.push_back(std::make_unique<L>(std::move(layer)));
        return static_cast<L &>(*layers_.back());
    }

    Matrix forward(const Matrix &x, Mode mode) {
        Matrix h = x;
        for (auto &l : layers_) {
            h = l->forward(h, mode);
        }
        return h;
    }

    Matrix infer(const Matrix &x) const {
        Matrix h = x;
        for (const auto &l : layers_) {
            h = l->infer(h);
        }
        return h;
    }

    Matrix backward(const Matrix &dy) {
        Matrix g = dy;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
            g = (*it)->backward(g);
        }
        return g;
    }

    std::vector<ParamRef<Scalar>> params() {
        std::vector<ParamRef<Scalar>> out;
        for (auto &l : layers_) {
            for (auto &p : l->params()) {
                out.push_back(p);
            }
        }
        return out;
    }

    std::vector<Matrix *> buffers() {
        std::vector<Matrix *> out;
        for (auto &l : layers_) {
            for (auto *b : l->buffers()) {
                out.push_back(b);
            }
        }
        return out;
    }

    std::size_t size() const { return layers_.size(); }
    Layer<Scalar> &operator[](std::size_t i) { return *layers_[i]; }
    const Layer<Scalar> &operator[](std::size_t i) const { return *layers_[i]; }

private:
    std::vector<std::unique_ptr<Layer<Scalar>>> layers_;
};

} // namespace flowgate::nn

#endif // FLOWGATE_NN_LAYERS_HPP
