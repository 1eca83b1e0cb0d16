// network.hpp
//
// Two-chain multimodal network: a Conv1d chain over the packet sequence
// and a Linear chain over flow statistics, concatenated into a shared
// trunk with dropout, followed by the classification layer.

#ifndef FLOWGATE_NN_NETWORK_HPP
#define FLOWGATE_NN_NETWORK_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowgate/nn/layers.hpp"
#include "flowgate/rng.hpp"

namespace flowgate::nn {

struct ConvSpec {
    int filters;
    int kernel;
    int stride;
    int padding;

    bool operator==(const ConvSpec &) const = default;
};

struct NetTopology {
    int in_channels = 3;
    int seq_len = 30;
    int flow_features = 13;
    std::vector<ConvSpec> convs;   ///< each followed by BatchNorm + ReLU
    int pstats_linear = 0;         ///< after flatten, followed by ReLU
    std::vector<int> flow_linears; ///< each followed by BatchNorm + ReLU
    std::vector<int> trunk;        ///< ReLU after each, dropout after all but the last
    double dropout = 0.2;
    int num_classes = 0;

    /// Sequence length after the convolution chain.
    int conv_out_len() const {
        int len = seq_len;
        for (const auto &c : convs) {
            len = (len + 2 * c.padding - c.kernel) / c.stride + 1;
        }
        return len;
    }

    int conv_out_channels() const { return convs.empty() ? in_channels : convs.back().filters; }
    int penultimate_size() const { return trunk.empty() ? pstats_linear + flow_out() : trunk.back(); }
    int flow_out() const { return flow_linears.empty() ? flow_features : flow_linears.back(); }

    /// Throws std::invalid_argument when a dimension is not positive.
    void validate() const {
        auto positive = [](int v, const char *what) {
            if (v <= 0) {
                throw std::invalid_argument(std::string("topology: ") + what + " must be positive");
            }
        };
        positive(in_channels, "in_channels");
        positive(seq_len, "seq_len");
        positive(flow_features, "flow_features");
        positive(pstats_linear, "pstats_linear");
        positive(num_classes, "num_classes");
        for (const auto &c : convs) {
            positive(c.filters, "conv filters");
            positive(c.kernel, "conv kernel");
            positive(c.stride, "conv stride");
            if (c.padding < 0) {
                throw std::invalid_argument("topology: conv padding must be >= 0");
            }
        }
        positive(conv_out_len(), "conv output length");
        for (int v : flow_linears) positive(v, "flow linear");
        for (int v : trunk) positive(v, "trunk linear");
        if (!(dropout >= 0.0 && dropout < 1.0)) {
            throw std::invalid_argument("topology: dropout must be in [0, 1)");
        }
    }

    /// Default layout; `width_divisor` 1 is the full-scale profile and 4
    /// the desk-scale profile.
    static NetTopology standard(int num_classes, int width_divisor = 1) {
        const int d = width_divisor;
        NetTopology t;
        t.convs = {{64 / d, 7, 1, 3}, {128 / d, 5, 2, 2}, {256 / d, 3, 2, 1}};
        t.pstats_linear = 256 / d;
        t.flow_linears = {64 / d, 64 / d};
        t.trunk = {512 / d, 256 / d};
        t.dropout = 0.2;
        t.num_classes = num_classes;
        return t;
    }

    bool operator==(const NetTopology &) const = default;
};

/// Trainable parameter count: weights, biases and batch-norm affine terms.
inline long param_count(const NetTopology &t) {
    long n = 0;
    int channels = t.in_channels;
    for (const auto &c : t.convs) {
        n += static_cast<long>(c.filters) * channels * c.kernel + c.filters;  // conv
        n += 2L * c.filters;                                                  // batch-norm affine
        channels = c.filters;
    }
    const long flat = static_cast<long>(t.conv_out_channels()) * t.conv_out_len();
    n += flat * t.pstats_linear + t.pstats_linear;
    int width = t.flow_features;
    for (int out : t.flow_linears) {
        n += static_cast<long>(width) * out + out + 2L * out;
        width = out;
    }
    width = t.pstats_linear + t.flow_out();
    for (int out : t.trunk) {
        n += static_cast<long>(width) * out + out;
        width = out;
    }
    n += static_cast<long>(width) * t.num_classes + t.num_classes;
    return n;
}

template <typename Scalar>
class MultimodalNet {
public:
    using Matrix = Mat<Scalar>;

    struct Output {
        Matrix logits;       ///< classes x batch
        Matrix penultimate;  ///< penultimate x batch, input of the head
    };

    MultimodalNet(const NetTopology &topology, std::uint64_t seed)
        : topology_(topology), head_(topology.penultimate_size(), topology.num_classes) {
        topology_.validate();
        Rng rng(seed);

        int channels = topology_.in_channels;
        int len = topology_.seq_len;
        for (const auto &c : topology_.convs) {
            auto &conv = pstats_.add(Conv1d<Scalar>(channels, c.filters, c.kernel, c.stride, c.padding, len));
            conv.init(rng);
            pstats_.add(BatchNorm<Scalar>(c.filters));
            pstats_.add(ReLU<Scalar>());
            channels = c.filters;
            len = conv.out_len();
        }
        pstats_.add(Flatten<Scalar>(channels, len));
        pstats_.add(Linear<Scalar>(channels * len, topology_.pstats_linear)).init(rng);
        pstats_.add(ReLU<Scalar>());

        int width = topology_.flow_features;
        for (int out : topology_.flow_linears) {
            flows_.add(Linear<Scalar>(width, out)).init(rng);
            flows_.add(BatchNorm<Scalar>(out));
            flows_.add(ReLU<Scalar>());
            width = out;
        }

        width = topology_.pstats_linear + topology_.flow_out();
        for (std::size_t i = 0; i < topology_.trunk.size(); ++i) {
            const int out = topology_.trunk[i];
            trunk_.add(Linear<Scalar>(width, out)).init(rng);
            trunk_.add(ReLU<Scalar>());
            if (i + 1 < topology_.trunk.size() && topology_.dropout > 0.0) {
                trunk_.add(Dropout<Scalar>(topology_.dropout, rng.derive_seed()));
            }
            width = out;
        }
        head_.init(rng);
    }

    /// Forward pass with caching for backward().  `pstats` is
    /// in_channels x (seq_len * batch), `flows` is flow_features x batch.
    Matrix forward(const Matrix &pstats, const Matrix &flows, Mode mode) {
        check_inputs(pstats, flows);
        const Matrix a = pstats_.forward(pstats, mode);
        const Matrix b = flows_.forward(flows, mode);
        Matrix joined(a.rows() + b.rows(), a.cols());
        joined << a, b;
        penultimate_ = trunk_.forward(joined, mode);
        return head_.forward(penultimate_, mode);
    }

    /// Backpropagates dL/dlogits of the last forward(); fills every
    /// parameter gradient and the input gradients.
    void backward(const Matrix &dlogits) {
        const Matrix dpen = head_.backward(dlogits);
        const Matrix djoined = trunk_.backward(dpen);
        const Eigen::Index na = topology_.pstats_linear;
        dpstats_ = pstats_.backward(djoined.topRows(na));
        dflows_ = flows_.backward(djoined.bottomRows(djoined.rows() - na));
    }

    /// Evaluation-mode pass without side effects.
    Output infer(const Matrix &pstats, const Matrix &flows) const {
        check_inputs(pstats, flows);
        const Matrix a = pstats_.infer(pstats);
        const Matrix b = flows_.infer(flows);
        Matrix joined(a.rows() + b.rows(), a.cols());
        joined << a, b;
        Output out;
        out.penultimate = trunk_.infer(joined);
        out.logits = head_.infer(out.penultimate);
        return out;
    }

    /// parameters in a fixed order: pstats chain, flow chain, trunk, head
    std::vector<ParamRef<Scalar>> params() {
        std::vector<ParamRef<Scalar>> out;
        auto append = [&](std::vector<ParamRef<Scalar>> v, const std::string &prefix) {
            for (std::size_t i = 0; i < v.size(); ++i) {
                v[i].name = prefix + "." + std::to_string(i / 2) + "." + v[i].name;
                out.push_back(v[i]);
            }
        };
        append(pstats_.params(), "pstats");
        append(flows_.params(), "flows");
        append(trunk_.params(), "trunk");
        auto head = head_.params();
        for (auto &p : head) {
            p.name = "head." + p.name;
            out.push_back(p);
        }
        return out;
    }

    std::vector<Matrix *> buffers() {
        std::vector<Matrix *> out;
        for (auto *b : pstats_.buffers()) out.push_back(b);
        for (auto *b : flows_.buffers()) out.push_back(b);
        for (auto *b : trunk_.buffers()) out.push_back(b);
        return out;
    }

    /// every saved tensor: parameters followed by buffers
    std::vector<Matrix *> state() {
        std::vector<Matrix *> out;
        for (auto &p : params()) out.push_back(p.value);
        for (auto *b : buffers()) out.push_back(b);
        return out;
    }

    const NetTopology &topology() const { return topology_; }
    Linear<Scalar> &head() { return head_; }
    const Linear<Scalar> &head() const { return head_; }
    const Matrix &penultimate() const { return penultimate_; }
    const Matrix &input_grad_pstats() const { return dpstats_; }
    const Matrix &input_grad_flows() const { return dflows_; }
    Sequential<Scalar> &pstats_chain() { return pstats_; }
    Sequential<Scalar> &flow_chain() { return flows_; }
    Sequential<Scalar> &trunk() { return trunk_; }

private:
    void check_inputs(const Matrix &pstats, const Matrix &flows) const {
        if (pstats.rows() != topology_.in_channels || flows.rows() != topology_.flow_features ||
            pstats.cols() != flows.cols() * topology_.seq_len) {
            throw std::invalid_argument("multimodal net: input shape mismatch");
        }
    }

    NetTopology topology_;
    Sequential<Scalar> pstats_;
    Sequential<Scalar> flows_;
    Sequential<Scalar> trunk_;
    Linear<Scalar> head_;
    Matrix penultimate_;
    Matrix dpstats_, dflows_;
};

} // namespace flowgate::nn

#endif // FLOWGATE_NN_NETWORK_HPP
