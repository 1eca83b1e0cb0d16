// model.hpp
//
// Trained classifier bundle and the training procedure.  A Model owns the
// network, the fitted scalers, the taxonomy snapshot and the ordered list
// of known classes (output index i predicts classes[i]).
//
// On-disk bundle (one directory):
//   topology.json  layer sizes plus the tensor table of params.bin
//   params.bin     little-endian float64, tensors in table order, row-major
//   scalers.json   fitted ScalerParams
//   taxonomy.csv   PATTERN,SERVICE,GROUP
//   meta.json      seed, temperature, classes, training config, calibrated
//                  thresholds under "reject"

#ifndef FLOWGATE_MODEL_HPP
#define FLOWGATE_MODEL_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowgate/nn/network.hpp"
#include "flowgate/nn/optim.hpp"
#include "flowgate/preprocess.hpp"
#include "flowgate/types.hpp"

namespace flowgate {

using Net = nn::MultimodalNet<double>;

struct TrainConfig {
    int epochs = 60;
    std::size_t epoch_subset = 500000;
    int batch_size = 32;
    double lr_base = 1e-4;
    double lr_max = 2e-3;
    int cycle_epochs = 10;
    nn::AdamWConfig adamw;
    double dropout = 0.2;
    int width_divisor = 4;  ///< 1 = full-scale profile, 4 = desk-scale
    std::uint64_t seed = 42;
};

void to_json(nlohmann::json &j, const TrainConfig &c);
void from_json(const nlohmann::json &j, TrainConfig &c);
namespace nn {
void to_json(nlohmann::json &j, const NetTopology &t);
void from_json(const nlohmann::json &j, NetTopology &t);
} // namespace nn

/// Preprocessed inputs with class indices into Model::classes.
struct LabeledSet {
    std::vector<FeatureVector> features;
    std::vector<int> labels;

    std::size_t size() const { return features.size(); }
};

struct EpochLog {
    int epoch;
    double train_loss;
    double val_accuracy;
    double lr_end;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainResult {
    Net net;
    std::vector<EpochLog> history;
    int best_epoch = -1;
    double best_val_accuracy = 0.0;
};

/// Trains with AdamW under the cyclic schedule.  Each epoch draws a seeded
/// subset of min(n, epoch_subset) training samples without replacement.
/// When a validation set is given the returned network is the checkpoint
/// with the best validation accuracy, otherwise the last one.
TrainResult train_network(const LabeledSet &train, const LabeledSet *val, const nn::NetTopology &topology,
                          const TrainConfig &config,
                          const std::function<void(const EpochLog &)> &on_epoch = {});

class Model {
public:
    Model(Net net, ScalerParams scalers, AblationConfig ablation, ServiceTaxonomy taxonomy,
          std::vector<ServiceId> classes);

    const Net &net() const { return net_; }
    Net &net() { return net_; }
    const ScalerParams &scalers() const { return scalers_; }
    const AblationConfig &ablation() const { return ablation_; }
    const ServiceTaxonomy &taxonomy() const { return taxonomy_; }
    const std::vector<ServiceId> &classes() const { return classes_; }
    int num_classes() const { return static_cast<int>(classes_.size()); }

    /// index of a known class, -1 for services outside the model
    int class_index(const ServiceId &service) const;

    /// group index (dense, in class order) of every class
    std::vector<int> class_groups() const;

    double temperature() const { return temperature_; }
    void set_temperature(double t);

    nlohmann::json &meta() { return meta_; }
    const nlohmann::json &meta() const { return meta_; }

    FeatureVector features(const FlowRecord &record) const;
    std::vector<FeatureVector> features(std::span<const FlowRecord> records) const;

    /// Evaluation-mode logits and penultimate activations, batched.
    Net::Output infer(std::span<const FeatureVector> features, std::size_t batch = 1024) const;

    std::vector<int> predict(std::span<const FeatureVector> features) const;

private:
    Net net_;
    ScalerParams scalers_;
    AblationConfig ablation_;
    ServiceTaxonomy taxonomy_;
    std::vector<ServiceId> classes_;
    double temperature_ = 3.0;
    nlohmann::json meta_ = nlohmann::json::object();
};

/// Maps labeled records onto class indices; records whose label is not a
/// known class are skipped.
LabeledSet make_labeled_set(std::span<const FlowRecord> records, const Model &model);

struct FitTemperatureOptions {
    bool optimize = false;     ///< false: return `configured`
    double configured = 3.0;
    double lo = 0.05;
    double hi = 20.0;
    double tol = 1e-6;         ///< on log T
};

/// Mean negative log-likelihood of labels under softmax(logits / T).
double temperature_nll(const Eigen::MatrixXd &logits, std::span<const int> labels, double t);

/// Configured temperature, or the golden-section minimiser of the
/// validation NLL over log T in [lo, hi].
double fit_temperature(const Eigen::MatrixXd &logits, std::span<const int> labels,
                       const FitTemperatureOptions &options = {});

double accuracy(std::span<const int> predicted, std::span<const int> labels);

struct TrainedModel {
    Model model;
    std::vector<EpochLog> history;
    int best_epoch = -1;
    double best_val_accuracy = 0.0;
};

/// Fits scalers on `train`, trains the network on the known `classes`
/// (records of other services are ignored) and selects the checkpoint on
/// `val`.  The returned model carries the training config in its meta.
TrainedModel train_model(std::span<const FlowRecord> train, std::span<const FlowRecord> val,
                         const std::vector<ServiceId> &classes, const ServiceTaxonomy &taxonomy,
                         const AblationConfig &ablation, const TrainConfig &config,
                         const std::function<void(const EpochLog &)> &on_epoch = {});

void save_bundle(const Model &model, const std::filesystem::path &dir);
Model load_bundle(const std::filesystem::path &dir);

} // namespace flowgate

#endif // FLOWGATE_MODEL_HPP
