// reject.hpp
//
// Novelty scores for the reject option (higher = more novel):
//   softmax   -max_k softmax(logits / T)_k
//   energy    -LogSumExp(logits), no temperature
//   gradient  entrywise p-norm of dL/dW_head, where L is SimLoss of the
//             temperature-scaled softmax against the predicted class
// plus threshold calibration at a target false-positive rate and the
// reject-wrapped prediction.

#ifndef FLOWGATE_REJECT_HPP
#define FLOWGATE_REJECT_HPP

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "flowgate/model.hpp"

namespace flowgate {

enum class NoveltyMethod { softmax, energy, gradient };

const char *to_string(NoveltyMethod m);
NoveltyMethod parse_method(const std::string &name);
inline constexpr NoveltyMethod kAllMethods[] = {NoveltyMethod::softmax, NoveltyMethod::energy,
                                               NoveltyMethod::gradient};

struct RejectConfig {
    NoveltyMethod method = NoveltyMethod::gradient;
    double temperature = 3.0;
    double p = 1.5;
    double alpha = 0.075;
    double target_fpr = 0.05;
    std::optional<double> threshold;

    /// Throws DataError when T <= 0, p < 1 or the FPR is outside (0, 1).
    void validate() const;
};

void to_json(nlohmann::json &j, const RejectConfig &c);
void from_json(const nlohmann::json &j, RejectConfig &c);

struct NoveltyVerdict {
    ServiceId predicted;
    int predicted_index = -1;
    double score = 0.0;
    NoveltyMethod method = NoveltyMethod::gradient;
    bool rejected = false;
    double threshold_used = 0.0;
};

double score_softmax(const Eigen::VectorXd &logits, double temperature);
double score_energy(const Eigen::VectorXd &logits);

/// Gradient score from logits, the penultimate activations feeding the
/// head, and the class-similarity matrix.
double score_gradient(const Eigen::VectorXd &logits, const Eigen::VectorXd &penultimate,
                      const Eigen::MatrixXd &sim, double temperature, double p);

/// dL/dlogits of the SimLoss used by the gradient score (predicted class
/// taken as ground truth).
Eigen::VectorXd gradient_score_dlogits(const Eigen::VectorXd &logits, const Eigen::MatrixXd &sim,
                                       double temperature);

/// entrywise p-norm of the outer product u v^T, as ||u||_p * ||v||_p
double outer_pnorm(const Eigen::VectorXd &u, const Eigen::VectorXd &v, double p);

/// Novelty scores of every column of a network output.
std::vector<double> novelty_scores(const Net::Output &out, const Eigen::MatrixXd &sim, const RejectConfig &config);

/// Scores for raw records through a model (eval mode, batched).
std::vector<double> novelty_scores(const Model &model, std::span<const FeatureVector> features,
                                   const RejectConfig &config);

/// Single-sample gradient score through the model.
double score_gradient(const Model &model, const FeatureVector &feature, const RejectConfig &config);

/// (1 - target_fpr)-quantile of the validation scores; needs >= 20 scores.
double calibrate_threshold(std::span<const double> validation_scores, double target_fpr);

NoveltyVerdict predict_with_reject(const Model &model, const FeatureVector &feature, const RejectConfig &config);
std::vector<NoveltyVerdict> predict_with_reject(const Model &model, std::span<const FeatureVector> features,
                                                const RejectConfig &config);

/// similarity matrix for a model's classes from its taxonomy groups
Eigen::MatrixXd model_sim_matrix(const Model &model, double alpha);

} // namespace flowgate

#endif // FLOWGATE_REJECT_HPP
