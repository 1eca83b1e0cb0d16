#include "flowgate/reject.hpp"

#include <algorithm>
#include <cmath>

#include "flowgate/nn/loss.hpp"
#include "flowgate/stats.hpp"

namespace flowgate {

const char *to_string(NoveltyMethod m) {
    switch (m) {
    case NoveltyMethod::softmax: return "softmax";
    case NoveltyMethod::energy: return "energy";
    case NoveltyMethod::gradient: return "gradient";
    }
    return "?";
}

NoveltyMethod parse_method(const std::string &name) {
    for (auto m : kAllMethods) {
        if (name == to_string(m)) {
            return m;
        }
    }
    throw DataError("unknown novelty method '" + name + "'");
}

void RejectConfig::validate() const {
    if (!(temperature > 0.0)) {
        throw DataError("reject config: temperature must be > 0");
    }
    if (!(p >= 1.0)) {
        throw DataError("reject config: p must be >= 1");
    }
    if (!(target_fpr > 0.0 && target_fpr < 1.0)) {
        throw DataError("reject config: target FPR must be in (0, 1)");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw DataError("reject config: alpha must be in [0, 1]");
    }
}

void to_json(nlohmann::json &j, const RejectConfig &c) {
    j = nlohmann::json{{"method", to_string(c.method)}, {"temperature", c.temperature}, {"p", c.p},
                       {"simloss_alpha", c.alpha},      {"target_fpr", c.target_fpr}};
    if (c.threshold) {
        j["threshold"] = *c.threshold;
    }
}

void from_json(const nlohmann::json &j, RejectConfig &c) {
    static const std::vector<std::string> keys = {"method", "temperature", "p", "simloss_alpha", "target_fpr",
                                                  "threshold"};
    for (const auto &[k, v] : j.items()) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
            throw DataError("reject config: unknown key '" + k + "'");
        }
    }
    if (j.contains("method")) {
        c.method = parse_method(j.at("method").get<std::string>());
    }
    c.temperature = j.value("temperature", c.temperature);
    c.p = j.value("p", c.p);
    c.alpha = j.value("simloss_alpha", c.alpha);
    c.target_fpr = j.value("target_fpr", c.target_fpr);
    if (j.contains("threshold")) {
        c.threshold = j.at("threshold").get<double>();
    }
    c.validate();
}

double score_softmax(const Eigen::VectorXd &logits, double temperature) {
    return -nn::softmax(Eigen::VectorXd(logits / temperature)).maxCoeff();
}

double score_energy(const Eigen::VectorXd &logits) { return -nn::log_sum_exp(logits); }

Eigen::VectorXd gradient_score_dlogits(const Eigen::VectorXd &logits, const Eigen::MatrixXd &sim,
                                       double temperature) {
    Eigen::Index predicted;
    logits.maxCoeff(&predicted);
    return nn::loss_simloss<double>(logits, static_cast<int>(predicted), sim, temperature).grad;
}

double outer_pnorm(const Eigen::VectorXd &u, const Eigen::VectorXd &v, double p) {
    auto pnorm = [p](const Eigen::VectorXd &x) { return std::pow(x.cwiseAbs().array().pow(p).sum(), 1.0 / p); };
    return pnorm(u) * pnorm(v);
}

double score_gradient(const Eigen::VectorXd &logits, const Eigen::VectorXd &penultimate,
                      const Eigen::MatrixXd &sim, double temperature, double p) {
    return outer_pnorm(gradient_score_dlogits(logits, sim, temperature), penultimate, p);
}

std::vector<double> novelty_scores(const Net::Output &out, const Eigen::MatrixXd &sim, const RejectConfig &config) {
    std::vector<double> scores(static_cast<std::size_t>(out.logits.cols()));
    for (Eigen::Index j = 0; j < out.logits.cols(); ++j) {
        const Eigen::VectorXd z = out.logits.col(j);
        double s = 0.0;
        switch (config.method) {
        case NoveltyMethod::softmax: s = score_softmax(z, config.temperature); break;
        case NoveltyMethod::energy: s = score_energy(z); break;
        case NoveltyMethod::gradient:
            s = score_gradient(z, out.penultimate.col(j), sim, config.temperature, config.p);
            break;
        }
        scores[static_cast<std::size_t>(j)] = s;
    }
    return scores;
}

Eigen::MatrixXd model_sim_matrix(const Model &model, double alpha) {
    const auto groups = model.class_groups();
    return nn::sim_matrix<double>(groups, alpha);
}

std::vector<double> novelty_scores(const Model &model, std::span<const FeatureVector> features,
                                   const RejectConfig &config) {
    config.validate();
    return novelty_scores(model.infer(features), model_sim_matrix(model, config.alpha), config);
}

double score_gradient(const Model &model, const FeatureVector &feature, const RejectConfig &config) {
    const auto out = model.infer(std::span<const FeatureVector>(&feature, 1));
    return score_gradient(out.logits.col(0), out.penultimate.col(0), model_sim_matrix(model, config.alpha),
                          config.temperature, config.p);
}

double calibrate_threshold(std::span<const double> validation_scores, double target_fpr) {
    if (validation_scores.size() < 20) {
        throw DataError("calibrate_threshold: need at least 20 validation scores");
    }
    if (!(target_fpr > 0.0 && target_fpr < 1.0)) {
        throw DataError("calibrate_threshold: target FPR must be in (0, 1)");
    }
    return quantile(validation_scores, 1.0 - target_fpr);
}

std::vector<NoveltyVerdict> predict_with_reject(const Model &model, std::span<const FeatureVector> features,
                                                const RejectConfig &config) {
    if (!config.threshold) {
        throw DataError("predict_with_reject: reject config is not calibrated");
    }
    config.validate();
    const auto out = model.infer(features);
    const auto scores = novelty_scores(out, model_sim_matrix(model, config.alpha), config);
    std::vector<NoveltyVerdict> verdicts(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        Eigen::Index k;
        out.logits.col(static_cast<Eigen::Index>(i)).maxCoeff(&k);
        auto &v = verdicts[i];
        v.predicted_index = static_cast<int>(k);
        v.predicted = model.classes()[static_cast<std::size_t>(k)];
        v.score = scores[i];
        v.method = config.method;
        v.threshold_used = *config.threshold;
        v.rejected = v.score > v.threshold_used;
    }
    return verdicts;
}

NoveltyVerdict predict_with_reject(const Model &model, const FeatureVector &feature, const RejectConfig &config) {
    return predict_with_reject(model, std::span<const FeatureVector>(&feature, 1), config).front();
}

} // namespace flowgate
