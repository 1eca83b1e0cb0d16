// preprocess.hpp
//
// Feature scaling and assembly of model-ready inputs.  Packet sizes and
// inter-arrival times are z-scored, flow statistics are clipped at a
// fitted quantile and robust-scaled with median/IQR, directions and TCP
// flags pass through unchanged.

#ifndef FLOWGATE_PREPROCESS_HPP
#define FLOWGATE_PREPROCESS_HPP

#include <array>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "flowgate/types.hpp"

namespace flowgate {

inline constexpr int kPstatsChannels = 3;  // size, dir, iat
inline constexpr int kPstatsLen = static_cast<int>(kMaxPackets);
inline constexpr int kFlowNumerics = 7;
inline constexpr int kFlowFeatures = kFlowNumerics + static_cast<int>(kFlagCount);

inline constexpr int kChannelSize = 0;
inline constexpr int kChannelDir = 1;
inline constexpr int kChannelIat = 2;

/// names of the flow-statistic features in vector order
const std::array<const char *, kFlowFeatures> &flowstat_names();

enum class ScalerKind { standard, robust, none };

struct FeatureScaler {
    ScalerKind kind = ScalerKind::none;
    double center = 0.0;  ///< mean or median
    double scale = 1.0;   ///< stdev or IQR
    bool constant = false;

    double apply(double x) const;
};

struct AblationConfig {
    bool use_flowstats = true;
    bool use_iat = true;
    bool use_dirs = true;
    int pstats_limit = kPstatsLen;
    bool standardize = true;
    bool clip = true;

    bool operator==(const AblationConfig &) const = default;
};

struct ScalerParams {
    bool fitted = false;
    FeatureScaler size;
    FeatureScaler iat;
    std::array<FeatureScaler, kFlowNumerics> flowstats{};
    std::array<double, kFlowNumerics> ceilings{};
    bool clip = true;
    double clip_quantile = 0.95;
    double iat_min_ms = 1.0;
    double iat_max_ms = 15000.0;
    std::string fitted_on;
};

struct FeatureVector {
    Eigen::Matrix<double, kPstatsChannels, kPstatsLen> pstats =
        Eigen::Matrix<double, kPstatsChannels, kPstatsLen>::Zero();
    int pstats_len = 0;
    Eigen::Matrix<double, kFlowFeatures, 1> flowstats = Eigen::Matrix<double, kFlowFeatures, 1>::Zero();
    bool ablation_applied = false;
};

/// Raw flow-statistic numerics in vector order.
std::array<double, kFlowNumerics> flowstat_numerics(const FlowStats &st);

ScalerParams fit_scalers(std::span<const FlowRecord> training, const AblationConfig &config,
                         const std::string &fitted_on = "train");

FeatureVector transform(const FlowRecord &record, const ScalerParams &params, const AblationConfig &ablation);

std::vector<FeatureVector> transform_all(std::span<const FlowRecord> records, const ScalerParams &params,
                                         const AblationConfig &ablation);

/// Column-batched inputs: pstats is channels x (positions * batch) with
/// sample b occupying columns [b * 30, (b + 1) * 30); flowstats is
/// features x batch.
struct FeatureBatch {
    Eigen::MatrixXd pstats;
    Eigen::MatrixXd flowstats;

    Eigen::Index size() const { return flowstats.cols(); }
};

FeatureBatch make_batch(std::span<const FeatureVector> features, std::span<const std::size_t> indices);
FeatureBatch make_batch(std::span<const FeatureVector> features);

void to_json(nlohmann::json &j, const AblationConfig &a);
void from_json(const nlohmann::json &j, AblationConfig &a);
void to_json(nlohmann::json &j, const ScalerParams &p);
void from_json(const nlohmann::json &j, ScalerParams &p);

} // namespace flowgate

#endif // FLOWGATE_PREPROCESS_HPP
