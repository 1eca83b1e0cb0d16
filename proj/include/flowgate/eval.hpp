// eval.hpp
//
// Classification metrics (plain and superclass), novelty-detection
// metrics (TPR at a fixed FPR, standardized partial AUROC), group-coherent
// known/unknown splits, the week-1/week-2 cross-validation protocol and
// report files.

#ifndef FLOWGATE_EVAL_HPP
#define FLOWGATE_EVAL_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowgate/model.hpp"
#include "flowgate/reject.hpp"
#include "flowgate/types.hpp"

namespace flowgate {

struct ClassMetrics {
    ServiceId name;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double precision_sc = 0.0;
    double recall_sc = 0.0;
    double f1_sc = 0.0;
    double support = 0.0;
    bool shared_group = false;  ///< group has other services; sc columns are meaningful

    bool operator==(const ClassMetrics &) const = default;
};

struct MetricReport {
    double accuracy = 0.0;
    double superclass_accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    double macro_precision_sc = 0.0;
    double macro_recall_sc = 0.0;
    double macro_f1_sc = 0.0;
    std::vector<ClassMetrics> per_class;                       ///< sorted by name
    std::map<std::pair<ServiceId, ServiceId>, double> confusion;  ///< (true, predicted) -> count
    int fold = -1;
};

/// Per-class and macro metrics over classes that occur in `labels`.
/// A class without predictions has precision 0.
MetricReport classification_metrics(std::span<const ServiceId> predictions, std::span<const ServiceId> labels,
                                     const ServiceTaxonomy &taxonomy);

/// Threshold at the (1 - fpr)-quantile of known scores; the returned TPR
/// is the fraction of unknown scores strictly above it.
double tpr_at_fpr(std::span<const double> known, std::span<const double> unknown, double fpr);

/// fraction of scores strictly above the threshold
double rate_above(std::span<const double> scores, double threshold);

/// Trapezoidal ROC area over FPR in [0, max_fpr] (unknown = positive),
/// standardized so that chance is 0.5 and perfect separation is 1.
double pauroc(std::span<const double> known, std::span<const double> unknown, double max_fpr);

struct NcReport {
    NoveltyMethod method = NoveltyMethod::energy;
    double target_fpr = 0.05;
    double threshold = 0.0;
    double tpr_calibrated = 0.0;  ///< TPR using the validation-calibrated threshold
    double realized_fpr = 0.0;    ///< test FPR using the same threshold
    double tpr_at_target = 0.0;   ///< TPR at exactly target FPR on the test known scores
    double max_fpr = 0.1;
    double pauroc = 0.0;
    int fold = -1;
};

struct SplitResult {
    DatasetSplit split;
    std::size_t known_count = 0;
};

/// Groups ranked by total flow count (descending, ties by group id) are
/// admitted while the cumulative service count stays <= n.
SplitResult build_split(const ServiceTaxonomy &taxonomy, const std::map<ServiceId, std::int64_t> &counts,
                        std::size_t n);

/// Calibrates thresholds for each method on known validation records.
std::vector<RejectConfig> calibrate_model(const Model &model, std::span<const FlowRecord> validation,
                                          const RejectConfig &base, std::span<const NoveltyMethod> methods);

struct ModelEvaluation {
    MetricReport classification;
    std::vector<NcReport> nc;
    std::vector<ServiceId> predictions;  ///< for the known test records, in order
};

/// Classification metrics on test records of known classes; novelty
/// metrics with unknown = test records labeled with services outside the
/// model.  Every config in `calibrated` must carry a threshold.
ModelEvaluation evaluate_model(const Model &model, std::span<const FlowRecord> test,
                               std::span<const RejectConfig> calibrated, double max_fpr = 0.1);

struct ProtocolConfig {
    int folds = 10;
    double val_fraction = 0.1;
    std::size_t top_n = 100;
    std::int64_t min_samples = 100;
    TrainConfig train;
    AblationConfig ablation;
    RejectConfig reject;
    bool optimize_temperature = false;
    double max_fpr = 0.1;
    std::vector<NoveltyMethod> methods = {NoveltyMethod::softmax, NoveltyMethod::energy, NoveltyMethod::gradient};
    bool parallel = false;
};

struct FoldResult {
    int fold = 0;
    MetricReport classification;
    std::vector<NcReport> nc;
    int best_epoch = -1;
    double best_val_accuracy = 0.0;
    double temperature = 0.0;
};

struct ProtocolResult {
    SplitResult split;
    std::vector<ServiceId> dropped_services;  ///< fewer than min_samples flows
    std::vector<FoldResult> folds;
};

/// Known-record partition for one fold: indices into the week-1 known
/// records, (train, validation).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> fold_partition(std::size_t n, double val_fraction,
                                                                               std::uint64_t seed);

std::uint64_t fold_seed(std::uint64_t seed, int fold);

/// Runs the full protocol.  `on_model` (optional) sees each fold's model.
ProtocolResult run_protocol(std::span<const FlowRecord> flows, const ServiceTaxonomy &taxonomy,
                            const ProtocolConfig &config,
                            const std::function<void(int, const Model &)> &on_model = {});

/// Means over folds of every per-class value; confusion counts are summed.
MetricReport aggregate_reports(std::span<const MetricReport> reports);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};
MeanStd mean_std(std::span<const double> values);

/// Writes report_classification.csv/.txt, report_nc.csv and one
/// sankey_<class>.csv per class into `dir`.
void emit_reports(const ProtocolResult &result, const ServiceTaxonomy &taxonomy, const std::filesystem::path &dir);
void emit_reports(std::span<const MetricReport> classification, std::span<const NcReport> nc,
                  const std::filesystem::path &dir);

void write_classification_csv(const MetricReport &report, const std::filesystem::path &path);
MetricReport read_classification_csv(const std::filesystem::path &path);
std::string format_classification_text(const MetricReport &report);

struct SankeyRow {
    ServiceId predicted;
    double fraction;
};
/// Correct fraction first, then the top-5 confusions by fraction, then an
/// "(other)" remainder when non-zero.
std::vector<SankeyRow> sankey_rows(const MetricReport &report, const ServiceId &true_class);

} // namespace flowgate

#endif // FLOWGATE_EVAL_HPP
