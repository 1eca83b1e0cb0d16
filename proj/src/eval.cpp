#include "flowgate/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <set>
#include <sstream>

#include "flowgate/flowfile.hpp"
#include "flowgate/rng.hpp"
#include "flowgate/stats.hpp"

namespace flowgate {

namespace {

double f1_of(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

} // namespace

MetricReport classification_metrics(std::span<const ServiceId> predictions, std::span<const ServiceId> labels,
                                     const ServiceTaxonomy &taxonomy) {
    if (predictions.size() != labels.size()) {
        throw DataError("classification_metrics: predictions and labels differ in length");
    }
    if (labels.empty()) {
        throw DataError("classification_metrics: empty input");
    }
    MetricReport rep;
    std::map<ServiceId, double> support, predicted, tp, tp_sc_recall, tp_sc_precision;
    double correct = 0.0;
    double correct_sc = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto &y = labels[i];
        const auto &p = predictions[i];
        const bool same_group = taxonomy.group_of(y) == taxonomy.group_of(p);
        support[y] += 1.0;
        predicted[p] += 1.0;
        rep.confusion[{y, p}] += 1.0;
        if (y == p) {
            tp[y] += 1.0;
            correct += 1.0;
        }
        if (same_group) {
            correct_sc += 1.0;
            tp_sc_recall[y] += 1.0;
            tp_sc_precision[p] += 1.0;
        }
    }
    const double n = static_cast<double>(labels.size());
    rep.accuracy = correct / n;
    rep.superclass_accuracy = correct_sc / n;

    for (const auto &[cls, sup] : support) {
        ClassMetrics c;
        c.name = cls;
        c.support = sup;
        c.shared_group = taxonomy.in_shared_group(cls);
        const double np = predicted.count(cls) ? predicted.at(cls) : 0.0;
        c.precision = ratio(tp[cls], np);
        c.recall = ratio(tp[cls], sup);
        c.f1 = f1_of(c.precision, c.recall);
        c.precision_sc = ratio(tp_sc_precision[cls], np);
        c.recall_sc = ratio(tp_sc_recall[cls], sup);
        c.f1_sc = f1_of(c.precision_sc, c.recall_sc);
        rep.per_class.push_back(c);
    }
    const double k = static_cast<double>(rep.per_class.size());
    for (const auto &c : rep.per_class) {
        rep.macro_precision += c.precision / k;
        rep.macro_recall += c.recall / k;
        rep.macro_f1 += c.f1 / k;
        rep.macro_precision_sc += c.precision_sc / k;
        rep.macro_recall_sc += c.recall_sc / k;
        rep.macro_f1_sc += c.f1_sc / k;
    }
    return rep;
}

double rate_above(std::span<const double> scores, double threshold) {
    if (scores.empty()) {
        throw DataError("rate_above: empty score set");
    }
    const auto n = std::count_if(scores.begin(), scores.end(), [&](double s) { return s > threshold; });
    return static_cast<double>(n) / static_cast<double>(scores.size());
}

double tpr_at_fpr(std::span<const double> known, std::span<const double> unknown, double fpr) {
    if (known.empty() || unknown.empty()) {
        throw DataError("tpr_at_fpr: empty score set");
    }
    if (!(fpr > 0.0 && fpr < 1.0)) {
        throw DataError("tpr_at_fpr: fpr must be in (0, 1)");
    }
    return rate_above(unknown, quantile(known, 1.0 - fpr));
}

double pauroc(std::span<const double> known, std::span<const double> unknown, double max_fpr) {
    if (known.empty() || unknown.empty()) {
        throw DataError("pauroc: empty score set");
    }
    if (!(max_fpr > 0.0 && max_fpr <= 1.0)) {
        throw DataError("pauroc: max_fpr must be in (0, 1]");
    }
    // (score, is_unknown) sorted by descending score
    std::vector<std::pair<double, bool>> all;
    all.reserve(known.size() + unknown.size());
    for (double s : known) all.emplace_back(s, false);
    for (double s : unknown) all.emplace_back(s, true);
    std::sort(all.begin(), all.end(), [](const auto &a, const auto &b) { return a.first > b.first; });
    if (all.front().first == all.back().first) {
        return 0.5;
    }

    const double nk = static_cast<double>(known.size());
    const double nu = static_cast<double>(unknown.size());
    double area = 0.0;
    double x0 = 0.0, y0 = 0.0;
    double fp = 0.0, tp = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        const double s = all[i].first;
        while (i < all.size() && all[i].first == s) {
            (all[i].second ? tp : fp) += 1.0;
            ++i;
        }
        const double x1 = fp / nk;
        const double y1 = tp / nu;
        if (x1 <= max_fpr) {
            area += (x1 - x0) * (y0 + y1) / 2.0;
            x0 = x1;
            y0 = y1;
            if (x1 == max_fpr) {
                break;
            }
        } else {
            const double y_cut = y0 + (y1 - y0) * (max_fpr - x0) / (x1 - x0);
            area += (max_fpr - x0) * (y0 + y_cut) / 2.0;
            break;
        }
    }
    const double min_area = 0.5 * max_fpr * max_fpr;
    return 0.5 * (1.0 + (area - min_area) / (max_fpr - min_area));
}

SplitResult build_split(const ServiceTaxonomy &taxonomy, const std::map<ServiceId, std::int64_t> &counts,
                        std::size_t n) {
    if (n > taxonomy.services().size()) {
        throw DataError("build_split: N exceeds the number of services");
    }
    struct GroupRank {
        GroupId id;
        std::int64_t flows = 0;
        std::vector<ServiceId> members;
    };
    std::vector<GroupRank> groups;
    for (const auto &g : taxonomy.groups()) {
        GroupRank r{g, 0, taxonomy.members(g)};
        for (const auto &s : r.members) {
            auto it = counts.find(s);
            if (it == counts.end()) {
                throw DataError("build_split: no flow count for service '" + s + "'");
            }
            r.flows += it->second;
        }
        groups.push_back(std::move(r));
    }
    std::sort(groups.begin(), groups.end(), [](const GroupRank &a, const GroupRank &b) {
        return a.flows != b.flows ? a.flows > b.flows : a.id < b.id;
    });
    SplitResult out;
    for (const auto &g : groups) {
        const bool admit = out.known_count + g.members.size() <= n;
        for (const auto &s : g.members) {
            (admit ? out.split.known : out.split.unknown).insert(s);
        }
        if (admit) {
            out.known_count += g.members.size();
        }
    }
    return out;
}

std::vector<RejectConfig> calibrate_model(const Model &model, std::span<const FlowRecord> validation,
                                          const RejectConfig &base, std::span<const NoveltyMethod> methods) {
    const LabeledSet val = make_labeled_set(validation, model);
    if (val.size() < 20) {
        throw DataError("calibrate: fewer than 20 known validation flows");
    }
    const auto out = model.infer(val.features);
    std::vector<RejectConfig> configs;
    for (auto m : methods) {
        RejectConfig c = base;
        c.method = m;
        c.validate();
        const auto scores = novelty_scores(out, model_sim_matrix(model, c.alpha), c);
        c.threshold = calibrate_threshold(scores, c.target_fpr);
        configs.push_back(c);
    }
    return configs;
}

ModelEvaluation evaluate_model(const Model &model, std::span<const FlowRecord> test,
                               std::span<const RejectConfig> calibrated, double max_fpr) {
    std::vector<FeatureVector> known_f, unknown_f;
    std::vector<ServiceId> known_labels;
    for (const auto &r : test) {
        if (!r.label) {
            continue;
        }
        if (model.class_index(*r.label) >= 0) {
            known_f.push_back(model.features(r));
            known_labels.push_back(*r.label);
        } else if (model.taxonomy().contains(*r.label)) {
            unknown_f.push_back(model.features(r));
        }
    }
    if (known_f.empty()) {
        throw DataError("evaluate: the test set has no flows of known classes");
    }
    ModelEvaluation ev;
    const auto known_out = model.infer(known_f);
    for (Eigen::Index j = 0; j < known_out.logits.cols(); ++j) {
        Eigen::Index k;
        known_out.logits.col(j).maxCoeff(&k);
        ev.predictions.push_back(model.classes()[static_cast<std::size_t>(k)]);
    }
    ev.classification = classification_metrics(ev.predictions, known_labels, model.taxonomy());

    if (unknown_f.empty() || calibrated.empty()) {
        return ev;
    }
    const auto unknown_out = model.infer(unknown_f);
    for (const auto &c : calibrated) {
        if (!c.threshold) {
            throw DataError("evaluate: reject config for " + std::string(to_string(c.method)) + " is not calibrated");
        }
        const auto sim = model_sim_matrix(model, c.alpha);
        const auto ks = novelty_scores(known_out, sim, c);
        const auto us = novelty_scores(unknown_out, sim, c);
        NcReport nc;
        nc.method = c.method;
        nc.target_fpr = c.target_fpr;
        nc.threshold = *c.threshold;
        nc.tpr_calibrated = rate_above(us, *c.threshold);
        nc.realized_fpr = rate_above(ks, *c.threshold);
        nc.tpr_at_target = tpr_at_fpr(ks, us, c.target_fpr);
        nc.max_fpr = max_fpr;
        nc.pauroc = pauroc(ks, us, max_fpr);
        ev.nc.push_back(nc);
    }
    return ev;
}

std::uint64_t fold_seed(std::uint64_t seed, int fold) {
    Rng rng(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(fold + 1)));
    return rng.derive_seed();
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> fold_partition(std::size_t n, double val_fraction,
                                                                               std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw DataError("fold partition: validation fraction must be in (0, 1)");
    }
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
        idx[i] = i;
    }
    Rng rng(seed);
    rng.shuffle(idx);
    const auto nval = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
    std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nval));
    std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(nval), idx.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    return {train, val};
}

ProtocolResult run_protocol(std::span<const FlowRecord> flows, const ServiceTaxonomy &taxonomy,
                            const ProtocolConfig &config, const std::function<void(int, const Model &)> &on_model) {
    if (config.folds <= 0) {
        throw DataError("protocol: folds must be positive");
    }
    ProtocolResult result;

    std::map<ServiceId, std::int64_t> counts;
    for (const auto &s : taxonomy.services()) {
        counts[s] = 0;
    }
    bool has_week1 = false, has_week2 = false;
    for (const auto &r : flows) {
        if (!r.label) {
            throw DataError("protocol: unlabeled flow record");
        }
        if (!taxonomy.contains(*r.label)) {
            throw DataError("protocol: label '" + *r.label + "' is not in the taxonomy");
        }
        const auto w = week_of(r.window_ts);
        if (w != 1 && w != 2) {
            throw DataError("protocol: flow outside weeks 1-2 (window " + std::to_string(r.window_ts) + ")");
        }
        (w == 1 ? has_week1 : has_week2) = true;
        ++counts[*r.label];
    }
    if (!has_week1 || !has_week2) {
        throw DataError("protocol: missing week tag; both week 1 and week 2 flows are required");
    }

    // services under the sample minimum leave the taxonomy entirely
    ServiceTaxonomy kept;
    for (const auto &s : taxonomy.services()) {
        if (counts[s] < config.min_samples) {
            result.dropped_services.push_back(s);
            continue;
        }
        kept.add_service(s, taxonomy.group_of(s));
    }
    for (const auto &p : taxonomy.patterns()) {
        if (kept.contains(p.service)) {
            kept.add_pattern(p.pattern, p.service);
        }
    }
    std::map<ServiceId, std::int64_t> kept_counts;
    for (const auto &s : kept.services()) {
        kept_counts[s] = counts[s];
    }
    result.split = build_split(kept, kept_counts, std::min(config.top_n, kept.services().size()));

    std::vector<ServiceId> classes;
    for (const auto &s : kept.services()) {
        if (result.split.split.known.count(s)) {
            classes.push_back(s);
        }
    }

    std::vector<FlowRecord> week1_known, week2;
    for (const auto &r : flows) {
        if (!kept.contains(*r.label)) {
            continue;
        }
        if (week_of(r.window_ts) == 1) {
            if (result.split.split.known.count(*r.label)) {
                week1_known.push_back(r);
            }
        } else {
            week2.push_back(r);
        }
    }

    auto run_fold = [&](int fold) {
        const auto seed = fold_seed(config.train.seed, fold);
        const auto [train_idx, val_idx] = fold_partition(week1_known.size(), config.val_fraction, seed);
        std::vector<FlowRecord> train, val;
        for (auto i : train_idx) train.push_back(week1_known[i]);
        for (auto i : val_idx) val.push_back(week1_known[i]);

        TrainConfig tc = config.train;
        tc.seed = seed;
        auto trained = train_model(train, val, classes, kept, config.ablation, tc);
        Model &model = trained.model;

        RejectConfig base = config.reject;
        if (config.optimize_temperature) {
            const auto vset = make_labeled_set(val, model);
            const auto out = model.infer(vset.features);
            base.temperature = fit_temperature(out.logits, vset.labels, {true, base.temperature});
        }
        model.set_temperature(base.temperature);
        const auto calibrated = calibrate_model(model, val, base, config.methods);
        auto ev = evaluate_model(model, week2, calibrated, config.max_fpr);

        FoldResult fr;
        fr.fold = fold;
        fr.classification = std::move(ev.classification);
        fr.classification.fold = fold;
        fr.nc = std::move(ev.nc);
        for (auto &nc : fr.nc) {
            nc.fold = fold;
        }
        fr.best_epoch = trained.best_epoch;
        fr.best_val_accuracy = trained.best_val_accuracy;
        fr.temperature = base.temperature;
        if (on_model) {
            on_model(fold, model);
        }
        return fr;
    };

    if (config.parallel && config.folds > 1) {
        std::vector<std::future<FoldResult>> futures;
        for (int f = 0; f < config.folds; ++f) {
            futures.push_back(std::async(std::launch::async, run_fold, f));
        }
        for (auto &fu : futures) {
            result.folds.push_back(fu.get());
        }
    } else {
        for (int f = 0; f < config.folds; ++f) {
            result.folds.push_back(run_fold(f));
        }
    }
    return result;
}

MeanStd mean_std(std::span<const double> values) {
    if (values.empty()) {
        return {};
    }
    return {mean(values), stdev(values)};
}

MetricReport aggregate_reports(std::span<const MetricReport> reports) {
    if (reports.empty()) {
        throw DataError("aggregate_reports: no reports");
    }
    if (reports.size() == 1) {
        return reports.front();
    }
    MetricReport out;
    const double n = static_cast<double>(reports.size());
    std::map<ServiceId, ClassMetrics> acc;
    std::map<ServiceId, double> seen;
    for (const auto &r : reports) {
        out.accuracy += r.accuracy / n;
        out.superclass_accuracy += r.superclass_accuracy / n;
        out.macro_precision += r.macro_precision / n;
        out.macro_recall += r.macro_recall / n;
        out.macro_f1 += r.macro_f1 / n;
        out.macro_precision_sc += r.macro_precision_sc / n;
        out.macro_recall_sc += r.macro_recall_sc / n;
        out.macro_f1_sc += r.macro_f1_sc / n;
        for (const auto &c : r.per_class) {
            auto &a = acc[c.name];
            a.name = c.name;
            a.shared_group = c.shared_group;
            a.precision += c.precision;
            a.recall += c.recall;
            a.f1 += c.f1;
            a.precision_sc += c.precision_sc;
            a.recall_sc += c.recall_sc;
            a.f1_sc += c.f1_sc;
            a.support += c.support;
            seen[c.name] += 1.0;
        }
        for (const auto &[key, v] : r.confusion) {
            out.confusion[key] += v;
        }
    }
    for (auto &[name, a] : acc) {
        const double k = seen[name];
        a.precision /= k;
        a.recall /= k;
        a.f1 /= k;
        a.precision_sc /= k;
        a.recall_sc /= k;
        a.f1_sc /= k;
        a.support /= k;
        out.per_class.push_back(a);
    }
    return out;
}

namespace {

const char *kClassHeader = "CLASS,PRECISION,RECALL,F1,PRECISION_SC,RECALL_SC,F1_SC,SUPPORT,SHARED_GROUP";

std::vector<std::string> split_csv(const std::string &line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) {
        out.push_back(f);
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

double parse_real(const std::string &s, std::size_t line, const char *col) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) {
            throw std::invalid_argument(s);
        }
        return v;
    } catch (const std::exception &) {
        throw FlowFileError(line, col, "cannot parse '" + s + "'");
    }
}

std::string cell(double v, bool sc, double v_sc, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    if (sc) {
        os << " (" << std::fixed << std::setprecision(digits) << v_sc << ")";
    }
    return os.str();
}

std::string sanitize(const std::string &name) {
    std::string s = name;
    for (auto &ch : s) {
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.')) {
            ch = '_';
        }
    }
    return s;
}

} // namespace

void write_classification_csv(const MetricReport &report, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << kClassHeader << '\n';
    for (const auto &c : report.per_class) {
        out << c.name << ',' << format_real(c.precision) << ',' << format_real(c.recall) << ',' << format_real(c.f1)
            << ',' << format_real(c.precision_sc) << ',' << format_real(c.recall_sc) << ','
            << format_real(c.f1_sc) << ',' << format_real(c.support) << ',' << (c.shared_group ? 1 : 0) << '\n';
    }
    out << "macro avg," << format_real(report.macro_precision) << ',' << format_real(report.macro_recall) << ','
        << format_real(report.macro_f1) << ',' << format_real(report.macro_precision_sc) << ','
        << format_real(report.macro_recall_sc) << ',' << format_real(report.macro_f1_sc) << ",,\n";
    // accuracy rows carry their value in the F1 columns
    out << "accuracy,,," << format_real(report.accuracy) << ",,,,,\n";
    out << "superclass accuracy,,,,,," << format_real(report.superclass_accuracy) << ",,\n";
}

MetricReport read_classification_csv(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::string line;
    std::getline(in, line);
    if (line != kClassHeader) {
        throw FlowFileError(1, "<header>", "unexpected classification report header");
    }
    MetricReport rep;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const auto f = split_csv(line);
        if (f.size() != 9) {
            throw FlowFileError(line_no, "<row>", "expected 9 fields");
        }
        if (f[0] == "macro avg") {
            rep.macro_precision = parse_real(f[1], line_no, "PRECISION");
            rep.macro_recall = parse_real(f[2], line_no, "RECALL");
            rep.macro_f1 = parse_real(f[3], line_no, "F1");
            rep.macro_precision_sc = parse_real(f[4], line_no, "PRECISION_SC");
            rep.macro_recall_sc = parse_real(f[5], line_no, "RECALL_SC");
            rep.macro_f1_sc = parse_real(f[6], line_no, "F1_SC");
        } else if (f[0] == "accuracy") {
            rep.accuracy = parse_real(f[3], line_no, "F1");
        } else if (f[0] == "superclass accuracy") {
            rep.superclass_accuracy = parse_real(f[6], line_no, "F1_SC");
        } else {
            ClassMetrics c;
            c.name = f[0];
            c.precision = parse_real(f[1], line_no, "PRECISION");
            c.recall = parse_real(f[2], line_no, "RECALL");
            c.f1 = parse_real(f[3], line_no, "F1");
            c.precision_sc = parse_real(f[4], line_no, "PRECISION_SC");
            c.recall_sc = parse_real(f[5], line_no, "RECALL_SC");
            c.f1_sc = parse_real(f[6], line_no, "F1_SC");
            c.support = parse_real(f[7], line_no, "SUPPORT");
            c.shared_group = f[8] == "1";
            rep.per_class.push_back(c);
        }
    }
    return rep;
}

std::string format_classification_text(const MetricReport &report) {
    std::ostringstream os;
    auto row = [&](const std::string &name, const std::string &a, const std::string &b, const std::string &c) {
        os << std::setw(20) << std::right << name << "   " << std::setw(13) << std::left << a << "   "
           << std::setw(13) << std::left << b << "   " << std::setw(13) << std::left << c << '\n';
    };
    const std::string header = "                      precision (sc)     recall (sc)   f1-score (sc)\n";
    os << header;
    for (const auto &c : report.per_class) {
        row(c.name, cell(c.precision, c.shared_group, c.precision_sc, 2),
            cell(c.recall, c.shared_group, c.recall_sc, 2), cell(c.f1, c.shared_group, c.f1_sc, 2));
    }
    os << "\n" << header;
    row("macro avg", cell(report.macro_precision, true, report.macro_precision_sc, 3),
        cell(report.macro_recall, true, report.macro_recall_sc, 3),
        cell(report.macro_f1, true, report.macro_f1_sc, 3));
    row("accuracy", "", "", cell(report.accuracy, false, 0.0, 3));
    row("superclass accuracy", "", "", cell(report.superclass_accuracy, false, 0.0, 3));
    return os.str();
}

std::vector<SankeyRow> sankey_rows(const MetricReport &report, const ServiceId &true_class) {
    double total = 0.0;
    std::vector<SankeyRow> wrong;
    double correct = 0.0;
    for (const auto &[key, count] : report.confusion) {
        if (key.first != true_class) {
            continue;
        }
        total += count;
        if (key.second == true_class) {
            correct = count;
        } else {
            wrong.push_back({key.second, count});
        }
    }
    if (total == 0.0) {
        return {};
    }
    std::stable_sort(wrong.begin(), wrong.end(),
                     [](const SankeyRow &a, const SankeyRow &b) { return a.fraction > b.fraction; });
    std::vector<SankeyRow> rows;
    rows.push_back({true_class, correct / total});
    double rest = 0.0;
    for (std::size_t i = 0; i < wrong.size(); ++i) {
        if (i < 5) {
            rows.push_back({wrong[i].predicted, wrong[i].fraction / total});
        } else {
            rest += wrong[i].fraction;
        }
    }
    if (rest > 0.0) {
        rows.push_back({"(other)", rest / total});
    }
    return rows;
}

void emit_reports(std::span<const MetricReport> classification, std::span<const NcReport> nc,
                  const std::filesystem::path &dir) {
    std::filesystem::create_directories(dir);
    const auto agg = aggregate_reports(classification);
    write_classification_csv(agg, dir / "report_classification.csv");

    {
        std::ofstream txt(dir / "report_classification.txt", std::ios::binary);
        txt << format_classification_text(agg);
        if (classification.size() > 1) {
            std::vector<double> acc, sacc, f1, sf1;
            for (const auto &r : classification) {
                acc.push_back(r.accuracy);
                sacc.push_back(r.superclass_accuracy);
                f1.push_back(r.macro_f1);
                sf1.push_back(r.macro_f1_sc);
            }
            auto line = [&](const char *name, const std::vector<double> &v) {
                const auto ms = mean_std(v);
                txt << std::setw(20) << std::right << name << "   " << std::fixed << std::setprecision(4) << ms.mean
                    << " (+-" << ms.std << ")\n";
            };
            txt << "\nacross " << classification.size() << " folds:\n";
            line("accuracy", acc);
            line("superclass accuracy", sacc);
            line("macro f1", f1);
            line("superclass macro f1", sf1);
        }
    }

    {
        std::ofstream out(dir / "report_nc.csv", std::ios::binary);
        out << "FOLD,METHOD,TARGET_FPR,THRESHOLD,TPR_CALIBRATED,REALIZED_FPR,TPR_AT_TARGET,MAX_FPR,PAUROC\n";
        std::map<std::string, std::vector<const NcReport *>> by_method;
        for (const auto &r : nc) {
            out << r.fold << ',' << to_string(r.method) << ',' << format_real(r.target_fpr) << ','
                << format_real(r.threshold) << ',' << format_real(r.tpr_calibrated) << ','
                << format_real(r.realized_fpr) << ',' << format_real(r.tpr_at_target) << ','
                << format_real(r.max_fpr) << ',' << format_real(r.pauroc) << '\n';
            by_method[to_string(r.method)].push_back(&r);
        }
        for (const char *stat : {"mean", "std"}) {
            for (auto m : kAllMethods) {
                auto it = by_method.find(to_string(m));
                if (it == by_method.end()) {
                    continue;
                }
                auto agg_of = [&](double NcReport::*field) {
                    std::vector<double> v;
                    for (const auto *r : it->second) v.push_back(r->*field);
                    const auto ms = mean_std(v);
                    return format_real(std::string(stat) == "mean" ? ms.mean : ms.std);
                };
                out << stat << ',' << to_string(m) << ',' << format_real(it->second.front()->target_fpr) << ','
                    << agg_of(&NcReport::threshold) << ',' << agg_of(&NcReport::tpr_calibrated) << ','
                    << agg_of(&NcReport::realized_fpr) << ',' << agg_of(&NcReport::tpr_at_target) << ','
                    << format_real(it->second.front()->max_fpr) << ',' << agg_of(&NcReport::pauroc) << '\n';
            }
        }
    }

    for (const auto &c : agg.per_class) {
        std::ofstream out(dir / ("sankey_" + sanitize(c.name) + ".csv"), std::ios::binary);
        out << "TRUE,PREDICTED,FRACTION\n";
        for (const auto &r : sankey_rows(agg, c.name)) {
            out << c.name << ',' << r.predicted << ',' << format_real(r.fraction) << '\n';
        }
    }
}

void emit_reports(const ProtocolResult &result, const ServiceTaxonomy &, const std::filesystem::path &dir) {
    std::vector<MetricReport> cls;
    std::vector<NcReport> nc;
    for (const auto &f : result.folds) {
        cls.push_back(f.classification);
        nc.insert(nc.end(), f.nc.begin(), f.nc.end());
    }
    emit_reports(cls, nc, dir);
}

} // namespace flowgate
