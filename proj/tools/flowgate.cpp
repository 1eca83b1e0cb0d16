// flowgate command-line front end.
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "flowgate/config.hpp"
#include "flowgate/eval.hpp"
#include "flowgate/flowfile.hpp"
#include "flowgate/ingest.hpp"
#include "flowgate/model.hpp"
#include "flowgate/reject.hpp"
#include "flowgate/synth.hpp"

namespace fs = std::filesystem;
using namespace flowgate;

namespace {

struct Common {
    bool deterministic = false;
    bool quiet = false;
};

void info(const Common &c, const std::string &msg) {
    if (!c.quiet) {
        std::cerr << msg << '\n';
    }
}

RunConfig config_from(const std::string &path) {
    RunConfig c;
    if (!path.empty()) {
        c = load_run_config(path);
    } else {
        apply_seed_env(c);
    }
    return c;
}

void write_json(const fs::path &path, const nlohmann::json &j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception &e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::map<ServiceId, std::int64_t> count_labels(std::span<const FlowRecord> flows, const ServiceTaxonomy &taxonomy) {
    std::map<ServiceId, std::int64_t> counts;
    for (const auto &s : taxonomy.services()) {
        counts[s] = 0;
    }
    for (const auto &r : flows) {
        if (!r.label) {
            throw DataError("unlabeled flow record");
        }
        if (!taxonomy.contains(*r.label)) {
            throw DataError("label '" + *r.label + "' is not in the taxonomy");
        }
        ++counts[*r.label];
    }
    return counts;
}

void write_split(const fs::path &path, const ServiceTaxonomy &taxonomy, const SplitResult &split,
                 const std::map<ServiceId, std::int64_t> &counts) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << "SERVICE,GROUP,SET,FLOWS\n";
    for (const auto &s : taxonomy.services()) {
        const char *set = split.split.known.count(s) ? "known" : split.split.unknown.count(s) ? "unknown" : "dropped";
        const auto it = counts.find(s);
        out << s << ',' << taxonomy.group_of(s) << ',' << set << ',' << (it == counts.end() ? 0 : it->second)
            << '\n';
    }
}

std::set<ServiceId> read_known(const fs::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::string line;
    std::getline(in, line);
    if (line != "SERVICE,GROUP,SET,FLOWS") {
        throw FlowFileError(1, "<header>", "unexpected split file header");
    }
    std::set<ServiceId> known;
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string x; std::getline(ss, x, ',');) {
            f.push_back(x);
        }
        if (f.size() != 4) {
            throw FlowFileError(n, "<row>", "expected 4 fields");
        }
        if (f[2] == "known") {
            known.insert(f[0]);
        } else if (f[2] != "unknown" && f[2] != "dropped") {
            throw FlowFileError(n, "SET", "expected known, unknown or dropped");
        }
    }
    return known;
}

std::vector<NoveltyMethod> methods_from(const std::string &name) {
    if (name == "all") {
        return {std::begin(kAllMethods), std::end(kAllMethods)};
    }
    return {parse_method(name)};
}

/// records of the model's classes, in file order, split by the stored seed
std::vector<FlowRecord> validation_records(const Model &model, std::span<const FlowRecord> flows,
                                           double val_fraction, std::uint64_t seed) {
    std::vector<FlowRecord> known;
    for (const auto &r : flows) {
        if (r.label && model.class_index(*r.label) >= 0) {
            known.push_back(r);
        }
    }
    const auto [train_idx, val_idx] = fold_partition(known.size(), val_fraction, seed);
    std::vector<FlowRecord> val;
    for (auto i : val_idx) {
        val.push_back(known[i]);
    }
    return val;
}

/// calibrated thresholds live under "reject" in the bundle's meta.json
void save_reject(const fs::path &model_dir, const std::vector<RejectConfig> &configs) {
    const auto path = model_dir / "meta.json";
    auto meta = read_json(path);
    meta["reject"] = nlohmann::json::array();
    for (const auto &c : configs) {
        meta["reject"].push_back(c);
    }
    write_json(path, meta);
}

std::vector<RejectConfig> load_reject(const Model &model, const fs::path &model_dir) {
    const auto it = model.meta().find("reject");
    if (it == model.meta().end()) {
        throw DataError("model " + model_dir.string() + " is not calibrated (run `flowgate calibrate`)");
    }
    std::vector<RejectConfig> out;
    try {
        for (const auto &j : *it) {
            out.push_back(j.get<RejectConfig>());
        }
    } catch (const nlohmann::json::exception &e) {
        throw DataError((model_dir / "meta.json").string() + ": " + e.what());
    }
    return out;
}

RejectConfig pick_reject(const std::vector<RejectConfig> &configs, NoveltyMethod m) {
    for (const auto &c : configs) {
        if (c.method == m) {
            return c;
        }
    }
    throw DataError(std::string("model has no calibrated threshold for method ") + to_string(m));
}

/// shared by `train` and `calibrate`
std::vector<RejectConfig> calibrate_and_store(Model &model, const fs::path &model_dir,
                                              std::span<const FlowRecord> val, const RunConfig &cfg) {
    RejectConfig base = cfg.protocol.reject;
    base.temperature = model.temperature();
    auto configs = calibrate_model(model, val, base, cfg.protocol.methods);
    save_reject(model_dir, configs);
    return configs;
}

// --- subcommands -----------------------------------------------------------

struct SynthArgs {
    std::string out;
    std::uint64_t seed = 42;
    double drift = 0.0;
    std::size_t flows = 20000;
    bool raw = false;
};

int cmd_synth(const SynthArgs &a, const Common &c) {
    BenchmarkOptions o;
    o.seed = a.seed;
    o.drift = a.drift;
    o.total_flows = a.flows;
    o.keep_sni = a.raw;
    const auto b = standard_benchmark(o);
    fs::create_directories(a.out);
    auto without_sni = [](std::vector<FlowRecord> flows) {
        for (auto &r : flows) {
            r.sni.reset();
        }
        return flows;
    };
    write_flow_file(fs::path(a.out) / "train.csv", without_sni(b.train));
    write_flow_file(fs::path(a.out) / "test.csv", without_sni(b.test));
    write_taxonomy(fs::path(a.out) / "taxonomy.csv", b.taxonomy);
    if (a.raw) {
        std::vector<FlowRecord> capture;
        for (const auto *part : {&b.train, &b.test}) {
            for (auto r : *part) {
                r.label.reset();
                capture.push_back(std::move(r));
            }
        }
        write_flow_file(fs::path(a.out) / "capture.csv", capture, true);
    }
    std::ostringstream msg;
    msg << "synth: " << b.train.size() << " week-1 and " << b.test.size() << " week-2 flows, checksum train "
        << std::hex << file_checksum(fs::path(a.out) / "train.csv") << " test "
        << file_checksum(fs::path(a.out) / "test.csv");
    info(c, msg.str());
    return 0;
}

struct IngestArgs {
    std::string in, taxonomy, out;
    bool no_sampling = false;
};

int cmd_ingest(const IngestArgs &a, const Common &c) {
    const auto taxonomy = read_taxonomy(a.taxonomy);
    std::ifstream in(a.in);
    if (!in) {
        throw DataError("cannot open " + a.in);
    }
    FlowReader reader(in);
    IngestOptions o;
    o.sampling = !a.no_sampling;
    const auto s = run_ingest(reader, taxonomy, a.out, o);
    std::ostringstream msg;
    msg << "ingest: read " << s.read << ", kept " << s.kept << ", short " << s.dropped_short << ", unidirectional "
        << s.dropped_unidirectional << ", no-sni " << s.dropped_no_sni << ", sampled out " << s.dropped_sampling
        << ", invalid " << s.invalid;
    info(c, msg.str());
    return 0;
}

struct SplitArgs {
    std::vector<std::string> in;
    std::string taxonomy, out;
    std::size_t n = 100;
    std::int64_t min_samples = 100;
};

int cmd_split(const SplitArgs &a, const Common &c) {
    const auto taxonomy = read_taxonomy(a.taxonomy);
    std::vector<FlowRecord> flows;
    for (const auto &p : a.in) {
        auto part = read_flow_file(p);
        flows.insert(flows.end(), part.begin(), part.end());
    }
    const auto counts = count_labels(flows, taxonomy);
    ServiceTaxonomy kept;
    std::map<ServiceId, std::int64_t> kept_counts;
    for (const auto &s : taxonomy.services()) {
        if (counts.at(s) >= a.min_samples) {
            kept.add_service(s, taxonomy.group_of(s));
            kept_counts[s] = counts.at(s);
        }
    }
    const auto split = build_split(kept, kept_counts, std::min(a.n, kept.services().size()));
    write_split(a.out, taxonomy, split, counts);
    info(c, "split: " + std::to_string(split.known_count) + " known, " +
                std::to_string(split.split.unknown.size()) + " unknown services");
    return 0;
}

struct TrainArgs {
    std::string config, train, taxonomy, split, out;
    int epochs = 0;
    std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs &a, const Common &c) {
    RunConfig cfg = config_from(a.config);
    if (a.seed) {
        cfg.seed = *a.seed;
        cfg.protocol.train.seed = *a.seed;
    }
    if (a.epochs > 0) {
        cfg.protocol.train.epochs = a.epochs;
    }
    const std::string train_path = !a.train.empty() ? a.train : cfg.paths.train;
    const std::string tax_path = !a.taxonomy.empty() ? a.taxonomy : cfg.paths.taxonomy;
    const std::string out = !a.out.empty() ? a.out : cfg.paths.model;
    if (train_path.empty() || tax_path.empty() || out.empty()) {
        throw CLI::ValidationError("train", "--train, --taxonomy and --out are required (flag or config paths)");
    }
    const auto taxonomy = read_taxonomy(tax_path);
    const auto flows = read_flow_file(train_path);
    const auto counts = count_labels(flows, taxonomy);

    std::set<ServiceId> known;
    if (!a.split.empty()) {
        known = read_known(a.split);
    } else {
        ServiceTaxonomy kept;
        std::map<ServiceId, std::int64_t> kept_counts;
        for (const auto &s : taxonomy.services()) {
            if (counts.at(s) >= cfg.protocol.min_samples) {
                kept.add_service(s, taxonomy.group_of(s));
                kept_counts[s] = counts.at(s);
            }
        }
        known = build_split(kept, kept_counts, std::min(cfg.protocol.top_n, kept.services().size())).split.known;
    }
    std::vector<ServiceId> classes;
    for (const auto &s : taxonomy.services()) {
        if (known.count(s)) {
            classes.push_back(s);
        }
    }
    if (classes.size() < 2) {
        throw DataError("train: fewer than two known classes");
    }

    std::vector<FlowRecord> known_flows;
    for (const auto &r : flows) {
        if (known.count(*r.label)) {
            known_flows.push_back(r);
        }
    }
    const auto [train_idx, val_idx] = fold_partition(known_flows.size(), cfg.protocol.val_fraction, cfg.seed);
    std::vector<FlowRecord> train, val;
    for (auto i : train_idx) train.push_back(known_flows[i]);
    for (auto i : val_idx) val.push_back(known_flows[i]);

    auto trained = train_model(train, val, classes, taxonomy, cfg.protocol.ablation, cfg.protocol.train,
                               [&](const EpochLog &e) {
                                   std::ostringstream m;
                                   m << "epoch " << e.epoch << " loss " << e.train_loss << " val_acc "
                                     << e.val_accuracy;
                                   info(c, m.str());
                               });
    Model &model = trained.model;
    double temperature = cfg.protocol.reject.temperature;
    if (cfg.protocol.optimize_temperature) {
        const auto vset = make_labeled_set(val, model);
        temperature = fit_temperature(model.infer(vset.features).logits, vset.labels, {true, temperature});
    }
    model.set_temperature(temperature);
    model.meta()["data"] = {{"train", train_path},
                            {"val_fraction", cfg.protocol.val_fraction},
                            {"split_seed", cfg.seed}};
    save_bundle(model, out);
    calibrate_and_store(model, out, val, cfg);
    info(c, "train: model written to " + out + " (best epoch " + std::to_string(trained.best_epoch) + ")");
    return 0;
}

struct CalibrateArgs {
    std::string model, val, config, method = "all";
    std::optional<double> target_fpr;
};

int cmd_calibrate(const CalibrateArgs &a, const Common &c) {
    RunConfig cfg = config_from(a.config);
    if (a.target_fpr) {
        cfg.protocol.reject.target_fpr = *a.target_fpr;
        cfg.protocol.reject.validate();
    }
    cfg.protocol.methods = methods_from(a.method);
    Model model = load_bundle(a.model);
    std::vector<FlowRecord> val;
    if (!a.val.empty()) {
        val = read_flow_file(a.val);
    } else {
        const auto &data = model.meta().value("data", nlohmann::json::object());
        if (!data.contains("train")) {
            throw DataError("calibrate: --val is required for models without a recorded training file");
        }
        const auto flows = read_flow_file(data.at("train").get<std::string>());
        val = validation_records(model, flows, data.at("val_fraction").get<double>(),
                                 data.at("split_seed").get<std::uint64_t>());
    }
    const auto configs = calibrate_and_store(model, a.model, val, cfg);
    for (const auto &r : configs) {
        info(c, std::string("calibrate: ") + to_string(r.method) + " threshold " + format_real(*r.threshold));
    }
    return 0;
}

struct EvaluateArgs {
    std::string model, test, out, method = "all";
    double max_fpr = 0.1;
};

int cmd_evaluate(const EvaluateArgs &a, const Common &c) {
    const Model model = load_bundle(a.model);
    const auto all = load_reject(model, a.model);
    std::vector<RejectConfig> chosen;
    for (auto m : methods_from(a.method)) {
        chosen.push_back(pick_reject(all, m));
    }
    const auto test = read_flow_file(a.test);
    auto ev = evaluate_model(model, test, chosen, a.max_fpr);
    ev.classification.fold = 0;
    for (auto &n : ev.nc) {
        n.fold = 0;
    }
    const fs::path out = a.out.empty() ? fs::path(a.model) / "reports" : fs::path(a.out);
    const std::vector<MetricReport> reports{ev.classification};
    emit_reports(reports, ev.nc, out);
    std::ostringstream m;
    m << "evaluate: accuracy " << format_real(ev.classification.accuracy) << ", superclass accuracy "
      << format_real(ev.classification.superclass_accuracy);
    for (const auto &n : ev.nc) {
        m << ", " << to_string(n.method) << " TPR " << format_real(n.tpr_calibrated) << " (FPR "
          << format_real(n.realized_fpr) << ")";
    }
    info(c, m.str());
    return 0;
}

struct ScoreArgs {
    std::string model, in, out, method = "gradient";
};

int cmd_score(const ScoreArgs &a, const Common &) {
    const Model model = load_bundle(a.model);
    const auto cfg = pick_reject(load_reject(model, a.model), parse_method(a.method));
    const auto flows = read_flow_file(a.in);
    const auto verdicts = predict_with_reject(model, model.features(flows), cfg);
    std::ofstream file;
    std::ostream *out = &std::cout;
    if (!a.out.empty()) {
        file.open(a.out, std::ios::binary);
        if (!file) {
            throw DataError("cannot write " + a.out);
        }
        out = &file;
    }
    *out << "LABEL_PRED,SCORE,REJECTED\n";
    for (const auto &v : verdicts) {
        *out << v.predicted << ',' << format_real(v.score) << ',' << (v.rejected ? 1 : 0) << '\n';
    }
    return 0;
}

struct ReportArgs {
    std::string config, train, test, taxonomy, out;
    int folds = 0;
    int epochs = 0;
};

int cmd_report(const ReportArgs &a, const Common &c) {
    RunConfig cfg = config_from(a.config);
    if (a.folds > 0) {
        cfg.protocol.folds = a.folds;
    }
    if (a.epochs > 0) {
        cfg.protocol.train.epochs = a.epochs;
    }
    if (c.deterministic) {
        cfg.protocol.parallel = false;
    }
    const std::string train = !a.train.empty() ? a.train : cfg.paths.train;
    const std::string test = !a.test.empty() ? a.test : cfg.paths.test;
    const std::string tax = !a.taxonomy.empty() ? a.taxonomy : cfg.paths.taxonomy;
    const std::string out = !a.out.empty() ? a.out : cfg.paths.out;
    if (train.empty() || test.empty() || tax.empty() || out.empty()) {
        throw CLI::ValidationError("report", "--train, --test, --taxonomy and --out are required");
    }
    const auto taxonomy = read_taxonomy(tax);
    auto flows = read_flow_file(train);
    const auto week2 = read_flow_file(test);
    flows.insert(flows.end(), week2.begin(), week2.end());

    const auto result = run_protocol(flows, taxonomy, cfg.protocol, [&](int fold, const Model &) {
        info(c, "report: fold " + std::to_string(fold) + " done");
    });
    emit_reports(result, taxonomy, out);
    write_split(fs::path(out) / "split.csv", taxonomy, result.split, count_labels(flows, taxonomy));
    write_json(fs::path(out) / "config.json", cfg);
    info(c, "report: written to " + out);
    return 0;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"flowgate: TLS service classification with a reject option"};
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_flag("--deterministic", common.deterministic, "single-threaded, reproducible execution");
    app.add_flag("-q,--quiet", common.quiet, "suppress progress messages");

    SynthArgs synth;
    auto *s = app.add_subcommand("synth", "generate the synthetic benchmark");
    s->add_option("--out", synth.out, "output directory")->required();
    s->add_option("--seed", synth.seed, "generator seed");
    s->add_option("--drift", synth.drift, "distribution drift applied to week 2");
    s->add_option("--flows", synth.flows, "total number of flows");
    s->add_flag("--raw", synth.raw, "also write an unlabeled capture.csv with SNI for ingest");

    IngestArgs ingest;
    auto *in = app.add_subcommand("ingest", "label, filter, sample and anonymize a raw flow file");
    in->add_option("--in", ingest.in, "raw flow CSV with an SNI column")->required();
    in->add_option("--taxonomy", ingest.taxonomy, "taxonomy CSV")->required();
    in->add_option("--out", ingest.out, "output directory for window files")->required();
    in->add_flag("--no-sampling", ingest.no_sampling, "keep every flow of every service");

    SplitArgs split;
    auto *sp = app.add_subcommand("split", "group-coherent known/unknown split");
    sp->add_option("--in", split.in, "labeled flow CSV files")->required();
    sp->add_option("--taxonomy", split.taxonomy, "taxonomy CSV")->required();
    sp->add_option("--out", split.out, "split CSV to write")->required();
    sp->add_option("--n", split.n, "number of known services");
    sp->add_option("--min-samples", split.min_samples, "services with fewer flows are dropped");

    TrainArgs train;
    auto *tr = app.add_subcommand("train", "train a model bundle");
    tr->add_option("--config", train.config, "run config JSON");
    tr->add_option("--train", train.train, "labeled training flows");
    tr->add_option("--taxonomy", train.taxonomy, "taxonomy CSV");
    tr->add_option("--split", train.split, "split CSV (default: top-N from the training file)");
    tr->add_option("--out", train.out, "model bundle directory");
    tr->add_option("--epochs", train.epochs, "override the number of epochs");
    tr->add_option("--seed", train.seed, "override the seed");

    CalibrateArgs cal;
    auto *ca = app.add_subcommand("calibrate", "calibrate reject thresholds of a model");
    ca->add_option("--model", cal.model, "model bundle directory")->required();
    ca->add_option("--val", cal.val, "known validation flows (default: the training split)");
    ca->add_option("--config", cal.config, "run config JSON");
    ca->add_option("--method", cal.method, "softmax, energy, gradient or all");
    ca->add_option("--target-fpr", cal.target_fpr, "false-positive rate on known traffic");

    EvaluateArgs ev;
    auto *e = app.add_subcommand("evaluate", "evaluate a model on test flows");
    e->add_option("--model", ev.model, "model bundle directory")->required();
    e->add_option("--test", ev.test, "labeled test flows")->required();
    e->add_option("--method", ev.method, "softmax, energy, gradient or all");
    e->add_option("--out", ev.out, "report directory (default: <model>/reports)");
    e->add_option("--max-fpr", ev.max_fpr, "upper FPR of the partial AUROC");

    ScoreArgs sc;
    auto *so = app.add_subcommand("score", "classify flows with the reject option");
    so->add_option("--model", sc.model, "model bundle directory")->required();
    so->add_option("--in", sc.in, "flow CSV")->required();
    so->add_option("--out", sc.out, "verdict CSV (default: stdout)");
    so->add_option("--method", sc.method, "softmax, energy or gradient");

    ReportArgs rep;
    auto *r = app.add_subcommand("report", "run the cross-validation protocol and write reports");
    r->add_option("--config", rep.config, "run config JSON");
    r->add_option("--train", rep.train, "week-1 flows");
    r->add_option("--test", rep.test, "week-2 flows");
    r->add_option("--taxonomy", rep.taxonomy, "taxonomy CSV");
    r->add_option("--out", rep.out, "report directory");
    r->add_option("--folds", rep.folds, "override the number of folds");
    r->add_option("--epochs", rep.epochs, "override the number of epochs");

    auto *dc = app.add_subcommand("default-config", "print the built-in run config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (s->parsed()) return cmd_synth(synth, common);
        if (in->parsed()) return cmd_ingest(ingest, common);
        if (sp->parsed()) return cmd_split(split, common);
        if (tr->parsed()) return cmd_train(train, common);
        if (ca->parsed()) return cmd_calibrate(cal, common);
        if (e->parsed()) return cmd_evaluate(ev, common);
        if (so->parsed()) return cmd_score(sc, common);
        if (r->parsed()) return cmd_report(rep, common);
        if (dc->parsed()) {
            std::cout << default_run_config_json().dump(2) << '\n';
            return 0;
        }
    } catch (const CLI::Error &err) {
        std::cerr << "usage error: " << err.what() << '\n';
        return 1;
    } catch (const std::exception &err) {
        std::cerr << "error: " << err.what() << '\n';
        return 2;
    }
    return 1;
}
