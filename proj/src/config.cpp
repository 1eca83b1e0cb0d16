#include "flowgate/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>

namespace flowgate {

namespace {

void check_keys(const nlohmann::json &j, const std::set<std::string> &allowed, const std::string &where) {
    if (!j.is_object()) {
        throw DataError(where + ": expected a JSON object");
    }
    for (const auto &item : j.items()) {
        if (!allowed.count(item.key())) {
            throw DataError(where + ": unknown key '" + item.key() + "'");
        }
    }
}

} // namespace

void to_json(nlohmann::json &j, const RunConfig &c) {
    const auto &p = c.protocol;
    nlohmann::json methods = nlohmann::json::array();
    for (auto m : p.methods) {
        methods.push_back(to_string(m));
    }
    TrainConfig train = p.train;
    train.seed = c.seed;
    j = nlohmann::json{
        {"seed", c.seed},
        {"split_n", p.top_n},
        {"folds", p.folds},
        {"val_fraction", p.val_fraction},
        {"min_samples", p.min_samples},
        {"max_fpr", p.max_fpr},
        {"optimize_temperature", p.optimize_temperature},
        {"methods", methods},
        {"parallel", p.parallel},
        {"train", train},
        {"reject", p.reject},
        {"ablation", p.ablation},
        {"paths",
         {{"train", c.paths.train},
          {"test", c.paths.test},
          {"taxonomy", c.paths.taxonomy},
          {"model", c.paths.model},
          {"out", c.paths.out}}},
    };
}

void from_json(const nlohmann::json &j, RunConfig &c) {
    check_keys(j,
               {"seed", "split_n", "folds", "val_fraction", "min_samples", "max_fpr", "optimize_temperature",
                "methods", "parallel", "train", "reject", "ablation", "paths"},
               "run config");
    auto &p = c.protocol;
    c.seed = j.value("seed", c.seed);
    p.top_n = j.value("split_n", p.top_n);
    p.folds = j.value("folds", p.folds);
    p.val_fraction = j.value("val_fraction", p.val_fraction);
    p.min_samples = j.value("min_samples", p.min_samples);
    p.max_fpr = j.value("max_fpr", p.max_fpr);
    p.optimize_temperature = j.value("optimize_temperature", p.optimize_temperature);
    p.parallel = j.value("parallel", p.parallel);
    if (j.contains("methods")) {
        p.methods.clear();
        for (const auto &m : j.at("methods")) {
            p.methods.push_back(parse_method(m.get<std::string>()));
        }
    }
    if (j.contains("train")) {
        nlohmann::json merged = p.train;
        merged.update(j.at("train"));
        p.train = merged.get<TrainConfig>();
    }
    if (j.contains("reject")) {
        nlohmann::json merged = p.reject;
        merged.update(j.at("reject"));
        p.reject = merged.get<RejectConfig>();
    }
    if (j.contains("ablation")) {
        nlohmann::json merged = p.ablation;
        merged.update(j.at("ablation"));
        p.ablation = merged.get<AblationConfig>();
    }
    if (j.contains("paths")) {
        const auto &paths = j.at("paths");
        check_keys(paths, {"train", "test", "taxonomy", "model", "out"}, "run config paths");
        c.paths.train = paths.value("train", c.paths.train);
        c.paths.test = paths.value("test", c.paths.test);
        c.paths.taxonomy = paths.value("taxonomy", c.paths.taxonomy);
        c.paths.model = paths.value("model", c.paths.model);
        c.paths.out = paths.value("out", c.paths.out);
    }
    p.train.seed = c.seed;

    if (p.folds <= 0) {
        throw DataError("run config: folds must be positive");
    }
    if (!(p.val_fraction > 0.0 && p.val_fraction < 1.0)) {
        throw DataError("run config: val_fraction must be in (0, 1)");
    }
    if (!(p.max_fpr > 0.0 && p.max_fpr <= 1.0)) {
        throw DataError("run config: max_fpr must be in (0, 1]");
    }
    if (p.top_n == 0 || p.min_samples < 0) {
        throw DataError("run config: split_n must be positive and min_samples non-negative");
    }
    if (p.methods.empty()) {
        throw DataError("run config: at least one novelty method is required");
    }
    p.reject.validate();
}

nlohmann::json default_run_config_json() { return RunConfig{}; }

void apply_seed_env(RunConfig &config) {
    const char *env = std::getenv("FLOWGATE_SEED");
    if (env == nullptr || *env == '\0') {
        return;
    }
    const std::string s(env);
    std::uint64_t seed = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), seed);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw DataError("FLOWGATE_SEED is not an unsigned integer: '" + s + "'");
    }
    config.seed = seed;
    config.protocol.train.seed = seed;
}

RunConfig load_run_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open config " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception &e) {
        throw DataError("config " + path.string() + ": " + e.what());
    }
    RunConfig c;
    try {
        c = j.get<RunConfig>();
    } catch (const nlohmann::json::exception &e) {
        throw DataError("config " + path.string() + ": " + e.what());
    }
    apply_seed_env(c);
    return c;
}

} // namespace flowgate
