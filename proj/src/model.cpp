#include "flowgate/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include "flowgate/flowfile.hpp"
#include "flowgate/nn/loss.hpp"
#include "flowgate/rng.hpp"

namespace flowgate {

namespace {

void reject_unknown_keys(const nlohmann::json &j, const std::vector<std::string> &keys, const char *what) {
    if (!j.is_object()) {
        throw DataError(std::string(what) + ": expected an object");
    }
    for (const auto &[k, v] : j.items()) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
            throw DataError(std::string(what) + ": unknown key '" + k + "'");
        }
    }
}

double max_abs(const Eigen::MatrixXd &m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

} // namespace

void to_json(nlohmann::json &j, const TrainConfig &c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"epoch_subset", c.epoch_subset},
                       {"batch_size", c.batch_size},
                       {"lr_base", c.lr_base},
                       {"lr_max", c.lr_max},
                       {"cycle_epochs", c.cycle_epochs},
                       {"beta1", c.adamw.beta1},
                       {"beta2", c.adamw.beta2},
                       {"eps", c.adamw.eps},
                       {"weight_decay", c.adamw.weight_decay},
                       {"dropout", c.dropout},
                       {"width_divisor", c.width_divisor},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json &j, TrainConfig &c) {
    reject_unknown_keys(j,
                                     {"epochs", "epoch_subset", "batch_size", "lr_base", "lr_max", "cycle_epochs",
                                      "beta1", "beta2", "eps", "weight_decay", "dropout", "width_divisor", "seed"},
                                     "train config");
    c.epochs = j.value("epochs", c.epochs);
    c.epoch_subset = j.value("epoch_subset", c.epoch_subset);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_base = j.value("lr_base", c.lr_base);
    c.lr_max = j.value("lr_max", c.lr_max);
    c.cycle_epochs = j.value("cycle_epochs", c.cycle_epochs);
    c.adamw.beta1 = j.value("beta1", c.adamw.beta1);
    c.adamw.beta2 = j.value("beta2", c.adamw.beta2);
    c.adamw.eps = j.value("eps", c.adamw.eps);
    c.adamw.weight_decay = j.value("weight_decay", c.adamw.weight_decay);
    c.dropout = j.value("dropout", c.dropout);
    c.width_divisor = j.value("width_divisor", c.width_divisor);
    c.seed = j.value("seed", c.seed);
    if (c.epochs <= 0 || c.batch_size < 2 || c.epoch_subset == 0 || c.cycle_epochs <= 0) {
        throw DataError("train config: epochs, epoch_subset, cycle_epochs must be positive and batch_size >= 2");
    }
    if (c.width_divisor != 1 && c.width_divisor != 2 && c.width_divisor != 4) {
        throw DataError("train config: width_divisor must be 1, 2 or 4");
    }
}

namespace nn {

void to_json(nlohmann::json &j, const NetTopology &t) {
    nlohmann::json convs = nlohmann::json::array();
    for (const auto &c : t.convs) {
        convs.push_back({{"filters", c.filters}, {"kernel", c.kernel}, {"stride", c.stride}, {"padding", c.padding}});
    }
    j = nlohmann::json{{"in_channels", t.in_channels},   {"seq_len", t.seq_len},
                       {"flow_features", t.flow_features}, {"convs", convs},
                       {"pstats_linear", t.pstats_linear}, {"flow_linears", t.flow_linears},
                       {"trunk", t.trunk},                 {"dropout", t.dropout},
                       {"num_classes", t.num_classes}};
}

void from_json(const nlohmann::json &j, NetTopology &t) {
    t.in_channels = j.at("in_channels").get<int>();
    t.seq_len = j.at("seq_len").get<int>();
    t.flow_features = j.at("flow_features").get<int>();
    t.convs.clear();
    for (const auto &c : j.at("convs")) {
        t.convs.push_back({c.at("filters").get<int>(), c.at("kernel").get<int>(), c.at("stride").get<int>(),
                           c.at("padding").get<int>()});
    }
    t.pstats_linear = j.at("pstats_linear").get<int>();
    t.flow_linears = j.at("flow_linears").get<std::vector<int>>();
    t.trunk = j.at("trunk").get<std::vector<int>>();
    t.dropout = j.at("dropout").get<double>();
    t.num_classes = j.at("num_classes").get<int>();
}

} // namespace nn

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
    if (predicted.size() != labels.size() || labels.empty()) {
        throw std::invalid_argument("accuracy: size mismatch or empty input");
    }
    std::size_t ok = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ok += predicted[i] == labels[i] ? 1 : 0;
    }
    return static_cast<double>(ok) / static_cast<double>(labels.size());
}

namespace {

std::vector<int> argmax_columns(const Eigen::MatrixXd &logits) {
    std::vector<int> out(static_cast<std::size_t>(logits.cols()));
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        Eigen::Index k;
        logits.col(j).maxCoeff(&k);
        out[static_cast<std::size_t>(j)] = static_cast<int>(k);
    }
    return out;
}

Net::Output infer_net(const Net &net, std::span<const FeatureVector> features, std::size_t batch) {
    Net::Output out;
    const auto n = static_cast<Eigen::Index>(features.size());
    out.logits.resize(net.topology().num_classes, n);
    out.penultimate.resize(net.topology().penultimate_size(), n);
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < features.size(); start += batch) {
        const std::size_t end = std::min(features.size(), start + batch);
        idx.resize(end - start);
        for (std::size_t i = start; i < end; ++i) {
            idx[i - start] = i;
        }
        const auto b = make_batch(features, idx);
        auto o = net.infer(b.pstats, b.flowstats);
        out.logits.middleCols(static_cast<Eigen::Index>(start), o.logits.cols()) = o.logits;
        out.penultimate.middleCols(static_cast<Eigen::Index>(start), o.penultimate.cols()) = o.penultimate;
    }
    return out;
}

} // namespace

TrainResult train_network(const LabeledSet &train, const LabeledSet *val, const nn::NetTopology &topology,
                          const TrainConfig &config, const std::function<void(const EpochLog &)> &on_epoch) {
    if (train.size() < 2 || train.labels.size() != train.features.size()) {
        throw DataError("train: need at least two labeled training samples");
    }
    for (int y : train.labels) {
        if (y < 0 || y >= topology.num_classes) {
            throw DataError("train: label outside the known classes");
        }
    }
    nn::NetTopology topo = topology;
    topo.dropout = config.dropout;

    Rng rng(config.seed);
    TrainResult result{Net(topo, rng.derive_seed()), {}, -1, -1.0};
    Net &net = result.net;
    std::optional<Net> best;

    nn::AdamW<double> opt(net.params(), config.adamw);

    const std::size_t subset = std::min(train.size(), config.epoch_subset);
    const std::size_t bs = static_cast<std::size_t>(config.batch_size);
    const std::size_t steps_per_epoch = (subset + bs - 1) / bs;
    const long steps_per_cycle = static_cast<long>(steps_per_epoch) * config.cycle_epochs;

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    long global_step = 0;
    Eigen::MatrixXd dlogits;
    std::vector<int> labels;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        // partial Fisher-Yates: the first `subset` entries become the sample
        for (std::size_t i = 0; i < subset; ++i) {
            std::swap(order[i], order[i + rng.below(order.size() - i)]);
        }
        double loss_sum = 0.0;
        std::size_t loss_n = 0;
        double lr = config.lr_base;
        for (std::size_t start = 0; start < subset; start += bs) {
            const std::size_t end = std::min(subset, start + bs);
            if (end - start < 2) {
                continue;  // batch statistics need two samples
            }
            std::span<const std::size_t> idx(order.data() + start, end - start);
            const auto batch = make_batch(train.features, idx);
            labels.resize(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) {
                labels[i] = train.labels[idx[i]];
            }
            const auto logits = net.forward(batch.pstats, batch.flowstats, nn::Mode::train);
            const double loss = nn::loss_ce_batch<double>(logits, labels, dlogits);
            if (!std::isfinite(loss)) {
                std::ostringstream msg;
                msg << "training diverged: epoch " << epoch << ", step " << global_step << ", lr " << lr
                    << ", loss " << loss << ", max |logit| " << max_abs(logits);
                throw TrainingDiverged(msg.str());
            }
            net.backward(dlogits);
            lr = nn::cyclic_lr(global_step, steps_per_cycle, config.lr_base, config.lr_max);
            try {
                opt.step(lr);
            } catch (const std::runtime_error &e) {
                std::ostringstream msg;
                msg << "training diverged: epoch " << epoch << ", step " << global_step << ": " << e.what();
                throw TrainingDiverged(msg.str());
            }
            ++global_step;
            loss_sum += loss * static_cast<double>(idx.size());
            loss_n += idx.size();
        }

        EpochLog log{epoch, loss_n ? loss_sum / static_cast<double>(loss_n) : 0.0, 0.0, lr};
        if (val && val->size() > 0) {
            const auto out = infer_net(net, val->features, 1024);
            log.val_accuracy = accuracy(argmax_columns(out.logits), val->labels);
            if (log.val_accuracy > result.best_val_accuracy) {
                result.best_val_accuracy = log.val_accuracy;
                result.best_epoch = epoch;
                best = net;
            }
        }
        result.history.push_back(log);
        if (on_epoch) {
            on_epoch(log);
        }
    }
    if (best) {
        result.net = std::move(*best);
    } else {
        result.best_epoch = config.epochs - 1;
    }
    return result;
}

Model::Model(Net net, ScalerParams scalers, AblationConfig ablation, ServiceTaxonomy taxonomy,
             std::vector<ServiceId> classes)
    : net_(std::move(net)),
      scalers_(std::move(scalers)),
      ablation_(ablation),
      taxonomy_(std::move(taxonomy)),
      classes_(std::move(classes)) {
    if (static_cast<int>(classes_.size()) != net_.topology().num_classes) {
        throw DataError("model: class list does not match the output layer");
    }
    for (const auto &c : classes_) {
        if (!taxonomy_.contains(c)) {
            throw DataError("model: class '" + c + "' is not in the taxonomy");
        }
    }
}

int Model::class_index(const ServiceId &service) const {
    auto it = std::find(classes_.begin(), classes_.end(), service);
    return it == classes_.end() ? -1 : static_cast<int>(it - classes_.begin());
}

std::vector<int> Model::class_groups() const {
    std::vector<GroupId> seen;
    std::vector<int> out;
    for (const auto &c : classes_) {
        const auto &g = taxonomy_.group_of(c);
        auto it = std::find(seen.begin(), seen.end(), g);
        if (it == seen.end()) {
            seen.push_back(g);
            out.push_back(static_cast<int>(seen.size()) - 1);
        } else {
            out.push_back(static_cast<int>(it - seen.begin()));
        }
    }
    return out;
}

void Model::set_temperature(double t) {
    if (!(t > 0.0) || !std::isfinite(t)) {
        throw DataError("model: temperature must be positive");
    }
    temperature_ = t;
}

FeatureVector Model::features(const FlowRecord &record) const { return transform(record, scalers_, ablation_); }

std::vector<FeatureVector> Model::features(std::span<const FlowRecord> records) const {
    return transform_all(records, scalers_, ablation_);
}

Net::Output Model::infer(std::span<const FeatureVector> features, std::size_t batch) const {
    return infer_net(net_, features, batch);
}

std::vector<int> Model::predict(std::span<const FeatureVector> features) const {
    return argmax_columns(infer(features).logits);
}

LabeledSet make_labeled_set(std::span<const FlowRecord> records, const Model &model) {
    LabeledSet set;
    for (const auto &r : records) {
        if (!r.label) {
            continue;
        }
        const int k = model.class_index(*r.label);
        if (k < 0) {
            continue;
        }
        set.features.push_back(model.features(r));
        set.labels.push_back(k);
    }
    return set;
}

double temperature_nll(const Eigen::MatrixXd &logits, std::span<const int> labels, double t) {
    if (static_cast<std::size_t>(logits.cols()) != labels.size() || labels.empty()) {
        throw std::invalid_argument("temperature_nll: size mismatch or empty input");
    }
    double total = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        const Eigen::VectorXd z = logits.col(j) / t;
        total += nn::log_sum_exp(z) - z(labels[static_cast<std::size_t>(j)]);
    }
    return total / static_cast<double>(labels.size());
}

double fit_temperature(const Eigen::MatrixXd &logits, std::span<const int> labels,
                       const FitTemperatureOptions &options) {
    if (!options.optimize) {
        return options.configured;
    }
    const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = std::log(options.lo);
    double b = std::log(options.hi);
    auto f = [&](double u) { return temperature_nll(logits, labels, std::exp(u)); };
    double c = b - invphi * (b - a);
    double d = a + invphi * (b - a);
    double fc = f(c);
    double fd = f(d);
    while (b - a > options.tol) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d);
        }
    }
    return std::exp((a + b) / 2.0);
}

namespace {

void write_le_doubles(std::ostream &out, const Eigen::MatrixXd &m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            auto bits = std::bit_cast<std::uint64_t>(m(i, j));
            unsigned char bytes[8];
            for (int b = 0; b < 8; ++b) {
                bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
            }
            out.write(reinterpret_cast<const char *>(bytes), 8);
        }
    }
}

void read_le_doubles(std::istream &in, Eigen::MatrixXd &m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            unsigned char bytes[8];
            if (!in.read(reinterpret_cast<char *>(bytes), 8)) {
                throw DataError("params.bin: truncated file");
            }
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) {
                bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
            }
            m(i, j) = std::bit_cast<double>(bits);
        }
    }
}

void write_json(const std::filesystem::path &path, const nlohmann::json &j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path &path) {
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

} // namespace

void save_bundle(const Model &model, const std::filesystem::path &dir) {
    std::filesystem::create_directories(dir);
    Net net = model.net();  // state() needs mutable access

    nlohmann::json topo = model.net().topology();
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    const auto params = net.params();
    const auto buffers = net.buffers();
    for (const auto &p : params) {
        tensors.push_back({{"name", p.name}, {"rows", p.value->rows()}, {"cols", p.value->cols()},
                           {"offset", offset}, {"trainable", true}});
        offset += static_cast<std::size_t>(p.value->size());
    }
    for (std::size_t i = 0; i < buffers.size(); ++i) {
        tensors.push_back({{"name", "batchnorm." + std::to_string(i / 2) + (i % 2 ? ".running_var" : ".running_mean")},
                           {"rows", buffers[i]->rows()},
                           {"cols", buffers[i]->cols()},
                           {"offset", offset},
                           {"trainable", false}});
        offset += static_cast<std::size_t>(buffers[i]->size());
    }
    topo["tensors"] = tensors;
    topo["params_layout"] = "float64 little-endian, row-major, offsets in elements";
    topo["trainable_params"] = nn::param_count(model.net().topology());
    write_json(dir / "topology.json", topo);

    std::ofstream bin(dir / "params.bin", std::ios::binary);
    if (!bin) {
        throw DataError("cannot write params.bin");
    }
    for (auto *m : net.state()) {
        write_le_doubles(bin, *m);
    }
    bin.close();

    write_json(dir / "scalers.json", model.scalers());
    write_taxonomy(dir / "taxonomy.csv", model.taxonomy());

    nlohmann::json meta = model.meta();
    meta["classes"] = model.classes();
    meta["temperature"] = model.temperature();
    meta["ablation"] = model.ablation();
    write_json(dir / "meta.json", meta);
}

Model load_bundle(const std::filesystem::path &dir) {
    const auto topo_json = read_json(dir / "topology.json");
    nn::NetTopology topo;
    try {
        topo = topo_json.get<nn::NetTopology>();
    } catch (const nlohmann::json::exception &e) {
        throw DataError(std::string("topology.json: ") + e.what());
    }
    Net net(topo, 0);
    std::ifstream bin(dir / "params.bin", std::ios::binary);
    if (!bin) {
        throw DataError("cannot open params.bin");
    }
    for (auto *m : net.state()) {
        read_le_doubles(bin, *m);
    }
    if (bin.peek() != std::char_traits<char>::eof()) {
        throw DataError("params.bin: trailing data");
    }
    const auto scalers = read_json(dir / "scalers.json").get<ScalerParams>();
    auto taxonomy = read_taxonomy(dir / "taxonomy.csv");
    auto meta = read_json(dir / "meta.json");
    Model model(std::move(net), scalers, meta.at("ablation").get<AblationConfig>(), std::move(taxonomy),
                meta.at("classes").get<std::vector<ServiceId>>());
    model.set_temperature(meta.at("temperature").get<double>());
    meta.erase("classes");
    meta.erase("temperature");
    meta.erase("ablation");
    model.meta() = meta;
    return model;
}

} // namespace flowgate

namespace flowgate {

TrainedModel train_model(std::span<const FlowRecord> train, std::span<const FlowRecord> val,
                         const std::vector<ServiceId> &classes, const ServiceTaxonomy &taxonomy,
                         const AblationConfig &ablation, const TrainConfig &config,
                         const std::function<void(const EpochLog &)> &on_epoch) {
    if (classes.size() < 2) {
        throw DataError("train: need at least two known classes");
    }
    std::vector<FlowRecord> known;
    for (const auto &r : train) {
        if (r.label && std::find(classes.begin(), classes.end(), *r.label) != classes.end()) {
            known.push_back(r);
        }
    }
    auto scalers = fit_scalers(known, ablation, "train");
    const auto topology = nn::NetTopology::standard(static_cast<int>(classes.size()), config.width_divisor);
    Model shell(Net(topology, 0), scalers, ablation, taxonomy, classes);
    const LabeledSet train_set = make_labeled_set(known, shell);
    const LabeledSet val_set = make_labeled_set(val, shell);

    auto result = train_network(train_set, val_set.size() ? &val_set : nullptr, topology, config, on_epoch);
    TrainedModel out{Model(std::move(result.net), std::move(scalers), ablation, taxonomy, classes),
                     std::move(result.history), result.best_epoch, result.best_val_accuracy};
    out.model.meta()["train"] = config;
    out.model.meta()["seed"] = config.seed;
    out.model.meta()["best_epoch"] = out.best_epoch;
    out.model.meta()["best_val_accuracy"] = out.best_val_accuracy;
    return out;
}

} // namespace flowgate
