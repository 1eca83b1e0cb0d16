// Acceptance checks.  Prints one PASS/FAIL line per criterion; with
// arguments, runs only the listed criteria.  Exit status is 0 iff every
// selected criterion passed.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flowgate/eval.hpp"
#include "flowgate/ingest.hpp"
#include "flowgate/reject.hpp"
#include "flowgate/synth.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace flowgate;
using test::MatD;
using test::VecD;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
    std::ostringstream s;
    s.precision(prec);
    s << v;
    return s.str();
}

// --- 1 ---------------------------------------------------------------------

Outcome gradient_oracle() {
    const auto t0 = Clock::now();
    Rng rng(1);
    double worst = 0.0;
    const int configs = 24;
    for (int c = 0; c < configs; ++c) {
        const int in = 2 + static_cast<int>(rng.below(6));
        const int out = 1 + static_cast<int>(rng.below(6));
        const int batch = 2 + static_cast<int>(rng.below(4));

        nn::Linear<double> lin(in, out);
        lin.init(rng);
        worst = std::max(worst, test::check_layer(lin, test::random_matrix(in, batch, rng), nn::Mode::train, rng));

        const int cin = 1 + static_cast<int>(rng.below(3));
        const int kernel = 1 + static_cast<int>(rng.below(5));
        const int stride = 1 + static_cast<int>(rng.below(2));
        const int pad = static_cast<int>(rng.below(static_cast<std::uint64_t>(kernel)));
        const int len = kernel + 2 + static_cast<int>(rng.below(6));
        nn::Conv1d<double> conv(cin, 1 + static_cast<int>(rng.below(4)), kernel, stride, pad, len);
        conv.init(rng);
        worst = std::max(worst,
                         test::check_layer(conv, test::random_matrix(cin, len * batch, rng), nn::Mode::train, rng));

        nn::BatchNorm<double> bn(out);
        bn.params()[0].value->setRandom();
        bn.params()[1].value->setRandom();
        bn.running_mean() = test::random_matrix(out, 1, rng);
        bn.running_var() = test::random_matrix(out, 1, rng).cwiseAbs().array() + 0.5;
        worst = std::max(worst,
                         test::check_layer(bn, test::random_matrix(out, batch + 2, rng, 2.0), nn::Mode::train, rng));
        worst = std::max(worst, test::check_layer(bn, test::random_matrix(out, batch, rng, 2.0), nn::Mode::eval, rng));

        nn::Dropout<double> drop(rng.uniform(0.1, 0.5), rng.next());
        worst = std::max(worst, test::check_layer(drop, test::random_matrix(out, batch, rng), nn::Mode::eval, rng));

        const int k = 2 + static_cast<int>(rng.below(8));
        const VecD logits = test::random_matrix(k, 1, rng, 2.0);
        const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
        worst = std::max(worst, test::check_loss([&](const VecD &z) { return nn::loss_ce<double>(z, y); }, logits));

        std::vector<int> groups(static_cast<std::size_t>(k));
        for (auto &g : groups) {
            g = static_cast<int>(rng.below(3));
        }
        const MatD sim = nn::sim_matrix<double>(groups, rng.uniform(0.0, 0.3));
        const double t = rng.uniform(0.5, 4.0);
        worst = std::max(worst, test::check_loss(
                                    [&](const VecD &z) { return nn::loss_simloss<double>(z, y, sim, t); }, logits));
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-4 && secs < 60.0, "max relative error " + fmt(worst, 3) + " over " + std::to_string(configs) +
                                             " configurations (limit 1e-4), " + fmt(secs, 3) + " s"};
}

// --- 2 ---------------------------------------------------------------------

Outcome score_identities() {
    Rng rng(2);
    double shift = 0.0, uniform = 0.0, factor = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(200));
        const VecD z = test::random_matrix(k, 1, rng, 20.0);
        const double c = rng.uniform(-100.0, 100.0);
        shift = std::max(shift, std::abs(score_energy((z.array() + c).matrix()) - (score_energy(z) - c)));

        const VecD flat = VecD::Constant(k, rng.uniform(-50.0, 50.0));
        uniform = std::max(uniform, std::abs(score_softmax(flat, rng.uniform(0.1, 10.0)) + 1.0 / k));
        uniform = std::max(uniform, std::abs(score_energy(VecD::Zero(k)) + std::log(static_cast<double>(k))));

        const VecD u = test::random_matrix(1 + static_cast<Eigen::Index>(rng.below(20)), 1, rng);
        const VecD v = test::random_matrix(1 + static_cast<Eigen::Index>(rng.below(300)), 1, rng);
        double direct = 0.0;
        for (Eigen::Index i = 0; i < u.size(); ++i) {
            for (Eigen::Index j = 0; j < v.size(); ++j) {
                direct += std::pow(std::abs(u(i) * v(j)), 1.5);
            }
        }
        const double ref = std::pow(direct, 1.0 / 1.5);
        factor = std::max(factor, std::abs(outer_pnorm(u, v, 1.5) - ref) / std::max(1.0, ref));
    }
    const bool ok = shift < 1e-12 && uniform < 1e-12 && factor < 1e-10;
    return {ok, "energy shift " + fmt(shift, 3) + ", uniform-logit values " + fmt(uniform, 3) +
                    ", p-norm factorization " + fmt(factor, 3)};
}

// --- 3 ---------------------------------------------------------------------

Outcome metric_oracles() {
    Rng rng(3);
    int tpr_mismatch = 0;
    double area = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const bool coarse = trial % 4 == 0;
        auto draw = [&](std::size_t n, double mu) {
            std::vector<double> s(n);
            for (auto &x : s) {
                x = rng.normal(mu, 1.0);
                if (coarse) x = std::round(x * 5.0) / 5.0;
            }
            return s;
        };
        const auto k = draw(1 + rng.below(1000), 0.0);
        const auto u = draw(1 + rng.below(1000), rng.uniform(-1.0, 3.0));
        for (double f : {0.01, 0.05, 0.1}) {
            tpr_mismatch += tpr_at_fpr(k, u, f) != test::oracle_tpr(k, u, f) ? 1 : 0;
        }
        for (double g : {0.1, 1.0}) {
            area = std::max(area, std::abs(pauroc(k, u, g) - test::oracle_pauroc(k, u, g)));
        }
    }
    std::vector<double> a(100000), b(100000);
    for (auto &x : a) x = rng.normal();
    for (auto &x : b) x = rng.normal();
    const double chance = pauroc(a, b, 0.1);
    const bool ok = tpr_mismatch == 0 && area < 1e-9 && chance >= 0.47 && chance <= 0.53;
    return {ok, std::to_string(tpr_mismatch) + " TPR mismatches, max area error " + fmt(area, 3) +
                    " on 200 instances; chance pAUROC " + fmt(chance)};
}

// --- 4 ---------------------------------------------------------------------

Outcome trie_oracle() {
    const auto t0 = Clock::now();
    Rng rng(4);
    std::vector<std::string> labels;
    for (int i = 0; i < 40; ++i) {
        labels.push_back(std::string(1, static_cast<char>('a' + i % 26)) + std::to_string(i / 26));
    }
    const std::vector<std::string> tlds{"com", "net", "org", "io"};
    auto name = [&](std::size_t depth) {
        std::string s = tlds[rng.below(tlds.size())];
        for (std::size_t i = 0; i < depth; ++i) {
            s = labels[rng.below(labels.size())] + "." + s;
        }
        return s;
    };
    std::vector<std::pair<std::string, ServiceId>> patterns;
    std::set<std::string> seen;
    SniTrie trie;
    while (patterns.size() < 1000) {
        std::string p = name(1 + rng.below(3));
        if (rng.bernoulli(0.5)) {
            p = "*." + p;
        }
        if (!seen.insert(p).second) {
            continue;
        }
        const ServiceId s = "svc" + std::to_string(patterns.size());
        patterns.emplace_back(p, s);
        trie.insert(p, s);
    }
    int disagreements = 0, matched = 0;
    for (int i = 0; i < 10000; ++i) {
        const auto d = name(1 + rng.below(4));
        const auto expected = test::naive_match(patterns, d);
        disagreements += trie_match(trie, d) != expected ? 1 : 0;
        matched += expected ? 1 : 0;
    }
    const double secs = seconds_since(t0);
    return {disagreements == 0 && secs < 30.0,
            std::to_string(disagreements) + " disagreements on 10000 domains x 1000 patterns (" +
                std::to_string(matched) + " matched), " + fmt(secs, 3) + " s"};
}

// --- 5, 6, 7: synthetic benchmark --------------------------------------------

struct BenchRun {
    FoldResult fold;
    double seconds = 0.0;
};

ProtocolConfig benchmark_protocol() {
    ProtocolConfig pc;
    pc.folds = 1;
    pc.top_n = 10;
    pc.train.epochs = 30;
    pc.train.batch_size = 32;
    pc.train.lr_max = 2e-3;
    pc.train.width_divisor = 4;
    return pc;
}

BenchRun run_benchmark(double drift, const AblationConfig &ablation) {
    const auto t0 = Clock::now();
    BenchmarkOptions bo;
    bo.seed = 42;
    bo.drift = drift;
    const auto b = standard_benchmark(bo);
    std::vector<FlowRecord> flows(b.train);
    flows.insert(flows.end(), b.test.begin(), b.test.end());
    ProtocolConfig pc = benchmark_protocol();
    pc.ablation = ablation;
    auto r = run_protocol(flows, b.taxonomy, pc);
    return {r.folds.at(0), seconds_since(t0)};
}

const NcReport &nc_of(const FoldResult &f, NoveltyMethod m) {
    for (const auto &n : f.nc) {
        if (n.method == m) return n;
    }
    throw DataError("missing novelty report");
}

struct Benchmarks {
    BenchRun base, drift, no_standardize, short_pstats;
    double wall = 0.0;
};

Benchmarks &benchmarks(const std::set<int> &wanted) {
    static Benchmarks b;
    static bool done = false;
    if (done) return b;
    done = true;
    const auto t0 = Clock::now();
    AblationConfig none_std;
    none_std.standardize = false;
    none_std.clip = false;
    AblationConfig p20;
    p20.pstats_limit = 20;
    auto launch = [](double drift, AblationConfig a) {
        return std::async(std::launch::async, run_benchmark, drift, a);
    };
    std::future<BenchRun> f_base, f_drift, f_nostd, f_p20;
    if (wanted.count(5) || wanted.count(7)) f_base = launch(0.0, {});
    if (wanted.count(6)) f_drift = launch(1.0, {});
    if (wanted.count(7)) {
        f_nostd = launch(0.0, none_std);
        f_p20 = launch(0.0, p20);
    }
    if (f_base.valid()) b.base = f_base.get();
    if (f_drift.valid()) b.drift = f_drift.get();
    if (f_nostd.valid()) b.no_standardize = f_nostd.get();
    if (f_p20.valid()) b.short_pstats = f_p20.get();
    b.wall = seconds_since(t0);
    return b;
}

// seed-42 values recorded on the reference build
constexpr double kPinnedAccuracy = 0.985647;
constexpr double kPinnedSuperclass = 0.999529;
constexpr double kPinnedTpr[3] = {0.55, 0.566, 0.588667};  // softmax, energy, gradient at exactly 5% FPR

Outcome standard_benchmark_check(const Benchmarks &b) {
    const auto &f = b.base.fold;
    const auto &c = f.classification;
    const auto &sm = nc_of(f, NoveltyMethod::softmax);
    const auto &en = nc_of(f, NoveltyMethod::energy);
    const auto &gr = nc_of(f, NoveltyMethod::gradient);

    std::vector<std::string> fails;
    if (c.accuracy < 0.95) fails.push_back("accuracy");
    if (c.superclass_accuracy < c.accuracy) fails.push_back("superclass");
    for (const auto *n : {&sm, &en, &gr}) {
        if (n->realized_fpr < 0.035 || n->realized_fpr > 0.065) {
            fails.push_back(std::string(to_string(n->method)) + " FPR");
        }
    }
    if (en.tpr_at_target < 0.80) fails.push_back("energy TPR < 0.80");
    if (gr.tpr_at_target < 0.80) fails.push_back("gradient TPR < 0.80");
    if (!(en.tpr_at_target > sm.tpr_at_target)) fails.push_back("energy <= softmax");
    if (!(gr.tpr_at_target > sm.tpr_at_target)) fails.push_back("gradient <= softmax");
    if (b.wall > 600.0) fails.push_back("runtime");

    const bool pinned = std::abs(c.accuracy - kPinnedAccuracy) < 5e-3 &&
                        std::abs(c.superclass_accuracy - kPinnedSuperclass) < 5e-3 &&
                        std::abs(sm.tpr_at_target - kPinnedTpr[0]) < 0.02 &&
                        std::abs(en.tpr_at_target - kPinnedTpr[1]) < 0.02 &&
                        std::abs(gr.tpr_at_target - kPinnedTpr[2]) < 0.02;
    if (!pinned) fails.push_back("pinned values");

    std::ostringstream d;
    d << "accuracy " << fmt(c.accuracy) << ", superclass " << fmt(c.superclass_accuracy) << "; TPR@5%FPR softmax "
      << fmt(sm.tpr_at_target, 3) << " energy " << fmt(en.tpr_at_target, 3) << " gradient " << fmt(gr.tpr_at_target, 3)
      << "; realized FPR " << fmt(sm.realized_fpr, 3) << "/" << fmt(en.realized_fpr, 3) << "/"
      << fmt(gr.realized_fpr, 3) << "; " << fmt(b.wall, 3) << " s";
    if (!fails.empty()) {
        d << "; failed:";
        for (const auto &s : fails) d << ' ' << s << ';';
    }
    return {fails.empty(), d.str()};
}

Outcome drift_probe(const Benchmarks &b) {
    bool ok = true;
    std::ostringstream d;
    d << "week-2 drift 1.0, target FPR 0.05, realized";
    for (const auto &n : b.drift.fold.nc) {
        ok = ok && n.realized_fpr > n.target_fpr;
        d << ' ' << to_string(n.method) << ' ' << fmt(n.realized_fpr, 3);
    }
    return {ok && !b.drift.fold.nc.empty(), d.str()};
}

Outcome ablation_directions(const Benchmarks &b) {
    const auto &base = b.base.fold;
    const auto &ns = b.no_standardize.fold;
    const double acc_drop = 100.0 * (base.classification.accuracy - ns.classification.accuracy);
    const double en_drop = 100.0 * (nc_of(base, NoveltyMethod::energy).tpr_at_target -
                                    nc_of(ns, NoveltyMethod::energy).tpr_at_target);
    const double gr_drop = 100.0 * (nc_of(base, NoveltyMethod::gradient).tpr_at_target -
                                    nc_of(ns, NoveltyMethod::gradient).tpr_at_target);
    const double p20_change =
        100.0 * std::abs(base.classification.accuracy - b.short_pstats.fold.classification.accuracy);
    const bool ok = en_drop > acc_drop && gr_drop > acc_drop && p20_change < 1.0;
    return {ok, "no standardization: accuracy drop " + fmt(acc_drop, 3) + " pp, energy TPR drop " + fmt(en_drop, 3) +
                    " pp, gradient TPR drop " + fmt(gr_drop, 3) + " pp; pstats_limit 20 accuracy change " +
                    fmt(p20_change, 3) + " pp"};
}

// --- 8 ---------------------------------------------------------------------

int run_cli(const std::string &args) {
    const std::string cmd = std::string(FLOWGATE_CLI) + " -q " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::uint64_t> tree_checksums(const fs::path &root) {
    std::map<std::string, std::uint64_t> out;
    for (const auto &e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) {
            out[fs::relative(e.path(), root).string()] = file_checksum(e.path());
        }
    }
    return out;
}

Outcome determinism() {
    test::ScratchDir dir("acceptance-determinism");
    const auto q = [](const fs::path &p) { return "'" + p.string() + "'"; };
    const auto data = dir / "data";
    if (run_cli("synth --out " + q(data) + " --flows 4000") != 0) {
        return {false, "synth failed"};
    }
    for (const char *m : {"m1", "m2"}) {
        const int t = run_cli("--deterministic train --train " + q(data / "train.csv") + " --taxonomy " +
                              q(data / "taxonomy.csv") + " --epochs 3 --out " + q(dir / m));
        const int e = run_cli("--deterministic evaluate --model " + q(dir / m) + " --test " + q(data / "test.csv"));
        if (t != 0 || e != 0) {
            return {false, std::string("train/evaluate failed for ") + m};
        }
    }
    const auto a = tree_checksums(dir / "m1");
    const auto b = tree_checksums(dir / "m2");
    std::size_t reports = 0;
    for (const auto &[name, sum] : a) {
        reports += name.rfind("reports", 0) == 0 ? 1 : 0;
    }
    return {a == b && !a.empty() && reports > 0,
            std::to_string(a.size()) + " files (" + std::to_string(reports) + " reports) compared, " +
                (a == b ? "byte-identical" : "differences found")};
}

// --- 9 ---------------------------------------------------------------------

Outcome sampler_arithmetic() {
    Sampler s;
    s.set_ratio("svc", 15);
    int kept = 0;
    for (int i = 0; i < 45; ++i) {
        kept += sampler_decide(s, "svc") ? 1 : 0;
    }
    std::vector<double> scores(100);
    std::iota(scores.begin(), scores.end(), 1.0);
    const double thr = calibrate_threshold(scores, 0.05);
    const auto rejected = std::count_if(scores.begin(), scores.end(), [&](double x) { return x > thr; });
    return {kept == 3 && rejected == 5,
            "1:15 on 45 flows kept " + std::to_string(kept) + "; 5% rule on 1..100 rejects " + std::to_string(rejected)};
}

} // namespace

int main(int argc, char **argv) {
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) {
        wanted.insert(std::atoi(argv[i]));
    }
    if (wanted.empty()) {
        wanted = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    }
    const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria{
        {1, {"gradient oracle", gradient_oracle}},
        {2, {"score identities", score_identities}},
        {3, {"metric oracle equivalence", metric_oracles}},
        {4, {"trie oracle", trie_oracle}},
        {5, {"standard synthetic benchmark", [&] { return standard_benchmark_check(benchmarks(wanted)); }}},
        {6, {"calibration drift probe", [&] { return drift_probe(benchmarks(wanted)); }}},
        {7, {"ablation directions", [&] { return ablation_directions(benchmarks(wanted)); }}},
        {8, {"determinism", determinism}},
        {9, {"sampler arithmetic", sampler_arithmetic}},
    };
    int failed = 0;
    for (int id : wanted) {
        const auto it = criteria.find(id);
        if (it == criteria.end()) {
            std::cerr << "unknown criterion " << id << '\n';
            return 2;
        }
        Outcome o;
        try {
            o = it->second.second();
        } catch (const std::exception &e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << " (" << it->second.first
                  << "): " << o.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
