#include <doctest.h>

#include <cmath>
#include <numeric>

#include "flowgate/model.hpp"
#include "flowgate/preprocess.hpp"
#include "flowgate/reject.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace flowgate;
using test::VecD;

namespace {

VecD vec(std::initializer_list<double> v) {
    VecD out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) {
        out(i++) = x;
    }
    return out;
}

/// Untrained three-class model over random flows.
Model small_model(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<FlowRecord> flows;
    for (int i = 0; i < 50; ++i) {
        flows.push_back(test::random_record(rng));
    }
    ServiceTaxonomy tax;
    tax.add_service("a1", "a");
    tax.add_service("a2", "a");
    tax.add_service("b1", "b");
    nn::NetTopology topo = nn::NetTopology::standard(3, 8);
    return Model(Net(topo, seed), fit_scalers(flows, {}), {}, tax, {"a1", "a2", "b1"});
}

} // namespace

TEST_CASE("softmax score") {
    CHECK(score_softmax(VecD::Zero(4), 1.0) == doctest::Approx(-0.25));
    CHECK(score_softmax(VecD::Constant(7, 2.5), 3.0) == doctest::Approx(-1.0 / 7.0));
    CHECK(score_softmax(vec({100.0, 0.0, 0.0}), 1.0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(RejectConfig{}.temperature == 3.0);
}

TEST_CASE("softmax score ranking is temperature invariant for proportional logits") {
    Rng rng(40);
    for (int trial = 0; trial < 50; ++trial) {
        const VecD z = test::random_matrix(6, 1, rng, 2.0);
        const VecD sharper = 1.7 * z;
        for (double t : {0.3, 1.0, 3.0, 10.0}) {
            CHECK(score_softmax(sharper, t) < score_softmax(z, t));
        }
    }
}

TEST_CASE("energy score") {
    CHECK(score_energy(VecD::Zero(100)) == doctest::Approx(-std::log(100.0)).epsilon(1e-12));
    CHECK(score_energy(VecD::Zero(100)) == doctest::Approx(-4.6052).epsilon(1e-4));
    Rng rng(41);
    for (int trial = 0; trial < 200; ++trial) {
        const VecD z = test::random_matrix(10, 1, rng, 150.0).cwiseMax(-500.0).cwiseMin(500.0);
        const double c = rng.uniform(-50.0, 50.0);
        CHECK(std::abs(score_energy((z.array() + c).matrix()) - (score_energy(z) - c)) < 1e-12);

        // naive oracle in extended precision
        long double acc = 0.0L;
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            acc += std::exp(static_cast<long double>(z(i)));
        }
        const double naive = -static_cast<double>(std::log(acc));
        CHECK(std::abs(score_energy(z) - naive) <= 1e-12 * std::max(1.0, std::abs(naive)));
    }
}

TEST_CASE("outer product p-norm") {
    Rng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        const VecD u = test::random_matrix(5, 1, rng);
        const VecD v = test::random_matrix(7, 1, rng);
        double direct = 0.0;
        for (Eigen::Index i = 0; i < u.size(); ++i) {
            for (Eigen::Index j = 0; j < v.size(); ++j) {
                direct += std::pow(std::abs(u(i) * v(j)), 1.5);
            }
        }
        CHECK(outer_pnorm(u, v, 1.5) == doctest::Approx(std::pow(direct, 1.0 / 1.5)).epsilon(1e-12));
    }
}

TEST_CASE("gradient score") {
    const std::vector<int> groups{0, 0, 1};
    const auto sim = nn::sim_matrix<double>(groups, 0.075);
    const VecD h = vec({0.5, 1.0, 2.0, 0.0});

    SUBCASE("confident prediction scores near zero") {
        CHECK(score_gradient(vec({60.0, 0.0, 0.0}), h, sim, 1.0, 1.5) < 1e-20);
    }
    SUBCASE("non-negative, zero iff dL/dlogits vanishes") {
        Rng rng(43);
        for (int trial = 0; trial < 50; ++trial) {
            const VecD z = test::random_matrix(3, 1, rng, 3.0);
            const double s = score_gradient(z, h, sim, 3.0, 1.5);
            CHECK(s >= 0.0);
            CHECK((s == 0.0) == gradient_score_dlogits(z, sim, 3.0).isZero(0.0));
        }
        CHECK(score_gradient(vec({1.0, 0.0, 0.0}), VecD::Zero(4), sim, 3.0, 1.5) == 0.0);
    }
    SUBCASE("dlogits is the SimLoss gradient against the predicted class") {
        const VecD z = vec({0.3, 1.2, -0.4});
        const auto ref = nn::loss_simloss<double>(z, 1, sim, 3.0);
        CHECK((gradient_score_dlogits(z, sim, 3.0) - ref.grad).cwiseAbs().maxCoeff() < 1e-15);
        CHECK(score_gradient(z, h, sim, 3.0, 1.5) == doctest::Approx(outer_pnorm(ref.grad, h, 1.5)));
    }
    SUBCASE("same-group confusion scores lower than cross-group confusion") {
        const double t = 3.0;
        const VecD z = vec({t * std::log(0.70), t * std::log(0.25), t * std::log(0.05)});
        const auto same = nn::sim_matrix<double>(std::vector<int>{0, 0, 1}, 0.075);
        const auto cross = nn::sim_matrix<double>(std::vector<int>{0, 1, 0}, 0.075);
        CHECK(score_gradient(z, h, same, t, 1.5) < score_gradient(z, h, cross, t, 1.5));
    }
}

TEST_CASE("threshold calibration") {
    std::vector<double> s(100);
    std::iota(s.begin(), s.end(), 1.0);
    const double thr = calibrate_threshold(s, 0.05);
    CHECK(std::count_if(s.begin(), s.end(), [&](double x) { return x > thr; }) == 5);

    const std::vector<double> flat(50, 2.0);
    CHECK(calibrate_threshold(flat, 0.05) == 2.0);
    CHECK(std::count_if(flat.begin(), flat.end(), [](double x) { return x > 2.0; }) == 0);

    CHECK_THROWS_AS(calibrate_threshold(std::vector<double>(19, 1.0), 0.05), DataError);
    CHECK(RejectConfig{}.target_fpr == 0.05);
}

TEST_CASE("calibrated threshold holds its FPR on i.i.d. data") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        std::vector<double> cal(4000), held(4000);
        for (auto &x : cal) x = rng.normal();
        for (auto &x : held) x = rng.normal();
        const double thr = calibrate_threshold(cal, 0.05);
        const double fpr =
            static_cast<double>(std::count_if(held.begin(), held.end(), [&](double x) { return x > thr; })) /
            static_cast<double>(held.size());
        CHECK(std::abs(fpr - 0.05) <= 0.015);
    }
}

TEST_CASE("reject config validation and JSON") {
    RejectConfig c;
    c.temperature = 0.0;
    CHECK_THROWS_AS(c.validate(), DataError);
    c = {};
    c.p = 0.5;
    CHECK_THROWS_AS(c.validate(), DataError);
    c = {};
    c.target_fpr = 1.0;
    CHECK_THROWS_AS(c.validate(), DataError);

    c = {};
    c.method = NoveltyMethod::energy;
    c.threshold = -3.25;
    const nlohmann::json j = c;
    const auto back = j.get<RejectConfig>();
    CHECK(back.method == NoveltyMethod::energy);
    CHECK(back.threshold == -3.25);
    CHECK(parse_method("gradient") == NoveltyMethod::gradient);
    CHECK_THROWS_AS(parse_method("entropy"), DataError);
}

TEST_CASE("predict_with_reject") {
    const Model model = small_model(3);
    Rng rng(44);
    std::vector<FlowRecord> flows;
    for (int i = 0; i < 40; ++i) {
        flows.push_back(test::random_record(rng));
    }
    const auto fv = model.features(flows);

    for (auto method : kAllMethods) {
        RejectConfig cfg;
        cfg.method = method;
        CHECK_THROWS_AS(predict_with_reject(model, fv[0], cfg), DataError);

        const auto scores = novelty_scores(model, fv, cfg);
        cfg.threshold = calibrate_threshold(scores, 0.25);
        const auto batch = predict_with_reject(model, fv, cfg);
        const auto predicted = model.predict(fv);
        for (std::size_t i = 0; i < fv.size(); ++i) {
            const auto one = predict_with_reject(model, fv[i], cfg);
            CHECK(one.score == doctest::Approx(batch[i].score).epsilon(1e-12));
            CHECK(one.rejected == batch[i].rejected);
            CHECK(batch[i].rejected == (batch[i].score > *cfg.threshold));
            CHECK(batch[i].predicted_index == predicted[i]);
            CHECK(batch[i].predicted == model.classes()[static_cast<std::size_t>(predicted[i])]);
            CHECK(batch[i].threshold_used == *cfg.threshold);
        }
        if (method == NoveltyMethod::gradient) {
            for (std::size_t i = 0; i < 5; ++i) {
                CHECK(score_gradient(model, fv[i], cfg) == doctest::Approx(scores[i]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("gradient scoring leaves the model untouched") {
    Model model = small_model(5);
    Rng rng(45);
    std::vector<FlowRecord> flows;
    for (int i = 0; i < 10; ++i) {
        flows.push_back(test::random_record(rng));
    }
    const auto fv = model.features(flows);
    std::vector<Eigen::MatrixXd> before;
    for (auto *t : model.net().state()) {
        before.push_back(*t);
    }
    RejectConfig cfg;
    novelty_scores(model, fv, cfg);
    score_gradient(model, fv[0], cfg);
    std::size_t k = 0;
    for (auto *t : model.net().state()) {
        CHECK(*t == before[k++]);
    }
}
