#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "flowgate/config.hpp"
#include "support.hpp"

using namespace flowgate;

namespace {

std::filesystem::path write_config(const test::ScratchDir &dir, const std::string &text) {
    const auto p = dir / "c.json";
    std::ofstream(p) << text;
    return p;
}

struct SeedEnv {
    explicit SeedEnv(const char *value) { ::setenv("FLOWGATE_SEED", value, 1); }
    ~SeedEnv() { ::unsetenv("FLOWGATE_SEED"); }
};

} // namespace

TEST_CASE("run config defaults") {
    const RunConfig c;
    CHECK(c.seed == 42);
    CHECK(c.protocol.top_n == 100);
    CHECK(c.protocol.folds == 10);
    CHECK(c.protocol.train.epochs == 60);
    CHECK(c.protocol.train.lr_base == 1e-4);
    CHECK(c.protocol.train.adamw.weight_decay == 1e-2);
    CHECK(c.protocol.train.dropout == 0.2);
    CHECK(c.protocol.reject.temperature == 3.0);
    CHECK(c.protocol.reject.p == 1.5);
    CHECK(c.protocol.reject.alpha == 0.075);

    const auto j = default_run_config_json();
    for (const char *key : {"seed", "split_n", "train", "reject", "ablation", "paths"}) {
        CHECK(j.contains(key));
    }
    const auto back = j.get<RunConfig>();
    CHECK(nlohmann::json(back) == j);
}

TEST_CASE("run config parsing") {
    test::ScratchDir dir("config");
    ::unsetenv("FLOWGATE_SEED");

    SUBCASE("partial documents fill in defaults") {
        const auto c = load_run_config(write_config(dir, R"({"seed": 7, "train": {"epochs": 3}})"));
        CHECK(c.seed == 7);
        CHECK(c.protocol.train.seed == 7);
        CHECK(c.protocol.train.epochs == 3);
        CHECK(c.protocol.train.batch_size == TrainConfig{}.batch_size);
    }
    SUBCASE("unknown keys are rejected at every level") {
        CHECK_THROWS_AS(load_run_config(write_config(dir, R"({"sede": 7})")), DataError);
        CHECK_THROWS_AS(load_run_config(write_config(dir, R"({"train": {"epoch": 3}})")), DataError);
        CHECK_THROWS_AS(load_run_config(write_config(dir, R"({"reject": {"temp": 3}})")), DataError);
        CHECK_THROWS_AS(load_run_config(write_config(dir, R"({"paths": {"tarin": "x"}})")), DataError);
    }
    SUBCASE("invalid values") {
        CHECK_THROWS_AS(load_run_config(write_config(dir, R"({"folds": 0})")), DataError);
        CHECK_THROWS_AS(load_run_config(write_config(dir, R"({"methods": ["entropy"]})")), DataError);
        CHECK_THROWS_AS(load_run_config(write_config(dir, "{not json")), DataError);
        CHECK_THROWS_AS(load_run_config(dir / "missing.json"), DataError);
    }
    SUBCASE("FLOWGATE_SEED overrides the file") {
        const SeedEnv env("1234");
        const auto c = load_run_config(write_config(dir, R"({"seed": 7})"));
        CHECK(c.seed == 1234);
        CHECK(c.protocol.train.seed == 1234);
    }
    SUBCASE("malformed FLOWGATE_SEED") {
        const SeedEnv env("12x");
        RunConfig c;
        CHECK_THROWS_AS(apply_seed_env(c), DataError);
    }
}
