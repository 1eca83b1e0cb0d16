#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "flowgate/flowfile.hpp"
#include "flowgate/synth.hpp"
#include "support.hpp"

using namespace flowgate;
namespace fs = std::filesystem;

namespace {

int run(const std::string &args) {
    const std::string cmd = std::string(FLOWGATE_CLI) + " -q " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string q(const fs::path &p) { return "'" + p.string() + "'"; }

} // namespace

TEST_CASE("cli exit codes") {
    test::ScratchDir dir("cli-codes");
    CHECK(run("") == 1);
    CHECK(run("frobnicate") == 1);
    CHECK(run("synth --out " + q(dir.path()) + " --bogus") == 1);
    CHECK(run("train --epochs 1") == 1);
    CHECK(run("score --model " + q(dir / "none") + " --in " + q(dir / "none.csv")) == 2);
    CHECK(run("default-config") == 0);
    CHECK(run("--help") == 0);
}

TEST_CASE("cli pipeline") {
    test::ScratchDir dir("cli-pipe");
    const auto data = dir / "data";
    REQUIRE(run("synth --out " + q(data) + " --flows 3000 --raw") == 0);
    for (const char *f : {"train.csv", "test.csv", "taxonomy.csv", "capture.csv"}) {
        CHECK(fs::exists(data / f));
    }

    CHECK(run("ingest --in " + q(data / "capture.csv") + " --taxonomy " + q(data / "taxonomy.csv") + " --out " +
              q(dir / "windows")) == 0);
    CHECK(!fs::is_empty(dir / "windows"));

    REQUIRE(run("split --in " + q(data / "train.csv") + " " + q(data / "test.csv") + " --taxonomy " +
                q(data / "taxonomy.csv") + " --n 10 --out " + q(dir / "split.csv")) == 0);
    const auto split = slurp(dir / "split.csv");
    CHECK(split.rfind("SERVICE,GROUP,SET,FLOWS\n", 0) == 0);

    const auto cfg = dir / "c.json";
    std::ofstream(cfg) << R"({"train": {"epochs": 2}, "paths": {"train": ")" << (data / "train.csv").string()
                       << R"(", "taxonomy": ")" << (data / "taxonomy.csv").string() << R"("}})";
    REQUIRE(run("train --config " + q(cfg) + " --split " + q(dir / "split.csv") + " --out " + q(dir / "model")) ==
            0);
    CHECK(fs::exists(dir / "model" / "meta.json"));

    CHECK(run("calibrate --model " + q(dir / "model") + " --method energy --target-fpr 0.1") == 0);
    CHECK(run("calibrate --model " + q(dir / "model")) == 0);
    REQUIRE(run("evaluate --model " + q(dir / "model") + " --test " + q(data / "test.csv") +
                " --method energy --out " + q(dir / "reports")) == 0);
    CHECK(fs::exists(dir / "reports" / "report_classification.csv"));
    CHECK(fs::exists(dir / "reports" / "report_nc.csv"));

    REQUIRE(run("score --model " + q(dir / "model") + " --in " + q(data / "test.csv") + " --out " +
                q(dir / "verdicts.csv")) == 0);
    std::ifstream verdicts(dir / "verdicts.csv");
    std::string line;
    std::getline(verdicts, line);
    CHECK(line == "LABEL_PRED,SCORE,REJECTED");
    std::size_t rows = 0;
    while (std::getline(verdicts, line)) {
        ++rows;
    }
    CHECK(rows == read_flow_file(data / "test.csv").size());

    CHECK(run("report --train " + q(data / "train.csv") + " --test " + q(data / "test.csv") + " --taxonomy " +
              q(data / "taxonomy.csv") + " --folds 1 --epochs 1 --out " + q(dir / "protocol")) == 0);
    CHECK(fs::exists(dir / "protocol" / "report_nc.csv"));
    CHECK(fs::exists(dir / "protocol" / "config.json"));

    std::ofstream(dir / "bad.json") << R"({"trian": {}})";
    CHECK(run("train --config " + q(dir / "bad.json") + " --out " + q(dir / "m2")) == 2);
}
