#include <doctest.h>

#include <cmath>
#include <set>

#include "flowgate/eval.hpp"
#include "flowgate/ingest.hpp"
#include "flowgate/synth.hpp"
#include "support.hpp"

using namespace flowgate;

namespace {

std::map<ServiceId, std::int64_t> count_flows(const Benchmark &b) {
    std::map<ServiceId, std::int64_t> counts;
    for (const auto *part : {&b.train, &b.test}) {
        for (const auto &r : *part) {
            ++counts[*r.label];
        }
    }
    return counts;
}

} // namespace

TEST_CASE("standard benchmark layout") {
    const auto b = standard_benchmark();
    CHECK(b.profiles.size() == 14);
    CHECK(b.taxonomy.services().size() == 14);
    CHECK(b.taxonomy.groups().size() == 5);
    CHECK(b.train.size() + b.test.size() == 20000);

    const auto counts = count_flows(b);
    for (const auto &s : b.taxonomy.services()) {
        CHECK(counts.at(s) >= 100);
    }

    const auto split = build_split(b.taxonomy, counts, 10);
    CHECK(split.known_count == 10);
    CHECK(split.split.unknown.size() == 4);

    std::set<int> known_templates, unknown_templates;
    for (const auto &p : b.profiles) {
        (split.split.known.count(p.name) ? known_templates : unknown_templates).insert(p.template_id);
    }
    for (int t : unknown_templates) {
        CHECK(known_templates.count(t) == 0);
    }
    for (const auto &g : b.taxonomy.groups()) {
        std::set<bool> sides;
        for (const auto &s : b.taxonomy.members(g)) {
            sides.insert(split.split.known.count(s) != 0);
        }
        CHECK(sides.size() == 1);
    }

    for (const auto &r : b.train) {
        CHECK(week_of(r.window_ts) == 1);
    }
    for (const auto &r : b.test) {
        CHECK(week_of(r.window_ts) == 2);
    }
}

TEST_CASE("generated records are valid and consistent") {
    BenchmarkOptions opt;
    opt.keep_sni = true;
    opt.drift = 0.5;
    const auto b = standard_benchmark(opt);
    const SniTrie trie(b.taxonomy);
    std::size_t short_flows = 0, total = 0;
    for (const auto *part : {&b.train, &b.test}) {
        for (const auto &r : *part) {
            CHECK(validate_flow(r).empty());
            CHECK(filter_flow(r) == FilterVerdict::keep);
            REQUIRE(r.sni);
            CHECK(trie_match(trie, *r.sni) == r.label);
            const auto d = derive_flowstats(r.pstats, r.stats.duration_s, r.stats.flags);
            CHECK(d.roundtrips == r.stats.roundtrips);
            CHECK(d.ppi_duration_s == doctest::Approx(r.stats.ppi_duration_s).epsilon(1e-12));
            CHECK(r.stats.packets_fwd >= d.packets_fwd);
            CHECK(r.stats.packets_rev >= d.packets_rev);
            CHECK(r.stats.bytes_fwd >= d.bytes_fwd);
            CHECK(r.stats.bytes_rev >= d.bytes_rev);
            short_flows += r.stats.packets_fwd + r.stats.packets_rev < 30 ? 1 : 0;
            ++total;
        }
    }
    const double frac = static_cast<double>(short_flows) / static_cast<double>(total);
    CHECK(frac >= 0.814);
    CHECK(frac <= 0.874);
}

TEST_CASE("generation is deterministic and pinned") {
    test::ScratchDir a("synth-a"), c("synth-c");
    write_benchmark(standard_benchmark(), a.path());
    write_benchmark(standard_benchmark(), c.path());
    for (const char *f : {"train.csv", "test.csv", "taxonomy.csv"}) {
        CHECK(file_checksum(a / f) == file_checksum(c / f));
    }
    CHECK(file_checksum(a / "train.csv") == 0xcd10120cd9e3fd3dULL);
    CHECK(file_checksum(a / "test.csv") == 0x9c480325b1daa7bfULL);

    BenchmarkOptions other;
    other.seed = 43;
    test::ScratchDir o("synth-o");
    write_benchmark(standard_benchmark(other), o.path());
    CHECK(file_checksum(o / "train.csv") != file_checksum(a / "train.csv"));
}

TEST_CASE("drift") {
    const auto base = perturb_profile(make_template(0, 7), "svc", "grp", 1.0, 8);
    CHECK(apply_drift(base, 0.0).iat_mu == base.iat_mu);
    CHECK(apply_drift(base, 0.0).sizes[5].front().mean == base.sizes[5].front().mean);

    const auto other = perturb_profile(make_template(0, 7), "svc2", "grp", 1.0, 9);
    const std::vector<ServiceProfile> profiles{base, other};
    const std::map<ServiceId, std::size_t> n{{"svc", 6000}, {"svc2", 200}};

    auto mean_size = [](const std::vector<FlowRecord> &flows, std::int64_t week) {
        double s = 0.0, s2 = 0.0, cnt = 0.0;
        for (const auto &r : flows) {
            if (*r.label != "svc" || week_of(r.window_ts) != week) continue;
            double m = 0.0;
            for (int x : r.pstats.sizes) m += x;
            m /= static_cast<double>(r.pstats.sizes.size());
            s += m;
            s2 += m * m;
            cnt += 1.0;
        }
        const double mu = s / cnt;
        return std::make_pair(mu, std::sqrt((s2 / cnt - mu * mu) / cnt));
    };

    DatasetOptions still;
    const auto flat = gen_dataset(profiles, n, still);
    const auto [m1, se1] = mean_size(flat, 1);
    const auto [m2, se2] = mean_size(flat, 2);
    CHECK(std::abs(m1 - m2) < 4.0 * std::hypot(se1, se2));

    DatasetOptions moving;
    moving.drift = 1.0;
    const auto drifted = gen_dataset(profiles, n, moving);
    std::vector<FlowRecord> w1a, w1b;
    for (const auto &r : flat) if (week_of(r.window_ts) == 1) w1a.push_back(r);
    for (const auto &r : drifted) if (week_of(r.window_ts) == 1) w1b.push_back(r);
    CHECK(w1a == w1b);
    const auto [d2, dse] = mean_size(drifted, 2);
    CHECK(std::abs(d2 - m1) > 4.0 * std::hypot(se1, dse));
}

TEST_CASE("generator preconditions") {
    auto p = make_template(1, 3);
    p.validate();
    auto bad = p;
    bad.iat_sigma = -1.0;
    CHECK_THROWS_AS(bad.validate(), DataError);
    bad = p;
    bad.sizes[0].clear();
    CHECK_THROWS_AS(bad.validate(), DataError);

    const std::vector<ServiceProfile> one{perturb_profile(p, "x", "g", 1.0, 1)};
    CHECK_THROWS_AS(gen_dataset(one, {{"x", 10}}, {}), DataError);

    Rng rng(5);
    const auto prof = perturb_profile(p, "x", "g", 1.0, 1);
    for (int i = 0; i < 500; ++i) {
        const auto r = sample_flow(prof, 100, rng);
        CHECK(r.pstats.size() >= 3);
        CHECK(r.pstats.size() <= kMaxPackets);
        CHECK(r.pstats.dirs[0] == 1);
        CHECK(r.pstats.dirs[1] == -1);
        for (int s : r.pstats.sizes) {
            CHECK(s >= 1);
            CHECK(s <= kMaxPayload);
        }
    }
}
