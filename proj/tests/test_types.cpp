#include <doctest.h>

#include <algorithm>

#include "flowgate/rng.hpp"
#include "flowgate/types.hpp"
#include "support.hpp"

using namespace flowgate;

namespace {

PacketSeq seq(std::vector<int> sizes, std::vector<int> dirs) {
    PacketSeq p;
    p.sizes = std::move(sizes);
    p.dirs = std::move(dirs);
    p.iats.assign(p.sizes.size(), 0.0);
    for (std::size_t i = 1; i < p.iats.size(); ++i) {
        p.iats[i] = 10.0 * static_cast<double>(i);
    }
    return p;
}

} // namespace

TEST_CASE("derive_flowstats counts direction changes") {
    CHECK(derive_flowstats(seq({1, 1, 1, 1}, {1, -1, 1, -1}), 1.0, {}).roundtrips == 3);
    CHECK(derive_flowstats(seq({1, 1, 1}, {1, 1, 1}), 1.0, {}).roundtrips == 0);
}

TEST_CASE("derive_flowstats sums bytes and packets per direction") {
    const auto s = derive_flowstats(seq({500, 1400, 100}, {1, -1, -1}), 1.0, {});
    CHECK(s.bytes_fwd == 500);
    CHECK(s.bytes_rev == 1500);
    CHECK(s.packets_fwd == 1);
    CHECK(s.packets_rev == 2);
    CHECK(s.ppi_duration_s == doctest::Approx(0.03));
}

TEST_CASE("derive_flowstats on an empty sequence") {
    FlowFlags f;
    f.fin_fwd = true;
    const auto s = derive_flowstats({}, 0.0, f);
    CHECK(s.bytes_fwd == 0);
    CHECK(s.packets_rev == 0);
    CHECK(s.roundtrips == 0);
    CHECK(s.ppi_duration_s == 0.0);
    CHECK(s.flags.fin_fwd);
}

TEST_CASE("sums are order invariant, roundtrips survive direction reversal") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const auto p = test::random_pstats(rng, 1 + rng.below(kMaxPackets));
        const auto base = derive_flowstats(p, 100.0, {});

        std::vector<std::size_t> order(p.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        rng.shuffle(order);
        PacketSeq q;
        for (auto i : order) {
            q.sizes.push_back(p.sizes[i]);
            q.dirs.push_back(p.dirs[i]);
            q.iats.push_back(p.iats[i]);
        }
        const auto shuffled = derive_flowstats(q, 100.0, {});
        CHECK(shuffled.bytes_fwd == base.bytes_fwd);
        CHECK(shuffled.bytes_rev == base.bytes_rev);
        CHECK(shuffled.packets_fwd == base.packets_fwd);
        CHECK(shuffled.packets_rev == base.packets_rev);

        PacketSeq flipped = p;
        for (auto &d : flipped.dirs) {
            d = -d;
        }
        const auto rev = derive_flowstats(flipped, 100.0, {});
        CHECK(rev.roundtrips == base.roundtrips);
        CHECK(rev.bytes_fwd == base.bytes_rev);
        CHECK(base.roundtrips <= std::max<std::int64_t>(0, static_cast<std::int64_t>(p.size()) - 1));
    }
}

TEST_CASE("validate_flow") {
    Rng rng(3);
    FlowRecord ok = test::random_record(rng);
    CHECK(validate_flow(ok).empty());

    SUBCASE("length mismatch") {
        FlowRecord r = ok;
        r.pstats = seq({10, 20, 30}, {1, -1, 1});
        r.pstats.dirs.pop_back();
        CHECK(validate_flow(r) == std::vector<std::string>{"length mismatch"});
    }
    SUBCASE("direction code") {
        FlowRecord r = ok;
        r.pstats = seq({10, 20, 30}, {1, 0, 1});
        r.stats = derive_flowstats(seq({10, 20, 30}, {1, -1, 1}), 1.0, {});
        CHECK(validate_flow(r) == std::vector<std::string>{"direction code"});
    }
    SUBCASE("zero payload") {
        FlowRecord r = ok;
        r.pstats.sizes[0] = 0;
        const auto v = validate_flow(r);
        CHECK(std::find(v.begin(), v.end(), "payload size") != v.end());
    }
    SUBCASE("first gap must be zero") {
        FlowRecord r = ok;
        r.pstats.iats[0] = 1.0;
        const auto v = validate_flow(r);
        CHECK(std::find(v.begin(), v.end(), "first inter-arrival time") != v.end());
    }
    SUBCASE("ppi duration above duration") {
        FlowRecord r = ok;
        r.stats.duration_s = r.stats.ppi_duration_s / 2.0 - 1.0;
        CHECK_FALSE(validate_flow(r).empty());
    }
}

TEST_CASE("taxonomy groups and patterns") {
    ServiceTaxonomy t;
    t.add_service("fb-web", "facebook");
    t.add_service("fb-msg", "facebook");
    t.add_service("yt", "google");
    t.add_pattern("*.youtube.com", "yt");
    CHECK(t.group_of("fb-msg") == "facebook");
    CHECK(t.in_shared_group("fb-web"));
    CHECK_FALSE(t.in_shared_group("yt"));
    CHECK(t.groups() == std::vector<GroupId>{"facebook", "google"});
    CHECK(t.members("facebook") == std::vector<ServiceId>{"fb-web", "fb-msg"});
    CHECK(t.validate().empty());
    CHECK_THROWS_AS(t.add_service("yt", "facebook"), DataError);
    CHECK_THROWS_AS(t.add_pattern("x.com", "missing"), DataError);
    CHECK_THROWS_AS(t.group_of("missing"), DataError);
}

TEST_CASE("weeks are 2016 five-minute windows") {
    CHECK(week_of(0) == 1);
    CHECK(week_of(2015) == 1);
    CHECK(week_of(2016) == 2);
}
