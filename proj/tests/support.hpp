// Helpers shared by the unit tests: random well-formed flow records and
// scratch directories.
#ifndef FLOWGATE_TESTS_SUPPORT_HPP
#define FLOWGATE_TESTS_SUPPORT_HPP

#include <filesystem>
#include <string>

#include "flowgate/rng.hpp"
#include "flowgate/types.hpp"

namespace flowgate::test {

inline PacketSeq random_pstats(Rng &rng, std::size_t len) {
    PacketSeq p;
    for (std::size_t i = 0; i < len; ++i) {
        p.sizes.push_back(1 + static_cast<int>(rng.below(kMaxPayload)));
        p.dirs.push_back(i == 0 ? 1 : (rng.bernoulli(0.5) ? 1 : -1));
        p.iats.push_back(i == 0 ? 0.0 : std::round(rng.uniform(0.0, 5000.0) * 1000.0) / 1000.0);
    }
    return p;
}

inline FlowRecord random_record(Rng &rng, bool with_sni = false) {
    FlowRecord r;
    r.pstats = random_pstats(rng, 1 + rng.below(kMaxPackets));
    FlowFlags f;
    f.fin_fwd = rng.bernoulli(0.5);
    f.rst_rev = rng.bernoulli(0.2);
    f.psh_fwd = rng.bernoulli(0.7);
    f.psh_rev = rng.bernoulli(0.7);
    double ppi = 0.0;
    for (double x : r.pstats.iats) {
        ppi += x;
    }
    const double duration = std::ceil((ppi / 1000.0 + rng.uniform(0.0, 30.0)) * 1e6) / 1e6;
    r.stats = derive_flowstats(r.pstats, duration, f);
    r.label = "svc-" + std::to_string(rng.below(7));
    if (with_sni) {
        r.sni = "host" + std::to_string(rng.below(100)) + ".example.com";
    }
    r.window_ts = static_cast<std::int64_t>(rng.below(5000));
    return r;
}

/// Fresh empty directory under the system temp dir, removed on scope exit.
class ScratchDir {
public:
    explicit ScratchDir(const std::string &name)
        : path_(std::filesystem::temp_directory_path() / ("flowgate-test-" + name)) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    ScratchDir(const ScratchDir &) = delete;
    ScratchDir &operator=(const ScratchDir &) = delete;

    const std::filesystem::path &path() const { return path_; }
    std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

} // namespace flowgate::test

#endif // FLOWGATE_TESTS_SUPPORT_HPP
