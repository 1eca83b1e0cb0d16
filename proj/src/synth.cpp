#include "flowgate/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "flowgate/flowfile.hpp"

namespace flowgate {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a(const std::string &s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h = (h ^ c) * 0x100000001b3ULL;
    }
    return h;
}

/// shortest flow that passes the ingest filter
constexpr std::size_t kMinPackets = 3;

/// leading packets (ClientHello, certificates, handshake records) with near-fixed sizes
constexpr std::size_t kHandshakePackets = 6;

double clampd(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

int sample_size(const std::vector<SizeComponent> &mixture, Rng &rng) {
    double total = 0.0;
    for (const auto &c : mixture) {
        total += c.weight;
    }
    double u = rng.uniform() * total;
    const SizeComponent *pick = &mixture.back();
    for (const auto &c : mixture) {
        if (u < c.weight) {
            pick = &c;
            break;
        }
        u -= c.weight;
    }
    for (int attempt = 0; attempt < 32; ++attempt) {
        const double x = std::round(rng.normal(pick->mean, pick->sd));
        if (x >= 1.0 && x <= kMaxPayload) {
            return static_cast<int>(x);
        }
    }
    return static_cast<int>(clampd(std::round(pick->mean), 1.0, kMaxPayload));
}

double sample_iat(const ServiceProfile &p, Rng &rng) {
    const double ms = std::exp(rng.normal(p.iat_mu, p.iat_sigma));
    return std::round(std::min(ms, 600000.0) * 1000.0) / 1000.0;
}

} // namespace

void ServiceProfile::validate() const {
    if (name.empty() || group.empty()) {
        throw DataError("service profile: empty name or group");
    }
    for (std::size_t i = 0; i < kMaxPackets; ++i) {
        if (sizes[i].empty()) {
            throw DataError("service profile '" + name + "': empty size mixture at position " + std::to_string(i));
        }
        double w = 0.0;
        for (const auto &c : sizes[i]) {
            if (!(c.weight >= 0.0) || !(c.sd > 0.0) || !(c.mean >= 1.0 && c.mean <= kMaxPayload)) {
                throw DataError("service profile '" + name + "': invalid size component");
            }
            w += c.weight;
        }
        if (!(w > 0.0)) {
            throw DataError("service profile '" + name + "': size mixture without weight");
        }
        if (!(p_reverse[i] >= 0.0 && p_reverse[i] <= 1.0)) {
            throw DataError("service profile '" + name + "': direction probability outside [0, 1]");
        }
    }
    if (!std::isfinite(iat_mu) || !(iat_sigma > 0.0) || !(length_median > 0.0) || !(length_sigma > 0.0) ||
        !(idle_scale_s >= 0.0)) {
        throw DataError("service profile '" + name + "': invalid timing or length parameters");
    }
    for (double f : flag_probs) {
        if (!(f >= 0.0 && f <= 1.0)) {
            throw DataError("service profile '" + name + "': flag probability outside [0, 1]");
        }
    }
    if (domains.empty()) {
        throw DataError("service profile '" + name + "': no SNI domains");
    }
}

ServiceProfile make_template(int template_id, std::uint64_t seed) {
    Rng rng(mix(seed, 0x7e3a11ULL + static_cast<std::uint64_t>(template_id)));
    ServiceProfile t;
    t.name = "template-" + std::to_string(template_id);
    t.group = t.name;
    t.template_id = template_id;

    t.sizes[0] = {{1.0, rng.uniform(505.0, 545.0), 3.0}};
    for (std::size_t i = 1; i < kHandshakePackets; ++i) {
        const double dominant = i == 1 ? rng.uniform(1200.0, 1450.0) : rng.uniform(40.0, 1400.0);
        t.sizes[i] = {{0.9, dominant, rng.uniform(3.0, 8.0)}, {0.1, rng.uniform(30.0, 1400.0), 30.0}};
        if (i >= 2) {
            t.p_reverse[i] = rng.bernoulli(0.5) ? rng.uniform(0.05, 0.15) : rng.uniform(0.85, 0.95);
        }
    }
    const double small_mean = rng.uniform(30.0, 90.0);
    const double small_sd = rng.uniform(4.0, 12.0);
    const double large_mean = rng.uniform(1250.0, 1430.0);
    const double large_sd = rng.uniform(10.0, 40.0);
    const double mid_mean = rng.uniform(150.0, 900.0);
    const double mid_sd = rng.uniform(20.0, 60.0);
    for (std::size_t i = kHandshakePackets; i < kMaxPackets; ++i) {
        auto w = [&] {
            const double u = rng.uniform(0.15, 1.0);
            return u * u;
        };
        t.sizes[i] = {{w(), clampd(small_mean + rng.normal(0.0, 10.0), 1.0, 300.0), small_sd},
                      {w(), clampd(large_mean + rng.normal(0.0, 20.0), 900.0, 1460.0), large_sd},
                      {w(), clampd(mid_mean + rng.normal(0.0, 60.0), 100.0, 1100.0), mid_sd}};
        t.p_reverse[i] = rng.uniform(0.15, 0.85);
    }
    t.p_reverse[0] = 0.0;
    t.p_reverse[1] = 1.0;
    t.iat_mu = rng.uniform(0.5, 4.0);
    t.iat_sigma = rng.uniform(0.7, 1.4);
    t.length_median = rng.uniform(6.0, 8.0);
    t.length_sigma = 1.25;
    t.idle_scale_s = rng.uniform(0.5, 20.0);
    for (auto &f : t.flag_probs) {
        f = rng.uniform(0.05, 0.95);
    }
    t.domains = {t.name + ".example"};
    return t;
}

ServiceProfile perturb_profile(const ServiceProfile &base, const ServiceId &name, const GroupId &group,
                               double scale, std::uint64_t seed) {
    Rng rng(seed);
    ServiceProfile p = base;
    p.name = name;
    p.group = group;
    p.perturbation = scale;
    p.sizes[0][0].mean = clampd(p.sizes[0][0].mean + rng.normal(0.0, 30.0 * scale), 1.0, kMaxPayload);
    for (std::size_t i = 1; i < kMaxPackets; ++i) {
        const bool handshake = i < kHandshakePackets;
        for (auto &c : p.sizes[i]) {
            c.mean = clampd(c.mean + rng.normal(0.0, (handshake ? 112.0 : 26.0) * scale), 1.0, kMaxPayload);
            if (!handshake) {
                c.weight *= std::exp(rng.normal(0.0, 0.375 * scale));
            }
        }
        if (i >= 2) {
            p.p_reverse[i] = clampd(p.p_reverse[i] + rng.normal(0.0, (handshake ? 0.125 : 0.09) * scale), 0.02, 0.98);
        }
    }
    p.iat_mu += rng.normal(0.0, 0.3 * scale);
    p.iat_sigma *= std::exp(rng.normal(0.0, 0.075 * scale));
    p.length_median *= std::exp(rng.normal(0.0, 0.25 * scale));
    p.idle_scale_s *= std::exp(rng.normal(0.0, 0.225 * scale));
    for (auto &f : p.flag_probs) {
        f = clampd(f + rng.normal(0.0, 0.25 * scale), 0.01, 0.99);
    }
    return p;
}

ServiceProfile apply_drift(const ServiceProfile &profile, double drift) {
    if (drift == 0.0) {
        return profile;
    }
    ServiceProfile p = profile;
    p.sizes[0][0].mean = clampd(p.sizes[0][0].mean + 8.0 * drift, 1.0, kMaxPayload);
    for (std::size_t i = 2; i < kMaxPackets; ++i) {
        for (auto &c : p.sizes[i]) {
            c.mean = clampd(c.mean + (c.mean < 1000.0 ? 45.0 : -45.0) * drift, 1.0, kMaxPayload);
        }
        p.p_reverse[i] = clampd(p.p_reverse[i] + 0.1 * drift, 0.0, 1.0);
    }
    p.iat_mu += 0.5 * drift;
    p.length_median *= std::exp(0.15 * drift);
    return p;
}

std::string sample_domain(const ServiceProfile &profile, Rng &rng) {
    static const char *kLabels[] = {"edge", "cdn", "api", "static", "m", "img", "ws", "auth"};
    const auto &pattern = profile.domains[rng.below(profile.domains.size())];
    if (pattern.rfind("*.", 0) == 0) {
        return std::string(kLabels[rng.below(std::size(kLabels))]) + std::to_string(rng.below(64)) +
               pattern.substr(1);
    }
    return pattern;
}

FlowRecord sample_flow(const ServiceProfile &profile, std::int64_t window_ts, Rng &rng) {
    const double excess = std::exp(rng.normal(std::log(profile.length_median), profile.length_sigma));
    const auto total = kMinPackets + static_cast<std::size_t>(std::round(std::min(excess, 1e6)));
    const std::size_t n = std::min(total, kMaxPackets);

    FlowRecord r;
    r.pstats.sizes.resize(n);
    r.pstats.dirs.resize(n);
    r.pstats.iats.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        r.pstats.sizes[i] = sample_size(profile.sizes[i], rng);
        r.pstats.dirs[i] = i == 0 ? 1 : i == 1 ? -1 : (rng.bernoulli(profile.p_reverse[i]) ? -1 : 1);
        r.pstats.iats[i] = i == 0 ? 0.0 : sample_iat(profile, rng);
    }

    FlowFlags flags;
    bool *fields[] = {&flags.fin_fwd, &flags.fin_rev, &flags.rst_fwd, &flags.rst_rev, &flags.psh_fwd,
                      &flags.psh_rev};
    for (std::size_t k = 0; k < kFlagCount; ++k) {
        *fields[k] = rng.bernoulli(profile.flag_probs[k]);
    }

    double tail_ms = 0.0;
    std::int64_t tail_bytes[2] = {0, 0};
    std::int64_t tail_packets[2] = {0, 0};
    double p_rev_tail = 0.0;
    for (std::size_t i = 2; i < kMaxPackets; ++i) {
        p_rev_tail += profile.p_reverse[i] / static_cast<double>(kMaxPackets - 2);
    }
    for (std::size_t i = n; i < total; ++i) {
        const int side = rng.bernoulli(p_rev_tail) ? 1 : 0;
        tail_bytes[side] += sample_size(profile.sizes[kMaxPackets - 1], rng);
        tail_packets[side] += 1;
        tail_ms += sample_iat(profile, rng);
    }
    // Pareto-like idle period with tail index 1.5
    const double u = std::max(rng.uniform(), 1e-12);
    const double idle_s = profile.idle_scale_s * (std::pow(u, -1.0 / 1.5) - 1.0);

    double ppi_s = 0.0;
    for (double t : r.pstats.iats) {
        ppi_s += t;
    }
    ppi_s /= 1000.0;
    const double duration = std::ceil((ppi_s + tail_ms / 1000.0 + std::min(idle_s, 3600.0)) * 1e6) / 1e6;
    r.stats = derive_flowstats(r.pstats, std::max(duration, ppi_s), flags);
    r.stats.bytes_fwd += tail_bytes[0];
    r.stats.bytes_rev += tail_bytes[1];
    r.stats.packets_fwd += tail_packets[0];
    r.stats.packets_rev += tail_packets[1];
    r.sni = sample_domain(profile, rng);
    r.label = profile.name;
    r.window_ts = window_ts;
    return r;
}

std::vector<FlowRecord> gen_dataset(std::span<const ServiceProfile> profiles,
                                    const std::map<ServiceId, std::size_t> &flows_per_week,
                                    const DatasetOptions &options) {
    if (profiles.size() < 2) {
        throw DataError("synth: at least two services are required");
    }
    if (options.weeks < 1) {
        throw DataError("synth: at least one week is required");
    }
    for (const auto &p : profiles) {
        p.validate();
    }
    std::vector<FlowRecord> out;
    for (int week = 1; week <= options.weeks; ++week) {
        for (std::size_t k = 0; k < profiles.size(); ++k) {
            const auto it = flows_per_week.find(profiles[k].name);
            if (it == flows_per_week.end()) {
                throw DataError("synth: no flow count for service '" + profiles[k].name + "'");
            }
            const auto profile = apply_drift(profiles[k], options.drift * (week - 1));
            Rng rng(mix(mix(options.seed, k + 1), static_cast<std::uint64_t>(week)));
            for (std::size_t i = 0; i < it->second; ++i) {
                const auto ts = static_cast<std::int64_t>(week - 1) * kWindowsPerWeek + static_cast<std::int64_t>(rng.below(kWindowsPerWeek));
                auto r = sample_flow(profile, ts, rng);
                if (!options.keep_sni) {
                    r.sni.reset();
                }
                out.push_back(std::move(r));
            }
        }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const FlowRecord &a, const FlowRecord &b) { return a.window_ts < b.window_ts; });
    return out;
}

ServiceTaxonomy taxonomy_of(std::span<const ServiceProfile> profiles) {
    ServiceTaxonomy t;
    for (const auto &p : profiles) {
        t.add_service(p.name, p.group);
        for (const auto &d : p.domains) {
            t.add_pattern(d, p.name);
        }
    }
    return t;
}

Benchmark standard_benchmark(const BenchmarkOptions &options) {
    struct GroupDef {
        const char *group;
        const char *domain;
        std::vector<const char *> services;
        bool known;
    };
    const std::vector<GroupDef> groups = {
        {"northwind", "northwind", {"mail", "drive", "video", "ads"}, true},
        {"contoso", "contoso", {"office", "teams", "update"}, true},
        {"fabrikam", "fabrikam", {"social", "chat", "photos"}, true},
        {"tailspin", "tailspin", {"stream", "api"}, false},
        {"litware", "litware", {"games", "store"}, false},
    };

    Benchmark b;
    std::size_t known_services = 0;
    std::size_t unknown_services = 0;
    int template_id = 0;
    for (const auto &g : groups) {
        const auto base = make_template(template_id, options.seed);
        for (const auto *s : g.services) {
            const std::string name = std::string(g.group) + "-" + s;
            auto p = perturb_profile(base, name, g.group, 1.0, mix(options.seed, fnv1a(name)));
            p.domains = {std::string(s) + "." + g.domain + ".com", "*." + std::string(s) + "." + g.domain + "cdn.net"};
            b.profiles.push_back(std::move(p));
            (g.known ? known_services : unknown_services) += 1;
        }
        ++template_id;
    }

    const std::size_t per_week = options.total_flows / 2;
    const auto known_each = static_cast<std::size_t>(std::llround(0.85 * static_cast<double>(per_week) /
                                                                   static_cast<double>(known_services)));
    const std::size_t unknown_total = per_week - known_each * known_services;
    std::map<ServiceId, std::size_t> counts;
    std::size_t u = 0;
    for (std::size_t k = 0, gi = 0; gi < groups.size(); ++gi) {
        for (std::size_t s = 0; s < groups[gi].services.size(); ++s, ++k) {
            if (groups[gi].known) {
                counts[b.profiles[k].name] = known_each;
            } else {
                counts[b.profiles[k].name] =
                    unknown_total / unknown_services + (u < unknown_total % unknown_services ? 1 : 0);
                ++u;
            }
        }
    }

    b.taxonomy = taxonomy_of(b.profiles);
    DatasetOptions d;
    d.weeks = 2;
    d.seed = options.seed;
    d.drift = options.drift;
    d.keep_sni = options.keep_sni;
    for (auto &r : gen_dataset(b.profiles, counts, d)) {
        (week_of(r.window_ts) == 1 ? b.train : b.test).push_back(std::move(r));
    }
    return b;
}

void write_benchmark(const Benchmark &benchmark, const std::filesystem::path &dir) {
    std::filesystem::create_directories(dir);
    const bool sni = !benchmark.train.empty() && benchmark.train.front().sni.has_value();
    write_flow_file(dir / "train.csv", benchmark.train, sni);
    write_flow_file(dir / "test.csv", benchmark.test, sni);
    write_taxonomy(dir / "taxonomy.csv", benchmark.taxonomy);
}

std::uint64_t file_checksum(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

} // namespace flowgate
