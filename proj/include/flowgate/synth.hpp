// synth.hpp
//
// Deterministic synthetic TLS flow generator.  Services are drawn from
// group templates: every service of a group perturbs the same base
// profile.  The handshake (certificate chain, server flight) is moved
// far enough to give each service its own fingerprint, while bulk data
// and timing stay close to the provider's template.
// Packet sizes follow per-position mixtures of truncated normals (small
// control records, a ClientHello-sized first packet, near-MTU bulk
// data), inter-arrival times are log-normal, and a flow has three
// packets plus a log-normal number of further packets.

#ifndef FLOWGATE_SYNTH_HPP
#define FLOWGATE_SYNTH_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "flowgate/rng.hpp"
#include "flowgate/types.hpp"

namespace flowgate {

struct SizeComponent {
    double weight = 1.0;
    double mean = 100.0;
    double sd = 10.0;
};

struct ServiceProfile {
    ServiceId name;
    GroupId group;
    int template_id = 0;
    double perturbation = 0.0;

    /// packet-size mixture for each sequence position (truncated to [1, 1460])
    std::array<std::vector<SizeComponent>, kMaxPackets> sizes;
    /// probability that the packet at a position travels server -> client;
    /// positions 0 and 1 are always client -> server and server -> client
    std::array<double, kMaxPackets> p_reverse{};
    double iat_mu = 1.0;     ///< log-normal location of inter-arrival times (log ms)
    double iat_sigma = 1.0;  ///< log-normal scale
    double length_median = 7.0;   ///< median packets beyond the minimum of three (log-normal)
    double length_sigma = 1.25;
    double idle_scale_s = 1.0;  ///< scale of the heavy-tailed idle time added to the duration
    std::array<double, kFlagCount> flag_probs{};  ///< FIN, FIN_REV, RST, RST_REV, PSH, PSH_REV
    std::vector<std::string> domains;             ///< SNI patterns; "*.suffix" allowed

    /// throws DataError when a field is out of range
    void validate() const;
};

/// Base profile of a template; deterministic in (template_id, seed).
ServiceProfile make_template(int template_id, std::uint64_t seed);

/// Copies `base` with per-service noise of the given scale.
ServiceProfile perturb_profile(const ServiceProfile &base, const ServiceId &name, const GroupId &group,
                               double scale, std::uint64_t seed);

/// Shifts a profile toward a later capture period; drift 0 is the identity.
ServiceProfile apply_drift(const ServiceProfile &profile, double drift);

/// One flow of a service; packet statistics are consistent with the
/// generated sequence and the record passes validate_flow and filter_flow.
FlowRecord sample_flow(const ServiceProfile &profile, std::int64_t window_ts, Rng &rng);

/// Concrete SNI for a service (wildcards get a random leftmost label).
std::string sample_domain(const ServiceProfile &profile, Rng &rng);

struct DatasetOptions {
    int weeks = 2;
    std::uint64_t seed = 42;
    double drift = 0.0;       ///< drift per week after the first
    bool keep_sni = false;    ///< keep the SNI field on records
};

/// Flows of every service for every week, ordered by capture window.
/// `flows_per_week` maps service name -> number of flows per week.  The
/// stream of a (service, week) pair depends only on the seed, so week-1
/// flows do not change with the drift setting.
std::vector<FlowRecord> gen_dataset(std::span<const ServiceProfile> profiles,
                                    const std::map<ServiceId, std::size_t> &flows_per_week,
                                    const DatasetOptions &options);

ServiceTaxonomy taxonomy_of(std::span<const ServiceProfile> profiles);

struct BenchmarkOptions {
    std::uint64_t seed = 42;
    double drift = 0.0;
    std::size_t total_flows = 20000;
    bool keep_sni = false;
};

struct Benchmark {
    std::vector<ServiceProfile> profiles;
    ServiceTaxonomy taxonomy;
    std::vector<FlowRecord> train;  ///< week 1
    std::vector<FlowRecord> test;   ///< week 2
};

/// 14 services in 5 groups: three known groups (4 + 3 + 3 services) carry
/// most of the traffic, two unknown groups (2 + 2) use their own templates.
Benchmark standard_benchmark(const BenchmarkOptions &options = {});

/// writes train.csv, test.csv and taxonomy.csv into `dir`
void write_benchmark(const Benchmark &benchmark, const std::filesystem::path &dir);

/// 64-bit FNV-1a of a file's bytes
std::uint64_t file_checksum(const std::filesystem::path &path);

} // namespace flowgate

#endif // FLOWGATE_SYNTH_HPP
