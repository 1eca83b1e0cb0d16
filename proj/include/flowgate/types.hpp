// types.hpp
//
// Domain model shared by every stage of the pipeline: packet metadata
// sequences, aggregate flow statistics, flow records and the service
// taxonomy used for labeling and superclass metrics.

#ifndef FLOWGATE_TYPES_HPP
#define FLOWGATE_TYPES_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowgate {

/// maximum number of packets kept in a packet metadata sequence
inline constexpr std::size_t kMaxPackets = 30;

/// largest payload size kept after ingestion (typical TCP MSS)
inline constexpr int kMaxPayload = 1460;

/// number of binary TCP flag features (FIN, RST, PSH in both directions)
inline constexpr std::size_t kFlagCount = 6;

using ServiceId = std::string;
using GroupId = std::string;

/// thrown when input data (files, records, configs) is malformed
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Per-packet metadata of the first packets of a connection.  Packets
/// without TCP payload never appear here.
struct PacketSeq {
    std::vector<int> sizes;      ///< payload bytes, >= 1
    std::vector<int> dirs;       ///< +1 client->server, -1 server->client
    std::vector<double> iats;    ///< milliseconds, iats[0] == 0

    std::size_t size() const { return sizes.size(); }
    bool empty() const { return sizes.empty(); }

    bool operator==(const PacketSeq &) const = default;
};

struct FlowFlags {
    bool fin_fwd = false;
    bool fin_rev = false;
    bool rst_fwd = false;
    bool rst_rev = false;
    bool psh_fwd = false;
    bool psh_rev = false;

    bool operator==(const FlowFlags &) const = default;
};

struct FlowStats {
    std::int64_t bytes_fwd = 0;
    std::int64_t bytes_rev = 0;
    std::int64_t packets_fwd = 0;
    std::int64_t packets_rev = 0;
    double duration_s = 0.0;
    double ppi_duration_s = 0.0;
    std::int64_t roundtrips = 0;
    FlowFlags flags;

    bool operator==(const FlowStats &) const = default;
};

struct FlowRecord {
    PacketSeq pstats;
    FlowStats stats;
    std::optional<std::string> sni;
    std::optional<ServiceId> label;
    std::int64_t window_ts = 0;

    bool operator==(const FlowRecord &) const = default;
};

/// Services, their provider groups, and the SNI patterns that identify them.
/// A pattern is either an exact domain or a wildcard of the form "*.suffix".
class ServiceTaxonomy {
public:
    struct Pattern {
        std::string pattern;
        ServiceId service;
    };

    /// Registers a service in a group.  Re-registering with the same group
    /// is a no-op; a conflicting group throws DataError.
    void add_service(const ServiceId &service, const GroupId &group);

    /// Adds an SNI pattern for an already registered service.
    void add_pattern(const std::string &pattern, const ServiceId &service);

    const std::vector<ServiceId> &services() const { return services_; }
    const std::vector<Pattern> &patterns() const { return patterns_; }

    bool contains(const ServiceId &service) const { return group_of_.count(service) != 0; }
    const GroupId &group_of(const ServiceId &service) const;

    /// groups in order of first appearance
    std::vector<GroupId> groups() const;
    std::vector<ServiceId> members(const GroupId &group) const;

    /// true when the group has more than one service
    bool in_shared_group(const ServiceId &service) const;

    /// Checks the type invariants; returns the violations found.
    std::vector<std::string> validate() const;

private:
    std::vector<ServiceId> services_;
    std::map<ServiceId, GroupId> group_of_;
    std::vector<Pattern> patterns_;
};

struct DatasetSplit {
    std::set<ServiceId> known;
    std::set<ServiceId> unknown;
};

/// 5-minute capture windows per week
inline constexpr std::int64_t kWindowsPerWeek = 2016;

/// week index (1-based) of a capture window
inline std::int64_t week_of(std::int64_t window_ts) { return window_ts / kWindowsPerWeek + 1; }

/// Aggregate statistics of a packet sequence.  Roundtrips are direction
/// changes between consecutive packets, ppi_duration_s is the summed
/// inter-arrival time.
FlowStats derive_flowstats(const PacketSeq &pstats, double duration_s, const FlowFlags &flags);

/// Returns the list of violated record invariants; empty when valid.
std::vector<std::string> validate_flow(const FlowRecord &record);

} // namespace flowgate

#endif // FLOWGATE_TYPES_HPP
