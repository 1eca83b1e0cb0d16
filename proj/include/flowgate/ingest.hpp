// ingest.hpp
//
// Dataset-collection chain: SNI labeling through a suffix trie, flow
// filtering, rank-driven dynamic sampling, anonymization and rotation of
// output files on capture-window boundaries.

#ifndef FLOWGATE_INGEST_HPP
#define FLOWGATE_INGEST_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "flowgate/flowfile.hpp"
#include "flowgate/types.hpp"

namespace flowgate {

/// Trie over reversed domain labels ("www.youtube.com" is walked as
/// com -> youtube -> www).  A node can carry an exact entry and a wildcard
/// entry; a wildcard "*.S" matches names with at least one label in front
/// of S.  The longest matching suffix wins and an exact entry beats any
/// wildcard.  The first insertion of a duplicate pattern is kept.
class SniTrie {
public:
    SniTrie();
    explicit SniTrie(const ServiceTaxonomy &taxonomy);

    void insert(std::string_view pattern, const ServiceId &service);
    std::optional<ServiceId> match(std::string_view domain) const;

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        std::map<std::string, std::uint32_t, std::less<>> children;
        std::optional<ServiceId> exact;
        std::optional<ServiceId> wildcard;
    };
    std::vector<Node> nodes_;
};

inline std::optional<ServiceId> trie_match(const SniTrie &trie, std::string_view domain) {
    return trie.match(domain);
}

enum class FilterVerdict { keep, drop_short, drop_unidirectional, drop_no_sni };

const char *to_string(FilterVerdict v);

/// Handshake-flow filter: at least three packets, both directions present,
/// SNI present and matched to a service (label set).
FilterVerdict filter_flow(const FlowRecord &record);

/// Sets the label from the SNI (when matched) and clamps payload sizes to
/// the maximum segment size.
void label_and_clean(FlowRecord &record, const SniTrie &trie);

struct SamplerConfig {
    int top_rank = 20;          ///< ranks 1..top_rank sample 1:top_ratio
    int ladder_end_rank = 100;  ///< ranks up to here follow the linear ladder
    int top_ratio = 15;
    int ladder_high = 9;        ///< ratio at rank top_rank + 1
    int ladder_low = 2;         ///< ratio at rank ladder_end_rank
    int rerank_period = 12;     ///< windows between re-ranks (12 x 5 min)
};

/// Deterministic 1:k sampler.  Each service keeps a modulo counter; an
/// offered flow is kept iff counter % k == 0.  Ratios change only when
/// the window index crosses a re-rank period boundary.
class Sampler {
public:
    explicit Sampler(SamplerConfig config = {});

    /// Registers one offered flow and returns true when it is kept.
    bool decide(const ServiceId &service);

    /// Advances to `window_ts`; re-ranks services when a period boundary
    /// is crossed.
    void on_window(std::int64_t window_ts);

    void set_ratio(const ServiceId &service, int k);
    int ratio(const ServiceId &service) const;
    int ratio_for_rank(int rank) const;

    /// Ranks services by cumulative offered flows (ties by id) and assigns
    /// the tier ratios.
    void rerank();

    std::int64_t offered(const ServiceId &service) const;

private:
    struct Entry {
        std::int64_t offered = 0;
        std::int64_t counter = 0;
        int ratio = 1;
    };
    SamplerConfig config_;
    std::map<ServiceId, Entry> entries_;
    std::optional<std::int64_t> window_;
};

inline bool sampler_decide(Sampler &state, const ServiceId &service) {
    return state.decide(service);
}

/// Drops the SNI; the label must be present.
FlowRecord anonymize(FlowRecord record);

/// Writes records into one `flows_<window>.csv` file per window index.
/// Windows must be non-decreasing; a window without records has no file.
class WindowWriter {
public:
    explicit WindowWriter(std::filesystem::path dir, bool with_sni = false);

    void write(const FlowRecord &record);
    void close();

    const std::vector<std::filesystem::path> &files() const { return files_; }

private:
    std::filesystem::path dir_;
    bool with_sni_;
    std::optional<std::int64_t> current_;
    std::unique_ptr<std::ofstream> stream_;
    std::unique_ptr<FlowWriter> writer_;
    std::vector<std::filesystem::path> files_;
};

struct IngestStats {
    std::int64_t read = 0;
    std::int64_t kept = 0;
    std::int64_t dropped_short = 0;
    std::int64_t dropped_unidirectional = 0;
    std::int64_t dropped_no_sni = 0;
    std::int64_t dropped_sampling = 0;
    std::int64_t invalid = 0;
};

struct IngestOptions {
    bool sampling = true;
    SamplerConfig sampler;
};

/// Full chain over one raw flow stream: label, filter, sample, anonymize,
/// write rotated window files into `out_dir`.
IngestStats run_ingest(FlowReader &reader, const ServiceTaxonomy &taxonomy,
                       const std::filesystem::path &out_dir, const IngestOptions &options = {});

} // namespace flowgate

#endif // FLOWGATE_INGEST_HPP
