#include "flowgate/ingest.hpp"

#include <algorithm>
#include <cmath>

namespace flowgate {

namespace {

std::vector<std::string_view> reversed_labels(std::string_view domain) {
    std::vector<std::string_view> labels;
    std::size_t end = domain.size();
    while (true) {
        const auto dot = domain.rfind('.', end == 0 ? 0 : end - 1);
        if (dot == std::string_view::npos || end == 0) {
            labels.push_back(domain.substr(0, end));
            break;
        }
        labels.push_back(domain.substr(dot + 1, end - dot - 1));
        end = dot;
    }
    return labels;
}

} // namespace

SniTrie::SniTrie() : nodes_(1) {}

SniTrie::SniTrie(const ServiceTaxonomy &taxonomy) : SniTrie() {
    for (const auto &p : taxonomy.patterns()) {
        insert(p.pattern, p.service);
    }
}

void SniTrie::insert(std::string_view pattern, const ServiceId &service) {
    bool wildcard = false;
    if (pattern.rfind("*.", 0) == 0) {
        wildcard = true;
        pattern.remove_prefix(2);
    }
    if (pattern.empty() || pattern.find('*') != std::string_view::npos) {
        throw DataError("sni trie: malformed pattern");
    }
    std::uint32_t node = 0;
    for (auto label : reversed_labels(pattern)) {
        if (label.empty()) {
            throw DataError("sni trie: empty label in pattern");
        }
        auto it = nodes_[node].children.find(label);
        if (it == nodes_[node].children.end()) {
            const auto idx = static_cast<std::uint32_t>(nodes_.size());
            nodes_[node].children.emplace(std::string(label), idx);
            nodes_.emplace_back();
            node = idx;
        } else {
            node = it->second;
        }
    }
    auto &slot = wildcard ? nodes_[node].wildcard : nodes_[node].exact;
    if (!slot) {
        slot = service;
    }
}

std::optional<ServiceId> SniTrie::match(std::string_view domain) const {
    if (domain.empty()) {
        return std::nullopt;
    }
    const auto labels = reversed_labels(domain);
    const std::optional<ServiceId> *best = nullptr;
    std::uint32_t node = 0;
    for (std::size_t depth = 0; depth < labels.size(); ++depth) {
        auto it = nodes_[node].children.find(labels[depth]);
        if (it == nodes_[node].children.end()) {
            return best ? **best : std::optional<ServiceId>{};
        }
        node = it->second;
        const auto &n = nodes_[node];
        if (depth + 1 == labels.size()) {
            if (n.exact) {
                return n.exact;
            }
        } else if (n.wildcard) {
            best = &n.wildcard;
        }
    }
    return best ? **best : std::optional<ServiceId>{};
}

const char *to_string(FilterVerdict v) {
    switch (v) {
    case FilterVerdict::keep: return "keep";
    case FilterVerdict::drop_short: return "short";
    case FilterVerdict::drop_unidirectional: return "unidirectional";
    case FilterVerdict::drop_no_sni: return "no-sni";
    }
    return "?";
}

FilterVerdict filter_flow(const FlowRecord &record) {
    const auto &st = record.stats;
    if (st.packets_fwd + st.packets_rev < 3) {
        return FilterVerdict::drop_short;
    }
    const auto &dirs = record.pstats.dirs;
    const bool one_way_pstats =
        !dirs.empty() && std::all_of(dirs.begin(), dirs.end(), [&](int d) { return d == dirs.front(); });
    if (one_way_pstats || st.packets_fwd == 0 || st.packets_rev == 0) {
        return FilterVerdict::drop_unidirectional;
    }
    if (!record.sni || !record.label) {
        return FilterVerdict::drop_no_sni;
    }
    return FilterVerdict::keep;
}

void label_and_clean(FlowRecord &record, const SniTrie &trie) {
    for (auto &s : record.pstats.sizes) {
        s = std::min(s, kMaxPayload);
    }
    record.label.reset();
    if (record.sni) {
        record.label = trie.match(*record.sni);
    }
}

Sampler::Sampler(SamplerConfig config) : config_(config) {
    if (config_.rerank_period <= 0 || config_.top_rank < 0 || config_.ladder_end_rank <= config_.top_rank) {
        throw DataError("sampler: invalid configuration");
    }
}

bool Sampler::decide(const ServiceId &service) {
    auto &e = entries_[service];
    ++e.offered;
    const bool keep = e.counter % e.ratio == 0;
    ++e.counter;
    return keep;
}

void Sampler::on_window(std::int64_t window_ts) {
    if (!window_) {
        window_ = window_ts;
        return;
    }
    const auto period = config_.rerank_period;
    auto floor_div = [](std::int64_t a, std::int64_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };
    if (floor_div(window_ts, period) != floor_div(*window_, period)) {
        rerank();
    }
    window_ = window_ts;
}

void Sampler::set_ratio(const ServiceId &service, int k) {
    if (k < 1) {
        throw DataError("sampler: ratio must be >= 1");
    }
    entries_[service].ratio = k;
}

int Sampler::ratio(const ServiceId &service) const {
    auto it = entries_.find(service);
    return it == entries_.end() ? 1 : it->second.ratio;
}

int Sampler::ratio_for_rank(int rank) const {
    if (rank <= config_.top_rank) {
        return config_.top_ratio;
    }
    if (rank > config_.ladder_end_rank) {
        return 1;
    }
    const int first = config_.top_rank + 1;
    const int span = config_.ladder_end_rank - first;
    if (span == 0) {
        return config_.ladder_high;
    }
    const double t = static_cast<double>(rank - first) / span;
    return static_cast<int>(std::lround(config_.ladder_high - (config_.ladder_high - config_.ladder_low) * t));
}

void Sampler::rerank() {
    std::vector<std::pair<std::int64_t, ServiceId>> order;
    for (const auto &[id, e] : entries_) {
        order.emplace_back(e.offered, id);
    }
    std::sort(order.begin(), order.end(), [](const auto &a, const auto &b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (std::size_t i = 0; i < order.size(); ++i) {
        entries_[order[i].second].ratio = ratio_for_rank(static_cast<int>(i) + 1);
    }
}

std::int64_t Sampler::offered(const ServiceId &service) const {
    auto it = entries_.find(service);
    return it == entries_.end() ? 0 : it->second.offered;
}

FlowRecord anonymize(FlowRecord record) {
    if (!record.label) {
        throw DataError("anonymize: record has no label; removing the SNI would lose the ground truth");
    }
    record.sni.reset();
    return record;
}

WindowWriter::WindowWriter(std::filesystem::path dir, bool with_sni)
    : dir_(std::move(dir)), with_sni_(with_sni) {
    std::filesystem::create_directories(dir_);
}

void WindowWriter::write(const FlowRecord &record) {
    if (current_ && record.window_ts < *current_) {
        throw DataError("window writer: window " + std::to_string(record.window_ts) +
                        " arrived after window " + std::to_string(*current_));
    }
    if (!current_ || record.window_ts != *current_) {
        close();
        current_ = record.window_ts;
        auto path = dir_ / ("flows_" + std::to_string(record.window_ts) + ".csv");
        stream_ = std::make_unique<std::ofstream>(path, std::ios::binary);
        if (!*stream_) {
            throw DataError("window writer: cannot open " + path.string());
        }
        writer_ = std::make_unique<FlowWriter>(*stream_, with_sni_);
        files_.push_back(path);
    }
    writer_->write(record);
}

void WindowWriter::close() {
    writer_.reset();
    if (stream_) {
        stream_->close();
        stream_.reset();
    }
}

IngestStats run_ingest(FlowReader &reader, const ServiceTaxonomy &taxonomy,
                       const std::filesystem::path &out_dir, const IngestOptions &options) {
    const SniTrie trie(taxonomy);
    Sampler sampler(options.sampler);
    WindowWriter writer(out_dir);
    IngestStats stats;
    while (auto rec = reader.next()) {
        ++stats.read;
        FlowRecord r = std::move(*rec);
        if (!validate_flow(r).empty()) {
            ++stats.invalid;
            continue;
        }
        label_and_clean(r, trie);
        sampler.on_window(r.window_ts);
        switch (filter_flow(r)) {
        case FilterVerdict::drop_short: ++stats.dropped_short; continue;
        case FilterVerdict::drop_unidirectional: ++stats.dropped_unidirectional; continue;
        case FilterVerdict::drop_no_sni: ++stats.dropped_no_sni; continue;
        case FilterVerdict::keep: break;
        }
        if (options.sampling && !sampler.decide(*r.label)) {
            ++stats.dropped_sampling;
            continue;
        }
        writer.write(anonymize(std::move(r)));
        ++stats.kept;
    }
    writer.close();
    return stats;
}

} // namespace flowgate
