#include "flowgate/types.hpp"

#include <algorithm>
#include <cmath>

namespace flowgate {

void ServiceTaxonomy::add_service(const ServiceId &service, const GroupId &group) {
    if (service.empty() || group.empty()) {
        throw DataError("taxonomy: empty service or group id");
    }
    auto it = group_of_.find(service);
    if (it != group_of_.end()) {
        if (it->second != group) {
            throw DataError("taxonomy: service '" + service + "' assigned to groups '" +
                            it->second + "' and '" + group + "'");
        }
        return;
    }
    group_of_.emplace(service, group);
    services_.push_back(service);
}

void ServiceTaxonomy::add_pattern(const std::string &pattern, const ServiceId &service) {
    if (!contains(service)) {
        throw DataError("taxonomy: pattern '" + pattern + "' maps to unknown service '" + service + "'");
    }
    patterns_.push_back({pattern, service});
}

const GroupId &ServiceTaxonomy::group_of(const ServiceId &service) const {
    auto it = group_of_.find(service);
    if (it == group_of_.end()) {
        throw DataError("taxonomy: unknown service '" + service + "'");
    }
    return it->second;
}

std::vector<GroupId> ServiceTaxonomy::groups() const {
    std::vector<GroupId> out;
    for (const auto &s : services_) {
        const auto &g = group_of_.at(s);
        if (std::find(out.begin(), out.end(), g) == out.end()) {
            out.push_back(g);
        }
    }
    return out;
}

std::vector<ServiceId> ServiceTaxonomy::members(const GroupId &group) const {
    std::vector<ServiceId> out;
    for (const auto &s : services_) {
        if (group_of_.at(s) == group) {
            out.push_back(s);
        }
    }
    return out;
}

bool ServiceTaxonomy::in_shared_group(const ServiceId &service) const {
    return members(group_of(service)).size() > 1;
}

std::vector<std::string> ServiceTaxonomy::validate() const {
    std::vector<std::string> out;
    for (const auto &p : patterns_) {
        if (!contains(p.service)) {
            out.push_back("pattern '" + p.pattern + "' maps to unknown service");
        }
        if (p.pattern.empty() || p.pattern == "*." || (p.pattern.find('*') != std::string::npos &&
                                                      p.pattern.rfind("*.", 0) != 0)) {
            out.push_back("malformed pattern '" + p.pattern + "'");
        }
    }
    return out;
}

FlowStats derive_flowstats(const PacketSeq &pstats, double duration_s, const FlowFlags &flags) {
    FlowStats st;
    st.flags = flags;
    st.duration_s = duration_s;
    double iat_sum = 0.0;
    for (std::size_t i = 0; i < pstats.size(); ++i) {
        if (pstats.dirs[i] > 0) {
            st.bytes_fwd += pstats.sizes[i];
            ++st.packets_fwd;
        } else {
            st.bytes_rev += pstats.sizes[i];
            ++st.packets_rev;
        }
        if (i > 0 && pstats.dirs[i] != pstats.dirs[i - 1]) {
            ++st.roundtrips;
        }
        iat_sum += pstats.iats[i];
    }
    st.ppi_duration_s = iat_sum / 1000.0;
    return st;
}

std::vector<std::string> validate_flow(const FlowRecord &record) {
    std::vector<std::string> out;
    const auto &p = record.pstats;
    const std::size_t n = p.sizes.size();
    if (p.dirs.size() != n || p.iats.size() != n) {
        out.emplace_back("length mismatch");
        return out;
    }
    if (n > kMaxPackets) {
        out.emplace_back("sequence too long");
    }
    if (std::any_of(p.dirs.begin(), p.dirs.end(), [](int d) { return d != 1 && d != -1; })) {
        out.emplace_back("direction code");
    }
    if (std::any_of(p.sizes.begin(), p.sizes.end(), [](int s) { return s < 1; })) {
        out.emplace_back("payload size");
    }
    if (std::any_of(p.iats.begin(), p.iats.end(), [](double t) { return !(t >= 0.0) || !std::isfinite(t); })) {
        out.emplace_back("inter-arrival time");
    } else if (n > 0 && p.iats[0] != 0.0) {
        out.emplace_back("first inter-arrival time");
    }

    const auto &s = record.stats;
    if (s.bytes_fwd < 0 || s.bytes_rev < 0 || s.packets_fwd < 0 || s.packets_rev < 0 ||
        s.roundtrips < 0 || !(s.duration_s >= 0.0) || !(s.ppi_duration_s >= 0.0)) {
        out.emplace_back("negative statistic");
    }
    // relative slack for decimal round-off in stored durations
    if (s.ppi_duration_s > s.duration_s * (1.0 + 1e-12) + 1e-9) {
        out.emplace_back("ppi duration exceeds duration");
    }
    const std::int64_t max_rt = n > 0 ? static_cast<std::int64_t>(n) - 1 : 0;
    if (s.roundtrips > max_rt) {
        out.emplace_back("roundtrips");
    }
    if (record.sni && record.sni->empty()) {
        out.emplace_back("empty sni");
    }
    if (record.label && record.label->empty()) {
        out.emplace_back("empty label");
    }
    return out;
}

} // namespace flowgate
