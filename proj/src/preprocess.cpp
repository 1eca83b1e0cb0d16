#include "flowgate/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "flowgate/stats.hpp"

namespace flowgate {

namespace {

FeatureScaler fit_standard(std::span<const double> values) {
    FeatureScaler s;
    s.kind = ScalerKind::standard;
    s.center = mean(values);
    s.scale = stdev(values);
    if (!(s.scale > 0.0)) {
        s.scale = 1.0;
        s.constant = true;
    }
    return s;
}

FeatureScaler fit_robust(std::span<const double> values) {
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    FeatureScaler s;
    s.kind = ScalerKind::robust;
    s.center = quantile_sorted(v, 0.5);
    s.scale = quantile_sorted(v, 0.75) - quantile_sorted(v, 0.25);
    if (!(s.scale > 0.0)) {
        s.scale = 1.0;
    }
    return s;
}

std::string kind_name(ScalerKind k) {
    switch (k) {
    case ScalerKind::standard: return "standard";
    case ScalerKind::robust: return "robust";
    case ScalerKind::none: return "none";
    }
    return "none";
}

ScalerKind kind_from(const std::string &s) {
    if (s == "standard") return ScalerKind::standard;
    if (s == "robust") return ScalerKind::robust;
    if (s == "none") return ScalerKind::none;
    throw DataError("unknown scaler kind '" + s + "'");
}

} // namespace

const std::array<const char *, kFlowFeatures> &flowstat_names() {
    static const std::array<const char *, kFlowFeatures> names = {
        "BYTES", "BYTES_REV", "PACKETS", "PACKETS_REV", "DURATION", "PPI_DURATION", "ROUNDTRIPS",
        "F_FIN", "F_FIN_REV", "F_RST", "F_RST_REV", "F_PSH", "F_PSH_REV"};
    return names;
}

double FeatureScaler::apply(double x) const {
    switch (kind) {
    case ScalerKind::none: return x;
    case ScalerKind::standard:
        return constant ? 0.0 : (x - center) / scale;
    case ScalerKind::robust:
        return (x - center) / scale;
    }
    return x;
}

std::array<double, kFlowNumerics> flowstat_numerics(const FlowStats &st) {
    return {static_cast<double>(st.bytes_fwd), static_cast<double>(st.bytes_rev),
            static_cast<double>(st.packets_fwd), static_cast<double>(st.packets_rev),
            st.duration_s, st.ppi_duration_s, static_cast<double>(st.roundtrips)};
}

ScalerParams fit_scalers(std::span<const FlowRecord> training, const AblationConfig &config,
                         const std::string &fitted_on) {
    if (training.size() < 2) {
        throw DataError("fit_scalers: need at least two training flows");
    }
    ScalerParams p;
    p.fitted_on = fitted_on;
    p.clip = config.clip;

    std::vector<double> sizes;
    std::vector<double> iats;
    std::array<std::vector<double>, kFlowNumerics> fs;
    for (const auto &r : training) {
        for (std::size_t i = 0; i < r.pstats.size(); ++i) {
            sizes.push_back(r.pstats.sizes[i]);
            double t = r.pstats.iats[i];
            if (p.clip) {
                t = std::clamp(t, p.iat_min_ms, p.iat_max_ms);
            }
            iats.push_back(t);
        }
        const auto nums = flowstat_numerics(r.stats);
        for (int k = 0; k < kFlowNumerics; ++k) {
            fs[k].push_back(nums[k]);
        }
    }
    if (sizes.empty()) {
        throw DataError("fit_scalers: training flows carry no packets");
    }

    for (int k = 0; k < kFlowNumerics; ++k) {
        auto &v = fs[k];
        std::sort(v.begin(), v.end());
        p.ceilings[k] = quantile_sorted(v, p.clip_quantile);
        if (p.clip) {
            for (auto &x : v) {
                x = std::min(x, p.ceilings[k]);
            }
        }
    }

    if (config.standardize) {
        p.size = fit_standard(sizes);
        p.iat = fit_standard(iats);
        for (int k = 0; k < kFlowNumerics; ++k) {
            p.flowstats[k] = fit_robust(fs[k]);
        }
    }
    p.fitted = true;
    return p;
}

FeatureVector transform(const FlowRecord &record, const ScalerParams &params, const AblationConfig &ablation) {
    if (!params.fitted) {
        throw DataError("transform: scaler parameters are not fitted");
    }
    if (ablation.pstats_limit < 0 || ablation.pstats_limit > kPstatsLen) {
        throw DataError("transform: pstats_limit out of range");
    }
    FeatureVector fv;
    const auto &ps = record.pstats;
    const int len = std::min<int>(static_cast<int>(ps.size()), ablation.pstats_limit);
    fv.pstats_len = len;
    for (int i = 0; i < len; ++i) {
        double t = ps.iats[i];
        if (params.clip) {
            t = std::clamp(t, params.iat_min_ms, params.iat_max_ms);
        }
        fv.pstats(kChannelSize, i) = params.size.apply(ps.sizes[i]);
        fv.pstats(kChannelDir, i) = ablation.use_dirs ? ps.dirs[i] : 0.0;
        fv.pstats(kChannelIat, i) = ablation.use_iat ? params.iat.apply(t) : 0.0;
    }

    if (ablation.use_flowstats) {
        const auto nums = flowstat_numerics(record.stats);
        for (int k = 0; k < kFlowNumerics; ++k) {
            double x = nums[k];
            if (params.clip) {
                x = std::min(x, params.ceilings[k]);
            }
            fv.flowstats(k) = params.flowstats[k].apply(x);
        }
        const auto &f = record.stats.flags;
        const std::array<bool, kFlagCount> flags = {f.fin_fwd, f.fin_rev, f.rst_fwd,
                                                   f.rst_rev, f.psh_fwd, f.psh_rev};
        for (std::size_t k = 0; k < kFlagCount; ++k) {
            fv.flowstats(kFlowNumerics + static_cast<int>(k)) = flags[k] ? 1.0 : 0.0;
        }
    }
    fv.ablation_applied = !(ablation == AblationConfig{});
    return fv;
}

std::vector<FeatureVector> transform_all(std::span<const FlowRecord> records, const ScalerParams &params,
                                         const AblationConfig &ablation) {
    std::vector<FeatureVector> out;
    out.reserve(records.size());
    for (const auto &r : records) {
        out.push_back(transform(r, params, ablation));
    }
    return out;
}

FeatureBatch make_batch(std::span<const FeatureVector> features, std::span<const std::size_t> indices) {
    const auto n = static_cast<Eigen::Index>(indices.size());
    FeatureBatch b;
    b.pstats.resize(kPstatsChannels, kPstatsLen * n);
    b.flowstats.resize(kFlowFeatures, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto &fv = features[indices[static_cast<std::size_t>(j)]];
        b.pstats.middleCols(j * kPstatsLen, kPstatsLen) = fv.pstats;
        b.flowstats.col(j) = fv.flowstats;
    }
    return b;
}

FeatureBatch make_batch(std::span<const FeatureVector> features) {
    std::vector<std::size_t> idx(features.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
    }
    return make_batch(features, idx);
}

void to_json(nlohmann::json &j, const AblationConfig &a) {
    j = nlohmann::json{{"use_flowstats", a.use_flowstats}, {"use_iat", a.use_iat},
                       {"use_dirs", a.use_dirs},           {"pstats_limit", a.pstats_limit},
                       {"standardize", a.standardize},     {"clip", a.clip}};
}

void from_json(const nlohmann::json &j, AblationConfig &a) {
    static const std::vector<std::string> keys = {"use_flowstats", "use_iat", "use_dirs",
                                                  "pstats_limit", "standardize", "clip"};
    for (const auto &[k, v] : j.items()) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
            throw DataError("ablation config: unknown key '" + k + "'");
        }
    }
    a.use_flowstats = j.value("use_flowstats", a.use_flowstats);
    a.use_iat = j.value("use_iat", a.use_iat);
    a.use_dirs = j.value("use_dirs", a.use_dirs);
    a.pstats_limit = j.value("pstats_limit", a.pstats_limit);
    a.standardize = j.value("standardize", a.standardize);
    a.clip = j.value("clip", a.clip);
    if (a.pstats_limit < 1 || a.pstats_limit > kPstatsLen) {
        throw DataError("ablation config: pstats_limit must be in [1, 30]");
    }
}

namespace {

nlohmann::json scaler_json(const FeatureScaler &s) {
    return {{"kind", kind_name(s.kind)}, {"center", s.center}, {"scale", s.scale}, {"constant", s.constant}};
}

FeatureScaler scaler_from(const nlohmann::json &j) {
    FeatureScaler s;
    s.kind = kind_from(j.at("kind").get<std::string>());
    s.center = j.at("center").get<double>();
    s.scale = j.at("scale").get<double>();
    s.constant = j.at("constant").get<bool>();
    return s;
}

} // namespace

void to_json(nlohmann::json &j, const ScalerParams &p) {
    nlohmann::json fs = nlohmann::json::array();
    for (int k = 0; k < kFlowNumerics; ++k) {
        auto e = scaler_json(p.flowstats[k]);
        e["feature"] = flowstat_names()[k];
        e["ceiling"] = p.ceilings[k];
        fs.push_back(e);
    }
    j = nlohmann::json{{"fitted", p.fitted},
                       {"fitted_on", p.fitted_on},
                       {"clip", p.clip},
                       {"clip_quantile", p.clip_quantile},
                       {"iat_clip_ms", {p.iat_min_ms, p.iat_max_ms}},
                       {"size", scaler_json(p.size)},
                       {"iat", scaler_json(p.iat)},
                       {"flowstats", fs}};
}

void from_json(const nlohmann::json &j, ScalerParams &p) {
    p.fitted = j.at("fitted").get<bool>();
    p.fitted_on = j.at("fitted_on").get<std::string>();
    p.clip = j.at("clip").get<bool>();
    p.clip_quantile = j.at("clip_quantile").get<double>();
    p.iat_min_ms = j.at("iat_clip_ms").at(0).get<double>();
    p.iat_max_ms = j.at("iat_clip_ms").at(1).get<double>();
    p.size = scaler_from(j.at("size"));
    p.iat = scaler_from(j.at("iat"));
    const auto &fs = j.at("flowstats");
    if (fs.size() != kFlowNumerics) {
        throw DataError("scalers: expected 7 flow-statistic scalers");
    }
    for (int k = 0; k < kFlowNumerics; ++k) {
        p.flowstats[k] = scaler_from(fs.at(k));
        p.ceilings[k] = fs.at(k).at("ceiling").get<double>();
    }
}

} // namespace flowgate
