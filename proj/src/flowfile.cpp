#include "flowgate/flowfile.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace flowgate {

namespace {

enum Col {
    kLabel, kPpiLen, kPpiSizes, kPpiDirs, kPpiIats, kBytes, kBytesRev, kPackets, kPacketsRev,
    kDuration, kPpiDuration, kRoundtrips, kFin, kFinRev, kRst, kRstRev, kPsh, kPshRev, kWindow,
    kColCount
};

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            break;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

template <typename T>
T parse_number(std::string_view tok, std::size_t line, const std::string &col) {
    T value{};
    if (tok.empty()) {
        throw FlowFileError(line, col, "empty value");
    }
    const char *first = tok.data();
    const char *last = tok.data() + tok.size();
    if (*first == '+') {
        ++first;
    }
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) {
        throw FlowFileError(line, col, "cannot parse '" + std::string(tok) + "'");
    }
    if constexpr (std::is_floating_point_v<T>) {
        if (!std::isfinite(value)) {
            throw FlowFileError(line, col, "non-finite value");
        }
    }
    return value;
}

template <typename T>
std::vector<T> parse_list(std::string_view tok, std::size_t line, const std::string &col) {
    std::vector<T> out;
    if (tok.empty()) {
        return out;
    }
    for (auto part : split(tok, '|')) {
        out.push_back(parse_number<T>(part, line, col));
    }
    return out;
}

bool parse_flag(std::string_view tok, std::size_t line, const std::string &col) {
    if (tok == "0") {
        return false;
    }
    if (tok == "1") {
        return true;
    }
    throw FlowFileError(line, col, "flag must be 0 or 1, got '" + std::string(tok) + "'");
}

void check_field(const std::string &value, const char *what) {
    if (value.find_first_of(",\n\r|") != std::string::npos) {
        throw DataError(std::string("flow file: ") + what + " contains a reserved character: " + value);
    }
}

void strip_cr(std::string &line) {
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
}

} // namespace

FlowFileError::FlowFileError(std::size_t line, std::string column, const std::string &what)
    : DataError("line " + std::to_string(line) + ", column " + column + ": " + what),
      line_(line),
      column_(std::move(column)) {}

const std::vector<std::string> &flow_columns() {
    static const std::vector<std::string> cols = {
        "LABEL", "PPI_LEN", "PPI_SIZES", "PPI_DIRS", "PPI_IATS", "BYTES", "BYTES_REV",
        "PACKETS", "PACKETS_REV", "DURATION", "PPI_DURATION", "ROUNDTRIPS", "F_FIN",
        "F_FIN_REV", "F_RST", "F_RST_REV", "F_PSH", "F_PSH_REV", "WINDOW"};
    return cols;
}

std::string format_real(double value, int min_decimals) {
    char buf[512];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed);
    if (ec != std::errc()) {
        throw DataError("cannot format real value");
    }
    std::string s(buf, ptr);
    auto dot = s.find('.');
    int decimals = dot == std::string::npos ? 0 : static_cast<int>(s.size() - dot - 1);
    if (decimals < min_decimals) {
        if (dot == std::string::npos) {
            s.push_back('.');
        }
        s.append(static_cast<std::size_t>(min_decimals - decimals), '0');
    }
    return s;
}

FlowReader::FlowReader(std::istream &in) : in_(in) {
    std::string header;
    if (!std::getline(in_, header)) {
        throw FlowFileError(1, "<header>", "missing header");
    }
    strip_cr(header);
    const auto names = split(header, ',');
    n_cols_ = names.size();
    const auto &cols = flow_columns();
    col_index_.assign(kColCount, -1);
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == "SNI") {
            sni_col_ = i;
            continue;
        }
        auto it = std::find(cols.begin(), cols.end(), names[i]);
        if (it == cols.end()) {
            throw FlowFileError(1, std::string(names[i]), "unknown column");
        }
        col_index_[static_cast<std::size_t>(it - cols.begin())] = static_cast<int>(i);
    }
    for (std::size_t c = 0; c < kColCount; ++c) {
        if (col_index_[c] < 0) {
            throw FlowFileError(1, cols[c], "missing column");
        }
    }
}

std::optional<FlowRecord> FlowReader::next() {
    std::string line;
    while (true) {
        if (!std::getline(in_, line)) {
            return std::nullopt;
        }
        ++line_no_;
        strip_cr(line);
        if (!line.empty()) {
            break;
        }
    }
    const auto fields = split(line, ',');
    if (fields.size() != n_cols_) {
        throw FlowFileError(line_no_, "<row>", "expected " + std::to_string(n_cols_) + " fields, got " +
                                                   std::to_string(fields.size()));
    }
    const auto &names = flow_columns();
    auto f = [&](Col c) { return fields[static_cast<std::size_t>(col_index_[c])]; };
    auto num = [&]<typename T>(Col c, T) { return parse_number<T>(f(c), line_no_, names[c]); };

    FlowRecord r;
    if (!f(kLabel).empty()) {
        r.label = std::string(f(kLabel));
    }
    const auto len = num(kPpiLen, std::int64_t{});
    r.pstats.sizes = parse_list<int>(f(kPpiSizes), line_no_, names[kPpiSizes]);
    r.pstats.dirs = parse_list<int>(f(kPpiDirs), line_no_, names[kPpiDirs]);
    r.pstats.iats = parse_list<double>(f(kPpiIats), line_no_, names[kPpiIats]);
    for (int d : r.pstats.dirs) {
        if (d != 1 && d != -1) {
            throw FlowFileError(line_no_, names[kPpiDirs], "direction must be 1 or -1, got " + std::to_string(d));
        }
    }
    for (int s : r.pstats.sizes) {
        if (s < 1) {
            throw FlowFileError(line_no_, names[kPpiSizes], "payload size must be >= 1");
        }
    }
    for (double t : r.pstats.iats) {
        if (t < 0.0) {
            throw FlowFileError(line_no_, names[kPpiIats], "negative inter-arrival time");
        }
    }
    const auto n = static_cast<std::int64_t>(r.pstats.sizes.size());
    if (len < 0 || len > static_cast<std::int64_t>(kMaxPackets)) {
        throw FlowFileError(line_no_, names[kPpiLen], "length out of range");
    }
    if (n != len) {
        throw FlowFileError(line_no_, names[kPpiSizes], "list length differs from PPI_LEN");
    }
    if (static_cast<std::int64_t>(r.pstats.dirs.size()) != len) {
        throw FlowFileError(line_no_, names[kPpiDirs], "list length differs from PPI_LEN");
    }
    if (static_cast<std::int64_t>(r.pstats.iats.size()) != len) {
        throw FlowFileError(line_no_, names[kPpiIats], "list length differs from PPI_LEN");
    }

    auto &s = r.stats;
    s.bytes_fwd = num(kBytes, std::int64_t{});
    s.bytes_rev = num(kBytesRev, std::int64_t{});
    s.packets_fwd = num(kPackets, std::int64_t{});
    s.packets_rev = num(kPacketsRev, std::int64_t{});
    s.duration_s = num(kDuration, double{});
    s.ppi_duration_s = num(kPpiDuration, double{});
    s.roundtrips = num(kRoundtrips, std::int64_t{});
    s.flags.fin_fwd = parse_flag(f(kFin), line_no_, names[kFin]);
    s.flags.fin_rev = parse_flag(f(kFinRev), line_no_, names[kFinRev]);
    s.flags.rst_fwd = parse_flag(f(kRst), line_no_, names[kRst]);
    s.flags.rst_rev = parse_flag(f(kRstRev), line_no_, names[kRstRev]);
    s.flags.psh_fwd = parse_flag(f(kPsh), line_no_, names[kPsh]);
    s.flags.psh_rev = parse_flag(f(kPshRev), line_no_, names[kPshRev]);
    r.window_ts = num(kWindow, std::int64_t{});
    if (sni_col_ && !fields[*sni_col_].empty()) {
        r.sni = std::string(fields[*sni_col_]);
    }
    return r;
}

FlowWriter::FlowWriter(std::ostream &out, bool with_sni) : out_(out), with_sni_(with_sni) {
    const auto &cols = flow_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) {
        out_ << (i ? "," : "") << cols[i];
    }
    if (with_sni_) {
        out_ << ",SNI";
    }
    out_ << '\n';
}

void FlowWriter::write(const FlowRecord &r) {
    const auto &p = r.pstats;
    if (p.dirs.size() != p.sizes.size() || p.iats.size() != p.sizes.size()) {
        throw DataError("flow file: packet sequence length mismatch");
    }
    if (r.label) {
        check_field(*r.label, "label");
    }
    if (r.sni) {
        if (!with_sni_) {
            throw DataError("flow file: record carries SNI but the file has no SNI column");
        }
        check_field(*r.sni, "sni");
    }
    std::string line;
    line.reserve(512);
    line += r.label.value_or("");
    line += ',';
    line += std::to_string(p.size());
    line += ',';
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (i) line += '|';
        line += std::to_string(p.sizes[i]);
    }
    line += ',';
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (i) line += '|';
        line += std::to_string(p.dirs[i]);
    }
    line += ',';
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (i) line += '|';
        line += format_real(p.iats[i]);
    }
    const auto &s = r.stats;
    auto flag = [](bool b) { return b ? ",1" : ",0"; };
    line += ',' + std::to_string(s.bytes_fwd) + ',' + std::to_string(s.bytes_rev) + ',' +
            std::to_string(s.packets_fwd) + ',' + std::to_string(s.packets_rev) + ',' +
            format_real(s.duration_s, 6) + ',' + format_real(s.ppi_duration_s, 6) + ',' +
            std::to_string(s.roundtrips);
    line += flag(s.flags.fin_fwd);
    line += flag(s.flags.fin_rev);
    line += flag(s.flags.rst_fwd);
    line += flag(s.flags.rst_rev);
    line += flag(s.flags.psh_fwd);
    line += flag(s.flags.psh_rev);
    line += ',' + std::to_string(r.window_ts);
    if (with_sni_) {
        line += ',';
        line += r.sni.value_or("");
    }
    line += '\n';
    out_ << line;
}

std::vector<FlowRecord> read_flow_file(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open flow file " + path.string());
    }
    FlowReader reader(in);
    std::vector<FlowRecord> out;
    while (auto r = reader.next()) {
        out.push_back(std::move(*r));
    }
    return out;
}

void write_flow_file(const std::filesystem::path &path, const std::vector<FlowRecord> &records,
                     bool with_sni) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write flow file " + path.string());
    }
    FlowWriter writer(out, with_sni);
    for (const auto &r : records) {
        writer.write(r);
    }
}

ServiceTaxonomy parse_taxonomy(std::istream &in) {
    std::string line;
    if (!std::getline(in, line)) {
        throw FlowFileError(1, "<header>", "missing taxonomy header");
    }
    strip_cr(line);
    if (line != "PATTERN,SERVICE,GROUP") {
        throw FlowFileError(1, "<header>", "expected PATTERN,SERVICE,GROUP");
    }
    ServiceTaxonomy tax;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        strip_cr(line);
        if (line.empty()) {
            continue;
        }
        const auto f = split(line, ',');
        if (f.size() != 3) {
            throw FlowFileError(line_no, "<row>", "expected 3 fields");
        }
        if (f[1].empty()) {
            throw FlowFileError(line_no, "SERVICE", "empty service");
        }
        if (f[2].empty()) {
            throw FlowFileError(line_no, "GROUP", "empty group");
        }
        try {
            tax.add_service(std::string(f[1]), std::string(f[2]));
        } catch (const DataError &e) {
            throw FlowFileError(line_no, "GROUP", e.what());
        }
        if (!f[0].empty()) {
            tax.add_pattern(std::string(f[0]), std::string(f[1]));
        }
    }
    for (const auto &v : tax.validate()) {
        throw DataError("taxonomy: " + v);
    }
    return tax;
}

ServiceTaxonomy read_taxonomy(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open taxonomy file " + path.string());
    }
    return parse_taxonomy(in);
}

void write_taxonomy(const std::filesystem::path &path, const ServiceTaxonomy &taxonomy) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write taxonomy file " + path.string());
    }
    out << "PATTERN,SERVICE,GROUP\n";
    for (const auto &s : taxonomy.services()) {
        bool any = false;
        for (const auto &p : taxonomy.patterns()) {
            if (p.service == s) {
                out << p.pattern << ',' << s << ',' << taxonomy.group_of(s) << '\n';
                any = true;
            }
        }
        if (!any) {
            out << ',' << s << ',' << taxonomy.group_of(s) << '\n';
        }
    }
}

} // namespace flowgate
