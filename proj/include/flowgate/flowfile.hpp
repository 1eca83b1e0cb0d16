// flowfile.hpp
//
// CSV serialization of flow records and the service taxonomy.
//
// Flow file header (exact):
//   LABEL,PPI_LEN,PPI_SIZES,PPI_DIRS,PPI_IATS,BYTES,BYTES_REV,PACKETS,
//   PACKETS_REV,DURATION,PPI_DURATION,ROUNDTRIPS,F_FIN,F_FIN_REV,F_RST,
//   F_RST_REV,F_PSH,F_PSH_REV,WINDOW[,SNI]
//
// List columns are '|'-separated.  Durations are seconds written with at
// least six decimals.  The SNI column only exists before anonymization.
//
// Taxonomy file header: PATTERN,SERVICE,GROUP

#ifndef FLOWGATE_FLOWFILE_HPP
#define FLOWGATE_FLOWFILE_HPP

#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "flowgate/types.hpp"

namespace flowgate {

/// parse failure pointing at a line (1-based, header is line 1) and column
class FlowFileError : public DataError {
public:
    FlowFileError(std::size_t line, std::string column, const std::string &what);

    std::size_t line() const { return line_; }
    const std::string &column() const { return column_; }

private:
    std::size_t line_;
    std::string column_;
};

const std::vector<std::string> &flow_columns();

/// Streaming reader; validates the header on construction.
class FlowReader {
public:
    explicit FlowReader(std::istream &in);

    std::optional<FlowRecord> next();
    bool has_sni_column() const { return sni_col_.has_value(); }

private:
    std::istream &in_;
    std::size_t line_no_ = 1;
    std::vector<int> col_index_;
    std::optional<std::size_t> sni_col_;
    std::size_t n_cols_ = 0;
};

/// Streaming writer; writes the header on construction.
class FlowWriter {
public:
    FlowWriter(std::ostream &out, bool with_sni);

    void write(const FlowRecord &record);

private:
    std::ostream &out_;
    bool with_sni_;
};

std::vector<FlowRecord> read_flow_file(const std::filesystem::path &path);
void write_flow_file(const std::filesystem::path &path, const std::vector<FlowRecord> &records,
                     bool with_sni = false);

ServiceTaxonomy read_taxonomy(const std::filesystem::path &path);
ServiceTaxonomy parse_taxonomy(std::istream &in);
void write_taxonomy(const std::filesystem::path &path, const ServiceTaxonomy &taxonomy);

/// Shortest round-trip decimal form of a real, padded to `min_decimals`.
std::string format_real(double value, int min_decimals = 0);

} // namespace flowgate

#endif // FLOWGATE_FLOWFILE_HPP
