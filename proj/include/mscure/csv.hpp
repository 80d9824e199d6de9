#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace mscure::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Index of a header column, or -1.
    int column(std::string_view name) const;
};

/// RFC 4180 reader: quoted fields, doubled quotes, CRLF tolerant.
Table read(std::istream& in);
Table read_file(const std::string& path);

/// Quotes a field when it contains a delimiter, quote or newline.
std::string escape(std::string_view field);
void write_row(std::ostream& out, const std::vector<std::string>& fields);

/// Shortest round-trip representation of a double.
std::string format_double(double value);

double parse_double(std::string_view text, std::string_view what);

}  // namespace mscure::csv
