#pragma once

#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tripaudit/common.hpp"

namespace tripaudit {

// Incremental delimited-text reader: one record per call, RFC-4180 quoting,
// CRLF tolerant. Memory use is bounded by the longest single record.
class CsvReader {
  public:
    explicit CsvReader(std::istream& in, char delimiter = ',')
        : in_(in), delim_(delimiter) {}

    // Returns false at end of input. Throws InputError on an unterminated
    // quoted field. `fields` is reused between calls.
    bool next(std::vector<std::string>& fields) {
        fields.clear();
        int c = in_.get();
        if (c == std::istream::traits_type::eof()) return false;
        ++record_;

        std::string field;
        bool quoted = false;
        for (;;) {
            if (c == std::istream::traits_type::eof()) {
                if (quoted) {
                    throw InputError("csv: unterminated quoted field at record " +
                                     std::to_string(record_));
                }
                fields.push_back(std::move(field));
                return true;
            }
            char ch = static_cast<char>(c);
            if (quoted) {
                if (ch == '"') {
                    int peek = in_.peek();
                    if (peek == '"') {
                        in_.get();
                        field.push_back('"');
                    } else {
                        quoted = false;
                    }
                } else {
                    field.push_back(ch);
                }
            } else if (ch == '"' && field.empty()) {
                quoted = true;
            } else if (ch == delim_) {
                fields.push_back(std::move(field));
                field.clear();
            } else if (ch == '\n') {
                if (!field.empty() && field.back() == '\r') field.pop_back();
                fields.push_back(std::move(field));
                return true;
            } else {
                field.push_back(ch);
            }
            c = in_.get();
        }
    }

    // 1-based index of the most recently read record.
    std::size_t record_number() const { return record_; }

  private:
    std::istream& in_;
    char delim_;
    std::size_t record_ = 0;
};

inline std::string csv_escape(std::string_view field, char delimiter = ',') {
    bool needs_quotes = false;
    for (char c : field) {
        if (c == delimiter || c == '"' || c == '\n' || c == '\r') {
            needs_quotes = true;
            break;
        }
    }
    if (!needs_quotes) return std::string(field);
    std::string out;
    out.reserve(field.size() + 2);
    out.push_back('"');
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline void write_csv_row(std::ostream& out, std::span<const std::string> fields,
                          char delimiter = ',') {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i > 0) out.put(delimiter);
        out << csv_escape(fields[i], delimiter);
    }
    out.put('\n');
}

}  // namespace tripaudit
