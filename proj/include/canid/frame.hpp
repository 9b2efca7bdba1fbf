#pragma once

// CAN frame model and the candump text-log codec.
//
// Line grammar: "(<sec>.<usec6>) <channel> <ID>#<DATA>" where ID is 3 hex
// digits (11-bit) or 8 hex digits (29-bit) and DATA is 0-16 hex digits or
// the remote marker "R".

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace canid {

/// Microseconds since the epoch. Bus time is stored as an integer so that
/// parse/serialize and every seeded pipeline is bit-exact.
struct Timestamp {
    std::int64_t us = 0;

    static constexpr Timestamp from_seconds(double s) {
        return Timestamp{static_cast<std::int64_t>(s * 1e6 + (s >= 0 ? 0.5 : -0.5))};
    }
    constexpr double seconds() const { return static_cast<double>(us) * 1e-6; }

    friend constexpr auto operator<=>(Timestamp, Timestamp) = default;
    friend constexpr Timestamp operator+(Timestamp a, std::int64_t d) { return Timestamp{a.us + d}; }
    friend constexpr std::int64_t operator-(Timestamp a, Timestamp b) { return a.us - b.us; }
    friend constexpr Timestamp operator-(Timestamp a, std::int64_t d) { return Timestamp{a.us - d}; }
};

inline constexpr std::uint32_t kMaxStandardId = (1u << 11) - 1;
inline constexpr std::uint32_t kMaxExtendedId = (1u << 29) - 1;
inline constexpr std::size_t kMaxDataBytes = 8;

struct CanFrame {
    Timestamp timestamp;
    std::string channel = "can0";
    std::uint32_t arb_id = 0;
    bool is_extended = false;
    bool is_remote = false;
    std::uint8_t dlc = 0;
    std::array<std::uint8_t, kMaxDataBytes> bytes{};

    std::span<const std::uint8_t> data() const { return {bytes.data(), dlc}; }

    void set_data(std::span<const std::uint8_t> d) {
        if (d.size() > kMaxDataBytes) throw DataError("CAN payload longer than 8 bytes");
        bytes.fill(0);
        std::copy(d.begin(), d.end(), bytes.begin());
        dlc = static_cast<std::uint8_t>(d.size());
    }

    bool valid() const {
        if (dlc > kMaxDataBytes) return false;
        if (arb_id > (is_extended ? kMaxExtendedId : kMaxStandardId)) return false;
        if (timestamp.us < 0) return false;
        if (is_remote && dlc != 0) return false;
        return true;
    }

    bool same_payload(const CanFrame& o) const {
        return arb_id == o.arb_id && is_extended == o.is_extended && is_remote == o.is_remote &&
               dlc == o.dlc && std::equal(bytes.begin(), bytes.begin() + dlc, o.bytes.begin());
    }

    friend bool operator==(const CanFrame&, const CanFrame&) = default;
};

inline CanFrame make_frame(Timestamp ts, std::uint32_t id, std::initializer_list<std::uint8_t> data,
                           std::string channel = "can0") {
    CanFrame f;
    f.timestamp = ts;
    f.channel = std::move(channel);
    f.arb_id = id;
    f.is_extended = id > kMaxStandardId;
    f.set_data(std::vector<std::uint8_t>(data));
    return f;
}

// ---------------------------------------------------------------------------
// Parse errors
// ---------------------------------------------------------------------------

enum class ParseErrorKind {
    Syntax,        // structure does not match the line grammar
    Timestamp,     // timestamp not "<digits>.<6 digits>"
    HexDigit,      // non-hex character in ID or payload
    OddHexDigits,  // payload has an odd number of hex digits
    DataTooLong,   // payload longer than 8 bytes
    IdLength,      // ID is neither 3 nor 8 hex digits
    IdOutOfRange,  // ID does not fit 11 (or 29) bits
};

inline const char* to_string(ParseErrorKind k) {
    switch (k) {
        case ParseErrorKind::Syntax: return "syntax";
        case ParseErrorKind::Timestamp: return "malformed timestamp";
        case ParseErrorKind::HexDigit: return "invalid hex digit";
        case ParseErrorKind::OddHexDigits: return "odd hex-digit count";
        case ParseErrorKind::DataTooLong: return "data longer than 8 bytes";
        case ParseErrorKind::IdLength: return "identifier length";
        case ParseErrorKind::IdOutOfRange: return "identifier out of range";
    }
    return "?";
}

class ParseError : public DataError {
public:
    ParseError(ParseErrorKind kind, std::size_t line, std::size_t column, const std::string& what)
        : DataError("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
                    to_string(kind) + (what.empty() ? "" : " (" + what + ")")),
          kind_(kind), line_(line), column_(column) {}

    ParseErrorKind kind() const { return kind_; }
    /// 1-based line number, 0 when parsing a lone string.
    std::size_t line() const { return line_; }
    /// 1-based column of the offending character.
    std::size_t column() const { return column_; }

private:
    ParseErrorKind kind_;
    std::size_t line_;
    std::size_t column_;
};

namespace detail {

inline int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    return -1;
}

inline constexpr char kHexUpper[] = "0123456789ABCDEF";

inline void append_hex(std::string& out, std::uint64_t v, int digits) {
    for (int i = digits - 1; i >= 0; --i) out.push_back(kHexUpper[(v >> (4 * i)) & 0xF]);
}

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

}  // namespace detail

/// Uppercase hex rendering of a byte sequence without separators.
inline std::string to_hex(std::span<const std::uint8_t> data) {
    std::string s;
    s.reserve(data.size() * 2);
    for (auto b : data) detail::append_hex(s, b, 2);
    return s;
}

/// Parses an even-length hex string into bytes. Throws DataError on bad input.
inline std::vector<std::uint8_t> from_hex(std::string_view hex) {
    if (hex.size() % 2 != 0) throw DataError("odd hex-digit count in '" + std::string(hex) + "'");
    std::vector<std::uint8_t> out(hex.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        int hi = detail::hex_value(hex[2 * i]);
        int lo = detail::hex_value(hex[2 * i + 1]);
        if (hi < 0 || lo < 0) throw DataError("invalid hex digit in '" + std::string(hex) + "'");
        out[i] = static_cast<std::uint8_t>(hi << 4 | lo);
    }
    return out;
}

inline std::string format_timestamp(Timestamp ts) {
    std::string s = std::to_string(ts.us / 1000000);
    s.push_back('.');
    std::string frac = std::to_string(ts.us % 1000000);
    s.append(6 - frac.size(), '0');
    s += frac;
    return s;
}

/// Formats the "<ID>#<DATA>" portion shared by candump lines and cansend.
inline std::string format_id_data(const CanFrame& f) {
    std::string s;
    detail::append_hex(s, f.arb_id, f.is_extended ? 8 : 3);
    s.push_back('#');
    if (f.is_remote) {
        s.push_back('R');
    } else {
        s += to_hex(f.data());
    }
    return s;
}

inline std::string write_candump_line(const CanFrame& f) {
    std::string s;
    s.reserve(48);
    s.push_back('(');
    s += format_timestamp(f.timestamp);
    s += ") ";
    s += f.channel;
    s.push_back(' ');
    s += format_id_data(f);
    return s;
}

/// Parses one candump log line. `line_no` is carried into any ParseError.
inline CanFrame parse_candump_line(std::string_view line, std::size_t line_no = 0) {
    using detail::hex_value;
    auto fail = [&](ParseErrorKind k, std::size_t pos, const std::string& what = {}) -> ParseError {
        return ParseError(k, line_no, pos + 1, what);
    };

    while (!line.empty() && detail::is_space(line.back())) line.remove_suffix(1);

    std::size_t pos = 0;
    if (line.empty() || line[0] != '(') throw fail(ParseErrorKind::Syntax, 0, "expected '('");
    pos = 1;

    // timestamp
    std::int64_t sec = 0;
    std::size_t sec_digits = 0;
    while (pos < line.size() && line[pos] >= '0' && line[pos] <= '9') {
        if (sec_digits >= 12) throw fail(ParseErrorKind::Timestamp, pos, "seconds too large");
        sec = sec * 10 + (line[pos] - '0');
        ++pos;
        ++sec_digits;
    }
    if (sec_digits == 0 || pos >= line.size() || line[pos] != '.')
        throw fail(ParseErrorKind::Timestamp, pos);
    ++pos;
    std::int64_t usec = 0;
    std::size_t frac_start = pos;
    while (pos < line.size() && line[pos] >= '0' && line[pos] <= '9') {
        usec = usec * 10 + (line[pos] - '0');
        ++pos;
    }
    if (pos - frac_start != 6) throw fail(ParseErrorKind::Timestamp, frac_start, "need 6 fractional digits");
    if (pos >= line.size() || line[pos] != ')') throw fail(ParseErrorKind::Timestamp, pos, "expected ')'");
    ++pos;

    if (pos >= line.size() || line[pos] != ' ') throw fail(ParseErrorKind::Syntax, pos, "expected space");
    ++pos;

    // channel
    std::size_t ch_start = pos;
    while (pos < line.size() && line[pos] != ' ') ++pos;
    if (pos == ch_start || pos >= line.size()) throw fail(ParseErrorKind::Syntax, ch_start, "missing channel");
    CanFrame f;
    f.timestamp = Timestamp{sec * 1000000 + usec};
    f.channel = std::string(line.substr(ch_start, pos - ch_start));
    ++pos;

    // identifier
    std::size_t id_start = pos;
    std::uint64_t id = 0;
    while (pos < line.size() && line[pos] != '#') {
        int v = hex_value(line[pos]);
        if (v < 0) throw fail(ParseErrorKind::HexDigit, pos);
        id = id << 4 | static_cast<std::uint64_t>(v);
        ++pos;
        if (pos - id_start > 8) throw fail(ParseErrorKind::IdLength, id_start);
    }
    if (pos >= line.size()) throw fail(ParseErrorKind::Syntax, pos, "expected '#'");
    std::size_t id_len = pos - id_start;
    if (id_len == 3) {
        if (id > kMaxStandardId) throw fail(ParseErrorKind::IdOutOfRange, id_start);
    } else if (id_len == 8) {
        if (id > kMaxExtendedId) throw fail(ParseErrorKind::IdOutOfRange, id_start);
        f.is_extended = true;
    } else {
        throw fail(ParseErrorKind::IdLength, id_start);
    }
    f.arb_id = static_cast<std::uint32_t>(id);
    ++pos;

    // payload
    std::string_view payload = line.substr(pos);
    if (payload == "R" || payload == "r") {
        f.is_remote = true;
        return f;
    }
    for (std::size_t i = 0; i < payload.size(); ++i) {
        if (hex_value(payload[i]) < 0) throw fail(ParseErrorKind::HexDigit, pos + i);
    }
    if (payload.size() > 2 * kMaxDataBytes) throw fail(ParseErrorKind::DataTooLong, pos);
    if (payload.size() % 2 != 0) throw fail(ParseErrorKind::OddHexDigits, pos);
    f.dlc = static_cast<std::uint8_t>(payload.size() / 2);
    for (std::size_t i = 0; i < f.dlc; ++i) {
        f.bytes[i] = static_cast<std::uint8_t>(hex_value(payload[2 * i]) << 4 | hex_value(payload[2 * i + 1]));
    }
    return f;
}

/// Parses "ID#DATA" as accepted by cansend, e.g. "0C9#0000000000001800".
inline CanFrame parse_id_data(std::string_view s, Timestamp ts = {}, std::string channel = "can0") {
    std::string line = "(" + format_timestamp(ts) + ") " + channel + " " + std::string(s);
    return parse_candump_line(line);
}

}  // namespace canid
