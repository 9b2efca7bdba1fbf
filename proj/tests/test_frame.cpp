#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "canid/frame.hpp"
#include "canid/models/common.hpp"

using namespace canid;

namespace {

std::vector<std::string> read_lines(const std::string& name) {
    std::ifstream in(std::string(CANID_FIXTURE_DIR) + "/" + name);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);)
        if (!l.empty()) out.push_back(l);
    return out;
}

}  // namespace

TEST(Candump, ParsesFirstListingLine) {
    auto f = parse_candump_line("(1744044851.673900) can0 348#07AC07AA");
    EXPECT_EQ(f.timestamp.us, 1744044851673900LL);
    EXPECT_EQ(f.channel, "can0");
    EXPECT_EQ(f.arb_id, 0x348u);
    EXPECT_FALSE(f.is_extended);
    ASSERT_EQ(f.dlc, 4);
    EXPECT_EQ(f.bytes[0], 0x07);
    EXPECT_EQ(f.bytes[1], 0xAC);
    EXPECT_EQ(f.bytes[2], 0x07);
    EXPECT_EQ(f.bytes[3], 0xAA);
}

TEST(Candump, EmptyPayload) {
    auto f = parse_candump_line("(0.000000) can0 123#");
    EXPECT_EQ(f.dlc, 0);
    EXPECT_EQ(f.arb_id, 0x123u);
    EXPECT_EQ(write_candump_line(f), "(0.000000) can0 123#");
}

TEST(Candump, ObdQueryLine) {
    auto f = parse_candump_line("(1751066848.336901) can0 7DF#02010C5555555555");
    EXPECT_EQ(f.arb_id, 0x7DFu);
    EXPECT_EQ(to_hex(f.data()), "02010C5555555555");
}

TEST(Candump, ZeroPaddedStandardId) {
    CanFrame f;
    f.timestamp = Timestamp::from_seconds(1.5);
    f.arb_id = 0xF;
    EXPECT_EQ(write_candump_line(f), "(1.500000) can0 00F#");
}

TEST(Candump, ListingsRoundTripByteIdentical) {
    for (const char* name : {"listing_a.log", "listing_b.log"}) {
        auto lines = read_lines(name);
        ASSERT_FALSE(lines.empty());
        for (std::size_t i = 0; i < lines.size(); ++i) {
            auto f = parse_candump_line(lines[i], i + 1);
            EXPECT_EQ(write_candump_line(f), lines[i]) << name << ":" << i + 1;
        }
    }
}

TEST(Candump, ListingAUniqueIds) {
    std::set<std::uint32_t> ids;
    for (const auto& l : read_lines("listing_a.log")) ids.insert(parse_candump_line(l).arb_id);
    EXPECT_EQ(ids.size(), 26u);
}

TEST(Candump, ExtendedAndRemoteFrames) {
    auto f = parse_candump_line("(10.000001) vcan1 18DAF110#0102");
    EXPECT_TRUE(f.is_extended);
    EXPECT_EQ(f.arb_id, 0x18DAF110u);
    EXPECT_EQ(write_candump_line(f), "(10.000001) vcan1 18DAF110#0102");

    auto r = parse_candump_line("(10.000002) can0 7E0#R");
    EXPECT_TRUE(r.is_remote);
    EXPECT_EQ(r.dlc, 0);
    EXPECT_EQ(write_candump_line(r), "(10.000002) can0 7E0#R");
}

TEST(Candump, LowercaseAcceptedUppercaseEmitted) {
    auto f = parse_candump_line("(1.000000) can0 1ab#0aff");
    EXPECT_EQ(write_candump_line(f), "(1.000000) can0 1AB#0AFF");
}

TEST(Candump, TrailingWhitespaceIgnored) {
    auto f = parse_candump_line("(1.000000) can0 1AB#0A  \r\n");
    EXPECT_EQ(write_candump_line(f), "(1.000000) can0 1AB#0A");
}

struct BadLine {
    const char* line;
    ParseErrorKind kind;
    std::size_t column;
};

class CandumpErrors : public ::testing::TestWithParam<BadLine> {};

TEST_P(CandumpErrors, DistinctKindWithPosition) {
    const auto& p = GetParam();
    try {
        parse_candump_line(p.line, 7);
        FAIL() << "accepted " << p.line;
    } catch (const ParseError& e) {
        EXPECT_EQ(e.kind(), p.kind) << p.line << " -> " << e.what();
        EXPECT_EQ(e.line(), 7u);
        EXPECT_EQ(e.column(), p.column) << e.what();
    }
}

INSTANTIATE_TEST_SUITE_P(
    Malformed, CandumpErrors,
    ::testing::Values(BadLine{"(12.34) can0 123#00", ParseErrorKind::Timestamp, 5},
                      BadLine{"(x.000000) can0 123#00", ParseErrorKind::Timestamp, 2},
                      BadLine{"(1.000000 can0 123#00", ParseErrorKind::Timestamp, 10},
                      BadLine{"(1.000000) can0 123#ABC", ParseErrorKind::OddHexDigits, 21},
                      BadLine{"(1.000000) can0 123#000102030405060708", ParseErrorKind::DataTooLong, 21},
                      BadLine{"(1.000000) can0 800#00", ParseErrorKind::IdOutOfRange, 17},
                      BadLine{"(1.000000) can0 20000000#00", ParseErrorKind::IdOutOfRange, 17},
                      BadLine{"(1.000000) can0 12#00", ParseErrorKind::IdLength, 17},
                      BadLine{"(1.000000) can0 123#0G", ParseErrorKind::HexDigit, 22},
                      BadLine{"1.000000 can0 123#00", ParseErrorKind::Syntax, 1},
                      BadLine{"(1.000000) can0 12300", ParseErrorKind::Syntax, 22}));

TEST(Candump, NeverAcceptsMoreThanEightBytes) {
    Rng rng(5);
    for (int n = 9; n <= 16; ++n) {
        std::string data;
        for (int i = 0; i < n; ++i) data += "A5";
        EXPECT_THROW(parse_candump_line("(1.000000) can0 100#" + data), ParseError);
    }
}

// Property: serialize(parse(x)) == x and parse(serialize(f)) == f over random valid frames.
TEST(Candump, RandomFramesBijection) {
    Rng rng(2024);
    for (int trial = 0; trial < 5000; ++trial) {
        CanFrame f;
        f.timestamp = Timestamp{static_cast<std::int64_t>(rng.next() % 4000000000000000ull)};
        f.channel = trial % 3 == 0 ? "vcan0" : "can0";
        f.is_extended = rng.uniform() < 0.3;
        f.arb_id = static_cast<std::uint32_t>(rng.next() % ((f.is_extended ? kMaxExtendedId : kMaxStandardId) + 1ull));
        f.is_remote = rng.uniform() < 0.05;
        if (!f.is_remote) {
            f.dlc = static_cast<std::uint8_t>(rng.index(9));
            for (int i = 0; i < f.dlc; ++i) f.bytes[i] = static_cast<std::uint8_t>(rng.next());
        }
        ASSERT_TRUE(f.valid());
        auto line = write_candump_line(f);
        auto g = parse_candump_line(line);
        ASSERT_EQ(g, f) << line;
        ASSERT_EQ(write_candump_line(g), line);
    }
}
