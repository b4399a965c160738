#include <filesystem>

#include <gtest/gtest.h>

#include "mtdrl/ingest.hpp"

using namespace mtdrl;

namespace {

const std::filesystem::path kFixtures = MTDRL_FIXTURES;

std::string fixture(const std::string& name) { return read_text_file(kFixtures / "perf" / name); }

void expect_matches_golden(const WindowedSeries& got, const Dataset& golden) {
    ASSERT_EQ(got.rows.size(), golden.rows.size());
    for (std::size_t r = 0; r < got.rows.size(); ++r)
        for (std::size_t j = 0; j < golden.schema.size(); ++j)
            EXPECT_NEAR(got.rows[r][j], golden.rows[r][j], 1e-9 * std::max(1.0, golden.rows[r][j]))
                << "row " << r << " col " << j;
}

}  // namespace

TEST(ParsePerf, SingleLine) {
    auto s = parse_perf_intervals("     1.000000,1234,,context-switches,1000000000,100.00,,\n");
    ASSERT_EQ(s.size(), 1u);
    EXPECT_DOUBLE_EQ(s[0].timestamp, 1.0);
    EXPECT_EQ(s[0].event, "context-switches");
    ASSERT_TRUE(s[0].count);
    EXPECT_DOUBLE_EQ(*s[0].count, 1234.0);
}

TEST(ParsePerf, SkipsCommentsAndBlankLines) {
    auto s = parse_perf_intervals("# started on x\n\n1.0,5,,a\r\n# mid\n2.0,6,,a,1,100.00\n");
    ASSERT_EQ(s.size(), 2u);
    EXPECT_DOUBLE_EQ(*s[1].count, 6.0);
}

TEST(ParsePerf, NotCountedIsMissing) {
    auto s = parse_perf_intervals("1.0,<not counted>,,kmem:kmalloc,0,0.00,,\n1.0,<not supported>,,x\n");
    ASSERT_EQ(s.size(), 2u);
    EXPECT_FALSE(s[0].count);
    EXPECT_FALSE(s[1].count);
}

TEST(ParsePerf, ErrorsCarryLineNumbers) {
    auto expect_line = [](const std::string& text, const std::string& needle) {
        try {
            parse_perf_intervals(text);
            ADD_FAILURE() << "no error for: " << text;
        } catch (const DataError& e) {
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
        }
    };
    expect_line("1.0,5,,a\n1,2,3\n", "line 2: unknown field count");
    expect_line("# c\nabc,5,,a\n", "line 2: malformed timestamp");
    expect_line("1.0,five,,a\n", "line 1: malformed count");
    expect_line("1.0,-3,,a\n", "line 1: malformed count");
    expect_line("2.0,1,,a\n1.0,1,,b\n1.5,1,,a\n", "line 3: timestamp goes backwards");
    expect_line("1.0,1,,\n", "line 1: missing event name");
}

TEST(Window, HalfOpenBoundaries) {
    auto schema = FeatureSchema::from_names({"a"});
    auto s = parse_perf_intervals("4.999,1,,a\n5.0,10,,a\n9.999,100,,a\n");
    auto w = window_aggregate(s, schema, 5.0);
    ASSERT_EQ(w.rows.size(), 2u);
    EXPECT_DOUBLE_EQ(w.rows[0][0], 1.0);
    EXPECT_DOUBLE_EQ(w.rows[1][0], 110.0);
    EXPECT_EQ(w.window_index, (std::vector<std::int64_t>{0, 1}));
}

TEST(Window, MissingEventDropsWindowUnlessZeroFilled) {
    auto schema = FeatureSchema::from_names({"a", "b"});
    auto s = parse_perf_intervals("1,1,,a\n1,2,,b\n6,3,,a\n11,4,,a\n11,5,,b\n");
    auto w = window_aggregate(s, schema, 5.0);
    ASSERT_EQ(w.rows.size(), 2u);
    ASSERT_EQ(w.dropped.size(), 1u);
    EXPECT_EQ(w.dropped[0].index, 1);
    EXPECT_EQ(w.dropped[0].missing_events, std::vector<std::string>{"b"});
    auto z = window_aggregate(s, schema, 5.0, MissingPolicy::ZeroFill);
    ASSERT_EQ(z.rows.size(), 3u);
    EXPECT_EQ(z.rows[1], (Fingerprint{3.0, 0.0}));
}

TEST(Window, Errors) {
    auto schema = FeatureSchema::from_names({"a", "b"});
    EXPECT_THROW(window_aggregate({}, schema), DataError);
    auto s = parse_perf_intervals("1,1,,a\n");
    EXPECT_THROW(window_aggregate(s, schema, 0.0), UsageError);
    EXPECT_THROW(window_aggregate(s, schema, -1.0), UsageError);
    try {
        window_aggregate(s, schema);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("never observed: b"), std::string::npos);
    }
}

TEST(Window, SumIsPreservedWhenNothingDropped) {
    auto schema = FeatureSchema::from_names({"a"});
    std::string text;
    double total = 0.0;
    for (int i = 0; i < 97; ++i) {
        text += std::to_string(0.37 * i + 0.01) + "," + std::to_string(i * 3 + 1) + ",,a\n";
        total += i * 3 + 1;
    }
    for (double w : {0.5, 1.0, 2.5, 5.0, 7.0, 100.0}) {
        auto out = window_aggregate(parse_perf_intervals(text), schema, w, MissingPolicy::ZeroFill);
        double sum = 0.0;
        for (const auto& r : out.rows) sum += r[0];
        EXPECT_DOUBLE_EQ(sum, total) << "window " << w;
    }
}

TEST(Golden, Basic) {
    auto golden = load_dataset(kFixtures / "perf" / "golden_basic.csv");
    auto w = window_aggregate(parse_perf_intervals(fixture("interval_basic.csv")), golden.schema);
    EXPECT_TRUE(w.dropped.empty());
    expect_matches_golden(w, golden);
}

TEST(Golden, NotCountedAndGaps) {
    auto golden = load_dataset(kFixtures / "perf" / "golden_not_counted.csv");
    auto w = window_aggregate(parse_perf_intervals(fixture("interval_not_counted.csv")), golden.schema);
    EXPECT_EQ(w.window_index, (std::vector<std::int64_t>{0, 2, 4, 5}));
    ASSERT_EQ(w.dropped.size(), 2u);
    EXPECT_EQ(w.dropped[0].index, 1);
    EXPECT_EQ(w.dropped[0].missing_events, std::vector<std::string>{"kmem:kmalloc"});
    EXPECT_EQ(w.dropped[1].index, 3);
    EXPECT_EQ(w.dropped[1].missing_events.size(), 3u);
    expect_matches_golden(w, golden);
}

TEST(Golden, MultiplexedCrlf) {
    auto schema = schema_from_json(nlohmann::json::parse(fixture("schema_multiplexed.json")));
    auto golden = load_dataset(kFixtures / "perf" / "golden_multiplexed.csv");
    EXPECT_EQ(golden.schema.names, schema.names);
    auto w = window_aggregate(parse_perf_intervals(fixture("interval_multiplexed.csv")), schema);
    ASSERT_EQ(w.dropped.size(), 1u);
    EXPECT_EQ(w.dropped[0].index, 2);
    expect_matches_golden(w, golden);
}

TEST(DatasetCsv, RoundTripIsExact) {
    Dataset d{FeatureSchema::from_names({"cs", "net:net_dev_xmit"}), {{0.1, 1e-17}, {123456789.125, 2.0 / 3.0}}};
    auto back = dataset_from_csv(dataset_to_csv(d));
    EXPECT_EQ(back.schema, d.schema);
    EXPECT_EQ(back.rows, d.rows);
}

TEST(DatasetCsv, Errors) {
    try {
        dataset_from_csv("a,b\n1,2\n3\n");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
    }
    EXPECT_THROW(dataset_from_csv("a,b\n1,x\n"), DataError);
    EXPECT_THROW(dataset_from_csv("a,a\n1,2\n"), DataError);
    EXPECT_THROW(dataset_from_csv(""), DataError);
    EXPECT_THROW(read_text_file(kFixtures / "does-not-exist.csv"), DataError);
}
