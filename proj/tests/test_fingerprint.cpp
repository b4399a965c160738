#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "mtdrl/fingerprint.hpp"
#include "mtdrl/random.hpp"

using namespace mtdrl;

namespace {

std::vector<Fingerprint> gaussian_rows(std::size_t n, std::size_t d, std::uint64_t seed, double mean = 0.0,
                                       double sd = 1.0) {
    Rng rng(seed);
    std::normal_distribution<double> g(mean, sd);
    std::vector<Fingerprint> rows(n, Fingerprint(d));
    for (auto& r : rows)
        for (auto& v : r) v = g(rng);
    return rows;
}

}  // namespace

TEST(NormStats, HandComputedTwoRows) {
    std::vector<Fingerprint> rows{{0, 2}, {2, 2}};
    auto s = fit_norm_stats(rows);
    EXPECT_DOUBLE_EQ(s.mean[0], 1.0);
    EXPECT_DOUBLE_EQ(s.mean[1], 2.0);
    EXPECT_DOUBLE_EQ(s.stddev[0], std::sqrt(2.0));
    EXPECT_DOUBLE_EQ(s.stddev[1], 0.0);
}

TEST(NormStats, RepeatedRowHasZeroStd) {
    std::vector<Fingerprint> rows(7, Fingerprint{3.0, 1.5, 9.0});
    auto s = fit_norm_stats(rows);
    for (double sd : s.stddev) EXPECT_EQ(sd, 0.0);
}

TEST(NormStats, StandardizedDataIsFixedPoint) {
    auto rows = gaussian_rows(500, 4, 3, 10.0, 4.0);
    auto z = normalize_all(rows, fit_norm_stats(rows));
    auto s = fit_norm_stats(z);
    for (std::size_t j = 0; j < 4; ++j) {
        EXPECT_NEAR(s.mean[j], 0.0, 1e-12);
        EXPECT_NEAR(s.stddev[j], 1.0, 1e-12);
    }
}

TEST(NormStats, RejectsEmptyAndNonFinite) {
    EXPECT_THROW(fit_norm_stats(std::vector<Fingerprint>{}), DataError);
    std::vector<Fingerprint> rows{{1, 2}, {3, NAN}};
    try {
        fit_norm_stats(rows);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("row 1, feature 1"), std::string::npos);
    }
}

TEST(Normalize, Cases) {
    NormStats s{{1.0, 5.0, 2.0}, {2.0, 1.0, 0.0}};
    auto z = normalize({3.0, 5.0, 123.0}, s);
    EXPECT_DOUBLE_EQ(z[0], 1.0);
    EXPECT_DOUBLE_EQ(z[1], 0.0);
    EXPECT_DOUBLE_EQ(z[2], 0.0);
    auto zero = normalize(s.mean, s);
    for (double v : zero) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(normalize({1.0, 2.0}, s), DataError);
}

TEST(Normalize, PropertyZeroMeanUnitStd) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto rows = gaussian_rows(50 + seed * 13, 6, seed, -3.0 + seed, 0.5 + seed);
        rows[0][5] = rows[1][5];
        for (auto& r : rows) r[2] = 4.0;  // constant feature
        auto s = fit_norm_stats(normalize_all(rows, fit_norm_stats(rows)));
        for (std::size_t j = 0; j < 6; ++j) {
            EXPECT_NEAR(s.mean[j], 0.0, 1e-9);
            EXPECT_NEAR(s.stddev[j], j == 2 ? 0.0 : 1.0, 1e-9);
        }
    }
}

TEST(Outliers, NoOutlierKeepsAll) {
    std::vector<Fingerprint> rows{{0.5, -2.9}, {3.0, -3.0}, {0.0, 0.0}};
    auto r = remove_outliers(rows, 3.0);
    EXPECT_EQ(r.rows, rows);
    EXPECT_TRUE(r.report.dropped.empty());
}

TEST(Outliers, DropsRowBeyondThreshold) {
    std::vector<Fingerprint> rows{{0.5, 1.0}, {10.0, 0.0}, {-1.0, 2.0}};
    auto r = remove_outliers(rows, 3.0);
    ASSERT_EQ(r.rows.size(), 2u);
    EXPECT_EQ(r.report.dropped, std::vector<std::size_t>{1});
    EXPECT_EQ(r.report.retained, (std::vector<std::size_t>{0, 2}));
}

TEST(Outliers, AllDroppedIsAnError) {
    std::vector<Fingerprint> rows{{5.0}, {-7.0}};
    EXPECT_THROW(remove_outliers(rows, 3.0), DataError);
    EXPECT_THROW(remove_outliers(rows, 0.0), UsageError);
}

// Drop fraction on standard-normal rows vs P(|Z| > 3 in at least one of d).
TEST(Outliers, DropFractionMatchesGaussianTail) {
    const std::size_t d = 10, rows_per_batch = 100, batches = 400;
    const double p1 = std::erfc(3.0 / std::sqrt(2.0));
    const double expected = 1.0 - std::pow(1.0 - p1, static_cast<double>(d));
    std::size_t dropped = 0;
    for (std::size_t b = 0; b < batches; ++b) {
        auto rows = gaussian_rows(rows_per_batch, d, 1000 + b);
        dropped += remove_outliers(rows, 3.0).report.dropped.size();
    }
    const double n = static_cast<double>(rows_per_batch * batches);
    const double frac = static_cast<double>(dropped) / n;
    EXPECT_NEAR(frac, expected, 4.0 * std::sqrt(expected * (1 - expected) / n));
}

TEST(Outliers, PartitionProperty) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto rows = gaussian_rows(60, 5, seed, 0.0, 1.5);
        auto r = remove_outliers(rows, 2.5);
        std::vector<bool> seen(rows.size(), false);
        for (auto i : r.report.retained) seen[i] = true;
        for (auto i : r.report.dropped) {
            EXPECT_FALSE(seen[i]);
            seen[i] = true;
        }
        EXPECT_EQ(r.report.retained.size() + r.report.dropped.size(), rows.size());
        EXPECT_EQ(r.rows.size(), r.report.retained.size());
        for (std::size_t k = 0; k < r.rows.size(); ++k) EXPECT_EQ(r.rows[k], rows[r.report.retained[k]]);
    }
}

TEST(SelectFeatures, DuplicateColumnRemoved) {
    Dataset d{FeatureSchema::from_names({"x", "y", "z"}), {}};
    auto base = gaussian_rows(40, 2, 9, 100.0, 10.0);
    for (auto& r : base) d.rows.push_back({r[0], r[0], r[1]});
    auto s = select_features(d);
    EXPECT_EQ(s.schema.names, (std::vector<std::string>{"x", "z"}));
    ASSERT_EQ(s.removed.size(), 1u);
    EXPECT_EQ(s.removed[0].name, "y");
    EXPECT_EQ(s.removed[0].reason, "correlated");
}

TEST(SelectFeatures, ConstantColumnRemoved) {
    Dataset d{FeatureSchema::from_names({"a", "b"}), {{1, 7}, {2, 7}, {4, 7}}};
    auto s = select_features(d);
    EXPECT_EQ(s.kept, std::vector<std::size_t>{0});
    ASSERT_EQ(s.removed.size(), 1u);
    EXPECT_EQ(s.removed[0].reason, "constant");
}

// r(x1, x2) = 35.5 / sqrt(17.5 * 74.8333) = 0.98098..., r(x1, x3) = 2.5 / sqrt(17.5 * 25.5) = 0.11835...
TEST(SelectFeatures, HandComputedCorrelationToy) {
    Dataset d{FeatureSchema::from_names({"x1", "x2", "x3"}),
              {{1, 1, 1}, {2, 1, 2}, {3, 4, 2}, {4, 6, 7}, {5, 9, 2}, {6, 10, 1}}};
    EXPECT_NEAR(pearson(d.rows, 0, 1), 35.5 / std::sqrt(17.5 * (449.0 / 6.0)), 1e-12);
    EXPECT_NEAR(pearson(d.rows, 0, 1), 0.981, 5e-4);
    EXPECT_NEAR(pearson(d.rows, 0, 2), 2.5 / std::sqrt(17.5 * 25.5), 1e-12);
    auto s = select_features(d);
    EXPECT_EQ(s.schema.names, (std::vector<std::string>{"x1", "x3"}));
}

TEST(SelectFeatures, UnstableFeatureRemoved) {
    Rng rng(4);
    std::normal_distribution<double> g(0.0, 1.0);
    Dataset d{FeatureSchema::from_names({"steady", "drifting"}), {}};
    for (int i = 0; i < 90; ++i) {
        const double spread = i < 60 ? 0.5 : 40.0;  // last third: CV jumps ~80x
        d.rows.push_back({100.0 + g(rng), 100.0 + spread * g(rng)});
    }
    auto s = select_features(d);
    EXPECT_EQ(s.schema.names, std::vector<std::string>{"steady"});
    ASSERT_EQ(s.removed.size(), 1u);
    EXPECT_EQ(s.removed[0].reason, "unstable");
}

TEST(SelectFeatures, ErrorsAndDeterminism) {
    Dataset one{FeatureSchema::from_names({"a"}), {{1}}};
    EXPECT_THROW(select_features(one), DataError);
    Dataset d{FeatureSchema::from_names({"a", "b", "c", "d"}), gaussian_rows(80, 4, 2, 50.0, 5.0)};
    for (auto& r : d.rows) r[3] = 2.0 * r[1] + 1.0;
    auto s1 = select_features(d);
    auto s2 = select_features(d);
    EXPECT_EQ(s1.kept, s2.kept);
    EXPECT_EQ(s1.schema, s2.schema);
    EXPECT_LT(s1.schema.size(), d.schema.size());
    EXPECT_THROW(select_features(d, {1.5}), UsageError);
}

TEST(Schema, DefaultSchemaShape) {
    auto s = default_schema();
    EXPECT_EQ(s.size(), 46u);
    std::array<int, 8> per_family{};
    for (auto f : s.families) ++per_family[static_cast<std::size_t>(f)];
    for (int c : per_family) EXPECT_GT(c, 0);
    EXPECT_EQ(infer_family("writeback:writeback_pages_written"), Family::FileSystem);
    EXPECT_EQ(infer_family("cs"), Family::Cpu);
}

TEST(Schema, RejectsDuplicatesAndJsonRoundTrip) {
    EXPECT_THROW(FeatureSchema::from_names({"a", "a"}), DataError);
    auto s = default_schema();
    EXPECT_EQ(schema_from_json(to_json(s)), s);
    NormStats st{{1.0, -2.5, 1e-300}, {0.1, 0.0, 3.0}};
    EXPECT_EQ(norm_stats_from_json(to_json(st)), st);
    auto bad = to_json(s);
    bad["format_version"] = 99;
    EXPECT_THROW(schema_from_json(bad), DataError);
}

TEST(Project, ReordersByName) {
    Dataset d{FeatureSchema::from_names({"a", "b", "c"}), {{1, 2, 3}}};
    auto p = project(d, FeatureSchema::from_names({"c", "a"}));
    EXPECT_EQ(p.rows[0], (Fingerprint{3, 1}));
    EXPECT_THROW(project(d, FeatureSchema::from_names({"zz"})), DataError);
}
