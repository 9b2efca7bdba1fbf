#include <gtest/gtest.h>

#include <sstream>

#include "canid/features.hpp"
#include "canid/models/common.hpp"

using namespace canid;

namespace {

FeatureVector fv(std::vector<double> v, SchemaPtr s, std::int64_t t = 0) {
    FeatureVector f;
    f.values = std::move(v);
    f.schema = std::move(s);
    f.window_start = Timestamp{t};
    return f;
}

SchemaPtr named_schema(std::size_t d) {
    auto s = std::make_shared<Schema>();
    for (std::size_t i = 0; i < d; ++i) s->push_back("f" + std::to_string(i));
    return s;
}

std::vector<FeatureVector> random_vectors(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    auto s = named_schema(d);
    std::vector<FeatureVector> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> v(d);
        // correlated coordinates so the spectrum is not flat
        double z = rng.normal();
        for (std::size_t j = 0; j < d; ++j) v[j] = z * static_cast<double>(j + 1) + 0.3 * rng.normal();
        out.push_back(fv(v, s, static_cast<std::int64_t>(i)));
    }
    return out;
}

// Cyclic Jacobi eigenvalue iteration for a symmetric matrix; test-only oracle.
std::pair<std::vector<double>, std::vector<std::vector<double>>> jacobi_eigen(std::vector<std::vector<double>> a) {
    const std::size_t n = a.size();
    std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
                double t = (theta >= 0 ? 1 : -1) / (std::abs(theta) + std::sqrt(theta * theta + 1));
                double c = 1 / std::sqrt(t * t + 1), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
    }
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](auto x, auto y) { return a[x][x] > a[y][y]; });
    std::vector<double> vals;
    std::vector<std::vector<double>> vecs;
    for (auto i : idx) {
        vals.push_back(a[i][i]);
        std::vector<double> col(n);
        for (std::size_t k = 0; k < n; ++k) col[k] = v[k][i];
        vecs.push_back(col);
    }
    return {vals, vecs};
}

}  // namespace

TEST(Windows, HandComputedSingleWindow) {
    // Two IDs; 0x100 at t = 0, 0.5, 1.5 s with bytes {10}, {20}, {30}; 0x200 once, empty.
    Trace t;
    t.frames = {make_frame(Timestamp{0}, 0x100, {10}), make_frame(Timestamp{500000}, 0x100, {20}),
                make_frame(Timestamp{700000}, 0x200, {}), make_frame(Timestamp{1500000}, 0x100, {30}),
                make_frame(Timestamp{2000000}, 0x300, {1})};
    t.meta.driver_label = "male-30-55-1";
    WindowSpec spec{2.0, 1.0, 1, true};
    auto v = extract_windows(t, spec, {0x100, 0x200});
    ASSERT_EQ(v.size(), 1u);  // only (0, 2] is complete
    const auto& x = v[0].values;
    ASSERT_EQ(x.size(), 2u * kFeaturesPerId);
    const auto& s = *v[0].schema;
    EXPECT_EQ(s[0], "100.present");
    EXPECT_EQ(s[4], "100.b0_mean");
    EXPECT_EQ(x[0], 1.0);
    EXPECT_DOUBLE_EQ(x[1], 1.5);                // 3 frames / 2 s
    EXPECT_DOUBLE_EQ(x[2], 0.75);               // mean(0.5, 1.0)
    EXPECT_DOUBLE_EQ(x[3], 0.25);               // population sd
    EXPECT_DOUBLE_EQ(x[4], 20.0);               // b0 mean
    EXPECT_NEAR(x[5], std::sqrt(200.0 / 3), 1e-12);
    EXPECT_EQ(x[6], 0.0);                       // b1 absent
    const double* y = x.data() + kFeaturesPerId;
    EXPECT_EQ(y[0], 1.0);
    EXPECT_DOUBLE_EQ(y[1], 0.5);
    EXPECT_EQ(y[2], 0.0);
    EXPECT_EQ(v[0].label, "male-30-55-1");
}

TEST(Windows, BoundaryFrameBelongsToEarlierWindow) {
    Trace t;
    for (int i = 0; i <= 40; ++i) t.frames.push_back(make_frame(Timestamp{i * 250000}, 0x1, {}));  // 0..10 s
    WindowSpec spec{4.0, 2.0, 1, true};
    auto v = extract_windows(t, spec, {0x1});
    // windows (0,4] (2,6] (4,8] (6,10]
    ASSERT_EQ(v.size(), 4u);
    EXPECT_DOUBLE_EQ(v[0].values[1] * 4.0, 17.0);  // t=0 plus 16 frames in (0,4]
    EXPECT_DOUBLE_EQ(v[1].values[1] * 4.0, 16.0);
    EXPECT_EQ(v[3].window_start, Timestamp{6000000});
}

TEST(Windows, MinFramesAndIncompleteTail) {
    Trace t;
    for (int i = 0; i < 10; ++i) t.frames.push_back(make_frame(Timestamp{i * 1000000}, 0x1, {}));
    WindowSpec spec{5.0, 5.0, 7, true};
    EXPECT_TRUE(extract_windows(t, spec, {0x1}).empty());  // window 0 holds t = 0..5, six frames
    spec.min_frames = 4;
    EXPECT_EQ(extract_windows(t, spec, {0x1}).size(), 1u);
    spec.complete_only = false;
    EXPECT_EQ(extract_windows(t, spec, {0x1}).size(), 2u);
}

TEST(Windows, SpecValidation) {
    Trace t;
    t.frames.push_back(make_frame(Timestamp{0}, 1, {}));
    EXPECT_THROW(extract_windows(t, WindowSpec{10, 20, 1, true}, {1}), UsageError);
    EXPECT_THROW(extract_windows(t, WindowSpec{0, 0, 1, true}, {1}), UsageError);
    EXPECT_THROW(extract_windows(t, WindowSpec{}, {}), UsageError);
}

TEST(Windows, OnlineAccumulatorMatchesBatch) {
    Rng rng(3);
    Trace t;
    std::int64_t ts = 0;
    for (int i = 0; i < 4000; ++i) {
        ts += 1 + static_cast<std::int64_t>(rng.index(5000));
        t.frames.push_back(make_frame(Timestamp{ts}, 0x10 + static_cast<std::uint32_t>(rng.index(4)),
                                      {std::uint8_t(rng.next()), std::uint8_t(rng.next())}));
    }
    WindowSpec spec{2.0, 0.5, 10, true};
    std::vector<std::uint32_t> vocab{0x10, 0x11, 0x12, 0x13};
    auto batch = extract_windows(t, spec, vocab);
    WindowAccumulator acc(spec, vocab);
    std::vector<FeatureVector> online;
    for (const auto& f : t.frames) {
        for (auto& v : acc.advance(f.timestamp + (-1))) online.push_back(std::move(v));
        acc.add(f);
    }
    for (auto& v : acc.advance(t.frames.back().timestamp)) online.push_back(std::move(v));
    ASSERT_EQ(online.size(), batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        EXPECT_EQ(online[i].window_start, batch[i].window_start);
        EXPECT_EQ(online[i].values, batch[i].values);
    }
}

TEST(Lags, MatchHandConcatenation) {
    auto s = named_schema(2);
    std::vector<FeatureVector> v;
    for (int i = 0; i < 5; ++i) v.push_back(fv({double(i), double(10 * i)}, s, i));
    auto out = add_lag_features(v, {1, 3});
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].values, (std::vector<double>{3, 30, 2, 20, 0, 0}));
    EXPECT_EQ(out[1].values, (std::vector<double>{4, 40, 3, 30, 1, 10}));
    EXPECT_EQ(out[0].schema->at(2), "f0@lag1");
    EXPECT_EQ(out[0].schema->at(5), "f1@lag3");
    EXPECT_EQ(out[0].window_start, Timestamp{3});
    EXPECT_THROW(add_lag_features(v, {5}), UsageError);
    EXPECT_THROW(add_lag_features(v, {0}), UsageError);
}

// Lagging then dropping the lag columns returns the unlagged windows (minus the head).
TEST(Lags, CommuteWithSlicing) {
    auto v = random_vectors(30, 4, 8);
    auto lagged = add_lag_features(v, {2});
    for (std::size_t i = 0; i < lagged.size(); ++i) {
        std::vector<double> head(lagged[i].values.begin(), lagged[i].values.begin() + 4);
        std::vector<double> tail(lagged[i].values.begin() + 4, lagged[i].values.end());
        EXPECT_EQ(head, v[i + 2].values);
        EXPECT_EQ(tail, v[i].values);
    }
}

TEST(StandardizerTest, ZeroMeanUnitSdAndConstantColumn) {
    auto s = named_schema(3);
    std::vector<FeatureVector> v{fv({1, 5, 7}, s), fv({2, 5, 9}, s), fv({3, 5, 14}, s)};
    auto st = fit_standardizer(v);
    auto z = apply_standardizer(st, v);
    for (std::size_t j = 0; j < 3; ++j) {
        double m = 0, q = 0;
        for (const auto& x : z) m += x.values[j];
        m /= 3;
        for (const auto& x : z) q += (x.values[j] - m) * (x.values[j] - m);
        EXPECT_NEAR(m, 0.0, 1e-12);
        EXPECT_NEAR(std::sqrt(q / 3), j == 1 ? 0.0 : 1.0, 1e-12);
    }
    EXPECT_EQ(z[0].values[1], 0.0);
    auto other = named_schema(2);
    EXPECT_THROW(apply_standardizer(st, {fv({1, 2}, other)}), ModelError);
}

TEST(Pca, MatchesJacobiOracle) {
    auto v = random_vectors(200, 5, 11);
    auto m = fit_pca(v, 5);
    // oracle covariance with n-1 denominator
    const std::size_t n = v.size(), d = 5;
    std::vector<double> mean(d, 0);
    for (const auto& x : v)
        for (std::size_t j = 0; j < d; ++j) mean[j] += x.values[j] / n;
    std::vector<std::vector<double>> c(d, std::vector<double>(d, 0));
    for (const auto& x : v)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) c[i][j] += (x.values[i] - mean[i]) * (x.values[j] - mean[j]) / (n - 1);
    auto [vals, vecs] = jacobi_eigen(c);
    for (std::size_t i = 0; i < d; ++i) {
        EXPECT_NEAR(m.explained_variance(static_cast<Eigen::Index>(i)), vals[i], 1e-9 * std::max(1.0, vals[0]));
        // compare up to sign
        double dot = 0;
        for (std::size_t k = 0; k < d; ++k) dot += m.components(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) * vecs[i][k];
        if (vals[i] > 1e-6) EXPECT_NEAR(std::abs(dot), 1.0, 1e-6) << "component " << i;
    }
}

TEST(Pca, OrthonormalSortedAndSignNormalized) {
    auto v = random_vectors(100, 6, 12);
    auto m = fit_pca(v, 4);
    Eigen::MatrixXd g = m.components * m.components.transpose();
    EXPECT_TRUE(g.isApprox(Eigen::MatrixXd::Identity(4, 4), 1e-10));
    for (Eigen::Index i = 1; i < 4; ++i) EXPECT_GE(m.explained_variance(i - 1), m.explained_variance(i));
    for (Eigen::Index i = 0; i < 4; ++i) {
        Eigen::Index arg;
        m.components.row(i).cwiseAbs().maxCoeff(&arg);
        EXPECT_GT(m.components(i, arg), 0.0);
    }
    auto r = m.explained_variance_ratio();
    EXPECT_LE(r.sum(), 1.0 + 1e-12);
}

TEST(Pca, ReconstructionErrorNonIncreasingInComponents) {
    auto v = random_vectors(80, 6, 13);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= 6; ++k) {
        double e = pca_reconstruction_error(fit_pca(v, k), v);
        EXPECT_LE(e, prev + 1e-12);
        prev = e;
    }
    EXPECT_NEAR(prev, 0.0, 1e-18 + 1e-12);
}

TEST(Pca, Errors) {
    auto s = named_schema(2);
    std::vector<FeatureVector> same{fv({1, 1}, s), fv({1, 1}, s), fv({1, 1}, s)};
    EXPECT_THROW(fit_pca(same, 1), DataError);
    auto v = random_vectors(10, 3, 1);
    EXPECT_THROW(fit_pca(v, 4), UsageError);
    EXPECT_THROW(fit_pca(v, 0), UsageError);
}

TEST(Pipeline, JsonRoundTripAndOnlineAgreement) {
    Rng rng(21);
    Trace t;
    std::int64_t ts = 0;
    for (int i = 0; i < 6000; ++i) {
        ts += 500 + static_cast<std::int64_t>(rng.index(1000));
        t.frames.push_back(make_frame(Timestamp{ts}, 0x20 + static_cast<std::uint32_t>(rng.index(3)),
                                      {std::uint8_t(rng.index(4)), std::uint8_t(rng.next())}));
    }
    FeaturePipeline p;
    p.window = WindowSpec{1.0, 0.25, 10, true};
    p.vocab = {0x20, 0x21, 0x22};
    p.lags = {1, 2};
    auto raw = p.transform(extract_windows(t, p.window, p.vocab));
    p.pre_pca_standardizer = fit_standardizer(raw);
    p.pca = fit_pca(apply_standardizer(*p.pre_pca_standardizer, raw), 5);
    auto batch = p.run(t);
    ASSERT_FALSE(batch.empty());
    EXPECT_EQ(*batch[0].schema, *p.output_schema());

    auto q = pipeline_from_json(nlohmann::json::parse(to_json(p).dump()));
    auto batch2 = q.run(t);
    ASSERT_EQ(batch2.size(), batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
        for (std::size_t j = 0; j < batch[i].values.size(); ++j)
            EXPECT_NEAR(batch2[i].values[j], batch[i].values[j], 1e-9);

    OnlineFeaturizer on(p);
    std::vector<FeatureVector> online;
    for (const auto& f : t.frames) {
        for (auto& v : on.advance(f.timestamp + (-1))) online.push_back(std::move(v));
        on.add(f);
    }
    for (auto& v : on.advance(t.frames.back().timestamp)) online.push_back(std::move(v));
    ASSERT_EQ(online.size(), batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
        for (std::size_t j = 0; j < batch[i].values.size(); ++j)
            EXPECT_NEAR(online[i].values[j], batch[i].values[j], 1e-12);
}

TEST(FeatureCsv, RoundTripIsExact) {
    auto v = random_vectors(20, 4, 5);
    v[3].label = "male-30-55-1";
    v[3].session = "s1";
    std::stringstream ss;
    write_features_csv(ss, v, *v[0].schema);
    auto back = read_features_csv(ss);
    ASSERT_EQ(back.size(), v.size());
    EXPECT_EQ(*back[0].schema, *v[0].schema);
    for (std::size_t i = 0; i < v.size(); ++i) {
        EXPECT_EQ(back[i].values, v[i].values);
        EXPECT_EQ(back[i].window_start, v[i].window_start);
    }
    EXPECT_EQ(back[3].label, "male-30-55-1");
    EXPECT_EQ(back[3].session, "s1");
    EXPECT_FALSE(back[0].label);
}
