#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "kikuchi/error.hpp"
#include "kikuchi/kikuchi_operator.hpp"
#include "kikuchi/pca.hpp"
#include "kikuchi/rng.hpp"
#include "kikuchi/spectral.hpp"

using namespace kikuchi;

namespace {

std::vector<double> bits_to_signs(std::uint32_t n, std::uint64_t mask) {
    std::vector<double> v(n);
    for (std::uint32_t i = 0; i < n; ++i) v[i] = (mask >> i) & 1 ? -1.0 : 1.0;
    return v;
}

std::shared_ptr<const SymmetricTensor> signal(std::uint32_t n, std::uint32_t r, std::vector<double> v, double lambda) {
    return std::make_shared<const SymmetricTensor>(signal_tensor(n, r, Spike{std::move(v), lambda}));
}

std::vector<double> random_signs(std::uint32_t n, std::uint64_t seed) {
    return sample_spike_vector(n, Prior::rademacher, seed);
}

SpectralOptions tight() {
    SpectralOptions o;
    o.tol = 1e-12;
    o.max_iter = 20000;
    return o;
}

} // namespace

TEST(SignalVector, AllOnes) {
    const std::vector<double> v(6, 1.0);
    const auto s = signal_vector(v, 3);
    ASSERT_EQ(s.size(), 20u);
    for (double x : s) EXPECT_EQ(x, 1.0);
}

TEST(SignalVector, ProductsInColexOrder) {
    // v = (-1, 1, 1, -1); colex 2-sets: {0,1} {0,2} {1,2} {0,3} {1,3} {2,3}
    const std::vector<double> v{-1, 1, 1, -1};
    const auto s = signal_vector(v, 2);
    const std::vector<double> expect{-1, -1, 1, 1, -1, -1};
    EXPECT_EQ(s, expect);
}

TEST(SignalVector, RejectsNonBoolean) {
    const std::vector<double> v{1.0, 0.5, -1.0};
    EXPECT_THROW(signal_vector(v, 2), InvalidArgument);
    const std::vector<double> w{1.0, -1.0};
    EXPECT_THROW(signal_vector(w, 3), InvalidArgument);
}

TEST(PlantedQform, EvenExamples) {
    EXPECT_EQ(planted_qform_even_count(10, 4, 4), 90);
    EXPECT_DOUBLE_EQ(planted_qform_even(10, 4, 4, 1.0), 90.0);
    EXPECT_DOUBLE_EQ(planted_qform_even(8, 3, 4, 2.0), 60.0);
    EXPECT_DOUBLE_EQ(planted_qform_even(8, 3, 4, 0.0), 0.0);
    EXPECT_THROW(planted_qform_even(8, 3, 3, 1.0), InvalidArgument);
}

TEST(PlantedQform, EvenMatchesRayleighQuotient) {
    const auto v = random_signs(8, 17);
    const auto t = signal(8, 4, v, 2.0);
    const KikuchiOperator op(t, 3);
    EXPECT_NEAR(rayleigh(op, signal_vector(v, 3)), 60.0, 1e-12);
}

TEST(PlantedQform, OddExampleMatchesDenseForm) {
    EXPECT_EQ(planted_qform_odd_count(8, 2, 3), 240);
    const auto v = random_signs(8, 5);
    const auto t = signal(8, 3, v, 1.0);
    const KikuchiOperator op(t, 2);
    const Eigen::MatrixXd m = op.assemble_dense();
    const auto s = signal_vector(v, 2);
    const Eigen::Map<const Eigen::VectorXd> x(s.data(), static_cast<Eigen::Index>(s.size()));
    EXPECT_DOUBLE_EQ(x.dot(m * x) / x.squaredNorm(), 240.0);
    EXPECT_DOUBLE_EQ(planted_qform_odd(8, 2, 3, 1.0), 240.0);
}

TEST(PlantedQform, OddScalesQuadratically) {
    EXPECT_DOUBLE_EQ(planted_qform_odd(9, 3, 3, 2.0), 4.0 * planted_qform_odd(9, 3, 3, 1.0));
    EXPECT_DOUBLE_EQ(planted_qform_odd(9, 3, 3, 0.0), 0.0);
    EXPECT_THROW(planted_qform_odd_count(9, 3, 4), InvalidArgument);
}

TEST(PlantedQform, EvenIdentityOverSmallGrid) {
    std::uint64_t cases = 0;
    for (std::uint32_t r = 4; r <= 6; r += 2)
        for (std::uint32_t n = r; n <= 10; ++n)
            for (std::uint32_t ell = r / 2; ell <= 4 && ell <= n; ++ell) {
                for (std::uint64_t k = 0; k < 20; ++k) {
                    const auto v = random_signs(n, hash64({n, ell, r, k}));
                    const double lambda = 0.5 + 0.1 * static_cast<double>(k);
                    const auto t = signal(n, r, v, lambda);
                    const KikuchiOperator op(t, ell);
                    const double expect = planted_qform_even(n, ell, r, lambda);
                    ASSERT_NEAR(rayleigh(op, signal_vector(v, ell)), expect, 1e-9 * std::max(1.0, expect))
                        << "n=" << n << " ell=" << ell << " r=" << r;
                    ++cases;
                }
            }
    EXPECT_GT(cases, 300u);
}

TEST(PlantedQform, OddIdentityOverSmallGrid) {
    for (std::uint32_t r = 3; r <= 5; r += 2)
        for (std::uint32_t n = r; n <= 9; ++n)
            for (std::uint32_t ell = (r + 1) / 2; ell <= 4 && ell <= n; ++ell) {
                const auto v = random_signs(n, hash64({n, ell, r}));
                const auto t = signal(n, r, v, 1.5);
                const KikuchiOperator op(t, ell);
                const double expect = planted_qform_odd(n, ell, r, 1.5);
                ASSERT_NEAR(rayleigh(op, signal_vector(v, ell)), expect, 1e-9 * std::max(1.0, expect))
                    << "n=" << n << " ell=" << ell << " r=" << r;
            }
}

TEST(LambdaMin, Formula) {
    EXPECT_DOUBLE_EQ(lambda_min_detectable(10, 4, 4, 45.0), 1.0);
    EXPECT_DOUBLE_EQ(lambda_min_detectable(8, 2, 3, 120.0), 1.0);
    // exactly at lambda_min the planted form is twice the bound
    const double lmin = lambda_min_detectable(12, 3, 4, 7.25);
    EXPECT_NEAR(planted_qform_even(12, 3, 4, lmin), 14.5, 1e-12);
}

TEST(Voting, ExhaustiveNoiselessEven) {
    for (std::uint32_t n = 4; n <= 10; n += 3)
        for (std::uint64_t mask = 0; mask < (1ull << n); ++mask) {
            const auto v = bits_to_signs(n, mask);
            for (std::uint32_t ell = 1; ell < n && ell <= 3; ++ell) {
                const auto u = signal_vector(v, ell);
                const auto res = vote_signs(u, n, ell);
                ASSERT_EQ(res.ties, 0u);
                ASSERT_DOUBLE_EQ(correlation(v, res.v_hat), 1.0) << "n=" << n << " mask=" << mask;
            }
        }
}

TEST(Voting, AllOnesGivesAllPlus) {
    const std::vector<double> v(9, 1.0);
    const auto res = vote_signs(signal_vector(v, 4), 9, 4);
    EXPECT_EQ(res.ties, 0u);
    EXPECT_EQ(res.v_hat, v);
}

TEST(Voting, LengthMismatchThrows) {
    const std::vector<double> u(10, 1.0);
    EXPECT_THROW(vote_signs(u, 6, 2), InvalidArgument);
}

TEST(Voting, ZeroVectorTiesToPlus) {
    const std::vector<double> u(15, 0.0);
    const auto res = vote_signs(u, 6, 2);
    EXPECT_EQ(res.ties, 5u);
    EXPECT_EQ(res.v_hat, std::vector<double>(6, 1.0));
}

TEST(Correlation, Examples) {
    const std::vector<double> v{1, -1, 1, 1, -1, 1};
    std::vector<double> neg(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) neg[k] = -v[k];
    EXPECT_DOUBLE_EQ(correlation(v, v), 1.0);
    EXPECT_DOUBLE_EQ(correlation(v, neg), 1.0);
    EXPECT_DOUBLE_EQ(signed_correlation(v, neg), -1.0);
    auto two = v;
    two[0] = -two[0];
    two[3] = -two[3];
    EXPECT_DOUBLE_EQ(correlation(v, two), 2.0 / 6.0);
    EXPECT_THROW(correlation(v, std::vector<double>(5, 1.0)), InvalidArgument);
    EXPECT_THROW(correlation(v, std::vector<double>(6, 0.5)), InvalidArgument);
}

TEST(Recover, PureSignalEven) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto v = random_signs(10, 100 + s);
        const auto t = signal(10, 4, v, 1.0);
        const auto res = recover(*t, 3, tight(), std::span<const double>(v));
        ASSERT_TRUE(res.correlation);
        EXPECT_DOUBLE_EQ(*res.correlation, 1.0);
        EXPECT_EQ(res.tie_votes, 0u);
        EXPECT_LT(res.eigenvector_residual, 1e-6);
    }
}

TEST(Recover, PureSignalOdd) {
    const auto v = random_signs(9, 3);
    const auto t = signal(9, 3, v, 1.0);
    const auto res = recover(*t, 2, tight(), std::span<const double>(v));
    ASSERT_TRUE(res.correlation);
    EXPECT_DOUBLE_EQ(*res.correlation, 1.0);
}

TEST(Recover, NoTruthLeavesCorrelationEmpty) {
    const auto v = random_signs(8, 9);
    const auto res = recover(*signal(8, 4, v, 1.0), 2, tight());
    EXPECT_FALSE(res.correlation);
    EXPECT_EQ(res.v_hat.size(), 8u);
}

TEST(Recover, RejectsSmallLevel) {
    const auto v = random_signs(8, 9);
    EXPECT_THROW(recover(*signal(8, 6, v, 1.0), 2, tight()), InvalidArgument);
}

TEST(Calibration, NearestRankAndDeterminism) {
    SpectralOptions o;
    o.tol = 1e-8;
    const auto a = calibrate_null(8, 2, 4, Distribution::gaussian, 20, 0.9, o, 77);
    const auto b = calibrate_null(8, 2, 4, Distribution::gaussian, 20, 0.9, o, 77);
    ASSERT_EQ(a.norms.size(), 20u);
    EXPECT_EQ(a.norms, b.norms);
    EXPECT_TRUE(std::is_sorted(a.norms.begin(), a.norms.end()));
    EXPECT_EQ(a.threshold, a.norms[17]);  // ceil(0.9 * 20) = 18th smallest
    const auto top = calibrate_null(8, 2, 4, Distribution::gaussian, 20, 1.0, o, 77);
    EXPECT_EQ(top.threshold, top.norms.back());
    EXPECT_THROW(calibrate_null(8, 2, 4, Distribution::gaussian, 0, 0.9, o, 77), InvalidArgument);
    EXPECT_THROW(calibrate_null(8, 2, 4, Distribution::gaussian, 5, 0.0, o, 77), InvalidArgument);
}

TEST(Detect, AnalyticPureSignal) {
    const auto v = random_signs(10, 2);
    DetectionParams p;
    p.mode = Calibration::analytic;
    p.lambda = 1.0;
    p.norm_bound = 10.0;
    p.spectral = tight();
    const auto verdict = detect(*signal(10, 4, v, 1.0), 3, p, 1);
    EXPECT_EQ(verdict.decision, Decision::planted);
    EXPECT_DOUBLE_EQ(verdict.threshold_used, planted_qform_even(10, 3, 4, 1.0) / 2.0);
    EXPECT_DOUBLE_EQ(verdict.lambda_min_detectable, lambda_min_detectable(10, 3, 4, 10.0));
    p.norm_bound = 0.0;
    EXPECT_THROW(detect(*signal(10, 4, v, 1.0), 3, p, 1), InvalidArgument);
}

TEST(Detect, EmpiricalNeedsTrials) {
    DetectionParams p;
    p.calibration_trials = 0;
    const auto g = sample_tensor(8, 4, Distribution::gaussian, 1);
    EXPECT_THROW(detect(g, 2, p, 1), InvalidArgument);
}

TEST(Detect, DecisionMatchesThreshold) {
    DetectionParams p;
    p.calibration_trials = 30;
    p.spectral.tol = 1e-8;
    for (std::uint64_t s = 0; s < 4; ++s) {
        const auto g = sample_tensor(8, 4, Distribution::gaussian, s);
        const auto verdict = detect(g, 2, p, s);
        EXPECT_EQ(verdict.decision == Decision::planted, verdict.measured_norm > verdict.threshold_used);
    }
}

TEST(Detect, NullFalsePositiveRateIsSmall) {
    SpectralOptions o;
    o.tol = 1e-8;
    const auto cal = calibrate_null(8, 2, 4, Distribution::gaussian, 200, 0.99, o, 1234);
    DetectionParams p;
    p.null_threshold = cal.threshold;
    p.spectral = o;
    int positives = 0;
    for (std::uint64_t s = 0; s < 200; ++s) {
        const auto g = sample_tensor(8, 4, Distribution::gaussian, hash64({99, s}));
        positives += detect(g, 2, p, s).decision == Decision::planted;
    }
    // expected about 2; 10 is far in the binomial tail
    EXPECT_LE(positives, 10);
}

TEST(Detect, MonotoneInLambda) {
    SpectralOptions o;
    o.tol = 1e-10;
    o.max_iter = 5000;
    const auto cal = calibrate_null(10, 2, 4, Distribution::gaussian, 50, 0.99, o, 5);
    DetectionParams p;
    p.null_threshold = cal.threshold;
    p.spectral = o;
    const auto g = sample_tensor(10, 4, Distribution::gaussian, 42);
    const auto v = random_signs(10, 43);
    bool seen_planted = false;
    for (int k = 0; k <= 20; ++k) {
        const double lambda = 0.1 * k;
        const auto verdict = detect(add_spike(g, Spike{v, lambda}), 2, p, 7);
        if (seen_planted) {
            EXPECT_EQ(verdict.decision, Decision::planted) << "lambda=" << lambda;
        }
        seen_planted = seen_planted || verdict.decision == Decision::planted;
    }
    EXPECT_TRUE(seen_planted);
}
