#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <set>

#include "kikuchi/error.hpp"
#include "kikuchi/kikuchi_operator.hpp"
#include "kikuchi/rng.hpp"

using namespace kikuchi;

namespace {

std::shared_ptr<const SymmetricTensor> tensor(std::uint32_t n, std::uint32_t r, std::uint64_t seed,
                                              Distribution d = Distribution::gaussian) {
    return std::make_shared<const SymmetricTensor>(sample_tensor(n, r, d, seed));
}

std::vector<std::uint32_t> as_vec(const Subset& s) { return {s.elements().begin(), s.elements().end()}; }

double g_of(const SymmetricTensor& g, std::vector<std::uint32_t> e) { return g.entry(Subset(std::move(e), g.n())); }

// Odd entry expanded by brute force over bitmask splits of the two
// difference sets, written independently of the library.
double odd_entry_oracle(const SymmetricTensor& g, const Subset& i, const Subset& j) {
    std::vector<std::uint32_t> out, in;
    for (auto x : i.elements())
        if (!j.contains(x)) out.push_back(x);
    for (auto x : j.elements())
        if (!i.contains(x)) in.push_back(x);
    const std::size_t w = g.order() - 1;
    if (out.size() != w || in.size() != w) return 0.0;
    double total = 0.0;
    for (std::uint32_t t = 0; t < g.n(); ++t) {
        if (i.contains(t) || j.contains(t)) continue;
        for (std::uint32_t ma = 0; ma < (1u << w); ++ma) {
            if (static_cast<std::size_t>(__builtin_popcount(ma)) != w / 2) continue;
            for (std::uint32_t mb = 0; mb < (1u << w); ++mb) {
                if (static_cast<std::size_t>(__builtin_popcount(mb)) != w / 2) continue;
                std::vector<std::uint32_t> e1{t}, e2{t};
                for (std::size_t k = 0; k < w; ++k) {
                    ((ma >> k) & 1 ? e1 : e2).push_back(out[k]);
                    ((mb >> k) & 1 ? e1 : e2).push_back(in[k]);
                }
                total += g_of(g, e1) * g_of(g, e2);
            }
        }
    }
    return total;
}

std::vector<double> random_vector(std::size_t d, std::uint64_t seed) {
    RngStream rng(seed);
    std::vector<double> x(d);
    for (auto& v : x) v = rng.normal();
    return x;
}

double max_abs(const std::vector<double>& x) {
    double m = 0.0;
    for (double v : x) m = std::max(m, std::abs(v));
    return m;
}

} // namespace

TEST(Construction, LevelBounds) {
    EXPECT_THROW(KikuchiOperator(tensor(8, 4, 1), 1), InvalidArgument);
    EXPECT_THROW(KikuchiOperator(tensor(8, 5, 1), 2), InvalidArgument);
    EXPECT_THROW(KikuchiOperator(tensor(8, 4, 1), 9), InvalidArgument);
    EXPECT_THROW(KikuchiOperator(nullptr, 2), InvalidArgument);
    const KikuchiOperator op(tensor(8, 4, 1), 3);
    EXPECT_EQ(op.dim(), 56u);
    EXPECT_EQ(op.parity(), Parity::even);
    EXPECT_EQ(KikuchiOperator(tensor(8, 3, 1), 2).parity(), Parity::odd);
}

TEST(EvenEntry, ExampleFromDefinition) {
    auto g = tensor(9, 4, 3);
    const KikuchiOperator op(g, 6);
    const Subset i({1, 2, 3, 4, 5, 6}, 9), j({1, 2, 3, 4, 7, 8}, 9);
    EXPECT_EQ(op.entry_even(i, j), g->entry(Subset({5, 6, 7, 8}, 9)));
    EXPECT_EQ(op.entry(i, j), op.entry(j, i));
}

TEST(EvenEntry, OffSupportIsZero) {
    const KikuchiOperator op(tensor(9, 4, 3), 3);
    const Subset i({0, 1, 2}, 9);
    EXPECT_EQ(op.entry_even(i, i), 0.0);
    EXPECT_EQ(op.entry_even(i, Subset({0, 1, 5}, 9)), 0.0);  // |I xor J| = 2
    EXPECT_EQ(op.entry_even(i, Subset({4, 5, 6}, 9)), 0.0);  // |I xor J| = 6
    EXPECT_THROW(op.entry_even(i, Subset({0, 1}, 9)), InvalidArgument);
    EXPECT_THROW(op.entry_odd(i, i), InvalidArgument);
}

TEST(OddEntry, HandExpansion) {
    auto g = tensor(5, 3, 17);
    const KikuchiOperator op(g, 2);
    const Subset i({0, 1}, 5), j({2, 3}, 5);
    const double expected =
        2.0 * (g_of(*g, {0, 2, 4}) * g_of(*g, {1, 3, 4}) + g_of(*g, {0, 3, 4}) * g_of(*g, {1, 2, 4}));
    EXPECT_NEAR(op.entry_odd(i, j), expected, 1e-12);
    EXPECT_EQ(op.entry_odd(i, i), 0.0);
}

TEST(OddEntry, NoIntermediateVertex) {
    const KikuchiOperator op(tensor(4, 3, 2), 2);
    EXPECT_EQ(op.entry_odd(Subset({0, 1}, 4), Subset({2, 3}, 4)), 0.0);
}

TEST(OddEntry, MatchesBruteForceExpander) {
    for (auto [n, ell, r] : {std::tuple{7u, 3u, 3u}, std::tuple{6u, 2u, 3u}, std::tuple{9u, 4u, 5u}}) {
        auto g = tensor(n, r, n * 31 + ell);
        const KikuchiOperator op(g, ell);
        for (std::uint64_t a = 0; a < op.dim(); ++a)
            for (std::uint64_t b = 0; b < op.dim(); ++b) {
                const Subset i = op.index_subset(a), j = op.index_subset(b);
                ASSERT_NEAR(op.entry_odd(i, j), odd_entry_oracle(*g, i, j), 1e-12);
            }
    }
}

TEST(Neighbors, EvenCountAndSupport) {
    const KikuchiOperator op(tensor(8, 4, 1), 3);
    for (std::uint64_t a = 0; a < op.dim(); ++a) {
        const Subset i = op.index_subset(a);
        const auto nb = op.neighbors(i);
        ASSERT_EQ(nb.size(), 30u);
        std::set<std::uint64_t> cols;
        for (const auto& x : nb) {
            cols.insert(x.column);
            const auto j = op.index_subset(x.column);
            std::vector<std::uint32_t> diff;
            std::set_symmetric_difference(i.elements().begin(), i.elements().end(), j.elements().begin(),
                                          j.elements().end(), std::back_inserter(diff));
            ASSERT_EQ(diff.size(), 4u);
            ASSERT_EQ(x.edge, rank_subset(Subset(diff, 8)));
        }
        ASSERT_EQ(cols.size(), 30u);
        // Every column at symmetric distance r appears.
        std::size_t expected = 0;
        for (std::uint64_t b = 0; b < op.dim(); ++b) {
            const auto j = op.index_subset(b);
            std::vector<std::uint32_t> diff;
            std::set_symmetric_difference(i.elements().begin(), i.elements().end(), j.elements().begin(),
                                          j.elements().end(), std::back_inserter(diff));
            if (diff.size() == 4) ++expected;
        }
        ASSERT_EQ(expected, 30u);
    }
}

TEST(Neighbors, MinimalLevelGivesDisjointSets) {
    const KikuchiOperator op(tensor(7, 4, 1), 2);
    const Subset i({1, 4}, 7);
    const auto nb = op.neighbors(i);
    EXPECT_EQ(nb.size(), to_u64(binomial(5, 2)));
    for (const auto& x : nb) {
        const auto j = op.index_subset(x.column);
        EXPECT_FALSE(j.contains(1) || j.contains(4));
    }
}

TEST(Neighbors, OddCount) {
    const KikuchiOperator op(tensor(6, 3, 1), 2);
    for (std::uint64_t a = 0; a < op.dim(); ++a) {
        const auto nb = op.neighbors(op.index_subset(a));
        ASSERT_EQ(nb.size(), 6u);
        for (const auto& x : nb) ASSERT_EQ(x.pairs.size(), 2u * 2u * 2u);  // two splits per side, two choices of t
    }
}

TEST(RowDegree, Formulas) {
    EXPECT_EQ(row_degree(8, 3, 4), 30);
    EXPECT_EQ(row_degree(10, 2, 4), binomial(8, 2));
    EXPECT_EQ(row_degree(12, 3, 6), binomial(9, 3));
    EXPECT_EQ(row_degree(6, 2, 3), 6);
}

TEST(Matvec, ZeroVector) {
    const KikuchiOperator op(tensor(9, 4, 2), 3);
    std::vector<double> x(op.dim(), 0.0);
    const auto y = op.matvec(x);
    EXPECT_EQ(max_abs(y), 0.0);
}

TEST(Matvec, LengthMismatchThrows) {
    const KikuchiOperator op(tensor(9, 4, 2), 3);
    std::vector<double> x(op.dim() - 1), y(op.dim());
    EXPECT_THROW(op.matvec(x, y), InvalidArgument);
}

TEST(Matvec, MatchesDenseAssembly) {
    for (std::uint32_t r : {3u, 4u})
        for (std::uint32_t n = r; n <= 9; ++n)
            for (std::uint32_t ell = (r + 1) / 2; ell <= std::min(3u, n); ++ell) {
                const KikuchiOperator op(tensor(n, r, 100 * n + 10 * ell + r), ell);
                const Eigen::MatrixXd m = op.assemble_dense();
                for (int k = 0; k < 5; ++k) {
                    const auto x = random_vector(op.dim(), k);
                    const auto y = op.matvec(x);
                    const Eigen::VectorXd ref = m * Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
                    for (std::size_t i = 0; i < y.size(); ++i)
                        ASSERT_LE(std::abs(y[i] - ref[i]), 1e-10 * std::max(1.0, max_abs(x))) << n << ell << r;
                }
            }
}

TEST(Matvec, Symmetric) {
    const KikuchiOperator op(tensor(11, 4, 5), 3);
    const auto u = random_vector(op.dim(), 1), v = random_vector(op.dim(), 2);
    const auto mu = op.matvec(u), mv = op.matvec(v);
    double a = 0, b = 0, scale = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        a += u[i] * mv[i];
        b += mu[i] * v[i];
        scale += std::abs(u[i] * mv[i]);
    }
    EXPECT_LE(std::abs(a - b), 1e-10 * scale);
}

TEST(Matvec, BitIdenticalAcrossWorkerCounts) {
    for (auto [n, ell, r] : {std::tuple{14u, 4u, 4u}, std::tuple{10u, 3u, 3u}, std::tuple{13u, 5u, 6u}}) {
        KikuchiOperator op(tensor(n, r, 9), ell);
        const auto x = random_vector(op.dim(), 3);
        for (Kernel k : {Kernel::streaming, Kernel::automatic}) {
            op.set_kernel(k);
            std::vector<double> y1(op.dim()), y3(op.dim()), y4(op.dim());
            op.matvec(x, y1, 1);
            op.matvec(x, y3, 3);
            op.matvec(x, y4, 4);
            ASSERT_EQ(y1, y3);
            ASSERT_EQ(y1, y4);
        }
    }
}

TEST(Matvec, KernelsAgree) {
    for (auto [n, ell, r] : {std::tuple{12u, 2u, 4u}, std::tuple{12u, 4u, 4u}, std::tuple{11u, 5u, 6u}}) {
        KikuchiOperator op(tensor(n, r, 4), ell);
        const auto x = random_vector(op.dim(), 8);
        op.set_kernel(Kernel::streaming);
        const auto ys = op.matvec(x);
        op.set_kernel(Kernel::blocked);
        EXPECT_EQ(op.effective_kernel(), Kernel::blocked);
        const auto yb = op.matvec(x);
        for (std::size_t i = 0; i < ys.size(); ++i) ASSERT_NEAR(ys[i], yb[i], 1e-10 * std::max(1.0, std::abs(ys[i])));
    }
    KikuchiOperator odd(tensor(8, 3, 1), 2);
    EXPECT_THROW(odd.set_kernel(Kernel::blocked), InvalidArgument);
    EXPECT_EQ(odd.effective_kernel(), Kernel::streaming);
}

TEST(Dense, SymmetricZeroDiagonalAndSupport) {
    for (std::uint32_t r : {3u, 4u}) {
        auto g = tensor(8, r, 21, Distribution::rademacher);
        const KikuchiOperator op(g, 3);
        const Eigen::MatrixXd m = op.assemble_dense();
        EXPECT_TRUE(m == m.transpose());
        EXPECT_EQ(m.diagonal().cwiseAbs().maxCoeff(), 0.0);
        for (Eigen::Index a = 0; a < m.rows(); ++a)
            for (Eigen::Index b = 0; b < m.cols(); ++b) {
                if (m(a, b) == 0.0) continue;
                const auto i = op.index_subset(a), j = op.index_subset(b);
                std::vector<std::uint32_t> diff;
                std::set_symmetric_difference(i.elements().begin(), i.elements().end(), j.elements().begin(),
                                              j.elements().end(), std::back_inserter(diff));
                ASSERT_EQ(diff.size(), r % 2 == 0 ? r : 2 * (r - 1));
            }
    }
}

TEST(Dense, NonzeroCountForRademacherEven) {
    const KikuchiOperator op(tensor(9, 4, 5, Distribution::rademacher), 3);
    const Eigen::MatrixXd m = op.assemble_dense();
    const auto nonzeros = (m.array() != 0.0).count();
    EXPECT_EQ(static_cast<std::uint64_t>(nonzeros), op.dim() * to_u64(row_degree(9, 3, 4)));
}

TEST(Dense, CapEnforced) {
    const KikuchiOperator op(tensor(22, 4, 5), 4);
    EXPECT_THROW(op.assemble_dense(), ResourceLimit);
    EXPECT_THROW(op.assemble_dense(100), ResourceLimit);
}

TEST(Index, RoundTrip) {
    const KikuchiOperator op(tensor(9, 4, 5), 3);
    for (std::uint64_t k = 0; k < op.dim(); ++k) ASSERT_EQ(op.index_rank(op.index_subset(k)), k);
    EXPECT_THROW(op.index_rank(Subset({0, 1}, 9)), InvalidArgument);
}
