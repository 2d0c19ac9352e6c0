#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <cstring>
#include <unistd.h>

#include "kikuchi/error.hpp"
#include "kikuchi/tensor.hpp"

using namespace kikuchi;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("kk_tensor_" + name + "_" + std::to_string(::getpid()));
}

std::vector<char> read_all(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_all(const std::filesystem::path& p, const std::vector<char>& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <class T>
void poke(std::vector<char>& bytes, std::size_t offset, T value) {
    std::memcpy(bytes.data() + offset, &value, sizeof value);
}

std::uint64_t load_error_offset(const std::filesystem::path& p) {
    try {
        load_tensor(p);
    } catch (const FormatError& e) {
        return e.offset();
    }
    ADD_FAILURE() << "expected a format error";
    return 0;
}

} // namespace

TEST(Sample, RademacherSupport) {
    const auto t = sample_tensor(6, 4, Distribution::rademacher, 11);
    ASSERT_EQ(t.size(), 15u);
    for (double x : t.entries()) EXPECT_TRUE(x == 1.0 || x == -1.0);
}

TEST(Sample, GaussianMeanNearZero) {
    const auto t = sample_tensor(8, 3, Distribution::gaussian, 5);
    ASSERT_EQ(t.size(), 56u);
    const double mean = std::accumulate(t.entries().begin(), t.entries().end(), 0.0) / 56.0;
    EXPECT_LT(std::abs(mean), 4.0 / std::sqrt(56.0));
}

TEST(Sample, GaussianMomentsOverLargeSample) {
    const auto t = sample_tensor(30, 5, Distribution::gaussian, 99);
    double m1 = 0, m2 = 0;
    for (double x : t.entries()) {
        m1 += x;
        m2 += x * x;
    }
    const double k = static_cast<double>(t.size());
    EXPECT_LT(std::abs(m1 / k), 5.0 / std::sqrt(k));
    EXPECT_LT(std::abs(m2 / k - 1.0), 5.0 * std::sqrt(2.0 / k));
}

TEST(Sample, Deterministic) {
    EXPECT_EQ(sample_tensor(9, 4, Distribution::gaussian, 3), sample_tensor(9, 4, Distribution::gaussian, 3));
    EXPECT_NE(sample_tensor(9, 4, Distribution::gaussian, 3).entries()[0],
              sample_tensor(9, 4, Distribution::gaussian, 4).entries()[0]);
}

TEST(Sample, RejectsBadShapes) {
    EXPECT_THROW(sample_tensor(3, 4, Distribution::gaussian, 0), InvalidArgument);
    EXPECT_THROW(sample_tensor(5, 2, Distribution::gaussian, 0), InvalidArgument);
    EXPECT_THROW(sample_tensor(5, 3, Distribution::planted_gaussian, 0), InvalidArgument);
}

TEST(Spike, ZeroLambdaKeepsEntries) {
    const auto g = sample_tensor(7, 3, Distribution::gaussian, 1);
    const auto t = add_spike(g, Spike{std::vector<double>(7, 1.0), 0.0});
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(t.entries()[i], g.entries()[i]);
    EXPECT_EQ(t.distribution(), Distribution::planted_gaussian);
}

TEST(Spike, AllOnesShiftsEveryEntry) {
    const auto g = sample_tensor(7, 4, Distribution::rademacher, 2);
    const auto t = add_spike(g, Spike{std::vector<double>(7, 1.0), 2.0});
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_DOUBLE_EQ(t.entries()[i], g.entries()[i] + 2.0);
    EXPECT_EQ(t.distribution(), Distribution::planted_rademacher);
}

TEST(Spike, AlternatingSignsProduct) {
    const auto g = sample_tensor(6, 4, Distribution::gaussian, 3);
    const std::vector<double> v = {1, -1, 1, -1, 1, -1};
    const double lambda = 1.75;
    const auto t = add_spike(g, Spike{v, lambda});
    const Subset s({0, 1, 2, 3}, 6);
    EXPECT_DOUBLE_EQ(t.entry(s), g.entry(s) + lambda);
    // Every subset against a direct sign product.
    for (std::uint64_t k = 0; k < g.size(); ++k) {
        const Subset e = unrank_subset(k, 4, 6);
        double prod = 1.0;
        for (auto i : e.elements()) prod *= v[i];
        EXPECT_DOUBLE_EQ(t.at_rank(k), g.at_rank(k) + lambda * prod);
    }
}

TEST(Spike, DimensionMismatchThrows) {
    const auto g = sample_tensor(6, 3, Distribution::gaussian, 3);
    EXPECT_THROW(add_spike(g, Spike{std::vector<double>(5, 1.0), 1.0}), InvalidArgument);
}

TEST(Spike, Linearity) {
    const auto g = sample_tensor(9, 4, Distribution::gaussian, 8);
    const auto v = sample_spike_vector(9, Prior::rademacher, 4);
    const auto once = add_spike(g, Spike{v, 1.25 + 0.5});
    const auto twice = add_spike(add_spike(g, Spike{v, 1.25}), Spike{v, 0.5});
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(once.entries()[i], twice.entries()[i], 1e-12);
}

TEST(Spike, SignSymmetryForEvenOrder) {
    const auto g = sample_tensor(8, 4, Distribution::gaussian, 8);
    auto v = sample_spike_vector(8, Prior::rademacher, 4);
    auto neg = v;
    for (auto& x : neg) x = -x;
    EXPECT_EQ(add_spike(g, Spike{v, 3.0}).entries()[5], add_spike(g, Spike{neg, 3.0}).entries()[5]);
    const auto a = add_spike(g, Spike{v, 3.0}), b = add_spike(g, Spike{neg, 3.0});
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(a.entries()[i], b.entries()[i]);
}

TEST(Spike, BooleanPrior) {
    const auto v = sample_spike_vector(50, Prior::rademacher, 1);
    EXPECT_TRUE((Spike{v, 1.0}.is_boolean()));
    EXPECT_FALSE((Spike{sample_spike_vector(50, Prior::gaussian, 1), 1.0}.is_boolean()));
}

TEST(Entry, SetAndGet) {
    SymmetricTensor t(6, 3, Distribution::gaussian, 0);
    t.set_entry(Subset({4, 0, 2}, 6), 3.5);
    EXPECT_EQ(t.entry(Subset({0, 2, 4}, 6)), 3.5);
    EXPECT_EQ(t.entry(Subset({2, 4, 0}, 6)), 3.5);
    EXPECT_THROW(t.entry(Subset({0, 2}, 6)), InvalidArgument);
}

TEST(Entry, ColexMaximumIsLastElement) {
    auto t = sample_tensor(7, 3, Distribution::gaussian, 12);
    EXPECT_EQ(t.entry(Subset({4, 5, 6}, 7)), t.entries().back());
    EXPECT_EQ(t.entry(Subset({0, 1, 2}, 7)), t.entries().front());
}

TEST(Serialization, RoundTrip) {
    const auto p = temp_file("rt");
    for (auto dist : {Distribution::gaussian, Distribution::rademacher}) {
        const auto g = sample_tensor(9, 4, dist, 77);
        save_tensor(g, p);
        EXPECT_EQ(load_tensor(p), g);
        EXPECT_EQ(std::filesystem::file_size(p), 48u + 8u * g.size());
    }
    const auto planted = add_spike(sample_tensor(7, 3, Distribution::gaussian, 1), Spike{std::vector<double>(7, -1.0), 0.3});
    save_tensor(planted, p);
    EXPECT_EQ(load_tensor(p), planted);
    std::filesystem::remove(p);
}

TEST(Serialization, HeaderLayout) {
    const auto p = temp_file("layout");
    save_tensor(sample_tensor(6, 3, Distribution::rademacher, 0x1234), p);
    const auto bytes = read_all(p);
    ASSERT_GE(bytes.size(), 48u);
    EXPECT_EQ(std::string(bytes.data(), 8), "KIKTENSR");
    std::uint32_t u32[4];
    std::memcpy(u32, bytes.data() + 16, 16);
    EXPECT_EQ(u32[0], 1u);
    EXPECT_EQ(u32[1], 6u);
    EXPECT_EQ(u32[2], 3u);
    EXPECT_EQ(u32[3], 1u);
    std::uint64_t u64[2];
    std::memcpy(u64, bytes.data() + 32, 16);
    EXPECT_EQ(u64[0], 0x1234u);
    EXPECT_EQ(u64[1], 20u);
    std::filesystem::remove(p);
}

TEST(Serialization, MalformedFilesReportOffsets) {
    const auto p = temp_file("bad");
    save_tensor(sample_tensor(6, 3, Distribution::gaussian, 1), p);
    const auto good = read_all(p);

    auto truncated = good;
    truncated.resize(good.size() - 3);
    write_all(p, truncated);
    EXPECT_EQ(load_error_offset(p), truncated.size());

    auto magic = good;
    magic[0] = 'X';
    write_all(p, magic);
    EXPECT_EQ(load_error_offset(p), 0u);

    auto version = good;
    poke<std::uint32_t>(version, 16, 9);
    write_all(p, version);
    EXPECT_EQ(load_error_offset(p), 16u);

    auto order = good;
    poke<std::uint32_t>(order, 24, 7);  // r > n
    write_all(p, order);
    EXPECT_EQ(load_error_offset(p), 24u);

    auto dist = good;
    poke<std::uint32_t>(dist, 28, 42);
    write_all(p, dist);
    EXPECT_EQ(load_error_offset(p), 28u);

    auto count = good;
    poke<std::uint64_t>(count, 40, 19);
    write_all(p, count);
    EXPECT_EQ(load_error_offset(p), 40u);

    auto trailing = good;
    trailing.push_back(0);
    write_all(p, trailing);
    EXPECT_THROW(load_tensor(p), FormatError);

    write_all(p, std::vector<char>(10, 0));
    EXPECT_THROW(load_tensor(p), FormatError);
    std::filesystem::remove(p);
}

TEST(Distribution, Names) {
    for (auto d : {Distribution::gaussian, Distribution::rademacher, Distribution::planted_gaussian,
                   Distribution::planted_rademacher})
        EXPECT_EQ(parse_distribution(to_string(d)), d);
    EXPECT_THROW(parse_distribution("cauchy"), InvalidArgument);
}
