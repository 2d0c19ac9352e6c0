#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace kikuchi {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

BigInt binomial(std::uint64_t n, std::uint64_t k);

/// n! / prod(parts[i]!). Throws InvalidArgument unless the parts sum to n.
BigInt multinomial(std::uint64_t n, std::span<const std::uint64_t> parts);
BigInt multinomial(std::uint64_t n, std::initializer_list<std::uint64_t> parts);

/// E[g^t] for g ~ N(0,1): (t-1)!! for even t, 0 for odd t.
BigInt gaussian_moment(std::uint64_t t);

/// E[s^t] for a uniform sign s.
BigInt rademacher_moment(std::uint64_t t);

BigInt catalan(std::uint64_t q);

/// Narrowing conversion; throws ResourceLimit if the value does not fit.
std::uint64_t to_u64(const BigInt& v);
double to_double(const BigInt& v);

/// A k-subset of {0, ..., n-1}, kept sorted.
class Subset {
public:
    Subset() = default;

    /// Accepts elements in any order; throws InvalidArgument on duplicates
    /// or elements outside [0, n).
    Subset(std::vector<std::uint32_t> elements, std::uint32_t n);
    Subset(std::initializer_list<std::uint32_t> elements, std::uint32_t n);

    std::uint32_t n() const noexcept { return n_; }
    std::size_t size() const noexcept { return elems_.size(); }
    std::span<const std::uint32_t> elements() const noexcept { return elems_; }
    std::uint32_t operator[](std::size_t i) const { return elems_[i]; }
    bool contains(std::uint32_t x) const;

    friend bool operator==(const Subset&, const Subset&) = default;
    friend auto operator<=>(const Subset&, const Subset&) = default;

private:
    std::vector<std::uint32_t> elems_;
    std::uint32_t n_ = 0;
};

/// Colexicographic rank: sum_i C(s_i, i + 1) over the sorted elements.
std::uint64_t rank_subset(const Subset& s);

/// Inverse of rank_subset. Throws InvalidArgument if idx >= C(n, k).
Subset unrank_subset(std::uint64_t idx, std::uint32_t k, std::uint32_t n);

/// Dense table of C(a, b) for a <= max_n, b <= max_k in 64-bit arithmetic.
/// Used on the hot paths (operator rows, tensor lookups); construction
/// throws ResourceLimit if any tabulated value would overflow.
class BinomialTable {
public:
    BinomialTable(std::uint32_t max_n, std::uint32_t max_k);

    std::uint64_t operator()(std::uint32_t a, std::uint32_t b) const noexcept {
        return b > max_k_ ? 0 : table_[static_cast<std::size_t>(a) * (max_k_ + 1) + b];
    }

    std::uint32_t max_n() const noexcept { return max_n_; }
    std::uint32_t max_k() const noexcept { return max_k_; }

    /// Colex rank of a sorted element list.
    std::uint64_t rank(std::span<const std::uint32_t> sorted) const noexcept {
        std::uint64_t r = 0;
        for (std::size_t i = 0; i < sorted.size(); ++i) r += (*this)(sorted[i], static_cast<std::uint32_t>(i + 1));
        return r;
    }

    /// Writes the k elements of the subset with colex rank idx into out.
    void unrank(std::uint64_t idx, std::uint32_t k, std::span<std::uint32_t> out) const noexcept;

private:
    std::uint32_t max_n_;
    std::uint32_t max_k_;
    std::vector<std::uint64_t> table_;
};

} // namespace kikuchi
