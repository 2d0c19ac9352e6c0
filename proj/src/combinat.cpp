#include "kikuchi/combinat.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>

#include "kikuchi/error.hpp"

namespace kikuchi {

BigInt binomial(std::uint64_t n, std::uint64_t k) {
    if (k > n) return 0;
    k = std::min(k, n - k);
    BigInt acc = 1;
    // Each prefix product is itself a binomial, so the division is exact.
    for (std::uint64_t i = 1; i <= k; ++i) {
        acc *= n - k + i;
        acc /= i;
    }
    return acc;
}

BigInt multinomial(std::uint64_t n, std::span<const std::uint64_t> parts) {
    std::uint64_t total = 0;
    for (auto p : parts) total += p;
    if (total != n)
        throw InvalidArgument("multinomial: parts sum to " + std::to_string(total) + ", expected " +
                              std::to_string(n));
    BigInt acc = 1;
    std::uint64_t remaining = n;
    for (auto p : parts) {
        acc *= binomial(remaining, p);
        remaining -= p;
    }
    return acc;
}

BigInt multinomial(std::uint64_t n, std::initializer_list<std::uint64_t> parts) {
    return multinomial(n, std::span<const std::uint64_t>(parts.begin(), parts.size()));
}

BigInt gaussian_moment(std::uint64_t t) {
    if (t % 2 == 1) return 0;
    BigInt acc = 1;
    for (std::uint64_t f = t == 0 ? 1 : t - 1; f > 1; f -= 2) acc *= f;
    return acc;
}

BigInt rademacher_moment(std::uint64_t t) { return t % 2 == 0 ? 1 : 0; }

BigInt catalan(std::uint64_t q) { return binomial(2 * q, q) / (q + 1); }

std::uint64_t to_u64(const BigInt& v) {
    if (v < 0 || v > std::numeric_limits<std::uint64_t>::max())
        throw ResourceLimit("integer " + v.str() + " does not fit in 64 bits");
    return v.convert_to<std::uint64_t>();
}

double to_double(const BigInt& v) { return v.convert_to<double>(); }

Subset::Subset(std::vector<std::uint32_t> elements, std::uint32_t n) : elems_(std::move(elements)), n_(n) {
    std::sort(elems_.begin(), elems_.end());
    if (std::adjacent_find(elems_.begin(), elems_.end()) != elems_.end())
        throw InvalidArgument("subset has repeated elements");
    if (!elems_.empty() && elems_.back() >= n)
        throw InvalidArgument("subset element " + std::to_string(elems_.back()) + " outside [0, " +
                              std::to_string(n) + ")");
}

Subset::Subset(std::initializer_list<std::uint32_t> elements, std::uint32_t n)
    : Subset(std::vector<std::uint32_t>(elements), n) {}

bool Subset::contains(std::uint32_t x) const { return std::binary_search(elems_.begin(), elems_.end(), x); }

std::uint64_t rank_subset(const Subset& s) {
    BigInt r = 0;
    for (std::size_t i = 0; i < s.size(); ++i) r += binomial(s[i], i + 1);
    return to_u64(r);
}

Subset unrank_subset(std::uint64_t idx, std::uint32_t k, std::uint32_t n) {
    if (BigInt(idx) >= binomial(n, k))
        throw InvalidArgument("unrank_subset: index " + std::to_string(idx) + " out of range for C(" +
                              std::to_string(n) + ", " + std::to_string(k) + ")");
    BinomialTable table(n, k);
    std::vector<std::uint32_t> out(k);
    table.unrank(idx, k, out);
    return Subset(std::move(out), n);
}

BinomialTable::BinomialTable(std::uint32_t max_n, std::uint32_t max_k)
    : max_n_(max_n), max_k_(max_k),
      table_(static_cast<std::size_t>(max_n + 1) * (max_k + 1), 0) {
    constexpr auto limit = std::numeric_limits<std::uint64_t>::max();
    const std::size_t w = max_k_ + 1;
    for (std::uint32_t a = 0; a <= max_n_; ++a) {
        table_[a * w] = 1;
        for (std::uint32_t b = 1; b <= std::min(a, max_k_); ++b) {
            const std::uint64_t x = table_[(a - 1) * w + b - 1];
            const std::uint64_t y = b <= a - 1 ? table_[(a - 1) * w + b] : 0;
            if (x > limit - y)
                throw ResourceLimit("binomial table overflow at C(" + std::to_string(a) + ", " +
                                    std::to_string(b) + ")");
            table_[a * w + b] = x + y;
        }
    }
}

void BinomialTable::unrank(std::uint64_t idx, std::uint32_t k, std::span<std::uint32_t> out) const noexcept {
    std::uint32_t hi = max_n_;
    for (std::uint32_t i = k; i >= 1; --i) {
        // Largest c in [i-1, hi) with C(c, i) <= idx.
        std::uint32_t lo = i - 1, top = hi;
        while (top - lo > 1) {
            const std::uint32_t mid = lo + (top - lo) / 2;
            if ((*this)(mid, i) <= idx) lo = mid;
            else top = mid;
        }
        out[i - 1] = lo;
        idx -= (*this)(lo, i);
        hi = lo;
    }
}

} // namespace kikuchi
