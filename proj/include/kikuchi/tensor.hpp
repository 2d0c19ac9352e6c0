#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "kikuchi/combinat.hpp"

namespace kikuchi {

/// Codes match the on-disk distribution field.
enum class Distribution : std::uint32_t {
    gaussian = 0,
    rademacher = 1,
    planted_gaussian = 2,
    planted_rademacher = 3,
};

std::string_view to_string(Distribution d) noexcept;
Distribution parse_distribution(std::string_view name);

/// The noise law underlying a (possibly planted) distribution tag.
Distribution base_noise(Distribution d) noexcept;

/// Order-r symmetric tensor with one independent entry per r-subset of [n],
/// stored densely in colex rank order.
class SymmetricTensor {
public:
    SymmetricTensor(std::uint32_t n, std::uint32_t r, Distribution dist, std::uint64_t seed);
    SymmetricTensor(std::uint32_t n, std::uint32_t r, Distribution dist, std::uint64_t seed,
                    std::vector<double> entries);

    std::uint32_t n() const noexcept { return n_; }
    std::uint32_t order() const noexcept { return r_; }
    Distribution distribution() const noexcept { return dist_; }
    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t size() const noexcept { return entries_.size(); }

    std::span<const double> entries() const noexcept { return entries_; }
    std::span<double> entries() noexcept { return entries_; }

    double entry(const Subset& s) const;
    void set_entry(const Subset& s, double value);
    double at_rank(std::uint64_t rank) const { return entries_.at(rank); }

    const BinomialTable& binomials() const noexcept { return binom_; }

    friend bool operator==(const SymmetricTensor& a, const SymmetricTensor& b) {
        return a.n_ == b.n_ && a.r_ == b.r_ && a.dist_ == b.dist_ && a.seed_ == b.seed_ && a.entries_ == b.entries_;
    }

private:
    std::uint64_t checked_rank(const Subset& s) const;

    std::uint32_t n_;
    std::uint32_t r_;
    Distribution dist_;
    std::uint64_t seed_;
    BinomialTable binom_;
    std::vector<double> entries_;
};

/// Rank-one signal lambda * v^{(x) r}; v is usually boolean.
struct Spike {
    std::vector<double> v;
    double lambda = 0.0;

    bool is_boolean() const noexcept;
};

enum class Prior { rademacher, gaussian };

/// Entry i is drawn from the prior using a counter-based stream keyed by seed.
std::vector<double> sample_spike_vector(std::uint32_t n, Prior prior, std::uint64_t seed);

/// i.i.d. entries from gaussian or rademacher noise; reproducible from
/// (n, r, dist, seed) because entry k depends only on (seed, k).
SymmetricTensor sample_tensor(std::uint32_t n, std::uint32_t r, Distribution dist, std::uint64_t seed);

/// T_S = G_S + lambda * prod_{i in S} v_i. Returns a new tensor tagged as planted.
SymmetricTensor add_spike(const SymmetricTensor& g, const Spike& spike);

/// The pure signal tensor lambda * v^{(x) r} over r-subsets.
SymmetricTensor signal_tensor(std::uint32_t n, std::uint32_t r, const Spike& spike);

void save_tensor(const SymmetricTensor& t, const std::filesystem::path& path);
SymmetricTensor load_tensor(const std::filesystem::path& path);

} // namespace kikuchi
