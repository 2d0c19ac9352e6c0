#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include <Eigen/Dense>

#include "kikuchi/combinat.hpp"
#include "kikuchi/tensor.hpp"

namespace kikuchi {

/// Closed walk S_1, ..., S_{2q+1} over ell-subsets, with the multiset of
/// hyperedges (colex ranks of r-subsets) it traverses.
struct TraceWalk {
    std::vector<Subset> boundary_sets;
    std::map<std::uint64_t, std::uint32_t> edge_multiset;

    std::size_t length() const noexcept { return boundary_sets.empty() ? 0 : boundary_sets.size() - 1; }
    bool closed() const noexcept { return !boundary_sets.empty() && boundary_sets.front() == boundary_sets.back(); }
    /// Every hyperedge used an even number of times.
    bool contributing() const noexcept;
};

/// Builds the walk for an even-order sequence of sets; throws
/// InvalidArgument if some step does not have |S_i xor S_{i+1}| = r.
TraceWalk make_even_walk(std::vector<Subset> sets, std::uint32_t r);

/// Closed, every step of symmetric difference r, edges consistent with steps.
bool is_valid_even_walk(const TraceWalk& walk, std::uint32_t r);

/// prod over distinct edges of E[g^mult] under the noise law.
BigInt walk_value(const TraceWalk& walk, Distribution dist);

struct TraceOptions {
    std::uint64_t node_budget = 2'000'000'000ULL;
    unsigned threads = 1;
};

/// E Tr(M^{2q}) summed exactly over closed walks. Even r uses depth-first
/// enumeration with parity pruning; odd r falls back to the brute-force
/// average (Rademacher only).
BigInt expected_trace(std::uint32_t n, std::uint32_t ell, std::uint32_t r, std::uint32_t q, Distribution dist,
                      const TraceOptions& opt = {});

/// Calls f for every closed walk of length 2q (no evenness filter). Tiny scale.
void enumerate_closed_walks(std::uint32_t n, std::uint32_t ell, std::uint32_t r, std::uint32_t q,
                            const std::function<void(const TraceWalk&)>& f);

/// Average of Tr(M^{2q}) over all 2^{C(n,r)} sign assignments, computed with
/// exact integer matrix powers. Requires C(n, r) <= 20.
Rational expected_trace_bruteforce(std::uint32_t n, std::uint32_t ell, std::uint32_t r, std::uint32_t q);

/// Tr(M^{2q}) of an integer-valued symmetric matrix, exactly.
BigInt exact_trace_power(const Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>& m, std::uint32_t q);

/// Tr(M^{2q}) of the Kikuchi matrix of an integer-valued tensor.
BigInt exact_trace_of_tensor(const SymmetricTensor& t, std::uint32_t ell, std::uint32_t q);

struct MonteCarloTrace {
    double mean = 0.0;
    double standard_error = 0.0;
    std::uint64_t trials = 0;
};

MonteCarloTrace monte_carlo_trace(std::uint32_t n, std::uint32_t ell, std::uint32_t r, std::uint32_t q,
                                  Distribution dist, std::uint64_t trials, std::uint64_t seed,
                                  std::uint64_t dense_cap = 5000);

/// Size of the chunked out-and-back family, counted as labelled choices:
/// C(n, ell) * [multinomial(ell; r/2 x m) * multinomial(2m; 2 x m) * C(n - ell, r/2)^m]^{q/m},
/// with m = 2 ell / r buckets.
BigInt lower_bound_family_count(std::uint32_t n, std::uint32_t ell, std::uint32_t r, std::uint32_t q);

/// Emits the distinct valid walks of the chunked family, at most `limit`
/// of them; stops early if f returns false. Returns the number emitted.
std::uint64_t generate_lower_bound_walks(std::uint32_t n, std::uint32_t ell, std::uint32_t r, std::uint32_t q,
                                         std::uint64_t limit, const std::function<bool(const TraceWalk&)>& f);

} // namespace kikuchi
