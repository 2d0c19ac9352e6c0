#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "kikuchi/combinat.hpp"
#include "kikuchi/tensor.hpp"

namespace kikuchi {

enum class Parity { even, odd };

/// Matvec strategy. `streaming` walks each row's support; `blocked` (even r
/// only) groups pairs (I, J) by their common core K = I n J and multiplies a
/// dense C(n, r/2) x C(n, r/2) table of tensor entries against all cores at
/// once. `automatic` picks blocked when it is available and fits in memory.
enum class Kernel { automatic, streaming, blocked };

/// Two tensor ranks whose entries are multiplied in one odd-order summand.
struct EdgePair {
    std::uint64_t first;
    std::uint64_t second;
};

/// One nonzero-support column of a Kikuchi row.
///
/// Even order: `edge` is the colex rank of I xor J and `pairs` is empty.
/// Odd order: `pairs` lists every (t, partition) summand of the entry.
struct Neighbor {
    std::uint64_t column = 0;
    std::uint64_t edge = 0;
    std::vector<EdgePair> pairs;
};

/// Level-ell Kikuchi matrix of a symmetric tensor, applied matrix-free.
///
/// Even r: M[I, J] = G[I xor J] when |I xor J| = r.
/// Odd r:  M[I, J] is nonzero only when |I \ J| = |J \ I| = r - 1, and sums
/// G[O1 + N1 + t] * G[O2 + N2 + t] over vertices t outside I u J and ordered
/// equal splits I \ J = O1 + O2, J \ I = N1 + N2.
class KikuchiOperator {
public:
    static constexpr std::uint64_t kDefaultDenseCap = 5000;

    KikuchiOperator(std::shared_ptr<const SymmetricTensor> tensor, std::uint32_t ell, unsigned threads = 1);

    std::uint32_t n() const noexcept { return tensor_->n(); }
    std::uint32_t order() const noexcept { return tensor_->order(); }
    std::uint32_t ell() const noexcept { return ell_; }
    Parity parity() const noexcept { return order() % 2 == 0 ? Parity::even : Parity::odd; }
    std::uint64_t dim() const noexcept { return dim_; }
    unsigned threads() const noexcept { return threads_; }
    Kernel kernel() const noexcept { return kernel_; }
    /// Throws InvalidArgument when `blocked` is requested for odd r and
    /// ResourceLimit when its tables would be too large.
    void set_kernel(Kernel k);
    /// Kernel a matvec would actually use.
    Kernel effective_kernel() const noexcept;
    const SymmetricTensor& tensor() const noexcept { return *tensor_; }

    double entry(const Subset& i, const Subset& j) const;
    double entry_even(const Subset& i, const Subset& j) const;
    double entry_odd(const Subset& i, const Subset& j) const;

    /// Every column J in the support of row I, with its contribution structure.
    std::vector<Neighbor> neighbors(const Subset& i) const;

    /// y = M x. Rows are split into contiguous blocks, one per worker; every
    /// y[I] is accumulated by a single worker in a fixed order, so the
    /// output does not depend on the worker count.
    void matvec(std::span<const double> x, std::span<double> y, unsigned threads) const;
    void matvec(std::span<const double> x, std::span<double> y) const { matvec(x, y, threads_); }
    std::vector<double> matvec(std::span<const double> x) const;

    /// Alias used by the spectral solvers.
    void apply(std::span<const double> x, std::span<double> y) const { matvec(x, y, threads_); }

    /// Explicit matrix built pairwise from entry(); an oracle for matvec.
    Eigen::MatrixXd assemble_dense(std::uint64_t cap = kDefaultDenseCap) const;

    Subset index_subset(std::uint64_t rank) const;
    std::uint64_t index_rank(const Subset& s) const;

private:
    struct BlockedPlan;

    void check_index(const Subset& s) const;
    bool blocked_fits() const noexcept;
    const BlockedPlan& blocked_plan() const;
    void matvec_blocked(std::span<const double> x, std::span<double> y, unsigned threads) const;

    std::shared_ptr<const SymmetricTensor> tensor_;
    std::uint32_t ell_;
    std::uint64_t dim_;
    unsigned threads_;
    BinomialTable binom_;
    Kernel kernel_ = Kernel::automatic;
    struct LazyPlan;
    std::shared_ptr<LazyPlan> plan_;
};

/// Number of nonzero-support columns per row:
/// even r: C(n - ell, r/2) * C(ell, r/2); odd r: C(ell, r - 1) * C(n - ell, r - 1).
BigInt row_degree(std::uint32_t n, std::uint32_t ell, std::uint32_t r);

} // namespace kikuchi
