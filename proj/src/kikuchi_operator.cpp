#include "kikuchi/kikuchi_operator.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <thread>

#include "kikuchi/error.hpp"

namespace kikuchi {

namespace {

void first_combination(std::span<std::uint32_t> idx) { std::iota(idx.begin(), idx.end(), 0u); }

// Lexicographic successor of a strictly increasing index tuple over [0, m).
bool next_combination(std::span<std::uint32_t> idx, std::uint32_t m) {
    const std::size_t k = idx.size();
    for (std::size_t i = k; i-- > 0;) {
        if (idx[i] < m - k + i) {
            ++idx[i];
            for (std::size_t j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
            return true;
        }
    }
    return false;
}

// Splits sorted `set` by the index tuple `pick` into (picked, rest).
void split_by_positions(std::span<const std::uint32_t> set, std::span<const std::uint32_t> pick,
                        std::vector<std::uint32_t>& picked, std::vector<std::uint32_t>& rest) {
    picked.clear();
    rest.clear();
    std::size_t p = 0;
    for (std::uint32_t i = 0; i < set.size(); ++i) {
        if (p < pick.size() && pick[p] == i) {
            picked.push_back(set[i]);
            ++p;
        } else {
            rest.push_back(set[i]);
        }
    }
}

// Colex rank of base u {cand[pos_1], ..., cand[pos_h]} in O(h), where base is
// fixed and the inserted elements come from a fixed sorted candidate list
// disjoint from it.
class MergeRanker {
public:
    void reset(std::span<const std::uint32_t> base, std::span<const std::uint32_t> cand, std::uint32_t h,
               const BinomialTable& binom) {
        p_ = static_cast<std::uint32_t>(base.size());
        h_ = h;
        prefix_.assign(static_cast<std::size_t>(h + 1) * (p_ + 1), 0);
        for (std::uint32_t s = 0; s <= h; ++s) {
            std::uint64_t* row = &prefix_[static_cast<std::size_t>(s) * (p_ + 1)];
            for (std::uint32_t k = 0; k < p_; ++k) row[k + 1] = row[k] + binom(base[k], k + 1 + s);
        }
        below_.resize(cand.size());
        std::uint32_t k = 0;
        for (std::size_t c = 0; c < cand.size(); ++c) {
            while (k < p_ && base[k] < cand[c]) ++k;
            below_[c] = k;
        }
    }

    std::uint64_t rank(std::span<const std::uint32_t> pos, std::span<const std::uint32_t> cand,
                       const BinomialTable& binom) const noexcept {
        const std::size_t w = p_ + 1;
        std::uint64_t r = 0;
        std::uint32_t lo = 0;
        for (std::uint32_t s = 0; s < h_; ++s) {
            const std::uint32_t b = below_[pos[s]];
            r += prefix_[s * w + b] - prefix_[s * w + lo];
            r += binom(cand[pos[s]], b + s + 1);
            lo = b;
        }
        r += prefix_[h_ * w + p_] - prefix_[h_ * w + lo];
        return r;
    }

private:
    std::uint32_t p_ = 0;
    std::uint32_t h_ = 0;
    std::vector<std::uint64_t> prefix_;
    std::vector<std::uint32_t> below_;
};

std::vector<std::uint32_t> complement(std::span<const std::uint32_t> set, std::uint32_t n) {
    std::vector<std::uint32_t> out;
    out.reserve(n - set.size());
    std::size_t k = 0;
    for (std::uint32_t x = 0; x < n; ++x) {
        if (k < set.size() && set[k] == x) ++k;
        else out.push_back(x);
    }
    return out;
}

// Value of the odd-order entry given the two difference sets (each of size
// r - 1) and the vertices available for t.
double odd_sum(const SymmetricTensor& g, std::span<const std::uint32_t> out_set, std::span<const std::uint32_t> in_set,
               std::span<const std::uint32_t> t_candidates, std::vector<std::uint32_t>& scratch) {
    const std::uint32_t w = static_cast<std::uint32_t>(out_set.size());
    const std::uint32_t half = w / 2;
    const auto& binom = g.binomials();
    std::vector<std::uint32_t> ai(half), bi(half);
    std::vector<std::uint32_t> a1, a2, b1, b2;
    double total = 0.0;
    auto edge_rank = [&](const std::vector<std::uint32_t>& x, const std::vector<std::uint32_t>& y, std::uint32_t t) {
        scratch.clear();
        scratch.insert(scratch.end(), x.begin(), x.end());
        scratch.insert(scratch.end(), y.begin(), y.end());
        scratch.push_back(t);
        std::sort(scratch.begin(), scratch.end());
        return binom.rank(scratch);
    };
    first_combination(ai);
    do {
        split_by_positions(out_set, ai, a1, a2);
        first_combination(bi);
        do {
            split_by_positions(in_set, bi, b1, b2);
            for (auto t : t_candidates)
                total += g.at_rank(edge_rank(a1, b1, t)) * g.at_rank(edge_rank(a2, b2, t));
        } while (next_combination(bi, w));
    } while (next_combination(ai, w));
    return total;
}

// Pairwise entry from the definition, on sorted element spans.
double literal_entry(const SymmetricTensor& g, std::span<const std::uint32_t> i, std::span<const std::uint32_t> j,
                     std::vector<std::uint32_t>& buf, std::vector<std::uint32_t>& buf2) {
    const std::uint32_t r = g.order();
    if (r % 2 == 0) {
        buf.clear();
        std::set_symmetric_difference(i.begin(), i.end(), j.begin(), j.end(), std::back_inserter(buf));
        return buf.size() == r ? g.at_rank(g.binomials().rank(buf)) : 0.0;
    }
    std::vector<std::uint32_t> out_set, in_set, uni;
    std::set_difference(i.begin(), i.end(), j.begin(), j.end(), std::back_inserter(out_set));
    if (out_set.size() != r - 1) return 0.0;
    std::set_difference(j.begin(), j.end(), i.begin(), i.end(), std::back_inserter(in_set));
    std::set_union(i.begin(), i.end(), j.begin(), j.end(), std::back_inserter(uni));
    buf2 = complement(uni, g.n());
    return odd_sum(g, out_set, in_set, buf2, buf);
}

} // namespace

KikuchiOperator::KikuchiOperator(std::shared_ptr<const SymmetricTensor> tensor, std::uint32_t ell, unsigned threads)
    : tensor_(std::move(tensor)), ell_(ell), dim_(0), threads_(std::max(1u, threads)),
      binom_(tensor_ ? tensor_->n() : 0, std::max(ell, tensor_ ? tensor_->order() : 0)),
      plan_(std::make_shared<LazyPlan>()) {
    if (!tensor_) throw InvalidArgument("KikuchiOperator needs a tensor");
    const std::uint32_t r = tensor_->order();
    if (ell < (r + 1) / 2)
        throw InvalidArgument("level ell = " + std::to_string(ell) + " is below ceil(r/2) = " + std::to_string((r + 1) / 2));
    if (ell > tensor_->n())
        throw InvalidArgument("level ell = " + std::to_string(ell) + " exceeds n = " + std::to_string(tensor_->n()));
    dim_ = to_u64(binomial(tensor_->n(), ell));
}

void KikuchiOperator::check_index(const Subset& s) const {
    if (s.size() != ell_ || s.n() != n())
        throw InvalidArgument("Kikuchi index must be a " + std::to_string(ell_) + "-subset of [" + std::to_string(n()) +
                              "], got size " + std::to_string(s.size()));
}

Subset KikuchiOperator::index_subset(std::uint64_t rank) const {
    if (rank >= dim_) throw InvalidArgument("row index " + std::to_string(rank) + " out of range");
    std::vector<std::uint32_t> e(ell_);
    binom_.unrank(rank, ell_, e);
    return Subset(std::move(e), n());
}

std::uint64_t KikuchiOperator::index_rank(const Subset& s) const {
    check_index(s);
    return binom_.rank(s.elements());
}

double KikuchiOperator::entry(const Subset& i, const Subset& j) const {
    return parity() == Parity::even ? entry_even(i, j) : entry_odd(i, j);
}

double KikuchiOperator::entry_even(const Subset& i, const Subset& j) const {
    if (parity() != Parity::even) throw InvalidArgument("entry_even called on an odd-order operator");
    check_index(i);
    check_index(j);
    std::vector<std::uint32_t> a, b;
    return literal_entry(*tensor_, i.elements(), j.elements(), a, b);
}

double KikuchiOperator::entry_odd(const Subset& i, const Subset& j) const {
    if (parity() != Parity::odd) throw InvalidArgument("entry_odd called on an even-order operator");
    check_index(i);
    check_index(j);
    std::vector<std::uint32_t> a, b;
    return literal_entry(*tensor_, i.elements(), j.elements(), a, b);
}

std::vector<Neighbor> KikuchiOperator::neighbors(const Subset& i) const {
    check_index(i);
    const std::uint32_t r = order();
    const std::uint32_t swap = parity() == Parity::even ? r / 2 : r - 1;
    std::vector<Neighbor> out;
    if (swap > ell_ || swap > n() - ell_) return out;

    const auto in = i.elements();
    const auto comp = complement(in, n());
    std::vector<std::uint32_t> opos(swap), npos(swap), removed, kept, added, unused, j, buf;
    first_combination(opos);
    do {
        split_by_positions(in, opos, removed, kept);
        first_combination(npos);
        do {
            split_by_positions(comp, npos, added, unused);
            j.assign(kept.begin(), kept.end());
            j.insert(j.end(), added.begin(), added.end());
            std::sort(j.begin(), j.end());
            Neighbor nb;
            nb.column = binom_.rank(j);
            if (parity() == Parity::even) {
                buf.assign(removed.begin(), removed.end());
                buf.insert(buf.end(), added.begin(), added.end());
                std::sort(buf.begin(), buf.end());
                nb.edge = tensor_->binomials().rank(buf);
            } else {
                const std::uint32_t half = swap / 2;
                std::vector<std::uint32_t> ai(half), bi(half), a1, a2, b1, b2, e1, e2;
                first_combination(ai);
                do {
                    split_by_positions(removed, ai, a1, a2);
                    first_combination(bi);
                    do {
                        split_by_positions(added, bi, b1, b2);
                        for (auto t : unused) {
                            e1 = a1;
                            e1.insert(e1.end(), b1.begin(), b1.end());
                            e1.push_back(t);
                            std::sort(e1.begin(), e1.end());
                            e2 = a2;
                            e2.insert(e2.end(), b2.begin(), b2.end());
                            e2.push_back(t);
                            std::sort(e2.begin(), e2.end());
                            nb.pairs.push_back({tensor_->binomials().rank(e1), tensor_->binomials().rank(e2)});
                        }
                    } while (next_combination(bi, swap));
                } while (next_combination(ai, swap));
            }
            out.push_back(std::move(nb));
        } while (next_combination(npos, static_cast<std::uint32_t>(comp.size())));
    } while (next_combination(opos, ell_));
    return out;
}

namespace {

struct RowWorker {
    const KikuchiOperator& op;
    const BinomialTable& binom;
    std::vector<std::uint32_t> in, comp, opos, npos, kept, removed, added, unused, scratch;
    MergeRanker col_rank, edge_rank;

    RowWorker(const KikuchiOperator& o, const BinomialTable& b) : op(o), binom(b) {}

    // y[row] = sum over the row's support of M[row, J] * x[J].
    double row_dot(std::uint64_t row, std::span<const double> x) {
        const std::uint32_t n = op.n(), ell = op.ell(), r = op.order();
        const bool even = op.parity() == Parity::even;
        const std::uint32_t swap = even ? r / 2 : r - 1;
        if (swap > ell || swap > n - ell) return 0.0;

        in.resize(ell);
        binom.unrank(row, ell, in);
        comp = complement(in, n);
        const auto m = static_cast<std::uint32_t>(comp.size());
        opos.resize(swap);
        npos.resize(swap);
        const auto& g = op.tensor();
        const auto entries = g.entries();
        const auto& gbinom = g.binomials();

        double acc = 0.0;
        first_combination(opos);
        do {
            split_by_positions(in, opos, removed, kept);
            col_rank.reset(kept, comp, swap, binom);
            if (even) edge_rank.reset(removed, comp, swap, gbinom);
            first_combination(npos);
            do {
                const std::uint64_t col = col_rank.rank(npos, comp, binom);
                if (even) {
                    acc += entries[edge_rank.rank(npos, comp, gbinom)] * x[col];
                } else {
                    split_by_positions(comp, npos, added, unused);
                    acc += odd_sum(g, removed, added, unused, scratch) * x[col];
                }
            } while (next_combination(npos, m));
        } while (next_combination(opos, ell));
        return acc;
    }
};

} // namespace

struct KikuchiOperator::BlockedPlan {
    Eigen::Index halves = 0;  // C(n, r/2)
    Eigen::Index cores = 0;   // C(n, ell - r/2)
    Eigen::MatrixXd table;    // table(A, B) = G[A u B] for disjoint A, B
    std::vector<std::int64_t> index;  // index[K * halves + A] = rank(K u A), or -1
};

struct KikuchiOperator::LazyPlan {
    std::once_flag once;
    std::unique_ptr<BlockedPlan> plan;
};

namespace {

constexpr std::uint64_t kBlockedMemoryCap = std::uint64_t{1} << 25;  // doubles
constexpr Eigen::Index kCoreChunk = 256;

} // namespace

bool KikuchiOperator::blocked_fits() const noexcept {
    if (parity() != Parity::even) return false;
    const std::uint32_t h = order() / 2;
    const BigInt halves = binomial(n(), h), cores = binomial(n(), ell_ - h);
    return halves * halves + 3 * halves * cores <= kBlockedMemoryCap;
}

void KikuchiOperator::set_kernel(Kernel k) {
    if (k == Kernel::blocked) {
        if (parity() != Parity::even) throw InvalidArgument("the blocked kernel needs even r");
        if (!blocked_fits()) throw ResourceLimit("blocked kernel tables exceed the memory cap");
    }
    kernel_ = k;
}

Kernel KikuchiOperator::effective_kernel() const noexcept {
    if (kernel_ == Kernel::automatic) return blocked_fits() ? Kernel::blocked : Kernel::streaming;
    return kernel_;
}

const KikuchiOperator::BlockedPlan& KikuchiOperator::blocked_plan() const {
    std::call_once(plan_->once, [this] {
        auto p = std::make_unique<BlockedPlan>();
        const std::uint32_t h = order() / 2, core = ell_ - h;
        p->halves = static_cast<Eigen::Index>(binom_(n(), h));
        p->cores = static_cast<Eigen::Index>(binom_(n(), core));
        std::vector<std::uint32_t> hs(p->halves * h);
        for (Eigen::Index a = 0; a < p->halves; ++a) binom_.unrank(a, h, std::span(hs).subspan(a * h, h));
        const auto& g = *tensor_;
        std::vector<std::uint32_t> merged;
        p->table = Eigen::MatrixXd::Zero(p->halves, p->halves);
        for (Eigen::Index a = 0; a < p->halves; ++a) {
            const std::span<const std::uint32_t> sa(hs.data() + a * h, h);
            for (Eigen::Index b = 0; b < a; ++b) {
                const std::span<const std::uint32_t> sb(hs.data() + b * h, h);
                merged.clear();
                std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(merged));
                if (merged.size() != 2 * h) continue;
                p->table(a, b) = p->table(b, a) = g.at_rank(g.binomials().rank(merged));
            }
        }
        p->index.assign(static_cast<std::size_t>(p->halves * p->cores), -1);
        std::vector<std::uint32_t> ks(core);
        for (Eigen::Index k = 0; k < p->cores; ++k) {
            binom_.unrank(k, core, ks);
            for (Eigen::Index a = 0; a < p->halves; ++a) {
                const std::span<const std::uint32_t> sa(hs.data() + a * h, h);
                merged.clear();
                std::set_union(ks.begin(), ks.end(), sa.begin(), sa.end(), std::back_inserter(merged));
                if (merged.size() == ell_) p->index[k * p->halves + a] = static_cast<std::int64_t>(binom_.rank(merged));
            }
        }
        plan_->plan = std::move(p);
    });
    return *plan_->plan;
}

void KikuchiOperator::matvec_blocked(std::span<const double> x, std::span<double> y, unsigned threads) const {
    const BlockedPlan& p = blocked_plan();
    Eigen::MatrixXd gathered(p.halves, p.cores), product(p.halves, p.cores);
    for (Eigen::Index k = 0; k < p.cores; ++k)
        for (Eigen::Index a = 0; a < p.halves; ++a) {
            const std::int64_t i = p.index[k * p.halves + a];
            gathered(a, k) = i >= 0 ? x[i] : 0.0;
        }
    // Fixed-width column chunks keep every product identical for any worker count.
    const Eigen::Index chunks = (p.cores + kCoreChunk - 1) / kCoreChunk;
    auto run = [&](Eigen::Index lo, Eigen::Index hi) {
        for (Eigen::Index c = lo; c < hi; ++c) {
            const Eigen::Index start = c * kCoreChunk, width = std::min(kCoreChunk, p.cores - start);
            product.middleCols(start, width).noalias() = p.table * gathered.middleCols(start, width);
        }
    };
    const Eigen::Index workers = std::clamp<Eigen::Index>(threads, 1, chunks);
    if (workers == 1) {
        run(0, chunks);
    } else {
        std::vector<std::jthread> pool;
        for (Eigen::Index w = 0; w < workers; ++w) pool.emplace_back(run, chunks * w / workers, chunks * (w + 1) / workers);
    }
    std::fill(y.begin(), y.end(), 0.0);
    for (Eigen::Index k = 0; k < p.cores; ++k)
        for (Eigen::Index a = 0; a < p.halves; ++a) {
            const std::int64_t i = p.index[k * p.halves + a];
            if (i >= 0) y[i] += product(a, k);
        }
}

void KikuchiOperator::matvec(std::span<const double> x, std::span<double> y, unsigned threads) const {
    if (x.size() != dim_ || y.size() != dim_)
        throw InvalidArgument("matvec: vectors must have length " + std::to_string(dim_) + ", got " +
                              std::to_string(x.size()) + " and " + std::to_string(y.size()));
    if (effective_kernel() == Kernel::blocked) {
        matvec_blocked(x, y, threads);
        return;
    }
    const std::uint64_t workers = std::clamp<std::uint64_t>(threads, 1, std::max<std::uint64_t>(dim_, 1));
    auto run = [&](std::uint64_t lo, std::uint64_t hi) {
        RowWorker w(*this, binom_);
        for (std::uint64_t row = lo; row < hi; ++row) y[row] = w.row_dot(row, x);
    };
    if (workers == 1) {
        run(0, dim_);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::uint64_t k = 0; k < workers; ++k) pool.emplace_back(run, dim_ * k / workers, dim_ * (k + 1) / workers);
}

std::vector<double> KikuchiOperator::matvec(std::span<const double> x) const {
    std::vector<double> y(dim_);
    matvec(x, y, threads_);
    return y;
}

Eigen::MatrixXd KikuchiOperator::assemble_dense(std::uint64_t cap) const {
    if (dim_ > cap)
        throw ResourceLimit("dense assembly of dimension " + std::to_string(dim_) + " exceeds the cap of " +
                            std::to_string(cap));
    const auto d = static_cast<Eigen::Index>(dim_);
    std::vector<std::uint32_t> sets(dim_ * ell_);
    for (std::uint64_t k = 0; k < dim_; ++k) binom_.unrank(k, ell_, std::span(sets).subspan(k * ell_, ell_));
    Eigen::MatrixXd m(d, d);
    std::vector<std::uint32_t> buf, buf2;
    for (Eigen::Index a = 0; a < d; ++a) {
        const std::span<const std::uint32_t> i(sets.data() + a * ell_, ell_);
        for (Eigen::Index b = 0; b < d; ++b)
            m(a, b) = literal_entry(*tensor_, i, std::span<const std::uint32_t>(sets.data() + b * ell_, ell_), buf, buf2);
    }
    return m;
}

BigInt row_degree(std::uint32_t n, std::uint32_t ell, std::uint32_t r) {
    if (ell > n) return 0;
    if (r % 2 == 0) return binomial(n - ell, r / 2) * binomial(ell, r / 2);
    return binomial(ell, r - 1) * binomial(n - ell, r - 1);
}

} // namespace kikuchi
