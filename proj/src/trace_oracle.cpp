#include "kikuchi/trace_oracle.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <numeric>
#include <bit>
#include <string>
#include <thread>

#include "kikuchi/error.hpp"
#include "kikuchi/kikuchi_operator.hpp"
#include "kikuchi/rng.hpp"

namespace kikuchi {

namespace {

using IntMatrix = Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>;

struct Step {
    std::uint64_t column;
    std::uint64_t edge;
};

void check_params(std::uint32_t n, std::uint32_t ell, std::uint32_t r) {
    if (r < 3 || n < r) throw InvalidArgument("trace oracle needs n >= r >= 3");
    if (2 * ell < r || ell > n) throw InvalidArgument("trace oracle needs ceil(r/2) <= ell <= n");
}

// Row-wise support of the even-order Kikuchi matrix with the hyperedge of each step.
std::vector<std::vector<Step>> even_adjacency(std::uint32_t n, std::uint32_t ell, std::uint32_t r) {
    auto zero = std::make_shared<const SymmetricTensor>(n, r, Distribution::rademacher, 0);
    KikuchiOperator op(zero, ell);
    const BigInt work = BigInt(op.dim()) * row_degree(n, ell, r);
    if (work > 50'000'000) throw ResourceLimit("walk enumeration adjacency of " + work.str() + " steps is too large");
    std::vector<std::vector<Step>> adj(op.dim());
    for (std::uint64_t row = 0; row < op.dim(); ++row)
        for (const auto& nb : op.neighbors(op.index_subset(row))) adj[row].push_back({nb.column, nb.edge});
    return adj;
}

std::uint64_t gaussian_walk_weight(std::vector<std::uint64_t> edges) {
    std::sort(edges.begin(), edges.end());
    std::uint64_t w = 1;
    for (std::size_t a = 0; a < edges.size();) {
        std::size_t b = a;
        while (b < edges.size() && edges[b] == edges[a]) ++b;
        w *= gaussian_moment(b - a).convert_to<std::uint64_t>();
        a = b;
    }
    return w;
}

class EvenWalkCounter {
public:
    EvenWalkCounter(const std::vector<std::vector<Step>>& adj, std::uint64_t edges, std::uint32_t q, Distribution dist,
                    std::atomic<std::uint64_t>& nodes, std::uint64_t budget)
        : adj_(adj), mult_(edges, 0), steps_(2 * q), gaussian_(base_noise(dist) == Distribution::gaussian),
          nodes_(nodes), budget_(budget) {}

    void run(std::uint64_t start) {
        start_ = start;
        visit(start, 0);
    }

    const BigInt& total() const noexcept { return total_; }

private:
    void visit(std::uint64_t cur, std::uint32_t depth) {
        if (++local_nodes_ == 4096) {
            if (nodes_.fetch_add(local_nodes_) + local_nodes_ > budget_)
                throw ResourceLimit("expected_trace: node budget of " + std::to_string(budget_) + " exceeded");
            local_nodes_ = 0;
        }
        const std::uint32_t remaining = steps_ - depth;
        if (remaining == 0) {
            if (cur == start_ && odd_ == 0) total_ += gaussian_ ? gaussian_walk_weight(path_) : 1;
            return;
        }
        for (const auto& s : adj_[cur]) {
            auto& m = mult_[s.edge];
            ++m;
            odd_ += (m & 1) ? 1 : -1;
            // Each remaining step flips the parity of exactly one edge.
            if (odd_ <= static_cast<std::int64_t>(remaining - 1) && (remaining > 1 || s.column == start_)) {
                path_.push_back(s.edge);
                visit(s.column, depth + 1);
                path_.pop_back();
            }
            odd_ += (m & 1) ? -1 : 1;
            --m;
        }
    }

    const std::vector<std::vector<Step>>& adj_;
    std::vector<std::uint16_t> mult_;
    std::vector<std::uint64_t> path_;
    std::uint32_t steps_;
    bool gaussian_;
    std::atomic<std::uint64_t>& nodes_;
    std::uint64_t budget_;
    std::uint64_t local_nodes_ = 0;
    std::uint64_t start_ = 0;
    std::int64_t odd_ = 0;
    BigInt total_ = 0;
};

__int128 trace_power_i128(const IntMatrix& m, std::uint32_t q) {
    IntMatrix p = IntMatrix::Identity(m.rows(), m.cols());
    for (std::uint32_t k = 0; k < q; ++k) p = p * m;
    __int128 s = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i) s += static_cast<__int128>(p.data()[i]) * p.data()[i];
    return s;
}

BigInt to_big(__int128 v) {
    const bool neg = v < 0;
    unsigned __int128 u = neg ? static_cast<unsigned __int128>(-v) : static_cast<unsigned __int128>(v);
    BigInt out = static_cast<std::uint64_t>(u >> 64);
    out <<= 64;
    out += static_cast<std::uint64_t>(u);
    return neg ? BigInt(-out) : out;
}

void check_power_range(const IntMatrix& m, std::uint32_t q) {
    const long double bound = std::pow(static_cast<long double>(m.rows()) * std::max<long long>(1, m.cwiseAbs().maxCoeff()),
                                       static_cast<long double>(q));
    if (bound > 1e17L) throw ResourceLimit("integer matrix power would overflow 64-bit entries");
}

IntMatrix to_int_matrix(const Eigen::MatrixXd& d) {
    IntMatrix m(d.rows(), d.cols());
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        const double v = d.data()[i];
        if (v != std::round(v)) throw InvalidArgument("matrix is not integer valued");
        m.data()[i] = static_cast<long long>(v);
    }
    return m;
}

} // namespace

bool TraceWalk::contributing() const noexcept {
    return std::all_of(edge_multiset.begin(), edge_multiset.end(), [](const auto& e) { return e.second % 2 == 0; });
}

TraceWalk make_even_walk(std::vector<Subset> sets, std::uint32_t r) {
    if (sets.empty()) throw InvalidArgument("walk needs at least one set");
    const std::uint32_t n = sets.front().n();
    const BinomialTable binom(n, r);
    TraceWalk w;
    std::vector<std::uint32_t> diff;
    for (std::size_t k = 0; k + 1 < sets.size(); ++k) {
        const auto a = sets[k].elements(), b = sets[k + 1].elements();
        diff.clear();
        std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(diff));
        if (diff.size() != r)
            throw InvalidArgument("walk step " + std::to_string(k) + " has symmetric difference of size " +
                                  std::to_string(diff.size()));
        ++w.edge_multiset[binom.rank(diff)];
    }
    w.boundary_sets = std::move(sets);
    return w;
}

bool is_valid_even_walk(const TraceWalk& walk, std::uint32_t r) {
    if (!walk.closed()) return false;
    const std::size_t ell = walk.boundary_sets.front().size();
    for (const auto& s : walk.boundary_sets)
        if (s.size() != ell) return false;
    try {
        return make_even_walk(walk.boundary_sets, r).edge_multiset == walk.edge_multiset;
    } catch (const InvalidArgument&) {
        return false;
    }
}

BigInt walk_value(const TraceWalk& walk, Distribution dist) {
    BigInt v = 1;
    const bool gaussian = base_noise(dist) == Distribution::gaussian;
    for (const auto& [edge, mult] : walk.edge_multiset) v *= gaussian ? gaussian_moment(mult) : rademacher_moment(mult);
    return v;
}

BigInt expected_trace(std::uint32_t n, std::uint32_t ell, std::uint32_t r, std::uint32_t q, Distribution dist,
                      const TraceOptions& opt) {
    check_params(n, ell, r);
    if (r % 2 == 1) {
        if (base_noise(dist) != Distribution::rademacher)
            throw InvalidArgument("odd-order expected_trace is available for Rademacher noise only");
        const Rational avg = expected_trace_bruteforce(n, ell, r, q);
        if (denominator(avg) != 1) throw InvalidArgument("odd-order expected trace is not an integer: " + avg.str());
        return numerator(avg);
    }
    const auto adj = even_adjacency(n, ell, r);
    const std::uint64_t edges = to_u64(binomial(n, r));
    std::atomic<std::uint64_t> nodes{0};
    const std::uint64_t dim = adj.size();
    const std::uint64_t workers = std::clamp<std::uint64_t>(opt.threads, 1, std::max<std::uint64_t>(dim, 1));
    std::vector<BigInt> partial(workers);
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> pool;
        for (std::uint64_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                try {
                    EvenWalkCounter counter(adj, edges, q, dist, nodes, opt.node_budget);
                    for (std::uint64_t s = dim * w / workers; s < dim * (w + 1) / workers; ++s) counter.run(s);
                    partial[w] = counter.total();
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    BigInt total = 0;
    for (const auto& p : partial) total += p;
    return total;
}

void enumerate_closed_walks(std::uint32_t n, std::uint32_t ell, std::uint32_t r, std::uint32_t q,
                            const std::function<void(const TraceWalk&)>& f) {
    check_params(n, ell, r);
    if (r % 2 == 1) throw InvalidArgument("enumerate_closed_walks supports even r only");
    const auto adj = even_adjacency(n, ell, r);
    const BinomialTable binom(n, ell);
    std::vector<std::uint64_t> rows;
    std::function<void(std::uint64_t, std::uint32_t)> rec = [&](std::uint64_t cur, std::uint32_t depth) {
        if (depth == 2 * q) {
            if (cur != rows.front()) return;
            std::vector<Subset> sets;
            std::vector<std::uint32_t> e(ell);
            for (auto k : rows) {
                binom.unrank(k, ell, e);
                sets.emplace_back(e, n);
            }
            f(make_even_walk(std::move(sets), r));
            return;
        }
        for (const auto& s : adj[cur]) {
            rows.push_back(s.column);
            rec(s.column, depth + 1);
            rows.pop_back();
        }
    };
    for (std::uint64_t s = 0; s < adj.size(); ++s) {
        rows.assign(1, s);
        rec(s, 0);
    }
}

BigInt exact_trace_power(const IntMatrix& m, std::uint32_t q) {
    check_power_range(m, q);
    return to_big(trace_power_i128(m, q));
}

BigInt exact_trace_of_tensor(const SymmetricTensor& t, std::uint32_t ell, std::uint32_t q) {
    KikuchiOperator op(std::make_shared<const SymmetricTensor>(t), ell);
    return exact_trace_power(to_int_matrix(op.assemble_dense()), q);
}

Rational expected_trace_bruteforce(std::uint32_t n, std::uint32_t ell, std::uint32_t r, std::uint32_t q) {
    check_params(n, ell, r);
    const BigInt vars_big = binomial(n, r);
    if (vars_big > 20)
        throw ResourceLimit("brute-force trace needs C(n, r) <= 20 sign variables, got " + vars_big.str());
    const auto vars = vars_big.convert_to<std::uint32_t>();
    const std::uint64_t assignments = std::uint64_t{1} << vars;
    __int128 sum = 0;

    if (r % 2 == 0) {
        // M is linear in G: M = sum_e G_e A_e with A_e assembled from the
        // entry definition. Walk the assignments in Gray-code order.
        std::vector<IntMatrix> basis;
        for (std::uint32_t e = 0; e < vars; ++e) {
            auto unit = std::make_shared<SymmetricTensor>(n, r, Distribution::rademacher, 0);
            unit->entries()[e] = 1.0;
            basis.push_back(to_int_matrix(KikuchiOperator(unit, ell).assemble_dense()));
        }
        IntMatrix m = IntMatrix::Zero(basis.front().rows(), basis.front().cols());
        for (const auto& a : basis) m += a;  // all signs +1
        std::vector<int> sign(vars, 1);
        check_power_range(m, q);
        for (std::uint64_t k = 0; k < assignments; ++k) {
            if (k > 0) {
                const auto bit = static_cast<std::uint32_t>(std::countr_zero(k));
                m -= 2 * sign[bit] * basis[bit];
                sign[bit] = -sign[bit];
            }
            sum += trace_power_i128(m, q);
        }
    } else {
        auto zero = std::make_shared<const SymmetricTensor>(n, r, Distribution::rademacher, 0);
        KikuchiOperator op(zero, ell);
        struct Term {
            Eigen::Index row, col;
            std::vector<EdgePair> pairs;
        };
        std::vector<Term> terms;
        for (std::uint64_t row = 0; row < op.dim(); ++row)
            for (auto& nb : op.neighbors(op.index_subset(row)))
                terms.push_back({static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(nb.column), std::move(nb.pairs)});
        const auto d = static_cast<Eigen::Index>(op.dim());
        IntMatrix m(d, d);
        for (std::uint64_t k = 0; k < assignments; ++k) {
            m.setZero();
            auto g = [k](std::uint64_t e) { return ((k >> e) & 1) ? -1LL : 1LL; };
            for (const auto& t : terms) {
                long long v = 0;
                for (const auto& p : t.pairs) v += g(p.first) * g(p.second);
                m(t.row, t.col) = v;
            }
            if (k == 0) check_power_range(m, q);
            sum += trace_power_i128(m, q);
        }
    }
    return Rational(to_big(sum), BigInt(1) << vars);
}

MonteCarloTrace monte_carlo_trace(std::uint32_t n, std::uint32_t ell, std::uint32_t r, std::uint32_t q,
                                  Distribution dist, std::uint64_t trials, std::uint64_t seed, std::uint64_t dense_cap) {
    check_params(n, ell, r);
    if (trials == 0) throw InvalidArgument("monte_carlo_trace needs at least one trial");
    const BigInt dim = binomial(n, ell);
    if (dim > dense_cap) throw ResourceLimit("Monte Carlo trace dimension " + dim.str() + " exceeds the dense cap");
    MonteCarloTrace out;
    out.trials = trials;
    double mean = 0.0, m2 = 0.0;
    for (std::uint64_t k = 0; k < trials; ++k) {
        auto g = std::make_shared<const SymmetricTensor>(sample_tensor(n, r, base_noise(dist), hash64({seed, k})));
        const Eigen::MatrixXd m = KikuchiOperator(g, ell).assemble_dense(dense_cap);
        Eigen::MatrixXd p = Eigen::MatrixXd::Identity(m.rows(), m.cols());
        for (std::uint32_t j = 0; j < q; ++j) p = p * m;
        const double tr = p.squaredNorm();
        const double delta = tr - mean;
        mean += delta / static_cast<double>(k + 1);
        m2 += delta * (tr - mean);
    }
    out.mean = mean;
    out.standard_error = trials > 1 ? std::sqrt(m2 / static_cast<double>(trials - 1) / static_cast<double>(trials)) : 0.0;
    return out;
}

namespace {

struct FamilyShape {
    std::uint32_t half;     // r / 2
    std::uint32_t buckets;  // m = 2 ell / r
    std::uint32_t chunks;   // q / m
};

FamilyShape family_shape(std::uint32_t n, std::uint32_t ell, std::uint32_t r, std::uint32_t q) {
    check_params(n, ell, r);
    if (r % 2 != 0) throw InvalidArgument("lower-bound family needs even r");
    const std::uint32_t h = r / 2;
    if (ell % h != 0) throw InvalidArgument("lower-bound family needs r/2 to divide ell");
    const std::uint32_t m = ell / h;
    if (q == 0 || q % m != 0) throw InvalidArgument("lower-bound family needs 2m = 4 ell / r to divide 2q");
    return {h, m, q / m};
}

} // namespace

BigInt lower_bound_family_count(std::uint32_t n, std::uint32_t ell, std::uint32_t r, std::uint32_t q) {
    const auto [h, m, chunks] = family_shape(n, ell, r, q);
    const std::vector<std::uint64_t> bucket_parts(m, h), order_parts(m, 2);
    BigInt chunk = multinomial(ell, bucket_parts) * multinomial(2 * m, order_parts) * pow(binomial(n - ell, h), m);
    return binomial(n, ell) * pow(chunk, chunks);
}

std::uint64_t generate_lower_bound_walks(std::uint32_t n, std::uint32_t ell, std::uint32_t r, std::uint32_t q,
                                         std::uint64_t limit, const std::function<bool(const TraceWalk&)>& f) {
    const auto [h, m, chunks] = family_shape(n, ell, r, q);
    using Set = std::vector<std::uint32_t>;

    // Orders in which each bucket steps twice; buckets are labelled by first
    // appearance so that relabellings of the same walk are not repeated.
    std::vector<std::vector<std::uint32_t>> orders;
    {
        std::vector<std::uint32_t> seq, used(m, 0);
        std::function<void(std::uint32_t)> rec = [&](std::uint32_t opened) {
            if (seq.size() == 2 * m) {
                orders.push_back(seq);
                return;
            }
            for (std::uint32_t b = 0; b < std::min(opened + 1, m); ++b) {
                if (used[b] == 2) continue;
                ++used[b];
                seq.push_back(b);
                rec(std::max(opened, b + 1));
                seq.pop_back();
                --used[b];
            }
        };
        rec(0);
    }

    std::uint64_t emitted = 0;
    bool stop = false;
    std::vector<Set> walk;  // boundary sets, sorted element lists

    auto emit = [&] {
        std::vector<Subset> sets;
        sets.reserve(walk.size());
        for (const auto& s : walk) sets.emplace_back(s, n);
        ++emitted;
        if (!f(make_even_walk(std::move(sets), r)) || emitted >= limit) stop = true;
    };

    auto set_minus_plus = [](const Set& cur, const Set& minus, const Set& plus) {
        Set out;
        std::set_difference(cur.begin(), cur.end(), minus.begin(), minus.end(), std::back_inserter(out));
        out.insert(out.end(), plus.begin(), plus.end());
        std::sort(out.begin(), out.end());
        return out;
    };

    std::function<void(const Set&, std::uint32_t)> chunk_rec;

    // Steps through one chunk given its bucketing and order.
    std::function<void(const Set&, std::uint32_t, const std::vector<Set>&, const std::vector<std::uint32_t>&,
                       std::vector<Set>&, std::uint32_t)>
        step_rec = [&](const Set& start, std::uint32_t chunk, const std::vector<Set>& buckets,
                       const std::vector<std::uint32_t>& order, std::vector<Set>& fresh, std::uint32_t pos) {
            if (stop) return;
            if (pos == order.size()) {
                chunk_rec(start, chunk + 1);
                return;
            }
            const Set cur = walk.back();
            const std::uint32_t b = order[pos];
            if (fresh[b].empty()) {
                Set outside;
                for (std::uint32_t x = 0; x < n; ++x)
                    if (!std::binary_search(cur.begin(), cur.end(), x)) outside.push_back(x);
                std::vector<std::uint32_t> idx(h);
                std::iota(idx.begin(), idx.end(), 0u);
                while (!stop) {
                    Set pick(h);
                    for (std::uint32_t a = 0; a < h; ++a) pick[a] = outside[idx[a]];
                    fresh[b] = pick;
                    walk.push_back(set_minus_plus(cur, buckets[b], pick));
                    step_rec(start, chunk, buckets, order, fresh, pos + 1);
                    walk.pop_back();
                    fresh[b].clear();
                    std::size_t i = h;
                    bool advanced = false;
                    while (i-- > 0) {
                        if (idx[i] < outside.size() - h + i) {
                            ++idx[i];
                            for (std::size_t c = i + 1; c < h; ++c) idx[c] = idx[c - 1] + 1;
                            advanced = true;
                            break;
                        }
                    }
                    if (!advanced) break;
                }
            } else {
                // Second use of the bucket's edge: swap the fresh vertices back.
                const Set& back = buckets[b];
                const bool fresh_present = std::includes(cur.begin(), cur.end(), fresh[b].begin(), fresh[b].end());
                const bool bucket_absent = std::none_of(back.begin(), back.end(), [&](std::uint32_t x) {
                    return std::binary_search(cur.begin(), cur.end(), x);
                });
                if (!fresh_present || !bucket_absent) return;
                Set saved = fresh[b];
                walk.push_back(set_minus_plus(cur, saved, back));
                step_rec(start, chunk, buckets, order, fresh, pos + 1);
                walk.pop_back();
            }
        };

    // Ordered bucketings of the start set into m labelled groups of size h.
    std::function<void(const Set&, const Set&, std::vector<Set>&, std::uint32_t)> bucket_rec =
        [&](const Set& start, const Set& remaining, std::vector<Set>& buckets, std::uint32_t chunk) {
            if (stop) return;
            if (remaining.empty()) {
                for (const auto& order : orders) {
                    std::vector<Set> fresh(m);
                    step_rec(start, chunk, buckets, order, fresh, 0);
                    if (stop) return;
                }
                return;
            }
            std::vector<std::uint32_t> idx(h);
            std::iota(idx.begin(), idx.end(), 0u);
            while (true) {
                Set bucket(h);
                for (std::uint32_t a = 0; a < h; ++a) bucket[a] = remaining[idx[a]];
                Set rest;
                std::set_difference(remaining.begin(), remaining.end(), bucket.begin(), bucket.end(),
                                    std::back_inserter(rest));
                buckets.push_back(bucket);
                bucket_rec(start, rest, buckets, chunk);
                buckets.pop_back();
                if (stop) return;
                std::size_t i = h;
                bool advanced = false;
                while (i-- > 0) {
                    if (idx[i] < remaining.size() - h + i) {
                        ++idx[i];
                        for (std::size_t c = i + 1; c < h; ++c) idx[c] = idx[c - 1] + 1;
                        advanced = true;
                        break;
                    }
                }
                if (!advanced) break;
            }
        };

    chunk_rec = [&](const Set& start, std::uint32_t chunk) {
        if (stop) return;
        if (chunk == chunks) {
            emit();
            return;
        }
        std::vector<Set> buckets;
        bucket_rec(start, start, buckets, chunk);
    };

    if (limit == 0) return 0;
    const BinomialTable binom(n, ell);
    const std::uint64_t starts = binom(n, ell);
    Set s(ell);
    for (std::uint64_t k = 0; k < starts && !stop; ++k) {
        binom.unrank(k, ell, s);
        walk.assign(1, s);
        chunk_rec(s, 0);
    }
    return emitted;
}

} // namespace kikuchi
