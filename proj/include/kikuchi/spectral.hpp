#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "kikuchi/error.hpp"
#include "kikuchi/rng.hpp"

namespace kikuchi {

/// Anything that can apply a symmetric matrix to a vector.
template <class Op>
concept SymmetricOperator = requires(const Op& op, std::span<const double> x, std::span<double> y) {
    { op.dim() } -> std::convertible_to<std::uint64_t>;
    op.apply(x, y);
};

/// Wraps an explicit symmetric matrix as a SymmetricOperator.
class DenseOperator {
public:
    explicit DenseOperator(Eigen::MatrixXd m) : m_(std::move(m)) {}
    std::uint64_t dim() const noexcept { return static_cast<std::uint64_t>(m_.rows()); }
    void apply(std::span<const double> x, std::span<double> y) const {
        Eigen::Map<Eigen::VectorXd>(y.data(), m_.rows()) =
            m_ * Eigen::Map<const Eigen::VectorXd>(x.data(), m_.rows());
    }
    const Eigen::MatrixXd& matrix() const noexcept { return m_; }

private:
    Eigen::MatrixXd m_;
};

struct SpectralOptions {
    double tol = 1e-6;
    std::uint32_t max_iter = 2000;
    std::uint32_t restarts = 3;
    std::uint64_t seed = 0;
    /// Consecutive sub-tolerance steps required to declare convergence.
    std::uint32_t stall_window = 3;
};

struct SpectralEstimate {
    double norm = 0.0;
    std::uint32_t iterations = 0;
    double residual = 0.0;
    bool converged = false;
    std::uint32_t restarts_used = 0;
};

/// Estimate plus the unit iterate that achieved it.
struct TopVector {
    SpectralEstimate estimate;
    std::vector<double> vector;
};

double dot(std::span<const double> a, std::span<const double> b) noexcept;
double norm2(std::span<const double> a) noexcept;

namespace detail {

template <SymmetricOperator Op>
TopVector power_run(const Op& op, const SpectralOptions& opt, std::uint32_t restart) {
    const std::size_t d = op.dim();
    TopVector out;
    out.vector.assign(d, 0.0);
    if (d == 0) {
        out.estimate.converged = true;
        return out;
    }
    RngStream rng(hash64({opt.seed, restart, 0x706f776572ULL}));
    std::vector<double> x(d), y(d), z(d);
    for (auto& v : x) v = rng.normal();
    const double n0 = norm2(x);
    for (auto& v : x) v /= n0;

    double prev = -1.0;
    std::uint32_t stalls = 0;
    double rq = 0.0, change = 0.0;
    std::uint32_t it = 0;
    bool converged = false;
    while (it < opt.max_iter) {
        ++it;
        op.apply(x, y);
        // <x, M^2 x> = |M x|^2 for unit x.
        rq = dot(y, y);
        if (rq == 0.0) {
            change = 0.0;
            converged = true;
            break;
        }
        change = prev < 0.0 ? 1.0 : std::abs(rq - prev) / rq;
        prev = rq;
        stalls = change < opt.tol ? stalls + 1 : 0;
        if (stalls >= opt.stall_window) {
            converged = true;
            break;
        }
        op.apply(y, z);
        const double nz = norm2(z);
        if (nz == 0.0) {
            converged = true;
            break;
        }
        for (std::size_t k = 0; k < d; ++k) x[k] = z[k] / nz;
    }
    out.estimate = {std::sqrt(rq), it, change, converged, 1};
    out.vector = std::move(x);
    return out;
}

} // namespace detail

/// Power iteration on M^2 (two applications per step). The estimate is
/// sqrt(<x, M^2 x>) for the final unit iterate x, hence a lower bound on the
/// spectral norm whether or not the run converged. Returns the best of
/// opt.restarts independent starts.
template <SymmetricOperator Op>
TopVector top_vector(const Op& op, const SpectralOptions& opt) {
    if (!(opt.tol > 0.0)) throw InvalidArgument("estimate_norm: tolerance must be positive");
    const std::uint32_t runs = std::max<std::uint32_t>(1, opt.restarts);
    TopVector best;
    for (std::uint32_t k = 0; k < runs; ++k) {
        TopVector run = detail::power_run(op, opt, k);
        if (k == 0 || run.estimate.norm > best.estimate.norm) best = std::move(run);
    }
    best.estimate.restarts_used = runs;
    return best;
}

template <SymmetricOperator Op>
SpectralEstimate estimate_norm(const Op& op, const SpectralOptions& opt = {}) {
    return top_vector(op, opt).estimate;
}

/// <x, Mx> / <x, x>.
template <SymmetricOperator Op>
double rayleigh(const Op& op, std::span<const double> x) {
    if (x.size() != op.dim()) throw InvalidArgument("rayleigh: vector length does not match operator dimension");
    const double xx = dot(x, x);
    if (xx == 0.0) throw InvalidArgument("rayleigh: zero vector");
    std::vector<double> y(x.size());
    op.apply(x, y);
    return dot(x, y) / xx;
}

/// All eigenvalues of a symmetric matrix, ascending. Throws InvalidArgument
/// if the matrix is asymmetric beyond 1e-12.
std::vector<double> full_spectrum(const Eigen::MatrixXd& m);

struct MomentRow {
    std::uint32_t q;
    double moment;          // (1/dim) sum lambda^{2q}
    double semicircle_ref;  // Catalan(q) * m_2^q
};

std::vector<MomentRow> spectral_moments(std::span<const double> eigs, std::uint32_t max_q);

} // namespace kikuchi
