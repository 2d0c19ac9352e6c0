#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "kikuchi/combinat.hpp"
#include "kikuchi/spectral.hpp"
#include "kikuchi/tensor.hpp"

namespace kikuchi {

/// v~[S] = prod_{i in S} v_i over ell-subsets S in colex order.
std::vector<double> signal_vector(std::span<const double> v, std::uint32_t ell);

/// Exact coefficient of lambda in v~^T M(lambda v^r) v~ / |v~|^2 for even r:
/// C(n - ell, r/2) * C(ell, r/2).
BigInt planted_qform_even_count(std::uint32_t n, std::uint32_t ell, std::uint32_t r);

/// Exact coefficient of lambda^2 for odd r: ordered disjoint A, B inside I of
/// size (r-1)/2, ordered disjoint S, T outside I of the same size, and one
/// vertex t outside I u J.
BigInt planted_qform_odd_count(std::uint32_t n, std::uint32_t ell, std::uint32_t r);

double planted_qform_even(std::uint32_t n, std::uint32_t ell, std::uint32_t r, double lambda);
double planted_qform_odd(std::uint32_t n, std::uint32_t ell, std::uint32_t r, double lambda);
double planted_qform(std::uint32_t n, std::uint32_t ell, std::uint32_t r, double lambda);

/// Smallest lambda whose planted quadratic form exceeds 2 * norm_bound.
double lambda_min_detectable(std::uint32_t n, std::uint32_t ell, std::uint32_t r, double norm_bound);

enum class Decision { null, planted };
enum class Calibration { analytic, empirical };

struct NullCalibration {
    std::vector<double> norms;  // sorted ascending
    double quantile = 0.99;
    double threshold = 0.0;
};

/// Nearest-rank q-quantile of the spectral norms of `trials` fresh noise
/// tensors. Trial k uses seed hash64(seed, k).
NullCalibration calibrate_null(std::uint32_t n, std::uint32_t ell, std::uint32_t r, Distribution noise,
                               std::uint32_t trials, double quantile, const SpectralOptions& spectral,
                               std::uint64_t seed, unsigned threads = 1);

struct DetectionParams {
    Calibration mode = Calibration::empirical;
    /// Analytic mode: the lambda whose planted form sets the threshold, and a
    /// caller-supplied high-probability norm bound for the noise.
    double lambda = 0.0;
    double norm_bound = 0.0;
    /// Empirical mode.
    std::uint32_t calibration_trials = 200;
    double quantile = 0.99;
    Distribution noise = Distribution::gaussian;
    /// Reuse a calibration computed earlier instead of sampling again.
    std::optional<double> null_threshold;
    SpectralOptions spectral{};
    unsigned threads = 1;
};

struct DetectionVerdict {
    Decision decision = Decision::null;
    double measured_norm = 0.0;
    double threshold_used = 0.0;
    double lambda_min_detectable = 0.0;
    Calibration calibration = Calibration::empirical;
    SpectralEstimate estimate{};
};

DetectionVerdict detect(const SymmetricTensor& t, std::uint32_t ell, const DetectionParams& params, std::uint64_t seed);

struct RecoveryResult {
    std::vector<double> v_hat;
    std::optional<double> correlation;
    std::optional<double> signed_correlation;
    double eigenvector_residual = 0.0;
    bool converged = false;
    std::uint32_t tie_votes = 0;
    SpectralEstimate estimate{};
};

struct VoteResult {
    std::vector<double> v_hat;
    std::uint32_t ties = 0;
};

/// Pairwise voting anchored at coordinate 0:
/// v_j = sign(sum_{S: 0 in S, j not in S} u_S * u_{S - 0 + j}), ties to +1.
VoteResult vote_signs(std::span<const double> u, std::uint32_t n, std::uint32_t ell);

RecoveryResult recover(const SymmetricTensor& t, std::uint32_t ell, const SpectralOptions& spectral,
                       std::optional<std::span<const double>> truth = std::nullopt, unsigned threads = 1);

/// |<v, v_hat>| / n.
double correlation(std::span<const double> v, std::span<const double> v_hat);
double signed_correlation(std::span<const double> v, std::span<const double> v_hat);

} // namespace kikuchi
