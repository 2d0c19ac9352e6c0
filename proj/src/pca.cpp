#include "kikuchi/pca.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <memory>
#include <string>

#include "kikuchi/error.hpp"
#include "kikuchi/kikuchi_operator.hpp"
#include "kikuchi/rng.hpp"

namespace kikuchi {

std::vector<double> signal_vector(std::span<const double> v, std::uint32_t ell) {
    for (double x : v)
        if (x != 1.0 && x != -1.0) throw InvalidArgument("signal_vector: v must be a +-1 vector");
    const auto n = static_cast<std::uint32_t>(v.size());
    if (ell > n) throw InvalidArgument("signal_vector: ell exceeds n");
    const BinomialTable binom(n, ell);
    const std::uint64_t dim = binom(n, ell);
    std::vector<double> out(dim);
    std::vector<std::uint32_t> s(ell);
    for (std::uint64_t k = 0; k < dim; ++k) {
        binom.unrank(k, ell, s);
        double p = 1.0;
        for (auto i : s) p *= v[i];
        out[k] = p;
    }
    return out;
}

BigInt planted_qform_even_count(std::uint32_t n, std::uint32_t ell, std::uint32_t r) {
    if (r % 2 != 0) throw InvalidArgument("planted_qform_even: r must be even");
    if (ell > n) return 0;
    return binomial(n - ell, r / 2) * binomial(ell, r / 2);
}

BigInt planted_qform_odd_count(std::uint32_t n, std::uint32_t ell, std::uint32_t r) {
    if (r % 2 != 1) throw InvalidArgument("planted_qform_odd: r must be odd");
    const std::uint32_t w = r - 1, h = w / 2;
    if (ell < w || n < ell + w + 1) return 0;
    const BigInt inside = binomial(ell, w) * binomial(w, h);
    const BigInt outside = binomial(n - ell, w) * binomial(w, h);
    return inside * outside * (n - ell - w);
}

double planted_qform_even(std::uint32_t n, std::uint32_t ell, std::uint32_t r, double lambda) {
    return lambda * to_double(planted_qform_even_count(n, ell, r));
}

double planted_qform_odd(std::uint32_t n, std::uint32_t ell, std::uint32_t r, double lambda) {
    return lambda * lambda * to_double(planted_qform_odd_count(n, ell, r));
}

double planted_qform(std::uint32_t n, std::uint32_t ell, std::uint32_t r, double lambda) {
    return r % 2 == 0 ? planted_qform_even(n, ell, r, lambda) : planted_qform_odd(n, ell, r, lambda);
}

double lambda_min_detectable(std::uint32_t n, std::uint32_t ell, std::uint32_t r, double norm_bound) {
    if (r % 2 == 0) return 2.0 * norm_bound / to_double(planted_qform_even_count(n, ell, r));
    return std::sqrt(2.0 * norm_bound / to_double(planted_qform_odd_count(n, ell, r)));
}

NullCalibration calibrate_null(std::uint32_t n, std::uint32_t ell, std::uint32_t r, Distribution noise,
                               std::uint32_t trials, double quantile, const SpectralOptions& spectral,
                               std::uint64_t seed, unsigned threads) {
    if (trials == 0) throw InvalidArgument("calibration needs at least one null trial");
    if (!(quantile > 0.0 && quantile <= 1.0)) throw InvalidArgument("quantile must lie in (0, 1]");
    NullCalibration cal;
    cal.quantile = quantile;
    cal.norms.reserve(trials);
    for (std::uint32_t k = 0; k < trials; ++k) {
        const std::uint64_t s = hash64({seed, k});
        auto g = std::make_shared<const SymmetricTensor>(sample_tensor(n, r, base_noise(noise), s));
        KikuchiOperator op(g, ell, threads);
        SpectralOptions opt = spectral;
        opt.seed = s;
        cal.norms.push_back(estimate_norm(op, opt).norm);
    }
    std::sort(cal.norms.begin(), cal.norms.end());
    const auto rank = static_cast<std::size_t>(std::ceil(quantile * trials));
    cal.threshold = cal.norms[std::clamp<std::size_t>(rank, 1, trials) - 1];
    return cal;
}

DetectionVerdict detect(const SymmetricTensor& t, std::uint32_t ell, const DetectionParams& params, std::uint64_t seed) {
    DetectionVerdict out;
    out.calibration = params.mode;
    const std::uint32_t n = t.n(), r = t.order();
    if (params.mode == Calibration::analytic) {
        if (!(params.norm_bound > 0.0)) throw InvalidArgument("analytic detection needs a positive norm bound");
        out.threshold_used = planted_qform(n, ell, r, params.lambda) / 2.0;
        out.lambda_min_detectable = lambda_min_detectable(n, ell, r, params.norm_bound);
    } else {
        double b = 0.0;
        if (params.null_threshold) {
            b = *params.null_threshold;
        } else {
            if (params.calibration_trials == 0) throw InvalidArgument("empirical detection needs calibration_trials > 0");
            b = calibrate_null(n, ell, r, params.noise, params.calibration_trials, params.quantile, params.spectral,
                               hash64({seed, 0x63616c6962ULL}), params.threads)
                    .threshold;
        }
        out.threshold_used = b;
        out.lambda_min_detectable = lambda_min_detectable(n, ell, r, b);
    }
    auto shared = std::make_shared<const SymmetricTensor>(t);
    KikuchiOperator op(shared, ell, params.threads);
    SpectralOptions opt = params.spectral;
    opt.seed = seed;
    out.estimate = estimate_norm(op, opt);
    out.measured_norm = out.estimate.norm;
    out.decision = out.measured_norm > out.threshold_used ? Decision::planted : Decision::null;
    return out;
}

VoteResult vote_signs(std::span<const double> u, std::uint32_t n, std::uint32_t ell) {
    if (ell == 0 || ell > n) throw InvalidArgument("vote_signs: need 1 <= ell <= n");
    const BinomialTable binom(n, ell);
    if (u.size() != binom(n, ell)) throw InvalidArgument("vote_signs: eigenvector length does not match C(n, ell)");
    VoteResult out;
    out.v_hat.assign(n, 1.0);
    if (ell == n) {
        out.ties = n - 1;
        return out;
    }
    const std::uint32_t k = ell - 1;
    std::vector<std::uint32_t> rest(n - 2), idx(k), with0(ell), withj(ell);
    for (std::uint32_t j = 1; j < n; ++j) {
        // rest = [n] \ {0, j}
        std::uint32_t w = 0;
        for (std::uint32_t x = 1; x < n; ++x)
            if (x != j) rest[w++] = x;
        double vote = 0.0;
        for (std::uint32_t a = 0; a < k; ++a) idx[a] = a;
        while (true) {
            if (k <= rest.size()) {
                // S' = rest[idx]; ranks of {0} u S' and {j} u S'.
                with0[0] = 0;
                for (std::uint32_t a = 0; a < k; ++a) with0[a + 1] = rest[idx[a]];
                std::uint32_t p = 0;
                for (std::uint32_t a = 0; a < k && rest[idx[a]] < j; ++a) withj[p++] = rest[idx[a]];
                withj[p++] = j;
                for (std::uint32_t a = p - 1; a < k; ++a) withj[p++] = rest[idx[a]];
                vote += u[binom.rank(with0)] * u[binom.rank(withj)];
            } else {
                break;
            }
            // next combination of k among rest.size()
            std::size_t i = k;
            bool advanced = false;
            while (i-- > 0) {
                if (idx[i] < rest.size() - k + i) {
                    ++idx[i];
                    for (std::size_t b = i + 1; b < k; ++b) idx[b] = idx[b - 1] + 1;
                    advanced = true;
                    break;
                }
            }
            if (!advanced) break;
        }
        if (vote == 0.0) {
            ++out.ties;
            out.v_hat[j] = 1.0;
        } else {
            out.v_hat[j] = vote > 0.0 ? 1.0 : -1.0;
        }
    }
    return out;
}

RecoveryResult recover(const SymmetricTensor& t, std::uint32_t ell, const SpectralOptions& spectral,
                       std::optional<std::span<const double>> truth, unsigned threads) {
    if (2 * ell < t.order()) throw InvalidArgument("recover: need ell >= r/2");
    auto shared = std::make_shared<const SymmetricTensor>(t);
    KikuchiOperator op(shared, ell, threads);
    TopVector top = top_vector(op, spectral);

    RecoveryResult out;
    out.estimate = top.estimate;
    out.converged = top.estimate.converged;
    std::vector<double>& u = top.vector;
    std::vector<double> w(u.size());
    // The squared iteration cannot tell +s from -s; one more product keeps
    // the component along the positive top eigenvalue.
    op.apply(u, w);
    const double rho = dot(u, w);
    const double sigma = top.estimate.norm;
    if (sigma > 0.0) {
        const double s = rho >= 0.0 ? 1.0 : -1.0;
        for (std::size_t k = 0; k < u.size(); ++k) u[k] += s * w[k] / sigma;
        const double nu = norm2(u);
        if (nu > 0.0)
            for (auto& x : u) x /= nu;
        op.apply(u, w);
        const double rq = dot(u, w);
        double res = 0.0;
        for (std::size_t k = 0; k < u.size(); ++k) res += (w[k] - rq * u[k]) * (w[k] - rq * u[k]);
        const double nw = norm2(w);
        out.eigenvector_residual = nw > 0.0 ? std::sqrt(res) / nw : 0.0;
    }
    if (!out.converged)
        std::cerr << "warning: recover: eigenvector iteration did not converge (residual "
                  << out.eigenvector_residual << ")\n";

    VoteResult votes = vote_signs(u, t.n(), ell);
    out.v_hat = std::move(votes.v_hat);
    out.tie_votes = votes.ties;
    if (votes.ties > 0) std::cerr << "warning: recover: " << votes.ties << " tied vote(s) resolved to +1\n";
    if (truth) {
        out.correlation = correlation(*truth, out.v_hat);
        out.signed_correlation = signed_correlation(*truth, out.v_hat);
    }
    return out;
}

namespace {

void check_pair(std::span<const double> v, std::span<const double> v_hat) {
    if (v.size() != v_hat.size())
        throw InvalidArgument("correlation: lengths differ (" + std::to_string(v.size()) + " vs " +
                              std::to_string(v_hat.size()) + ")");
    if (v.empty()) throw InvalidArgument("correlation: empty vectors");
    for (std::size_t k = 0; k < v.size(); ++k)
        if ((v[k] != 1.0 && v[k] != -1.0) || (v_hat[k] != 1.0 && v_hat[k] != -1.0))
            throw InvalidArgument("correlation: vectors must be +-1 valued");
}

} // namespace

double signed_correlation(std::span<const double> v, std::span<const double> v_hat) {
    check_pair(v, v_hat);
    return dot(v, v_hat) / static_cast<double>(v.size());
}

double correlation(std::span<const double> v, std::span<const double> v_hat) {
    return std::abs(signed_correlation(v, v_hat));
}

} // namespace kikuchi
