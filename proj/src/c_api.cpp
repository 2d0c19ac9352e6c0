#include "kikuchi/kikuchi.h"

#include <cstring>
#include <exception>
#include <filesystem>
#include <system_error>
#include <memory>
#include <new>
#include <string>

#include "kikuchi/error.hpp"
#include "kikuchi/experiments.hpp"
#include "kikuchi/kikuchi_operator.hpp"
#include "kikuchi/pca.hpp"
#include "kikuchi/spectral.hpp"
#include "kikuchi/tensor.hpp"
#include "kikuchi/trace_oracle.hpp"

struct kk_tensor {
    std::shared_ptr<const kikuchi::SymmetricTensor> t;
};

struct kk_operator {
    std::unique_ptr<kikuchi::KikuchiOperator> op;
};

namespace {

thread_local std::string last_error;
thread_local std::uint64_t last_offset = 0;

template <class F>
kk_status guard(F&& f) {
    last_error.clear();
    last_offset = 0;
    try {
        f();
        return KK_OK;
    } catch (const kikuchi::FormatError& e) {
        last_error = e.what();
        last_offset = e.offset();
        return KK_FORMAT_ERROR;
    } catch (const kikuchi::ResourceLimit& e) {
        last_error = e.what();
        return KK_RESOURCE_LIMIT;
    } catch (const kikuchi::ConfigError& e) {
        last_error = e.what();
        return KK_CONFIG_ERROR;
    } catch (const std::invalid_argument& e) {
        last_error = e.what();
        return KK_INVALID_ARGUMENT;
    } catch (const std::out_of_range& e) {
        last_error = e.what();
        return KK_INVALID_ARGUMENT;
    } catch (const std::filesystem::filesystem_error& e) {
        last_error = e.what();
        return KK_IO_ERROR;
    } catch (const std::bad_alloc&) {
        last_error = "out of memory";
        return KK_RESOURCE_LIMIT;
    } catch (const std::exception& e) {
        last_error = e.what();
        return KK_INTERNAL_ERROR;
    } catch (...) {
        last_error = "unknown error";
        return KK_INTERNAL_ERROR;
    }
}

void require(bool ok, const char* what) {
    if (!ok) throw kikuchi::InvalidArgument(what);
}

kikuchi::Distribution to_dist(kk_distribution d) {
    require(d >= KK_GAUSSIAN && d <= KK_PLANTED_RADEMACHER, "unknown distribution code");
    return static_cast<kikuchi::Distribution>(d);
}

kikuchi::SpectralOptions to_options(const kk_spectral_options* opt) {
    kikuchi::SpectralOptions o;
    if (opt) {
        o.tol = opt->tol;
        o.max_iter = opt->max_iter;
        o.restarts = opt->restarts;
        o.seed = opt->seed;
    }
    return o;
}

kk_spectral_estimate from_estimate(const kikuchi::SpectralEstimate& e) {
    return {e.norm, e.iterations, e.residual, e.converged ? 1 : 0, e.restarts_used};
}

// Throws BufferTooSmall-like status through a sentinel.
struct BufferTooSmall {};

void write_string(const std::string& s, char* buf, std::size_t len, std::size_t* needed) {
    if (needed) *needed = s.size() + 1;
    if (!buf || len < s.size() + 1) throw BufferTooSmall{};
    std::memcpy(buf, s.c_str(), s.size() + 1);
}

template <class F>
kk_status guard_string(F&& f) {
    bool small = false;
    const kk_status s = guard([&] {
        try {
            f();
        } catch (const BufferTooSmall&) {
            small = true;
        }
    });
    if (small) {
        last_error = "output buffer too small";
        return KK_BUFFER_TOO_SMALL;
    }
    return s;
}

} // namespace

extern "C" {

const char* kk_last_error(void) { return last_error.c_str(); }
uint64_t kk_last_error_offset(void) { return last_offset; }
const char* kk_version(void) { return "1.0.0"; }

const char* kk_status_name(kk_status s) {
    switch (s) {
    case KK_OK: return "ok";
    case KK_INVALID_ARGUMENT: return "invalid-argument";
    case KK_FORMAT_ERROR: return "format-error";
    case KK_RESOURCE_LIMIT: return "resource-limit";
    case KK_CONFIG_ERROR: return "configuration-error";
    case KK_IO_ERROR: return "io-error";
    case KK_BUFFER_TOO_SMALL: return "buffer-too-small";
    case KK_INTERNAL_ERROR: return "internal-error";
    }
    return "unknown";
}

kk_status kk_distribution_parse(const char* name, kk_distribution* out) {
    return guard([&] {
        require(name && out, "null argument");
        *out = static_cast<kk_distribution>(kikuchi::parse_distribution(name));
    });
}

const char* kk_distribution_name(kk_distribution d) {
    if (d < KK_GAUSSIAN || d > KK_PLANTED_RADEMACHER) return "unknown";
    return kikuchi::to_string(static_cast<kikuchi::Distribution>(d)).data();
}

kk_status kk_tensor_sample(uint32_t n, uint32_t r, kk_distribution dist, uint64_t seed, kk_tensor** out) {
    return guard([&] {
        require(out, "null output handle");
        auto t = std::make_shared<const kikuchi::SymmetricTensor>(kikuchi::sample_tensor(n, r, to_dist(dist), seed));
        *out = new kk_tensor{std::move(t)};
    });
}

kk_status kk_tensor_from_entries(uint32_t n, uint32_t r, kk_distribution dist, uint64_t seed, const double* entries,
                                 uint64_t count, kk_tensor** out) {
    return guard([&] {
        require(out && (entries || count == 0), "null argument");
        auto t = std::make_shared<const kikuchi::SymmetricTensor>(n, r, to_dist(dist), seed,
                                                                  std::vector<double>(entries, entries + count));
        *out = new kk_tensor{std::move(t)};
    });
}

kk_status kk_tensor_load(const char* path, kk_tensor** out) {
    return guard([&] {
        require(path && out, "null argument");
        *out = nullptr;
        if (!std::filesystem::is_regular_file(path))
            throw std::filesystem::filesystem_error("cannot open tensor file", path,
                                                    std::make_error_code(std::errc::no_such_file_or_directory));
        *out = new kk_tensor{std::make_shared<const kikuchi::SymmetricTensor>(kikuchi::load_tensor(path))};
    });
}

kk_status kk_tensor_save(const kk_tensor* t, const char* path) {
    return guard([&] {
        require(t && path, "null argument");
        kikuchi::save_tensor(*t->t, path);
    });
}

kk_status kk_tensor_info_get(const kk_tensor* t, kk_tensor_info* out) {
    return guard([&] {
        require(t && out, "null argument");
        *out = {t->t->n(), t->t->order(), static_cast<kk_distribution>(t->t->distribution()), t->t->seed(),
                t->t->size()};
    });
}

kk_status kk_tensor_entries(const kk_tensor* t, const double** data, uint64_t* count) {
    return guard([&] {
        require(t && data && count, "null argument");
        *data = t->t->entries().data();
        *count = t->t->size();
    });
}

kk_status kk_spike_sample(uint32_t n, kk_prior prior, uint64_t seed, double* out) {
    return guard([&] {
        require(out, "null argument");
        require(prior == KK_PRIOR_RADEMACHER || prior == KK_PRIOR_GAUSSIAN, "unknown prior");
        const auto v = kikuchi::sample_spike_vector(
            n, prior == KK_PRIOR_RADEMACHER ? kikuchi::Prior::rademacher : kikuchi::Prior::gaussian, seed);
        std::copy(v.begin(), v.end(), out);
    });
}

kk_status kk_tensor_add_spike(const kk_tensor* t, const double* v, uint32_t n, double lambda, kk_tensor** out) {
    return guard([&] {
        require(t && v && out, "null argument");
        kikuchi::Spike spike{std::vector<double>(v, v + n), lambda};
        *out = new kk_tensor{std::make_shared<const kikuchi::SymmetricTensor>(kikuchi::add_spike(*t->t, spike))};
    });
}

void kk_tensor_free(kk_tensor* t) { delete t; }

kk_status kk_operator_create(const kk_tensor* t, uint32_t ell, unsigned threads, kk_operator** out) {
    return guard([&] {
        require(t && out, "null argument");
        *out = new kk_operator{std::make_unique<kikuchi::KikuchiOperator>(t->t, ell, threads)};
    });
}

kk_status kk_operator_dim(const kk_operator* op, uint64_t* out) {
    return guard([&] {
        require(op && out, "null argument");
        *out = op->op->dim();
    });
}

kk_status kk_operator_matvec(const kk_operator* op, const double* x, double* y, uint64_t len) {
    return guard([&] {
        require(op && x && y, "null argument");
        op->op->matvec(std::span<const double>(x, len), std::span<double>(y, len));
    });
}

kk_status kk_operator_dense(const kk_operator* op, uint64_t cap, double* out, uint64_t len) {
    return guard_string([&] {
        require(op && out, "null argument");
        const auto d = op->op->dim();
        if (d > cap) throw kikuchi::ResourceLimit("dense assembly of dimension " + std::to_string(d) + " exceeds the cap");
        if (len < d * d) throw BufferTooSmall{};
        const Eigen::MatrixXd m = op->op->assemble_dense(cap);
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(out, m.rows(), m.cols()) = m;
    });
}

void kk_operator_free(kk_operator* op) { delete op; }

kk_status kk_row_degree(uint32_t n, uint32_t ell, uint32_t r, char* buf, size_t len, size_t* needed) {
    return guard_string([&] { write_string(kikuchi::row_degree(n, ell, r).str(), buf, len, needed); });
}

void kk_spectral_defaults(kk_spectral_options* opt) {
    if (!opt) return;
    const kikuchi::SpectralOptions d;
    *opt = {d.tol, d.max_iter, d.restarts, d.seed};
}

kk_status kk_estimate_norm(const kk_operator* op, const kk_spectral_options* opt, kk_spectral_estimate* out) {
    return guard([&] {
        require(op && out, "null argument");
        *out = from_estimate(kikuchi::estimate_norm(*op->op, to_options(opt)));
    });
}

void kk_detect_defaults(kk_detect_params* p) {
    if (!p) return;
    const kikuchi::DetectionParams d;
    p->mode = KK_CALIBRATION_EMPIRICAL;
    p->lambda = d.lambda;
    p->norm_bound = d.norm_bound;
    p->calibration_trials = d.calibration_trials;
    p->quantile = d.quantile;
    p->noise = KK_GAUSSIAN;
    p->has_null_threshold = 0;
    p->null_threshold = 0.0;
    kk_spectral_defaults(&p->spectral);
    p->threads = 1;
}

kk_status kk_calibrate_null(uint32_t n, uint32_t ell, uint32_t r, kk_distribution noise, uint32_t trials,
                            double quantile, const kk_spectral_options* opt, uint64_t seed, unsigned threads,
                            double* threshold) {
    return guard([&] {
        require(threshold, "null argument");
        *threshold = kikuchi::calibrate_null(n, ell, r, to_dist(noise), trials, quantile, to_options(opt), seed, threads)
                         .threshold;
    });
}

kk_status kk_detect(const kk_tensor* t, uint32_t ell, const kk_detect_params* p, uint64_t seed, kk_detect_result* out) {
    return guard([&] {
        require(t && p && out, "null argument");
        kikuchi::DetectionParams dp;
        dp.mode = p->mode == KK_CALIBRATION_ANALYTIC ? kikuchi::Calibration::analytic : kikuchi::Calibration::empirical;
        dp.lambda = p->lambda;
        dp.norm_bound = p->norm_bound;
        dp.calibration_trials = p->calibration_trials;
        dp.quantile = p->quantile;
        dp.noise = to_dist(p->noise);
        if (p->has_null_threshold) dp.null_threshold = p->null_threshold;
        dp.spectral = to_options(&p->spectral);
        dp.threads = p->threads;
        const auto v = kikuchi::detect(*t->t, ell, dp, seed);
        *out = {v.decision == kikuchi::Decision::planted ? 1 : 0, v.measured_norm, v.threshold_used,
                v.lambda_min_detectable, from_estimate(v.estimate)};
    });
}

kk_status kk_recover(const kk_tensor* t, uint32_t ell, const kk_spectral_options* opt, const double* truth,
                     unsigned threads, double* v_hat, kk_recover_result* out) {
    return guard([&] {
        require(t && v_hat && out, "null argument");
        std::optional<std::span<const double>> tr;
        if (truth) tr = std::span<const double>(truth, t->t->n());
        const auto res = kikuchi::recover(*t->t, ell, to_options(opt), tr, threads);
        std::copy(res.v_hat.begin(), res.v_hat.end(), v_hat);
        *out = {res.correlation ? 1 : 0,
                res.correlation.value_or(0.0),
                res.signed_correlation.value_or(0.0),
                res.eigenvector_residual,
                res.converged ? 1 : 0,
                res.tie_votes,
                from_estimate(res.estimate)};
    });
}

kk_status kk_planted_qform(uint32_t n, uint32_t ell, uint32_t r, double lambda, double* out) {
    return guard([&] {
        require(out, "null argument");
        *out = kikuchi::planted_qform(n, ell, r, lambda);
    });
}

kk_status kk_lambda_min_detectable(uint32_t n, uint32_t ell, uint32_t r, double norm_bound, double* out) {
    return guard([&] {
        require(out, "null argument");
        *out = kikuchi::lambda_min_detectable(n, ell, r, norm_bound);
    });
}

kk_status kk_expected_trace(uint32_t n, uint32_t ell, uint32_t r, uint32_t q, kk_distribution dist,
                            uint64_t node_budget, unsigned threads, char* buf, size_t len, size_t* needed) {
    return guard_string([&] {
        kikuchi::TraceOptions opt;
        if (node_budget) opt.node_budget = node_budget;
        opt.threads = threads ? threads : 1;
        write_string(kikuchi::expected_trace(n, ell, r, q, to_dist(dist), opt).str(), buf, len, needed);
    });
}

kk_status kk_expected_trace_bruteforce(uint32_t n, uint32_t ell, uint32_t r, uint32_t q, char* buf, size_t len,
                                       size_t* needed) {
    return guard_string([&] { write_string(kikuchi::expected_trace_bruteforce(n, ell, r, q).str(), buf, len, needed); });
}

kk_status kk_monte_carlo_trace(uint32_t n, uint32_t ell, uint32_t r, uint32_t q, kk_distribution dist, uint64_t trials,
                               uint64_t seed, double* mean, double* standard_error) {
    return guard([&] {
        require(mean && standard_error, "null argument");
        const auto mc = kikuchi::monte_carlo_trace(n, ell, r, q, to_dist(dist), trials, seed);
        *mean = mc.mean;
        *standard_error = mc.standard_error;
    });
}

kk_status kk_lower_bound_count(uint32_t n, uint32_t ell, uint32_t r, uint32_t q, char* buf, size_t len,
                               size_t* needed) {
    return guard_string([&] { write_string(kikuchi::lower_bound_family_count(n, ell, r, q).str(), buf, len, needed); });
}

kk_status kk_lower_bound_generate(uint32_t n, uint32_t ell, uint32_t r, uint32_t q, uint64_t limit,
                                  kk_walk_callback cb, void* user, uint64_t* emitted) {
    return guard([&] {
        std::vector<std::uint32_t> flat;
        const auto count = kikuchi::generate_lower_bound_walks(n, ell, r, q, limit, [&](const kikuchi::TraceWalk& w) {
            if (!cb) return true;
            flat.clear();
            for (const auto& s : w.boundary_sets) flat.insert(flat.end(), s.elements().begin(), s.elements().end());
            const int valid = kikuchi::is_valid_even_walk(w, r) && w.contributing() ? 1 : 0;
            return cb(flat.data(), w.boundary_sets.size(), ell, valid, user) != 0;
        });
        if (emitted) *emitted = count;
    });
}

kk_status kk_validate_sweep_config(const char* text) {
    return guard([&] {
        require(text, "null argument");
        kikuchi::parse_sweep_config(text);
    });
}

static void fill_summary(const kikuchi::SweepSummary& s, kk_sweep_summary* out) {
    if (out) *out = {s.rows_total, s.rows_computed, s.rows_reused, s.not_converged};
}

kk_status kk_run_sweep_text(const char* text, kk_sweep_summary* out) {
    return guard([&] {
        require(text, "null argument");
        fill_summary(kikuchi::run_sweep(kikuchi::parse_sweep_config(text)), out);
    });
}

kk_status kk_run_sweep_file(const char* path, kk_sweep_summary* out) {
    return guard([&] {
        require(path, "null argument");
        fill_summary(kikuchi::run_sweep(kikuchi::load_sweep_config(path)), out);
    });
}

kk_status kk_sweep_output_path(const char* config_path, char* buf, size_t len, size_t* needed) {
    return guard_string([&] {
        require(config_path, "null argument");
        write_string(kikuchi::load_sweep_config(config_path).out.string(), buf, len, needed);
    });
}

kk_status kk_fit_scaling_file(const char* csv_path, kk_axis axis, kk_scaling_fit* out) {
    return guard([&] {
        require(csv_path && out, "null argument");
        const auto fit = kikuchi::fit_scaling(kikuchi::read_records(csv_path),
                                              axis == KK_AXIS_ELL ? kikuchi::ScalingAxis::ell : kikuchi::ScalingAxis::n);
        *out = {fit.slope, fit.intercept, fit.r_squared, fit.points};
    });
}

kk_status kk_spectrum_report(uint32_t n, uint32_t ell, uint32_t r, uint32_t samples, uint64_t seed,
                             kk_distribution dist, const char* prefix, uint32_t bins, kk_spectrum_summary* out) {
    return guard([&] {
        const auto rep = kikuchi::spectrum_report(n, ell, r, samples, seed, to_dist(dist),
                                                  prefix ? std::filesystem::path(prefix) : std::filesystem::path(),
                                                  bins ? bins : 50);
        if (out)
            *out = {rep.pooled_count, rep.m2, rep.m4, rep.ratio, rep.semicircle_ratio, rep.trace_residual,
                    rep.frobenius_residual};
    });
}

double kk_normalized_norm(uint32_t n, uint32_t ell, uint32_t r, double measured) {
    return kikuchi::normalized_norm(n, ell, r, measured);
}

} // extern "C"
