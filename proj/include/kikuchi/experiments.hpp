#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kikuchi/spectral.hpp"
#include "kikuchi/tensor.hpp"

namespace kikuchi {

enum class SweepMode { norm, detect, recover, trace };

std::string_view to_string(SweepMode m) noexcept;
SweepMode parse_sweep_mode(std::string_view name);

struct SweepConfig {
    SweepMode mode = SweepMode::norm;
    std::vector<std::uint32_t> n;
    std::vector<std::uint32_t> ell;
    std::vector<std::uint32_t> r;
    std::vector<double> lambda{0.0};
    std::uint32_t trials = 1;
    std::uint64_t seed = 0;
    std::filesystem::path out;
    std::optional<std::filesystem::path> jsonl;
    Distribution dist = Distribution::gaussian;
    SpectralOptions spectral{};
    unsigned threads = 1;  // per matvec
    unsigned workers = 1;  // concurrent cells
    std::uint32_t calibration_trials = 200;
    double quantile = 0.99;
    std::uint32_t q = 2;  // trace mode moment
};

/// Flat `key = value` lines; `#` starts a comment; grids are comma lists.
/// Unknown keys, bad values and empty grids raise ConfigError.
SweepConfig parse_sweep_config(std::string_view text);
SweepConfig load_sweep_config(const std::filesystem::path& path);

struct SweepCell {
    std::uint32_t n = 0;
    std::uint32_t ell = 0;
    std::uint32_t r = 0;
    std::uint32_t lambda_index = 0;
    double lambda = 0.0;
};

/// Grid product in (n, ell, r, lambda) order, keeping only cells with
/// ceil(r/2) <= ell <= n and r <= n.
std::vector<SweepCell> expand_cells(const SweepConfig& config);

struct ExperimentRecord {
    SweepMode mode = SweepMode::norm;
    std::uint32_t n = 0;
    std::uint32_t ell = 0;
    std::uint32_t r = 0;
    std::uint32_t lambda_index = 0;
    double lambda = 0.0;
    std::uint32_t trial = 0;
    std::uint64_t seed = 0;
    std::uint64_t noise_seed = 0;
    double measured_norm = 0.0;
    double normalized_norm = 0.0;
    std::uint32_t iterations = 0;
    bool converged = true;
    std::optional<std::string> verdict;
    std::optional<double> threshold;
    std::optional<double> correlation;
    std::optional<double> trace;
    std::optional<std::string> expected_trace;
    double wall_time_ms = 0.0;
};

/// measured / (n ell)^{r/4} for even r and / (n ell)^{r/2} for odd r.
double normalized_norm(std::uint32_t n, std::uint32_t ell, std::uint32_t r, double measured);

/// Cell seed hash64(seed, n, ell, r, lambda_index, trial).
std::uint64_t cell_seed(std::uint64_t seed, const SweepCell& cell, std::uint32_t trial);
/// Noise seed hash64(seed, n, r, trial): shared by every ell and lambda of a trial.
std::uint64_t noise_seed(std::uint64_t seed, std::uint32_t n, std::uint32_t r, std::uint32_t trial);

/// Computes one row (no file output).
ExperimentRecord run_cell(const SweepConfig& config, const SweepCell& cell, std::uint32_t trial,
                          std::optional<double> null_threshold = std::nullopt);

struct SweepSummary {
    std::uint64_t rows_total = 0;
    std::uint64_t rows_computed = 0;
    std::uint64_t rows_reused = 0;
    std::uint64_t not_converged = 0;
};

/// Writes one CSV row per (cell, trial) in grid order. Rows already present
/// in `config.out` are kept and not recomputed.
SweepSummary run_sweep(const SweepConfig& config);

std::string csv_header();
std::string to_csv_row(const ExperimentRecord& rec);
std::vector<ExperimentRecord> read_records(const std::filesystem::path& csv);

enum class ScalingAxis { n, ell };

struct ScalingFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    std::size_t points = 0;
};

/// Least squares of log(mean measured_norm) against log(axis value).
ScalingFit fit_scaling(const std::vector<ExperimentRecord>& records, ScalingAxis axis);

struct SpectrumReport {
    std::uint64_t pooled_count = 0;
    double m2 = 0.0;
    double m4 = 0.0;
    double ratio = 0.0;  // m4 / m2^2
    double semicircle_ratio = 2.0;
    double trace_residual = 0.0;      // max over samples of |sum lambda - Tr M| / max(1, |M|_F)
    double frobenius_residual = 0.0;  // max over samples of |sum lambda^2 - |M|_F^2| / |M|_F^2
    std::vector<MomentRow> moments;
    std::vector<double> eigenvalues;
};

/// Pools the full spectra of `samples` independent Kikuchi matrices. When
/// `prefix` is nonempty writes <prefix>_moments.csv and <prefix>_hist.csv.
SpectrumReport spectrum_report(std::uint32_t n, std::uint32_t ell, std::uint32_t r, std::uint32_t samples,
                               std::uint64_t seed, Distribution dist = Distribution::gaussian,
                               const std::filesystem::path& prefix = {}, std::uint32_t bins = 50,
                               std::uint64_t dense_cap = 5000);

} // namespace kikuchi
