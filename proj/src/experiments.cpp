#include "kikuchi/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "json.hpp"

#include "kikuchi/error.hpp"
#include "kikuchi/kikuchi_operator.hpp"
#include "kikuchi/pca.hpp"
#include "kikuchi/rng.hpp"
#include "kikuchi/trace_oracle.hpp"

namespace kikuchi {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
    T v{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty())
        throw ConfigError("key '" + std::string(key) + "': cannot parse '" + std::string(text) + "'");
    return v;
}

template <class T>
std::vector<T> parse_list(std::string_view key, std::string_view text) {
    std::vector<T> out;
    if (trim(text).empty()) throw ConfigError("key '" + std::string(key) + "': empty grid");
    for (auto item : split(text, ',')) out.push_back(parse_number<T>(key, item));
    return out;
}

void validate_config(const SweepConfig& c) {
    if (c.n.empty() || c.ell.empty() || c.r.empty() || c.lambda.empty())
        throw ConfigError("grids n, ell, r and lambda must all be nonempty");
    for (auto r : c.r)
        if (r < 3) throw ConfigError("tensor order r must be at least 3, got " + std::to_string(r));
    for (auto l : c.lambda)
        if (!std::isfinite(l) || l < 0.0) throw ConfigError("lambda values must be finite and nonnegative");
    if (c.trials == 0) throw ConfigError("trials must be positive");
    if (!(c.spectral.tol > 0.0)) throw ConfigError("tol must be positive");
    if (c.spectral.max_iter == 0) throw ConfigError("max_iter must be positive");
    if (c.workers == 0 || c.threads == 0) throw ConfigError("threads and workers must be positive");
    if (c.dist != Distribution::gaussian && c.dist != Distribution::rademacher)
        throw ConfigError("dist must be gaussian or rademacher");
    if (c.mode == SweepMode::detect) {
        if (c.calibration_trials == 0) throw ConfigError("calibration_trials must be positive");
        if (!(c.quantile > 0.0 && c.quantile <= 1.0)) throw ConfigError("quantile must lie in (0, 1]");
    }
    const auto cells = expand_cells(c);
    if (cells.empty()) throw ConfigError("no grid cell satisfies ceil(r/2) <= ell <= n");
    if (c.mode == SweepMode::trace) {
        if (c.q == 0) throw ConfigError("q must be positive");
        for (const auto& cell : cells) {
            if (binomial(cell.n, cell.ell) > KikuchiOperator::kDefaultDenseCap)
                throw ConfigError("trace mode needs C(n, ell) <= " + std::to_string(KikuchiOperator::kDefaultDenseCap));
            if (cell.r % 2 == 1 && (c.dist != Distribution::rademacher || binomial(cell.n, cell.r) > 20))
                throw ConfigError("odd-order trace cells need Rademacher noise and C(n, r) <= 20");
        }
    }
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    out += '"';
    return out;
}

// One RFC-4180 record per line; embedded newlines are not produced by this
// library and are rejected.
std::vector<std::string> parse_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    if (quoted) throw FormatError("unterminated quoted CSV field", line.size());
    out.push_back(std::move(cur));
    return out;
}

const std::vector<std::string>& columns() {
    static const std::vector<std::string> cols = {
        "mode",          "n",         "ell",        "r",        "lambda_index", "lambda",
        "trial",         "seed",      "noise_seed", "measured_norm", "normalized_norm", "iterations",
        "converged",     "verdict",   "threshold",  "correlation",   "trace",           "expected_trace"};
    return cols;
}

void validate_record(const ExperimentRecord& rec) {
    if (!std::isfinite(rec.measured_norm) || rec.measured_norm < 0.0)
        throw InvalidArgument("record has an invalid measured_norm");
    if (rec.measured_norm > 0.0 && !(rec.normalized_norm > 0.0))
        throw InvalidArgument("record has normalized_norm <= 0 with a positive measured_norm");
    if (rec.verdict && *rec.verdict != "null" && *rec.verdict != "planted")
        throw InvalidArgument("record verdict must be null or planted");
    if (rec.correlation && !(*rec.correlation >= 0.0 && *rec.correlation <= 1.0 + 1e-12))
        throw InvalidArgument("record correlation outside [0, 1]");
    if (rec.mode == SweepMode::detect && !rec.verdict) throw InvalidArgument("detect record without verdict");
    if (rec.mode == SweepMode::recover && !rec.correlation) throw InvalidArgument("recover record without correlation");
}

std::uint64_t null_seed(const SweepConfig& c, const SweepCell& cell) {
    return hash64({c.seed, cell.n, cell.ell, cell.r, 0x6e756c6cULL});
}

double null_threshold_for(const SweepConfig& c, const SweepCell& cell) {
    SpectralOptions opt = c.spectral;
    return calibrate_null(cell.n, cell.ell, cell.r, c.dist, c.calibration_trials, c.quantile, opt, null_seed(c, cell),
                          c.threads)
        .threshold;
}

struct CellContext {
    std::optional<double> null_threshold;
    std::optional<std::string> expected_trace;
};

ExperimentRecord compute_cell(const SweepConfig& c, const SweepCell& cell, std::uint32_t trial, CellContext ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentRecord rec;
    rec.mode = c.mode;
    rec.n = cell.n;
    rec.ell = cell.ell;
    rec.r = cell.r;
    rec.lambda_index = cell.lambda_index;
    rec.lambda = cell.lambda;
    rec.trial = trial;
    rec.seed = cell_seed(c.seed, cell, trial);
    rec.noise_seed = noise_seed(c.seed, cell.n, cell.r, trial);

    SymmetricTensor noise = sample_tensor(cell.n, cell.r, c.dist, rec.noise_seed);
    const auto v = sample_spike_vector(cell.n, Prior::rademacher, hash64({rec.noise_seed, 0x7370696b65ULL}));
    const bool planted = cell.lambda > 0.0 || c.mode == SweepMode::recover;
    auto tensor = std::make_shared<const SymmetricTensor>(planted ? add_spike(noise, Spike{v, cell.lambda})
                                                                  : std::move(noise));
    SpectralOptions opt = c.spectral;
    opt.seed = rec.seed;

    switch (c.mode) {
    case SweepMode::norm: {
        KikuchiOperator op(tensor, cell.ell, c.threads);
        const auto est = estimate_norm(op, opt);
        rec.measured_norm = est.norm;
        rec.iterations = est.iterations;
        rec.converged = est.converged;
        break;
    }
    case SweepMode::detect: {
        DetectionParams p;
        p.mode = Calibration::empirical;
        p.calibration_trials = c.calibration_trials;
        p.quantile = c.quantile;
        p.noise = c.dist;
        p.null_threshold = ctx.null_threshold ? ctx.null_threshold : std::optional(null_threshold_for(c, cell));
        p.spectral = opt;
        p.threads = c.threads;
        const auto verdict = detect(*tensor, cell.ell, p, rec.seed);
        rec.measured_norm = verdict.measured_norm;
        rec.iterations = verdict.estimate.iterations;
        rec.converged = verdict.estimate.converged;
        rec.verdict = verdict.decision == Decision::planted ? "planted" : "null";
        rec.threshold = verdict.threshold_used;
        break;
    }
    case SweepMode::recover: {
        const auto res = recover(*tensor, cell.ell, opt, std::span<const double>(v), c.threads);
        rec.measured_norm = res.estimate.norm;
        rec.iterations = res.estimate.iterations;
        rec.converged = res.converged;
        rec.correlation = res.correlation;
        break;
    }
    case SweepMode::trace: {
        const Eigen::MatrixXd m = KikuchiOperator(tensor, cell.ell).assemble_dense();
        Eigen::MatrixXd p = Eigen::MatrixXd::Identity(m.rows(), m.cols());
        for (std::uint32_t k = 0; k < c.q; ++k) p = p * m;
        rec.trace = p.squaredNorm();
        rec.measured_norm = std::pow(*rec.trace, 1.0 / (2.0 * c.q));
        rec.expected_trace = ctx.expected_trace ? ctx.expected_trace
                                                : std::optional(expected_trace(cell.n, cell.ell, cell.r, c.q, c.dist).str());
        break;
    }
    }
    rec.normalized_norm = normalized_norm(cell.n, cell.ell, cell.r, rec.measured_norm);
    rec.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    validate_record(rec);
    return rec;
}

nlohmann::json to_json(const ExperimentRecord& rec) {
    nlohmann::json j;
    j["mode"] = std::string(to_string(rec.mode));
    j["n"] = rec.n;
    j["ell"] = rec.ell;
    j["r"] = rec.r;
    j["lambda_index"] = rec.lambda_index;
    j["lambda"] = rec.lambda;
    j["trial"] = rec.trial;
    j["seed"] = rec.seed;
    j["noise_seed"] = rec.noise_seed;
    j["measured_norm"] = rec.measured_norm;
    j["normalized_norm"] = rec.normalized_norm;
    j["iterations"] = rec.iterations;
    j["converged"] = rec.converged;
    if (rec.verdict) j["verdict"] = *rec.verdict;
    if (rec.threshold) j["threshold"] = *rec.threshold;
    if (rec.correlation) j["correlation"] = *rec.correlation;
    if (rec.trace) j["trace"] = *rec.trace;
    if (rec.expected_trace) j["expected_trace"] = *rec.expected_trace;
    j["wall_time_ms"] = rec.wall_time_ms;
    return j;
}

using RowKey = std::tuple<std::uint32_t, std::uint32_t, std::uint32_t, std::uint32_t, std::uint32_t>;

RowKey key_of(const ExperimentRecord& r) { return {r.n, r.ell, r.r, r.lambda_index, r.trial}; }

ExperimentRecord record_from_fields(const std::vector<std::string>& f) {
    if (f.size() != columns().size()) throw ConfigError("CSV row has " + std::to_string(f.size()) + " fields");
    ExperimentRecord r;
    try {
        r.mode = parse_sweep_mode(f[0]);
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    r.n = parse_number<std::uint32_t>("n", f[1]);
    r.ell = parse_number<std::uint32_t>("ell", f[2]);
    r.r = parse_number<std::uint32_t>("r", f[3]);
    r.lambda_index = parse_number<std::uint32_t>("lambda_index", f[4]);
    r.lambda = parse_number<double>("lambda", f[5]);
    r.trial = parse_number<std::uint32_t>("trial", f[6]);
    r.seed = parse_number<std::uint64_t>("seed", f[7]);
    r.noise_seed = parse_number<std::uint64_t>("noise_seed", f[8]);
    r.measured_norm = parse_number<double>("measured_norm", f[9]);
    r.normalized_norm = parse_number<double>("normalized_norm", f[10]);
    r.iterations = parse_number<std::uint32_t>("iterations", f[11]);
    r.converged = f[12] == "1";
    if (!f[13].empty()) r.verdict = f[13];
    if (!f[14].empty()) r.threshold = parse_number<double>("threshold", f[14]);
    if (!f[15].empty()) r.correlation = parse_number<double>("correlation", f[15]);
    if (!f[16].empty()) r.trace = parse_number<double>("trace", f[16]);
    if (!f[17].empty()) r.expected_trace = f[17];
    return r;
}

// Reads the rows of a previous run, dropping a trailing partial line.
std::vector<ExperimentRecord> load_existing(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) return {};
    std::string content;
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("cannot read existing output " + path.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        content = ss.str();
    }
    const auto last_nl = content.rfind('\n');
    const std::size_t keep = last_nl == std::string::npos ? 0 : last_nl + 1;
    if (keep != content.size()) {
        std::filesystem::resize_file(path, keep, ec);
        if (ec) throw ConfigError("cannot truncate partial row in " + path.string());
        content.resize(keep);
    }
    if (content.empty()) return {};
    std::vector<ExperimentRecord> rows;
    std::istringstream lines(content);
    std::string line;
    std::getline(lines, line);
    if (line != csv_header()) throw ConfigError("existing output " + path.string() + " has a different header");
    while (std::getline(lines, line))
        if (!line.empty()) rows.push_back(record_from_fields(parse_csv_line(line)));
    return rows;
}

} // namespace

std::string_view to_string(SweepMode m) noexcept {
    switch (m) {
    case SweepMode::norm: return "norm";
    case SweepMode::detect: return "detect";
    case SweepMode::recover: return "recover";
    case SweepMode::trace: return "trace";
    }
    return "norm";
}

SweepMode parse_sweep_mode(std::string_view name) {
    if (name == "norm") return SweepMode::norm;
    if (name == "detect") return SweepMode::detect;
    if (name == "recover") return SweepMode::recover;
    if (name == "trace") return SweepMode::trace;
    throw InvalidArgument("unknown sweep mode '" + std::string(name) + "'");
}

SweepConfig parse_sweep_config(std::string_view text) {
    SweepConfig c;
    std::set<std::string, std::less<>> seen;
    std::size_t line_no = 0;
    for (auto raw : split(text, '\n')) {
        ++line_no;
        auto line = raw;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (!seen.insert(std::string(key)).second) throw ConfigError("duplicate key '" + std::string(key) + "'");
        if (key == "mode") {
            try {
                c.mode = parse_sweep_mode(value);
            } catch (const InvalidArgument& e) {
                throw ConfigError(e.what());
            }
        } else if (key == "n") {
            c.n = parse_list<std::uint32_t>(key, value);
        } else if (key == "ell") {
            c.ell = parse_list<std::uint32_t>(key, value);
        } else if (key == "r") {
            c.r = parse_list<std::uint32_t>(key, value);
        } else if (key == "lambda") {
            c.lambda = parse_list<double>(key, value);
        } else if (key == "trials") {
            c.trials = parse_number<std::uint32_t>(key, value);
        } else if (key == "seed") {
            c.seed = parse_number<std::uint64_t>(key, value);
        } else if (key == "out") {
            c.out = std::string(value);
        } else if (key == "jsonl") {
            c.jsonl = std::string(value);
        } else if (key == "dist") {
            try {
                c.dist = parse_distribution(value);
            } catch (const InvalidArgument& e) {
                throw ConfigError(e.what());
            }
        } else if (key == "tol") {
            c.spectral.tol = parse_number<double>(key, value);
        } else if (key == "max_iter") {
            c.spectral.max_iter = parse_number<std::uint32_t>(key, value);
        } else if (key == "restarts") {
            c.spectral.restarts = parse_number<std::uint32_t>(key, value);
        } else if (key == "threads") {
            c.threads = parse_number<unsigned>(key, value);
        } else if (key == "workers") {
            c.workers = parse_number<unsigned>(key, value);
        } else if (key == "calibration_trials") {
            c.calibration_trials = parse_number<std::uint32_t>(key, value);
        } else if (key == "quantile") {
            c.quantile = parse_number<double>(key, value);
        } else if (key == "q") {
            c.q = parse_number<std::uint32_t>(key, value);
        } else {
            throw ConfigError("unknown key '" + std::string(key) + "'");
        }
    }
    validate_config(c);
    return c;
}

SweepConfig load_sweep_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_sweep_config(ss.str());
}

std::vector<SweepCell> expand_cells(const SweepConfig& c) {
    std::vector<SweepCell> cells;
    for (auto n : c.n)
        for (auto ell : c.ell)
            for (auto r : c.r) {
                if (r > n || 2 * ell < r || ell > n) continue;
                for (std::uint32_t k = 0; k < c.lambda.size(); ++k) cells.push_back({n, ell, r, k, c.lambda[k]});
            }
    return cells;
}

double normalized_norm(std::uint32_t n, std::uint32_t ell, std::uint32_t r, double measured) {
    const double base = static_cast<double>(n) * static_cast<double>(ell);
    const double exponent = r % 2 == 0 ? r / 4.0 : r / 2.0;
    return measured / std::pow(base, exponent);
}

std::uint64_t cell_seed(std::uint64_t seed, const SweepCell& cell, std::uint32_t trial) {
    return hash64({seed, cell.n, cell.ell, cell.r, cell.lambda_index, trial});
}

std::uint64_t noise_seed(std::uint64_t seed, std::uint32_t n, std::uint32_t r, std::uint32_t trial) {
    return hash64({seed, n, r, trial});
}

ExperimentRecord run_cell(const SweepConfig& config, const SweepCell& cell, std::uint32_t trial,
                          std::optional<double> null_threshold) {
    validate_config(config);
    CellContext ctx;
    ctx.null_threshold = null_threshold;
    return compute_cell(config, cell, trial, ctx);
}

std::string csv_header() {
    std::string h;
    for (const auto& c : columns()) h += (h.empty() ? "" : ",") + c;
    return h;
}

std::string to_csv_row(const ExperimentRecord& r) {
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    std::vector<std::string> f = {std::string(to_string(r.mode)),
                                  std::to_string(r.n),
                                  std::to_string(r.ell),
                                  std::to_string(r.r),
                                  std::to_string(r.lambda_index),
                                  format_double(r.lambda),
                                  std::to_string(r.trial),
                                  std::to_string(r.seed),
                                  std::to_string(r.noise_seed),
                                  format_double(r.measured_norm),
                                  format_double(r.normalized_norm),
                                  std::to_string(r.iterations),
                                  r.converged ? "1" : "0",
                                  r.verdict.value_or(""),
                                  opt(r.threshold),
                                  opt(r.correlation),
                                  opt(r.trace),
                                  r.expected_trace.value_or("")};
    std::string line;
    for (std::size_t k = 0; k < f.size(); ++k) line += (k ? "," : "") + csv_field(f[k]);
    return line;
}

std::vector<ExperimentRecord> read_records(const std::filesystem::path& csv) {
    std::ifstream in(csv, std::ios::binary);
    if (!in) throw InvalidArgument("cannot open " + csv.string());
    std::string line;
    if (!std::getline(in, line) || line != csv_header())
        throw FormatError("unexpected CSV header in " + csv.string(), 0);
    std::vector<ExperimentRecord> rows;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(record_from_fields(parse_csv_line(line)));
    return rows;
}

SweepSummary run_sweep(const SweepConfig& config) {
    validate_config(config);
    if (config.out.empty()) throw ConfigError("sweep needs an output path (key 'out')");

    const auto existing = load_existing(config.out);
    std::set<RowKey> done;
    for (const auto& row : existing) {
        if (row.mode != config.mode)
            throw ConfigError("existing output " + config.out.string() + " holds rows of mode " +
                              std::string(to_string(row.mode)));
        done.insert(key_of(row));
    }

    std::ofstream out(config.out, std::ios::binary | std::ios::app);
    if (!out) throw ConfigError("cannot write output " + config.out.string());
    if (existing.empty() && std::filesystem::file_size(config.out) == 0) out << csv_header() << '\n' << std::flush;
    std::ofstream jsonl;
    if (config.jsonl) {
        jsonl.open(*config.jsonl, std::ios::binary | std::ios::app);
        if (!jsonl) throw ConfigError("cannot write JSON-lines mirror " + config.jsonl->string());
    }

    struct Job {
        SweepCell cell;
        std::uint32_t trial;
        CellContext ctx;
    };
    SweepSummary summary;
    std::vector<Job> jobs;
    std::map<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>, CellContext> contexts;
    for (const auto& cell : expand_cells(config))
        for (std::uint32_t t = 0; t < config.trials; ++t) {
            ++summary.rows_total;
            ExperimentRecord probe;
            probe.n = cell.n;
            probe.ell = cell.ell;
            probe.r = cell.r;
            probe.lambda_index = cell.lambda_index;
            probe.trial = t;
            if (done.contains(key_of(probe))) {
                ++summary.rows_reused;
                continue;
            }
            auto& ctx = contexts[{cell.n, cell.ell, cell.r}];
            if (config.mode == SweepMode::detect && !ctx.null_threshold) ctx.null_threshold = null_threshold_for(config, cell);
            if (config.mode == SweepMode::trace && !ctx.expected_trace)
                ctx.expected_trace = expected_trace(cell.n, cell.ell, cell.r, config.q, config.dist).str();
            jobs.push_back({cell, t, ctx});
        }

    std::vector<std::optional<ExperimentRecord>> results(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    std::vector<char> ready(jobs.size(), 0);
    std::mutex mu;
    std::condition_variable cv;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};

    auto worker = [&] {
        while (!abort) {
            const std::size_t k = next.fetch_add(1);
            if (k >= jobs.size()) return;
            std::optional<ExperimentRecord> rec;
            std::exception_ptr err;
            try {
                rec = compute_cell(config, jobs[k].cell, jobs[k].trial, jobs[k].ctx);
            } catch (...) {
                err = std::current_exception();
            }
            {
                std::lock_guard lock(mu);
                results[k] = std::move(rec);
                errors[k] = err;
                ready[k] = 1;
            }
            cv.notify_all();
        }
    };

    const unsigned pool_size = std::max(1u, std::min<unsigned>(config.workers, static_cast<unsigned>(jobs.size())));
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < pool_size && !jobs.empty(); ++w) pool.emplace_back(worker);

    // Single appender: rows are committed strictly in job order.
    std::exception_ptr failure;
    for (std::size_t k = 0; k < jobs.size(); ++k) {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return ready[k] != 0; });
        if (errors[k]) {
            failure = errors[k];
            abort = true;
            break;
        }
        const ExperimentRecord rec = std::move(*results[k]);
        results[k].reset();
        lock.unlock();
        out << to_csv_row(rec) << '\n' << std::flush;
        if (jsonl.is_open()) jsonl << to_json(rec).dump() << '\n' << std::flush;
        ++summary.rows_computed;
        if (!rec.converged) ++summary.not_converged;
    }
    pool.clear();
    if (failure) std::rethrow_exception(failure);
    if (!out) throw ConfigError("write to " + config.out.string() + " failed");
    return summary;
}

ScalingFit fit_scaling(const std::vector<ExperimentRecord>& records, ScalingAxis axis) {
    std::map<std::uint32_t, std::pair<double, std::size_t>> groups;
    for (const auto& r : records) {
        auto& g = groups[axis == ScalingAxis::n ? r.n : r.ell];
        g.first += r.measured_norm;
        ++g.second;
    }
    if (groups.size() < 3)
        throw InvalidArgument("fit_scaling needs at least 3 distinct axis values, got " + std::to_string(groups.size()));
    std::vector<double> xs, ys;
    for (const auto& [a, g] : groups) {
        const double mean = g.first / static_cast<double>(g.second);
        if (!(mean > 0.0) || a == 0) throw InvalidArgument("fit_scaling needs positive norms and axis values");
        xs.push_back(std::log(static_cast<double>(a)));
        ys.push_back(std::log(mean));
    }
    const double k = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= k;
    my /= k;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    ScalingFit fit;
    fit.points = xs.size();
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double e = ys[i] - (fit.intercept + fit.slope * xs[i]);
        ss_res += e * e;
    }
    fit.r_squared = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
    return fit;
}

SpectrumReport spectrum_report(std::uint32_t n, std::uint32_t ell, std::uint32_t r, std::uint32_t samples,
                               std::uint64_t seed, Distribution dist, const std::filesystem::path& prefix,
                               std::uint32_t bins, std::uint64_t dense_cap) {
    if (samples == 0) throw InvalidArgument("spectrum_report needs at least one sample");
    if (bins == 0) throw InvalidArgument("spectrum_report needs at least one histogram bin");
    const BigInt dim = binomial(n, ell);
    if (dim > dense_cap)
        throw ResourceLimit("spectrum_report dimension " + dim.str() + " exceeds the dense cap " + std::to_string(dense_cap));
    SpectrumReport rep;
    for (std::uint32_t s = 0; s < samples; ++s) {
        auto g = std::make_shared<const SymmetricTensor>(sample_tensor(n, r, base_noise(dist), hash64({seed, s})));
        const Eigen::MatrixXd m = KikuchiOperator(g, ell).assemble_dense(dense_cap);
        const auto eigs = full_spectrum(m);
        double sum = 0.0, sum2 = 0.0;
        for (double l : eigs) {
            sum += l;
            sum2 += l * l;
        }
        const double fro2 = m.squaredNorm();
        rep.trace_residual = std::max(rep.trace_residual, std::abs(sum - m.trace()) / std::max(1.0, std::sqrt(fro2)));
        rep.frobenius_residual = std::max(rep.frobenius_residual, fro2 > 0.0 ? std::abs(sum2 - fro2) / fro2 : 0.0);
        rep.eigenvalues.insert(rep.eigenvalues.end(), eigs.begin(), eigs.end());
    }
    std::sort(rep.eigenvalues.begin(), rep.eigenvalues.end());
    rep.pooled_count = rep.eigenvalues.size();
    rep.moments = spectral_moments(rep.eigenvalues, 4);
    rep.m2 = rep.moments[0].moment;
    rep.m4 = rep.moments[1].moment;
    rep.ratio = rep.m2 > 0.0 ? rep.m4 / (rep.m2 * rep.m2) : 0.0;

    if (!prefix.empty()) {
        auto path_for = [&](const char* suffix) {
            std::filesystem::path p = prefix;
            p += suffix;
            return p;
        };
        std::ofstream mom(path_for("_moments.csv"), std::ios::binary);
        std::ofstream hist(path_for("_hist.csv"), std::ios::binary);
        if (!mom || !hist) throw InvalidArgument("cannot write spectrum report files at " + prefix.string());
        mom << "q,moment,semicircle_ref,normalized,semicircle_normalized\n";
        for (const auto& row : rep.moments)
            mom << row.q << ',' << format_double(row.moment) << ',' << format_double(row.semicircle_ref) << ','
                << format_double(rep.m2 > 0.0 ? row.moment / std::pow(rep.m2, row.q) : 0.0) << ','
                << format_double(to_double(catalan(row.q))) << '\n';
        const double lo = rep.eigenvalues.front(), hi = rep.eigenvalues.back();
        const double width = hi > lo ? (hi - lo) / bins : 1.0;
        std::vector<std::uint64_t> counts(bins, 0);
        for (double l : rep.eigenvalues)
            ++counts[std::min<std::size_t>(bins - 1, static_cast<std::size_t>((l - lo) / width))];
        hist << "bin_lo,bin_hi,count\n";
        for (std::uint32_t b = 0; b < bins; ++b)
            hist << format_double(lo + b * width) << ',' << format_double(lo + (b + 1) * width) << ',' << counts[b] << '\n';
        if (!mom || !hist) throw InvalidArgument("writing spectrum report files failed");
    }
    return rep;
}

} // namespace kikuchi
