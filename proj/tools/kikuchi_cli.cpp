#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kikuchi/kikuchi.h"

using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitResource = 3;
constexpr int kExitNotConverged = 4;

struct Failure {
    kk_status status;
};

int exit_code(kk_status s) {
    switch (s) {
    case KK_OK: return kExitOk;
    case KK_INVALID_ARGUMENT:
    case KK_CONFIG_ERROR: return kExitConfig;
    case KK_RESOURCE_LIMIT: return kExitResource;
    default: return kExitFailure;
    }
}

void check(kk_status s) {
    if (s != KK_OK) throw Failure{s};
}

std::string big_string(kk_status (*fn)(char*, size_t, size_t*, void*), void* ctx) {
    std::vector<char> buf(64);
    size_t needed = 0;
    kk_status s = fn(buf.data(), buf.size(), &needed, ctx);
    if (s == KK_BUFFER_TOO_SMALL) {
        buf.resize(needed);
        s = fn(buf.data(), buf.size(), &needed, ctx);
    }
    check(s);
    return buf.data();
}

struct Common {
    unsigned n = 10;
    unsigned ell = 2;
    unsigned r = 4;
    double lambda = 0.0;
    std::string dist = "gaussian";
    unsigned long long seed = 0;
    std::string out;
    double tol = 1e-6;
    unsigned max_iter = 2000;
    unsigned restarts = 3;
    unsigned trials = 1;
    unsigned threads = 1;
    bool strict = false;
    std::string input;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--n", c.n, "number of variables");
    app->add_option("--ell", c.ell, "Kikuchi level");
    app->add_option("--r", c.r, "tensor order");
    app->add_option("--lambda", c.lambda, "spike strength");
    app->add_option("--dist", c.dist, "noise law")->check(CLI::IsMember({"gaussian", "rademacher"}));
    app->add_option("--seed", c.seed, "random seed");
    app->add_option("--out", c.out, "output path");
    app->add_option("--tol", c.tol, "power-iteration relative tolerance");
    app->add_option("--max-iter", c.max_iter, "power-iteration step cap");
    app->add_option("--restarts", c.restarts, "independent power-iteration starts");
    app->add_option("--trials", c.trials, "trials or samples");
    app->add_option("--threads", c.threads, "worker threads per matvec");
    app->add_flag("--strict", c.strict, "exit with status 4 when power iteration does not converge");
}

kk_distribution dist_of(const Common& c) {
    kk_distribution d;
    check(kk_distribution_parse(c.dist.c_str(), &d));
    return d;
}

kk_spectral_options spectral_of(const Common& c, unsigned long long seed) {
    kk_spectral_options o;
    kk_spectral_defaults(&o);
    o.tol = c.tol;
    o.max_iter = c.max_iter;
    o.restarts = c.restarts;
    o.seed = seed;
    return o;
}

struct TensorHandle {
    kk_tensor* t = nullptr;
    TensorHandle() = default;
    TensorHandle(const TensorHandle&) = delete;
    TensorHandle& operator=(const TensorHandle&) = delete;
    ~TensorHandle() { kk_tensor_free(t); }
};

struct OperatorHandle {
    kk_operator* op = nullptr;
    OperatorHandle() = default;
    OperatorHandle(const OperatorHandle&) = delete;
    OperatorHandle& operator=(const OperatorHandle&) = delete;
    ~OperatorHandle() { kk_operator_free(op); }
};

// Loads --input, or samples noise from (--n, --r, --dist, --seed) and plants
// a Rademacher spike of strength --lambda when it is positive.
void obtain_tensor(const Common& c, TensorHandle& out, std::vector<double>& spike) {
    if (!c.input.empty()) {
        check(kk_tensor_load(c.input.c_str(), &out.t));
        return;
    }
    TensorHandle noise;
    check(kk_tensor_sample(c.n, c.r, dist_of(c), c.seed, &noise.t));
    if (c.lambda > 0.0) {
        spike.resize(c.n);
        check(kk_spike_sample(c.n, KK_PRIOR_RADEMACHER, c.seed ^ 0x5350494b45ULL, spike.data()));
        check(kk_tensor_add_spike(noise.t, spike.data(), c.n, c.lambda, &out.t));
    } else {
        out.t = noise.t;
        noise.t = nullptr;
    }
}

json estimate_json(const kk_spectral_estimate& e) {
    return {{"norm", e.norm},
            {"iterations", e.iterations},
            {"residual", e.residual},
            {"converged", e.converged != 0},
            {"restarts_used", e.restarts_used}};
}

int finish(const json& j, bool strict, bool converged) {
    std::cout << j.dump(2) << '\n';
    if (strict && !converged) {
        std::cerr << "error: power iteration did not converge\n";
        return kExitNotConverged;
    }
    return kExitOk;
}

int cmd_gen(const Common& c) {
    if (c.out.empty()) throw CLI::RequiredError("--out");
    TensorHandle t;
    std::vector<double> spike;
    obtain_tensor(c, t, spike);
    check(kk_tensor_save(t.t, c.out.c_str()));
    kk_tensor_info info;
    check(kk_tensor_info_get(t.t, &info));
    json j = {{"path", c.out},
              {"n", info.n},
              {"r", info.r},
              {"distribution", kk_distribution_name(info.dist)},
              {"seed", info.seed},
              {"entries", info.entries}};
    if (!spike.empty()) j["spike"] = spike;
    std::cout << j.dump(2) << '\n';
    return kExitOk;
}

int cmd_norm(const Common& c) {
    TensorHandle t;
    std::vector<double> spike;
    obtain_tensor(c, t, spike);
    kk_tensor_info info;
    check(kk_tensor_info_get(t.t, &info));
    OperatorHandle op;
    check(kk_operator_create(t.t, c.ell, c.threads, &op.op));
    uint64_t dim = 0;
    check(kk_operator_dim(op.op, &dim));
    const auto opt = spectral_of(c, c.seed);
    kk_spectral_estimate e;
    check(kk_estimate_norm(op.op, &opt, &e));
    json j = {{"n", info.n}, {"ell", c.ell}, {"r", info.r}, {"dim", dim}, {"estimate", estimate_json(e)},
              {"normalized_norm", kk_normalized_norm(info.n, c.ell, info.r, e.norm)}};
    return finish(j, c.strict, e.converged != 0);
}

int cmd_detect(const Common& c, bool analytic, double norm_bound, double quantile, unsigned calibration) {
    TensorHandle t;
    std::vector<double> spike;
    obtain_tensor(c, t, spike);
    kk_detect_params p;
    kk_detect_defaults(&p);
    p.mode = analytic ? KK_CALIBRATION_ANALYTIC : KK_CALIBRATION_EMPIRICAL;
    p.lambda = c.lambda;
    p.norm_bound = norm_bound;
    p.calibration_trials = calibration;
    p.quantile = quantile;
    p.noise = dist_of(c);
    p.spectral = spectral_of(c, c.seed);
    p.threads = c.threads;
    kk_detect_result res;
    check(kk_detect(t.t, c.ell, &p, c.seed, &res));
    json j = {{"decision", res.planted ? "planted" : "null"},
              {"measured_norm", res.measured_norm},
              {"threshold", res.threshold},
              {"lambda_min_detectable", res.lambda_min_detectable},
              {"calibration", analytic ? "analytic" : "empirical"},
              {"estimate", estimate_json(res.estimate)}};
    return finish(j, c.strict, res.estimate.converged != 0);
}

int cmd_recover(const Common& c) {
    TensorHandle t;
    std::vector<double> spike;
    obtain_tensor(c, t, spike);
    kk_tensor_info info;
    check(kk_tensor_info_get(t.t, &info));
    const auto opt = spectral_of(c, c.seed);
    std::vector<double> v_hat(info.n);
    kk_recover_result res;
    check(kk_recover(t.t, c.ell, &opt, spike.empty() ? nullptr : spike.data(), c.threads, v_hat.data(), &res));
    json j = {{"v_hat", v_hat},
              {"eigenvector_residual", res.eigenvector_residual},
              {"tie_votes", res.tie_votes},
              {"estimate", estimate_json(res.estimate)}};
    if (res.has_correlation) {
        j["correlation"] = res.correlation;
        j["signed_correlation"] = res.signed_correlation;
    }
    return finish(j, c.strict, res.converged != 0);
}

int cmd_trace(const Common& c, const std::string& method, unsigned q, unsigned long long budget) {
    json j = {{"n", c.n}, {"ell", c.ell}, {"r", c.r}, {"q", q}, {"method", method}};
    const kk_distribution d = dist_of(c);
    if (method == "exact") {
        struct Ctx {
            const Common& c;
            unsigned q;
            kk_distribution d;
            unsigned long long budget;
        } ctx{c, q, d, budget};
        j["distribution"] = c.dist;
        j["expected_trace"] = big_string(
            [](char* b, size_t l, size_t* nd, void* p) {
                auto& x = *static_cast<Ctx*>(p);
                return kk_expected_trace(x.c.n, x.c.ell, x.c.r, x.q, x.d, x.budget, x.c.threads, b, l, nd);
            },
            &ctx);
    } else if (method == "brute") {
        struct Ctx {
            const Common& c;
            unsigned q;
        } ctx{c, q};
        j["distribution"] = "rademacher";
        j["expected_trace"] = big_string(
            [](char* b, size_t l, size_t* nd, void* p) {
                auto& x = *static_cast<Ctx*>(p);
                return kk_expected_trace_bruteforce(x.c.n, x.c.ell, x.c.r, x.q, b, l, nd);
            },
            &ctx);
    } else {
        double mean = 0.0, se = 0.0;
        check(kk_monte_carlo_trace(c.n, c.ell, c.r, q, d, c.trials, c.seed, &mean, &se));
        j["distribution"] = c.dist;
        j["mean"] = mean;
        j["standard_error"] = se;
        j["trials"] = c.trials;
    }
    std::cout << j.dump(2) << '\n';
    return kExitOk;
}

int cmd_lowerbound(const Common& c, unsigned q, unsigned long long limit, bool generate) {
    struct Ctx {
        const Common& c;
        unsigned q;
    } ctx{c, q};
    json j = {{"n", c.n}, {"ell", c.ell}, {"r", c.r}, {"q", q}};
    j["family_count"] = big_string(
        [](char* b, size_t l, size_t* nd, void* p) {
            auto& x = *static_cast<Ctx*>(p);
            return kk_lower_bound_count(x.c.n, x.c.ell, x.c.r, x.q, b, l, nd);
        },
        &ctx);
    if (generate) {
        struct Tally {
            uint64_t valid = 0;
            uint64_t invalid = 0;
        } tally;
        uint64_t emitted = 0;
        check(kk_lower_bound_generate(
            c.n, c.ell, c.r, q, limit,
            [](const uint32_t*, size_t, uint32_t, int valid, void* user) {
                auto& t = *static_cast<Tally*>(user);
                ++(valid ? t.valid : t.invalid);
                return 1;
            },
            &tally, &emitted));
        j["generated"] = emitted;
        j["generated_valid"] = tally.valid;
        j["generated_invalid"] = tally.invalid;
    }
    std::cout << j.dump(2) << '\n';
    return kExitOk;
}

int cmd_sweep(const std::string& config, const std::string& fit, bool strict) {
    kk_sweep_summary s;
    check(kk_run_sweep_file(config.c_str(), &s));
    json j = {{"rows_total", s.rows_total},
              {"rows_computed", s.rows_computed},
              {"rows_reused", s.rows_reused},
              {"not_converged", s.not_converged}};
    if (!fit.empty()) {
        const std::string path = big_string(
            [](char* b, size_t l, size_t* nd, void* p) {
                return kk_sweep_output_path(static_cast<const std::string*>(p)->c_str(), b, l, nd);
            },
            const_cast<std::string*>(&config));
        kk_scaling_fit f;
        check(kk_fit_scaling_file(path.c_str(), fit == "ell" ? KK_AXIS_ELL : KK_AXIS_N, &f));
        j["fit"] = {{"axis", fit}, {"slope", f.slope}, {"intercept", f.intercept}, {"r_squared", f.r_squared},
                    {"points", f.points}};
    }
    return finish(j, strict, s.not_converged == 0);
}

int cmd_spectrum(const Common& c, unsigned bins) {
    kk_spectrum_summary s;
    check(kk_spectrum_report(c.n, c.ell, c.r, c.trials, c.seed, dist_of(c), c.out.empty() ? nullptr : c.out.c_str(),
                             bins, &s));
    json j = {{"n", c.n},
              {"ell", c.ell},
              {"r", c.r},
              {"samples", c.trials},
              {"pooled_count", s.pooled_count},
              {"m2", s.m2},
              {"m4", s.m4},
              {"m4_over_m2_squared", s.ratio},
              {"semicircle_reference", s.semicircle_ratio},
              {"trace_residual", s.trace_residual},
              {"frobenius_residual", s.frobenius_residual}};
    std::cout << j.dump(2) << '\n';
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kikuchi-hierarchy spectral tools for tensor PCA"};
    app.require_subcommand(1);

    Common c;
    auto* gen = app.add_subcommand("gen", "sample a tensor (optionally planted) and save it");
    auto* norm = app.add_subcommand("norm", "estimate the Kikuchi spectral norm");
    auto* det = app.add_subcommand("detect", "spectral detection of a planted spike");
    auto* rec = app.add_subcommand("recover", "spectral recovery of a planted boolean spike");
    auto* tr = app.add_subcommand("trace", "expected trace: exact walk sum, brute force or Monte Carlo");
    auto* lb = app.add_subcommand("lowerbound", "chunked lower-bound walk family");
    auto* sw = app.add_subcommand("sweep", "run a sweep config file");
    auto* sp = app.add_subcommand("spectrum", "pooled full spectrum moments and histogram");
    for (auto* s : {gen, norm, det, rec, tr, lb, sw, sp}) add_common(s, c);
    for (auto* s : {norm, det, rec}) s->add_option("--input", c.input, "tensor file instead of a fresh sample");

    bool analytic = false;
    double norm_bound = 0.0, quantile = 0.99;
    unsigned calibration = 200;
    det->add_flag("--analytic", analytic, "threshold from the planted quadratic form instead of null samples");
    det->add_option("--norm-bound", norm_bound, "noise norm bound for analytic mode");
    det->add_option("--quantile", quantile, "null quantile for empirical mode");
    det->add_option("--calibration-trials", calibration, "null samples for empirical mode");

    std::string method = "exact";
    unsigned q = 2;
    unsigned long long budget = 0;
    tr->add_option("--method", method, "exact | brute | mc")->check(CLI::IsMember({"exact", "brute", "mc"}));
    tr->add_option("--q", q, "moment: Tr(M^{2q})");
    tr->add_option("--budget", budget, "node budget for exact enumeration");

    unsigned long long limit = 1000000;
    bool generate = false;
    lb->add_option("--q", q, "walk length 2q");
    lb->add_option("--limit", limit, "maximum walks to generate");
    lb->add_flag("--generate", generate, "enumerate the distinct valid walks");

    std::string config, fit;
    sw->add_option("--config", config, "sweep config file")->required();
    sw->add_option("--fit", fit, "fit log norm against n or ell after the sweep")->check(CLI::IsMember({"n", "ell"}));

    unsigned bins = 50;
    sp->add_option("--bins", bins, "histogram bins");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_gen(c);
        if (norm->parsed()) return cmd_norm(c);
        if (det->parsed()) return cmd_detect(c, analytic, norm_bound, quantile, calibration);
        if (rec->parsed()) return cmd_recover(c);
        if (tr->parsed()) return cmd_trace(c, method, q, budget);
        if (lb->parsed()) return cmd_lowerbound(c, q, limit, generate);
        if (sw->parsed()) return cmd_sweep(config, fit, c.strict);
        if (sp->parsed()) return cmd_spectrum(c, bins);
    } catch (const Failure& f) {
        std::cerr << "error (" << kk_status_name(f.status) << "): " << kk_last_error() << '\n';
        return exit_code(f.status);
    } catch (const CLI::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    }
    return kExitFailure;
}
