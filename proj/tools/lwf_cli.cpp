#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "lwf/asg.hpp"
#include "lwf/chains.hpp"
#include "lwf/flights.hpp"
#include "lwf/lambda_measure.hpp"
#include "lwf/presets.hpp"
#include "lwf/recursion.hpp"
#include "lwf/report.hpp"

namespace {

int default_threads() {
    const unsigned h = std::thread::hardware_concurrency();
    return h == 0 ? 1 : int(h);
}

struct model_opts {
    std::string lambda = "kingman";
    double sigma = 0.0;
    double theta = 0.0;
    double nu0 = 0.5;
    bool unchecked = false;
};

struct run_opts {
    uint64_t seed = 20260815u;
    int threads = default_threads();
    std::string out;
};

void add_model_flags(CLI::App* sub, model_opts& m, bool lambda_required = true) {
    auto* lam = sub->add_option(
        "--lambda", m.lambda,
        "measure: kingman | star | uniform | beta:A,B | point:Z, or a "
        "weighted mixture like \"0.5*kingman + 0.5*point:0.3\"");
    if (lambda_required) lam->required();
    sub->add_option("--sigma", m.sigma, "selection rate")->check(CLI::NonNegativeNumber);
    sub->add_option("--theta", m.theta, "total mutation rate")->check(CLI::NonNegativeNumber);
    sub->add_option("--nu0", m.nu0, "probability a mutation lands on the fit type")
        ->check(CLI::Range(0.0, 1.0));
    sub->add_flag("--unchecked", m.unchecked, "skip the subcritical-selection check");
}

void add_run_flags(CLI::App* sub, run_opts& r, bool with_out = true) {
    sub->add_option("--seed", r.seed, "master seed");
    sub->add_option("--threads", r.threads, "worker count")->check(CLI::PositiveNumber);
    if (with_out)
        sub->add_option("--out", r.out, "directory for CSV artifacts and manifest.json");
}

lwf::model_params build_model(const model_opts& m) {
    auto lam = lwf::parse_lambda(m.lambda);
    if (lam.rescaled)
        std::cerr << "note: mixture weights rescaled to total mass 1 (input total "
                  << lwf::fmt(lam.input_total) << ")\n";
    auto p = lwf::model_params::make(std::move(lam), m.sigma, m.theta, m.nu0);
    lwf::validate_params(p, !m.unchecked);
    return p;
}

nlohmann::json echo_model(const model_opts& m) {
    return {{"lambda", m.lambda},
            {"sigma", m.sigma},
            {"theta", m.theta},
            {"nu0", m.nu0},
            {"unchecked", m.unchecked}};
}

// Routes each artifact to the --out directory when one is given, otherwise
// to stdout, and closes the run with a manifest listing every file written.
struct emitter {
    std::string subcommand;
    const run_opts& run;
    nlohmann::json parameters;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    std::vector<std::string> artifacts;

    void add(const std::string& name, const std::string& content) {
        if (run.out.empty()) {
            std::cout << content;
            return;
        }
        namespace fs = std::filesystem;
        fs::create_directories(run.out);
        lwf::write_text_file((fs::path(run.out) / name).string(), content);
        artifacts.push_back(name);
    }

    void finish() {
        if (run.out.empty()) return;
        lwf::run_manifest man;
        man.subcommand = subcommand;
        man.parameters = parameters;
        man.seed = run.seed;
        man.threads = run.threads;
        man.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        man.artifacts = artifacts;
        namespace fs = std::filesystem;
        lwf::write_text_file((fs::path(run.out) / "manifest.json").string(),
                             man.to_json());
        std::cerr << "wrote " << artifacts.size() << " artifact(s) and manifest.json to "
                  << run.out << "\n";
    }
};

std::string criterion_line(const lwf::criterion_result& r) {
    char head[80];
    std::snprintf(head, sizeof(head), "criterion %2d %-24s %s  [%.2f s]  ", r.id,
                  r.name.c_str(), r.pass ? "pass" : "FAIL", r.seconds);
    return std::string(head) + r.detail;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "common-ancestor type distribution of Lambda-Wright-Fisher models "
        "with selection and two-way mutation"};
    app.set_version_flag("--version", lwf::lwf_version);
    app.require_subcommand(1);
    int exit_code = 0;

    // rates
    auto rates_m = std::make_shared<model_opts>();
    auto rates_r = std::make_shared<run_opts>();
    auto rates_bmax = std::make_shared<long>(10);
    {
        auto* sub = app.add_subcommand("rates", "merger rate table of the measure");
        sub->add_option("--lambda", rates_m->lambda, "measure spec")->required();
        sub->add_option("--bmax", *rates_bmax, "largest block count")
            ->check(CLI::Range(2L, 100000L));
        add_run_flags(sub, *rates_r);
        sub->callback([=]() {
            const auto t0 = std::chrono::steady_clock::now();
            auto lam = lwf::parse_lambda(rates_m->lambda);
            if (lam.rescaled)
                std::cerr << "note: mixture weights rescaled to total mass 1\n";
            lwf::rate_table tab(lam);
            emitter em{"rates", *rates_r,
                       {{"lambda", rates_m->lambda}, {"bmax", *rates_bmax}}, t0};
            em.add("rates.csv", tab.to_csv(*rates_bmax));
            em.finish();
        });
    }

    // sigma-star
    auto ss_m = std::make_shared<model_opts>();
    {
        auto* sub = app.add_subcommand(
            "sigma-star", "critical selection strength of the measure");
        sub->add_option("--lambda", ss_m->lambda, "measure spec")->required();
        sub->callback([=]() {
            std::cout << lwf::fmt(lwf::sigma_star(lwf::parse_lambda(ss_m->lambda)))
                      << "\n";
        });
    }

    // solve
    auto solve_m = std::make_shared<model_opts>();
    auto solve_r = std::make_shared<run_opts>();
    auto solve_nmax = std::make_shared<long>(100);
    auto solve_cmax = std::make_shared<long>(0);
    {
        auto* sub = app.add_subcommand(
            "solve", "coefficient tail a_n of the ancestor distribution");
        add_model_flags(sub, *solve_m);
        sub->add_option("--nmax", *solve_nmax, "largest n in the output")
            ->check(CLI::Range(1L, 100000L));
        sub->add_option("--cmax", *solve_cmax,
                        "fixed column truncation (0 = stabilized automatic)");
        add_run_flags(sub, *solve_r);
        sub->callback([=]() {
            const auto t0 = std::chrono::steady_clock::now();
            const auto p = build_model(*solve_m);
            lwf::coefficient_vector sol;
            if (*solve_cmax > 0) {
                sol = lwf::solve_direct(lwf::build_system(p, *solve_nmax, *solve_cmax));
            } else {
                lwf::solve_options o;
                while (o.n_start <= *solve_nmax) o.n_start *= 2;
                o.n_cap = std::max(o.n_cap, 8 * o.n_start);
                sol = lwf::solve_auto(p, o);
            }
            auto params = echo_model(*solve_m);
            params["nmax"] = *solve_nmax;
            params["truncation"] = {{"n_max", sol.n_max},
                                    {"c_max", sol.c_max},
                                    {"method", sol.method},
                                    {"stabilization_gap", sol.stabilization_gap}};
            emitter em{"solve", *solve_r, params, t0};
            em.add("coefficients.csv", lwf::csv_coefficients(sol.a, *solve_nmax));
            em.finish();
        });
    }

    // h
    auto h_m = std::make_shared<model_opts>();
    auto h_r = std::make_shared<run_opts>();
    auto h_x = std::make_shared<double>(0.0);
    auto h_points = std::make_shared<int>(101);
    {
        auto* sub = app.add_subcommand(
            "h", "ancestor type distribution h(x), curve or single point");
        add_model_flags(sub, *h_m);
        auto* xopt = sub->add_option("--x", *h_x, "evaluate at one point")
                         ->check(CLI::Range(0.0, 1.0));
        sub->add_option("--points", *h_points, "grid size for the curve")
            ->check(CLI::Range(2, 100001));
        add_run_flags(sub, *h_r);
        sub->callback([=]() {
            const auto t0 = std::chrono::steady_clock::now();
            const auto p = build_model(*h_m);
            const auto sol = lwf::solve_auto(p);
            if (xopt->count() > 0) {
                std::cout << lwf::fmt(lwf::eval_h(sol.a, *h_x)) << "\n";
                return;
            }
            auto params = echo_model(*h_m);
            params["points"] = *h_points;
            params["truncation"] = {{"n_max", sol.n_max}, {"c_max", sol.c_max}};
            emitter em{"h", *h_r, params, t0};
            em.add("h.csv", lwf::csv_h_curve(sol.a, *h_points));
            em.finish();
        });
    }

    // sim-l
    auto siml_m = std::make_shared<model_opts>();
    auto siml_r = std::make_shared<run_opts>();
    auto siml_cycles = std::make_shared<long>(100000);
    auto siml_nmax = std::make_shared<long>(10);
    {
        auto* sub = app.add_subcommand(
            "sim-l", "regenerative occupation tails of the pruned line count");
        add_model_flags(sub, *siml_m);
        sub->add_option("--cycles", *siml_cycles, "regeneration cycles")
            ->check(CLI::Range(200L, 100000000L));
        sub->add_option("--nmax", *siml_nmax, "deepest level")
            ->check(CLI::Range(1L, 1000L));
        add_run_flags(sub, *siml_r);
        sub->callback([=]() {
            const auto t0 = std::chrono::steady_clock::now();
            const auto p = build_model(*siml_m);
            std::vector<long> levels;
            for (long n = 1; n <= *siml_nmax; ++n) levels.push_back(n);
            const auto est = lwf::estimate_alpha(p, levels, *siml_cycles,
                                                 siml_r->seed, siml_r->threads);
            auto params = echo_model(*siml_m);
            params["cycles"] = *siml_cycles;
            params["nmax"] = *siml_nmax;
            emitter em{"sim-l", *siml_r, params, t0};
            em.add("alpha.csv", lwf::csv_alpha(levels, est));
            em.finish();
        });
    }

    // sim-d
    auto simd_m = std::make_shared<model_opts>();
    auto simd_r = std::make_shared<run_opts>();
    auto simd_reps = std::make_shared<long>(40000);
    auto simd_nmax = std::make_shared<long>(10);
    auto simd_cap = std::make_shared<long>(0);
    {
        auto* sub = app.add_subcommand(
            "sim-d", "hitting probabilities of the companion chain");
        add_model_flags(sub, *simd_m);
        sub->add_option("--replicates", *simd_reps, "paths per start")
            ->check(CLI::Range(200L, 100000000L));
        sub->add_option("--nmax", *simd_nmax, "starts run from 2 to nmax+1")
            ->check(CLI::Range(1L, 1000L));
        sub->add_option("--cap", *simd_cap,
                        "escape cap (0 = smallest certified automatic cap)");
        add_run_flags(sub, *simd_r);
        sub->callback([=]() {
            const auto t0 = std::chrono::steady_clock::now();
            const auto p = build_model(*simd_m);
            std::vector<long> starts;
            for (long d = 2; d <= *simd_nmax + 1; ++d) starts.push_back(d);
            const auto est = lwf::estimate_omega(p, starts, *simd_reps, simd_r->seed,
                                                 simd_r->threads, *simd_cap);
            auto params = echo_model(*simd_m);
            params["replicates"] = *simd_reps;
            params["nmax"] = *simd_nmax;
            params["cap"] = *simd_cap;
            emitter em{"sim-d", *simd_r, params, t0};
            em.add("omega.csv", lwf::csv_omega(est));
            em.finish();
        });
    }

    // sim-k
    auto simk_m = std::make_shared<model_opts>();
    auto simk_r = std::make_shared<run_opts>();
    auto simk_reps = std::make_shared<long>(10000);
    auto simk_starts = std::make_shared<std::vector<long>>(std::vector<long>{5});
    auto simk_horizon = std::make_shared<double>(0.0);
    {
        auto* sub = app.add_subcommand(
            "sim-k", "descent times of the full line-count chain to one line");
        add_model_flags(sub, *simk_m);
        sub->add_option("--replicates", *simk_reps, "paths per start")
            ->check(CLI::Range(2L, 100000000L));
        sub->add_option("--start", *simk_starts, "start states")
            ->check(CLI::Range(2L, 10000000L));
        sub->add_option("--horizon", *simk_horizon,
                        "censoring horizon (0 = run to absorption)")
            ->check(CLI::NonNegativeNumber);
        add_run_flags(sub, *simk_r);
        sub->callback([=]() {
            const auto t0 = std::chrono::steady_clock::now();
            const auto p = build_model(*simk_m);
            const double horizon = *simk_horizon > 0.0
                                       ? *simk_horizon
                                       : std::numeric_limits<double>::infinity();
            const auto rows = lwf::estimate_t1(p, *simk_starts, *simk_reps,
                                               simk_r->seed, simk_r->threads, horizon);
            auto params = echo_model(*simk_m);
            params["replicates"] = *simk_reps;
            params["start"] = *simk_starts;
            params["horizon"] = *simk_horizon;
            emitter em{"sim-k", *simk_r, params, t0};
            em.add("t1.csv", lwf::csv_t1(rows, *simk_reps));
            em.finish();
        });
    }

    // verify-duality
    auto vd_m = std::make_shared<model_opts>(model_opts{
        "0.35*kingman + 0.35*beta:2,2 + 0.2*point:0.7 + 0.1*point:1", 0.8, 1.0, 0.4,
        false});
    auto vd_r = std::make_shared<run_opts>();
    auto vd_configs = std::make_shared<long>(10000);
    auto vd_window = std::make_shared<long>(20);
    auto vd_horizon = std::make_shared<double>(0.3);
    auto vd_lmax = std::make_shared<long>(20);
    auto vd_dmax = std::make_shared<long>(20);
    {
        auto* sub = app.add_subcommand(
            "verify-duality",
            "coupled forward/dual flight passes must agree on every crossing");
        add_model_flags(sub, *vd_m, false);
        sub->add_option("--configs", *vd_configs, "Poisson configurations")
            ->check(CLI::Range(1L, 100000000L));
        sub->add_option("--window", *vd_window, "initial level window")
            ->check(CLI::Range(1L, 65536L));
        sub->add_option("--horizon", *vd_horizon, "time span of each configuration")
            ->check(CLI::PositiveNumber);
        sub->add_option("--lmax", *vd_lmax, "largest forward start")
            ->check(CLI::Range(1L, 4096L));
        sub->add_option("--dmax", *vd_dmax, "largest dual start")
            ->check(CLI::Range(1L, 4096L));
        add_run_flags(sub, *vd_r);
        sub->callback([=, &exit_code]() {
            const auto t0 = std::chrono::steady_clock::now();
            const auto p = build_model(*vd_m);
            const auto rep = lwf::verify_pathwise_duality(
                p, *vd_window, *vd_horizon, *vd_configs, *vd_lmax, *vd_dmax,
                vd_r->seed, vd_r->threads);
            std::cout << rep.violations << " violations\n";
            if (!vd_r->out.empty() && !rep.first_failure.empty()) {
                auto params = echo_model(*vd_m);
                params["configs"] = *vd_configs;
                emitter em{"verify-duality", *vd_r, params, t0};
                em.add("first_failure.jsonl", rep.first_failure);
                em.finish();
            }
            if (rep.violations > 0 || rep.exploded > 0) {
                std::cerr << rep.exploded << " explosions, first failure:\n"
                          << rep.first_failure;
                exit_code = 2;
            }
        });
    }

    // verify-asg
    auto va_m = std::make_shared<model_opts>(model_opts{
        "0.35*kingman + 0.35*beta:2,2 + 0.2*point:0.7 + 0.1*point:1", 0.8, 1.0, 0.4,
        false});
    auto va_r = std::make_shared<run_opts>();
    auto va_real = std::make_shared<long>(500);
    auto va_budget = std::make_shared<long>(40);
    auto va_cap = std::make_shared<long>(8);
    {
        auto* sub = app.add_subcommand(
            "verify-asg",
            "ancestor rule on pruned graphs vs. the unpruned oracle, all "
            "type assignments");
        add_model_flags(sub, *va_m, false);
        sub->add_option("--realizations", *va_real, "graphs to audit")
            ->check(CLI::Range(1L, 1000000L));
        sub->add_option("--budget", *va_budget, "events per graph")
            ->check(CLI::Range(1L, 100000L));
        sub->add_option("--cap", *va_cap, "largest final line count kept")
            ->check(CLI::Range(1L, 20L));
        add_run_flags(sub, *va_r);
        sub->callback([=, &exit_code]() {
            const auto t0 = std::chrono::steady_clock::now();
            const auto p = build_model(*va_m);
            const auto rep = lwf::verify_prop1(p, *va_real, *va_budget, *va_cap,
                                               va_r->seed, va_r->threads);
            std::cout << rep.mismatches << " mismatches over " << rep.assignments
                      << " assignments\n";
            if (!va_r->out.empty() && !rep.first_failure.empty()) {
                auto params = echo_model(*va_m);
                params["realizations"] = *va_real;
                emitter em{"verify-asg", *va_r, params, t0};
                em.add("first_failure.jsonl", rep.first_failure);
                em.finish();
            }
            if (rep.mismatches > 0) {
                std::cerr << "first failure:\n" << rep.first_failure;
                exit_code = 2;
            }
        });
    }

    // preset
    auto preset_name = std::make_shared<std::string>();
    auto preset_threads = std::make_shared<int>(default_threads());
    {
        auto* sub = app.add_subcommand(
            "preset", "run a named acceptance experiment end to end");
        sub->add_option("name", *preset_name, "experiment name")
            ->required()
            ->check(CLI::IsMember(lwf::preset_names()));
        sub->add_option("--threads", *preset_threads, "worker count")
            ->check(CLI::PositiveNumber);
        sub->callback([=, &exit_code]() {
            bool all = true;
            for (int id : lwf::preset_criteria(*preset_name)) {
                const auto r = lwf::run_criterion(id, *preset_threads);
                std::cout << criterion_line(r) << "\n";
                all = all && r.pass;
            }
            std::cout << "preset " << *preset_name << ": " << (all ? "pass" : "FAIL")
                      << "\n";
            if (!all) exit_code = 2;
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return exit_code;
}
