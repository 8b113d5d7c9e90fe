// Command-line front end: simulation, estimation, bootstrap, benchmark,
// reserving and rate reports. Outputs are CSV/JSON files under --out; the
// effective configuration is echoed there so every run is reproducible from
// the output directory alone.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
// failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <CLI11.hpp>

#include "msdelay/benchmark.hpp"
#include "msdelay/config.hpp"
#include "msdelay/csv.hpp"
#include "msdelay/estimation.hpp"
#include "msdelay/io.hpp"
#include "msdelay/oe.hpp"
#include "msdelay/reserve.hpp"
#include "msdelay/simulate.hpp"

namespace fs = std::filesystem;
using namespace msdelay;

namespace {

struct StageTimer {
    std::string label;
    std::chrono::steady_clock::time_point start;
    explicit StageTimer(std::string l) : label(std::move(l)),
                                         start(std::chrono::steady_clock::now()) {}
    ~StageTimer() {
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::fprintf(stderr, "[msdelay] %s: %.2fs\n", label.c_str(), secs);
    }
};

ModelSpec spec_by_name(const std::string& name) {
    if (name == "sim6") return make_sim6_spec();
    if (name == "sim6_miss") return make_sim6_miss_spec(false);
    if (name == "sim6_miss2") return make_sim6_miss_spec(true);
    throw ConfigError("unknown model spec: " + name +
                      " (available: sim6, sim6_miss, sim6_miss2)");
}

void ensure_outdir(const std::string& out) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out))
        throw ConfigError("output directory not writable: " + out);
}

void echo_config(const FlatConfig& cfg, const std::string& out, const std::string& extra) {
    std::ofstream os(fs::path(out) / "config_echo.txt");
    os << cfg.echo() << extra;
}

FlatConfig load_config(const std::string& path) {
    return path.empty() ? FlatConfig{} : FlatConfig::from_file(path);
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream os(p);
    if (!os) throw ConfigError("cannot open " + p.string() + " for writing");
    os << text;
}

int cmd_simulate(const std::string& config_path, std::uint64_t seed, int reps,
                 const std::string& out) {
    FlatConfig cfg = load_config(config_path);
    ScenarioConfig sc = scenario_from_config(cfg);
    if (seed != 0) sc.seed = seed;
    if (reps < 1) throw ConfigError("reps must be positive");
    ensure_outdir(out);
    echo_config(cfg, out, "seed = " + std::to_string(sc.seed) + "\nreps = " +
                              std::to_string(reps) + "\n");

    nlohmann::json summary_all = nlohmann::json::array();
    for (int r = 0; r < reps; ++r) {
        StageTimer timer("simulate rep " + std::to_string(r));
        ScenarioConfig sr = sc;
        sr.seed = reps == 1 ? sc.seed : substream_seed(sc.seed, static_cast<std::uint64_t>(r));
        auto sim = generate_sample(sr);
        const std::string tag = reps == 1 ? "" : "_rep" + std::to_string(r);
        for (auto variant : {ViewVariant::Observed, ViewVariant::Oracle, ViewVariant::Naive1,
                             ViewVariant::Naive2}) {
            auto view = build_views(sim, variant);
            export_dataset_csv(view,
                               (fs::path(out) / (std::string(view_name(variant)) + tag + ".csv"))
                                   .string());
        }
        auto s = summarize(sim);
        nlohmann::json js;
        js["seed"] = sr.seed;
        js["n"] = sr.n;
        for (const auto& [tr, c] : s.generated_counts)
            js["generated_counts"][std::to_string(tr.first) + "->" +
                                   std::to_string(tr.second)] = c;
        for (const auto& [tr, c] : s.observed_counts)
            js["observed_counts"][std::to_string(tr.first) + "->" +
                                  std::to_string(tr.second)] = c;
        js["delay_mean_from1"] = s.delay_mean_from1;
        js["delay_mean_from2"] = s.delay_mean_from2;
        js["delay_sd_from1"] = s.delay_sd_from1;
        js["delay_sd_from2"] = s.delay_sd_from2;
        js["confirmed_fraction_23"] = s.confirmed_fraction_23;
        js["model_confirm_rate"] = s.model_confirm_rate;
        js["pending_reviews"] = s.n_pending;
        summary_all.push_back(js);
    }
    write_json(summary_all.size() == 1 ? summary_all[0] : summary_all,
               (fs::path(out) / "summary.json").string());
    return 0;
}

int cmd_estimate(const std::string& data_path, const std::string& model_name,
                 const std::string& method, int jobs, const std::string& out) {
    ensure_outdir(out);
    Dataset data = ingest_grid_csv(data_path);
    data.validate();
    ModelSpec spec = spec_by_name(model_name);
    FitControl ctl;
    ctl.jobs = jobs;
    FitResult fit;
    {
        StageTimer timer("estimate (" + method + ")");
        if (method == "exact" || method == "poisson") {
            fit = two_step_fit(data, spec, ctl, method == "exact");
        } else if (method == "naive1" || method == "naive2") {
            fit = naive_fit(data, method == "naive1" ? NaiveVariant::Naive1
                                                     : NaiveVariant::Naive2,
                            spec, ctl);
        } else if (method == "oracle") {
            auto gfit = fit_adjudication(data, spec.adjudication_start, ctl.opt, ctl.quad);
            fit = classical_fit(data, spec, gfit.model.g(), ctl, "oracle");
        } else {
            throw ConfigError("unknown method: " + method);
        }
    }
    nlohmann::json j = to_json(fit);
    j["model"] = model_name;
    j["data"] = data_path;
    write_json(j, (fs::path(out) / "fit.json").string());
    write_text(fs::path(out) / "config_echo.txt",
               "data = " + data_path + "\nmodel = " + model_name + "\nmethod = " + method + "\n");
    if (!fit.converged()) std::fprintf(stderr, "[msdelay] warning: fit did not converge\n");
    return 0;
}

int cmd_bootstrap(const std::string& data_path, const std::string& model_name,
                  const std::string& method, int B, std::uint64_t seed, int jobs,
                  const std::string& out) {
    if (B < 1) throw ConfigError("bootstrap needs B >= 1");
    ensure_outdir(out);
    Dataset data = ingest_grid_csv(data_path);
    data.validate();
    ModelSpec spec = spec_by_name(model_name);
    FitControl ctl;
    BootstrapResult boot;
    {
        StageTimer timer("bootstrap B=" + std::to_string(B));
        boot = bootstrap_fit(data, spec, B, seed, ctl, method == "exact", {0.90, 0.95, 0.99},
                             jobs);
    }
    write_json(to_json(boot), (fs::path(out) / "bootstrap.json").string());
    write_bootstrap_csv(boot, (fs::path(out) / "bootstrap.csv").string());
    write_text(fs::path(out) / "config_echo.txt",
               "data = " + data_path + "\nmodel = " + model_name + "\nmethod = " + method +
                   "\nbootstrap = " + std::to_string(B) + "\nseed = " + std::to_string(seed) +
                   "\n");
    return 0;
}

int cmd_benchmark(const std::string& config_path, std::uint64_t seed, int reps,
                  const std::string& methods_csv, bool estimand, int coverage_reps, int B,
                  int jobs, const std::string& out) {
    FlatConfig cfg = load_config(config_path);
    BenchmarkConfig bc;
    bc.scenario = scenario_from_config(cfg);
    if (seed != 0) bc.scenario.seed = seed;
    bc.replications = reps;
    bc.estimand = estimand;
    bc.methods.clear();
    {
        std::stringstream ss(methods_csv);
        std::string item;
        while (std::getline(ss, item, ',')) bc.methods.push_back(method_from_name(item));
    }
    if (bc.methods.empty()) throw ConfigError("no methods requested");
    ensure_outdir(out);
    echo_config(cfg, out,
                "reps = " + std::to_string(reps) + "\nmethods = " + methods_csv + "\nseed = " +
                    std::to_string(bc.scenario.seed) + "\n");

    BenchmarkResult res;
    {
        StageTimer timer("benchmark " + std::to_string(reps) + " replications");
        res = run_benchmark(bc, jobs);
    }

    // parameter table: one row per (method, coordinate)
    {
        std::ofstream os(fs::path(out) / "theta_table.csv");
        os << "method,parameter,truth,bias,sd,rmse,replications,failures\n";
        char buf[160];
        for (const auto& st : res.methods) {
            for (std::size_t k = 0; k < st.bias.size(); ++k) {
                std::snprintf(buf, sizeof(buf), "%s,theta_%zu,%.6f,%.6f,%.6f,%.6f,%zu,%d\n",
                              method_name(st.method), k + 1, bc.scenario.theta[k], st.bias[k],
                              st.sd[k], st.rmse[k], st.theta_rows.size(), st.failures);
                os << buf;
            }
        }
    }
    {
        std::ofstream os(fs::path(out) / "nuisance_table.csv");
        os << "parameter,truth,bias,sd\n";
        char buf[120];
        for (std::size_t k = 0; k < res.g_bias.size(); ++k) {
            std::snprintf(buf, sizeof(buf), "g_%zu,%.6f,%.6f,%.6f\n", k + 1, bc.scenario.g[k],
                          res.g_bias[k], res.g_sd[k]);
            os << buf;
        }
        for (std::size_t k = 0; k < res.f_bias.size(); ++k) {
            std::snprintf(buf, sizeof(buf), "f_%zu,%.6f,%.6f,%.6f\n", k + 1, bc.scenario.f[k],
                          res.f_bias[k], res.f_sd[k]);
            os << buf;
        }
    }
    if (estimand) {
        std::ofstream os(fs::path(out) / "estimand_table.csv");
        os << "method,mse,mae,replications\n";
        char buf[120];
        for (const auto& st : res.methods) {
            std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%zu\n", method_name(st.method), st.mse,
                          st.mae, st.mse_rows.size());
            os << buf;
        }
    }
    nlohmann::json js;
    js["replications"] = reps;
    js["seed"] = bc.scenario.seed;
    {
        double c12 = 0, c13 = 0, c23 = 0;
        for (auto& counts : res.generated_counts) {
            c12 += counts[{1, 2}];
            c13 += counts[{1, 3}];
            c23 += counts[{2, 3}];
        }
        const double n = std::max<std::size_t>(std::size_t{1}, res.generated_counts.size());
        js["mean_generated_counts"] = {{"1->2", c12 / n}, {"1->3", c13 / n}, {"2->3", c23 / n}};
    }
    if (coverage_reps > 0) {
        CoverageConfig cc;
        cc.scenario = bc.scenario;
        cc.outer_replications = coverage_reps;
        cc.bootstrap_resamples = B;
        StageTimer timer("coverage k=" + std::to_string(coverage_reps));
        auto cov = run_coverage(cc, jobs);
        std::ofstream os(fs::path(out) / "coverage_table.csv");
        os << "level,covered,replications,rate\n";
        for (std::size_t l = 0; l < cov.levels.size(); ++l)
            os << cov.levels[l] << "," << cov.covered[l] << "," << cov.replications << ","
               << cov.rate()[l] << "\n";
        for (std::size_t l = 0; l < cov.levels.size(); ++l)
            js["coverage"][std::to_string(cov.levels[l])] = cov.rate()[l];
    }
    write_json(js, (fs::path(out) / "benchmark.json").string());
    return 0;
}

int cmd_reserve(const std::string& fit_path, const std::string& model_name, double t_max,
                double step, int x_points, int jobs, const std::string& out) {
    ensure_outdir(out);
    std::ifstream is(fit_path);
    if (!is) throw ConfigError("cannot open " + fit_path);
    nlohmann::json j;
    is >> j;
    std::vector<double> theta = j.at("theta").get<std::vector<double>>();
    std::vector<double> g = j.at("g").get<std::vector<double>>();
    std::vector<double> f = j.at("f").get<std::vector<double>>();
    EventModel model = spec_by_name(model_name).event_model(theta, g, f, true);
    OccupancyOptions oo;
    oo.step = step;
    EstimandGrid grid;
    {
        StageTimer timer("reserve surface");
        grid = estimand_grid(model, 2, t_max, EstimandGrid::default_xs(-4.0, 4.0, x_points), oo,
                             jobs);
    }
    write_estimand_csv(grid, (fs::path(out) / "estimand.csv").string());
    write_text(fs::path(out) / "config_echo.txt",
               "fit = " + fit_path + "\nmodel = " + model_name + "\ntmax = " +
                   std::to_string(t_max) + "\n");
    std::fprintf(stderr, "[msdelay] conservation error: %.3g\n", grid.max_conservation_error);
    return 0;
}

int cmd_oe_rates(const std::string& data_path, const std::string& fit_path,
                 const std::string& model_name, const std::string& target_name, int buckets,
                 const std::string& out) {
    ensure_outdir(out);
    Dataset data = ingest_grid_csv(data_path);
    data.validate();
    std::ifstream is(fit_path);
    if (!is) throw ConfigError("cannot open " + fit_path);
    nlohmann::json j;
    is >> j;
    std::vector<double> theta = j.at("theta").get<std::vector<double>>();
    std::vector<double> g = j.at("g").get<std::vector<double>>();
    std::vector<double> f = j.at("f").get<std::vector<double>>();
    ModelSpec spec = spec_by_name(model_name);
    EventModel model = spec.event_model(theta, g, f, false);

    OETarget target;
    if (target_name == "events") target = OETarget::Events;
    else if (target_name == "delays") target = OETarget::Delays;
    else if (target_name == "adjudication") target = OETarget::Adjudication;
    else throw ConfigError("unknown target: " + target_name);

    // imputation weights behind the event cells
    std::vector<double> weights(data.subjects.size(), 1.0);
    if (target == OETarget::Events) {
        AdjudicationModel adj = spec.adjudication_start;
        adj.set_g(g);
        for (std::size_t i = 0; i < data.subjects.size(); ++i)
            if (data.subjects[i].has_pending())
                weights[i] = absorption_weight(data.subjects[i], adj, data.eta).weight;
    }

    std::vector<double> partition;
    for (int b = 0; b <= buckets; ++b)
        partition.push_back(data.eta * b / static_cast<double>(buckets));

    const std::vector<double> x0{0.0};
    OETable table;
    std::function<double(const Transition&, double, int)> fitted;
    switch (target) {
        case OETarget::Events: {
            table = discretize(data, partition, target, weights, &model.state_space);
            fitted = [model, x0](const Transition& tr, double t, int) {
                HazardContext ctx = HazardContext::at(t, tr.first, 0.0);
                return model.hazards.at(tr).rate(ctx, x0);
            };
            break;
        }
        case OETarget::Delays: {
            table = discretize(data, partition, target, weights);
            DelayModelSet delays = sim6_delays(f);
            fitted = [delays, x0](const Transition& tr, double u, int) {
                const DelayModel* dm = delays.model_for(tr);
                if (!dm || u <= 0.0) return 0.0;
                return reverse_hazard(*dm, u, x0);
            };
            break;
        }
        case OETarget::Adjudication: {
            AdjudicationModel adj = spec.adjudication_start;
            adj.set_g(g);
            table = discretize(data, partition, target, weights, &adj.adj_state_space);
            fitted = [adj, x0](const Transition& tr, double t, int) {
                auto it = adj.hazards.find(tr);
                if (it == adj.hazards.end() || it->second.disabled) return 0.0;
                HazardContext ctx = HazardContext::at(t, tr.first, 0.0);
                ctx.report_time = 0.0;
                return it->second.rate(ctx, x0);
            };
            break;
        }
    }
    auto rows = oe_rates_report(table, fitted);
    if (target == OETarget::Delays) {
        // only transitions that carry a delay model belong in the delay report
        DelayModelSet delays = sim6_delays(f);
        std::erase_if(rows, [&](const OERateRow& r) { return delays.delay_free(r.transition); });
    }
    write_rates_csv(rows, (fs::path(out) / "rates.csv").string());
    write_text(fs::path(out) / "config_echo.txt",
               "data = " + data_path + "\nfit = " + fit_path + "\ntarget = " + target_name +
                   "\nbuckets = " + std::to_string(buckets) + "\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multistate hazard estimation under reporting delays and incomplete review"};
    app.require_subcommand(1);

    std::string config_path, out = "msdelay_out", data_path, fit_path;
    std::string method = "poisson", model_name = "sim6", methods_csv = "poisson";
    std::string target_name = "events";
    std::uint64_t seed = 0;
    int reps = 1, B = 0, jobs = 1, coverage_reps = 0, x_points = 161, buckets = 60;
    double t_max = 5.0, step = 1.0 / 512.0;
    bool estimand = false;

    auto* sim = app.add_subcommand("simulate", "generate benchmark datasets");
    sim->add_option("--config", config_path, "scenario config file");
    sim->add_option("--seed", seed, "rng seed")->required();
    sim->add_option("--reps", reps, "number of datasets");
    sim->add_option("--out", out, "output directory");

    auto* est = app.add_subcommand("estimate", "fit a dataset");
    est->add_option("--data", data_path, "dataset csv")->required();
    est->add_option("--method", method, "exact|poisson|naive1|naive2|oracle");
    est->add_option("--model", model_name, "sim6|sim6_miss|sim6_miss2");
    est->add_option("--jobs", jobs, "worker threads");
    est->add_option("--out", out, "output directory");

    auto* boot = app.add_subcommand("bootstrap", "percentile bootstrap of a dataset");
    boot->add_option("--data", data_path, "dataset csv")->required();
    boot->add_option("--bootstrap", B, "number of resamples")->required();
    boot->add_option("--seed", seed, "rng seed")->required();
    boot->add_option("--method", method, "exact|poisson");
    boot->add_option("--model", model_name, "model spec");
    boot->add_option("--jobs", jobs, "worker threads");
    boot->add_option("--out", out, "output directory");

    auto* bench = app.add_subcommand("benchmark", "replication study");
    bench->add_option("--config", config_path, "scenario config file");
    bench->add_option("--seed", seed, "rng seed")->required();
    bench->add_option("--reps", reps, "replications")->required();
    bench->add_option("--methods", methods_csv, "comma list of methods");
    bench->add_flag("--estimand", estimand, "also compute the estimand accuracy table");
    bench->add_option("--coverage", coverage_reps, "outer replications for coverage (0 = off)");
    bench->add_option("--bootstrap", B, "bootstrap resamples for coverage");
    bench->add_option("--jobs", jobs, "worker threads");
    bench->add_option("--out", out, "output directory");

    auto* res = app.add_subcommand("reserve", "expected-duration surface from a fit");
    res->add_option("--fit", fit_path, "fit.json from estimate")->required();
    res->add_option("--model", model_name, "model spec");
    res->add_option("--tmax", t_max, "time horizon");
    res->add_option("--step", step, "grid step");
    res->add_option("--xpoints", x_points, "covariate grid points");
    res->add_option("--jobs", jobs, "worker threads");
    res->add_option("--out", out, "output directory");

    auto* rates = app.add_subcommand("oe-rates", "occurrence-exposure rate report");
    rates->add_option("--data", data_path, "dataset csv")->required();
    rates->add_option("--fit", fit_path, "fit.json from estimate")->required();
    rates->add_option("--model", model_name, "model spec");
    rates->add_option("--target", target_name, "events|delays|adjudication");
    rates->add_option("--buckets", buckets, "number of partition buckets");
    rates->add_option("--out", out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        register_builtin_families();
        if (sim->parsed()) return cmd_simulate(config_path, seed, reps, out);
        if (est->parsed()) return cmd_estimate(data_path, model_name, method, jobs, out);
        if (boot->parsed())
            return cmd_bootstrap(data_path, model_name, method, B, seed, jobs, out);
        if (bench->parsed())
            return cmd_benchmark(config_path, seed, reps, methods_csv, estimand, coverage_reps,
                                 B == 0 ? 1000 : B, jobs, out);
        if (res->parsed())
            return cmd_reserve(fit_path, model_name, t_max, step, x_points, jobs, out);
        if (rates->parsed())
            return cmd_oe_rates(data_path, fit_path, model_name, target_name, buckets, out);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
