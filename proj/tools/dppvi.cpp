// Command-line front end: run experiments from a JSON config, sweep a
// hyperparameter grid, replay a recorded trace, or tabulate the privacy
// accountant. Exit codes: 0 success, 2 configuration error, 3 divergence
// after retries, 1 other failures.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "dppvi/harness.hpp"

namespace {

dppvi::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw dppvi::IoError("cannot open " + path);
    return dppvi::json::parse(in, nullptr, true, true);
}

// "dotted.path=value" overrides applied onto the config JSON
void apply_cli_overrides(dppvi::json& cfg, const std::vector<std::string>& sets) {
    for (const auto& s : sets) {
        auto eq = s.find('=');
        if (eq == std::string::npos)
            throw dppvi::ConfigError("--set expects dotted.path=value, got '" + s + "'");
        dppvi::json value;
        try {
            value = dppvi::json::parse(s.substr(eq + 1));
        } catch (const dppvi::json::exception&) {
            value = s.substr(eq + 1);  // bare strings need no quotes
        }
        dppvi::apply_override(cfg, s.substr(0, eq), value);
    }
}

int cmd_run(const std::string& config_path, const std::string& out_dir, bool emit_csv,
            const std::vector<std::string>& sets) {
    dppvi::json cfg_json = load_json_file(config_path);
    apply_cli_overrides(cfg_json, sets);
    dppvi::ExperimentConfig config = dppvi::config_from_json(cfg_json);
    if (!out_dir.empty()) config.output_dir = out_dir;
    if (config.output_dir.empty()) config.output_dir = "out";
    dppvi::validate_config(config);

    auto report = dppvi::run_experiment(config, true);
    if (emit_csv)
        dppvi::write_metrics_csv(report, config.output_dir + "/metrics.csv");

    int diverged = 0;
    for (const auto& run : report.seeds) {
        if (run.diverged) {
            std::printf("seed %d: diverged after retries (%s)\n", run.seed_index,
                        run.failure.c_str());
            ++diverged;
            continue;
        }
        std::printf("seed %d: accuracy=%.4f mean_loglik=%.4f comms=%ld", run.seed_index,
                    run.trace.final_accuracy, run.trace.final_mean_loglik,
                    run.trace.communications);
        if (std::isfinite(run.eps_global) && run.eps_global > 0.0)
            std::printf(" epsilon=%.4f", run.eps_global);
        if (run.retries > 0) std::printf(" (retries=%d)", run.retries);
        std::printf("\n");
        if (run.eps_global > 0.0 && run.eps_per_client.size() > 1) {
            std::printf("  epsilon per client:");
            for (double e : run.eps_per_client) {
                if (std::isfinite(e))
                    std::printf(" %.4f", e);
                else
                    std::printf(" inf");
            }
            std::printf("\n");
        }
    }
    const auto& j = report.report_json;
    if (j["mean_loglik"]["mean"].is_number()) {
        std::printf("mean accuracy=%.4f mean_loglik=%.4f", j["accuracy"]["mean"].get<double>(),
                    j["mean_loglik"]["mean"].get<double>());
        if (j["mean_loglik"]["sem"].is_number())
            std::printf(" (sem %.4f / %.4f)", j["accuracy"]["sem"].get<double>(),
                        j["mean_loglik"]["sem"].get<double>());
        std::printf("\n");
    }
    std::printf("report written to %s/report.json\n", config.output_dir.c_str());
    return diverged > 0 ? 3 : 0;
}

int cmd_sweep(const std::string& config_path, const std::string& grid_path,
              const std::string& out_dir) {
    dppvi::json config = load_json_file(config_path);
    dppvi::json grid = load_json_file(grid_path);
    auto result = dppvi::sweep(config, grid);

    std::string dir = out_dir.empty() ? "out" : out_dir;
    std::filesystem::create_directories(dir);
    dppvi::json out;
    out["results"] = result.results;
    out["selection"] = result.selection;
    std::ofstream f(dir + "/sweep.json");
    f << out.dump(2) << "\n";

    std::printf("%zu grid points evaluated\n", result.results.size());
    if (result.selection["best_index"].is_number()) {
        std::printf("best point #%d (mean_loglik=%.4f): %s\n",
                    result.selection["best_index"].get<int>(),
                    result.selection["best_mean_loglik"].get<double>(),
                    result.selection["best_params"].dump().c_str());
    } else {
        std::printf("no grid point completed\n");
    }
    std::printf("sweep written to %s/sweep.json\n", dir.c_str());
    return 0;
}

int cmd_replay(const std::string& trace_path) {
    auto result = dppvi::replay_trace(trace_path);
    if (result.ok) {
        std::printf("replay ok: every reported number reproduced exactly\n");
        return 0;
    }
    std::printf("replay mismatch: %s\n", result.mismatch.c_str());
    return 1;
}

int cmd_epsilon_table(double delta, double q, const std::vector<double>& sigmas,
                      const std::vector<long>& Ts) {
    std::printf("%10s", "sigma\\T");
    for (long T : Ts) std::printf(" %12ld", T);
    std::printf("\n");
    for (double s : sigmas) {
        std::printf("%10.4f", s);
        for (long T : Ts) {
            try {
                std::printf(" %12.5f", dppvi::accountant_epsilon(delta, q, T, s));
            } catch (const dppvi::DivergentEpsilon&) {
                std::printf(" %12s", "inf");
            }
        }
        std::printf("\n");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Differentially private partitioned variational inference simulator"};
    app.require_subcommand(1);

    std::string config_path, grid_path, trace_path, out_dir;
    std::vector<std::string> sets;
    bool emit_csv = false;
    double delta = 1e-5, q = 1.0;
    std::vector<double> sigmas{1.0};
    std::vector<long> Ts{1};

    auto* run = app.add_subcommand("run", "run an experiment from a JSON config");
    run->add_option("--config", config_path, "experiment config file")->required();
    run->add_option("--out", out_dir, "output directory (overrides the config)");
    run->add_option("--set", sets, "config overrides as dotted.path=value");
    run->add_flag("--csv", emit_csv, "also write a plot-ready metrics.csv");

    auto* sweep = app.add_subcommand("sweep", "grid search over config overrides");
    sweep->add_option("--config", config_path, "experiment config template")->required();
    sweep->add_option("--grid", grid_path, "JSON grid of dotted-path overrides")->required();
    sweep->add_option("--out", out_dir, "output directory");

    auto* replay = app.add_subcommand("replay", "re-run a trace and verify it byte for byte");
    replay->add_option("--trace", trace_path, "trace_seedN.jsonl file")->required();

    auto* table = app.add_subcommand("epsilon-table", "tabulate the accounting oracle");
    table->add_option("--delta", delta, "target delta");
    table->add_option("--q", q, "subsampling fraction");
    table->add_option("--sigma", sigmas, "noise multipliers");
    table->add_option("--T", Ts, "composition counts");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, out_dir, emit_csv, sets);
        if (sweep->parsed()) return cmd_sweep(config_path, grid_path, out_dir);
        if (replay->parsed()) return cmd_replay(trace_path);
        if (table->parsed()) return cmd_epsilon_table(delta, q, sigmas, Ts);
    } catch (const dppvi::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const dppvi::DomainError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const dppvi::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 2;
    } catch (const dppvi::json::exception& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
