#pragma once

// Command-line front end: simulate, sweep and verify.

#include "doblab/config.hpp"
#include "doblab/harness.hpp"
#include "doblab/verify.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

namespace doblab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

namespace detail {

struct CliError {
    int code;
    std::string message;
};

inline std::optional<std::uint64_t> seed_from_env() {
    const char* raw = std::getenv("DOBLAB_SEED");
    if (raw == nullptr) return std::nullopt;
    const std::string text(raw);
    std::uint64_t value = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
        throw CliError{kExitConfig, "DOBLAB_SEED: expected a nonnegative integer, got '" + text + "'"};
    }
    return value;
}

inline RunConfig load_config(const std::string& path, bool require_eta_grid) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CliError{kExitConfig, path + ": cannot open configuration file"};
    std::ostringstream text;
    text << in.rdbuf();
    const auto seed = seed_from_env();
    try {
        return parse_run_config(text.str(), path, seed, require_eta_grid);
    } catch (const ConfigError& e) {
        throw CliError{kExitConfig, e.what()};
    }
}

inline std::ofstream open_output(const std::filesystem::path& dir, const std::string& file) {
    std::ofstream os(dir / file, std::ios::binary | std::ios::trunc);
    if (!os) throw CliError{kExitFailure, (dir / file).string() + ": cannot open for writing"};
    return os;
}

inline void prepare_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw CliError{kExitFailure, dir.string() + ": " + ec.message()};
}

inline void write_estimates_csv(std::ostream& os, const EstimateSeries& est, double sample_time) {
    os << "step,t,d_hat,d_cov,x1_hat,x2_hat\n";
    for (std::size_t i = 0; i < est.d_hat.size(); ++i) {
        const auto k = static_cast<double>(i + 1);
        os << (i + 1) << ',' << format_real(k * sample_time) << ',' << format_real(est.d_hat[i](0)) << ','
           << format_real(est.d_cov[i](0, 0)) << ',' << format_real(est.x_hat[i](0)) << ','
           << format_real(est.x_hat[i](1)) << '\n';
    }
}

inline int cmd_simulate(const std::string& config_path, std::ostream& out, std::ostream& err) {
    const RunConfig cfg = load_config(config_path, false);
    const std::filesystem::path dir(cfg.output_dir);
    prepare_dir(dir);
    const MonteCarloConfig& mc = cfg.mc;
    const Trajectory traj = simulate_truth(mc.sys, mc.profile, mc.steps, cfg.seed, mc.initial, mc.truth_noise,
                                           mc.sample_time);
    {
        auto os = open_output(dir, "trajectory.csv");
        write_trajectory_csv(os, traj);
    }
    int code = kExitOk;
    for (const auto& spec : mc.estimators) {
        try {
            const EstimateSeries est = run_estimator(spec, mc.sys, mc.initial, traj);
            auto os = open_output(dir, "estimates_" + spec.name + ".csv");
            write_estimates_csv(os, est, mc.sample_time);
            out << "wrote " << (dir / ("estimates_" + spec.name + ".csv")).string() << '\n';
        } catch (const std::exception& e) {
            err << "estimator " << spec.name << " failed: " << e.what() << '\n';
            code = kExitFailure;
        }
    }
    return code;
}

inline int cmd_sweep(const std::string& config_path, std::optional<unsigned> threads, std::ostream& out,
                     std::ostream& err) {
    RunConfig cfg = load_config(config_path, true);
    if (threads) cfg.mc.threads = *threads;
    const std::filesystem::path dir(cfg.output_dir);
    prepare_dir(dir);
    const MonteCarloReport rep = run_monte_carlo(cfg.mc);
    {
        auto os = open_output(dir, "sweep.csv");
        write_sweep_csv(os, rep.sweep);
    }
    for (const auto& e : rep.estimators) {
        auto os = open_output(dir, "bias_std_" + e.name + ".csv");
        write_bias_std_csv(os, e, rep.sample_time);
    }
    {
        auto os = open_output(dir, "report.json");
        os << to_json(rep).dump(2) << '\n';
    }
    int code = kExitOk;
    for (const auto& e : rep.estimators) {
        out << e.name << ": perf_loss " << format_real(e.window_loss.perf_loss) << ", rmse_d "
            << format_real(e.rmse_d.mean) << '\n';
        if (e.failures > 0) {
            err << "estimator " << e.name << ": " << e.failures << " failed trial(s); first: "
                << e.failure_messages.front() << '\n';
            code = kExitFailure;
        }
    }
    return code;
}

inline int cmd_verify(const VerifyOptions& opt, std::ostream& out) {
    const auto results = run_verify(opt);
    std::string failed;
    for (const auto& r : results) {
        out << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << " [" << format_real(r.seconds).substr(0, 6)
            << " s]\n";
        if (!r.pass) failed += (failed.empty() ? "" : ", ") + r.name;
    }
    if (!failed.empty()) {
        out << "failed: " << failed << '\n';
        return kExitFailure;
    }
    out << "all checks passed\n";
    return kExitOk;
}

}  // namespace detail

/// Entry point; returns the process exit code (0 ok, 1 failure, 2 configuration error).
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Disturbance-observer lab: simulate, sweep and verify", "doblab"};
    app.require_subcommand(1);
    unsigned threads = 0;
    auto* threads_opt = app.add_option("--threads", threads, "Maximum worker threads")->check(CLI::Range(1u, 1024u));

    std::string config_path;
    auto* simulate = app.add_subcommand("simulate", "Simulate one trajectory and run the configured estimators");
    simulate->add_option("config", config_path, "JSON configuration")->required();
    auto* sweep = app.add_subcommand("sweep", "Monte Carlo eta-sweep with bias/std series");
    sweep->add_option("config", config_path, "JSON configuration")->required();
    auto* verify = app.add_subcommand("verify", "Run the built-in property checks");
    Index trials = 100;
    verify->add_option("--trials", trials, "Monte Carlo trials for statistical checks")->check(CLI::Range(2, 100000));
    bool inject_fault = false;
    verify->add_flag("--inject-fault", inject_fault, "Drop the K R K^T term of the covariance update")->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return kExitOk;
        }
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    }

    const std::optional<unsigned> thread_cap = threads_opt->count() > 0 ? std::optional<unsigned>(threads) : std::nullopt;
    try {
        if (simulate->parsed()) return detail::cmd_simulate(config_path, out, err);
        if (sweep->parsed()) return detail::cmd_sweep(config_path, thread_cap, out, err);
        VerifyOptions opt;
        opt.trials = trials;
        opt.threads = thread_cap.value_or(1);
        if (inject_fault) opt.update = faulty_covariance_update();
        return detail::cmd_verify(opt, out);
    } catch (const detail::CliError& e) {
        err << "error: " << e.message << '\n';
        return e.code;
    } catch (const ModelError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}

}  // namespace doblab
