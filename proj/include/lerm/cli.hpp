#pragma once

// Command-line front end. Every subcommand writes through the streams it is
// given so the whole tool can run in-process.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "lerm/config.hpp"
#include "lerm/format.hpp"
#include "lerm/numerics.hpp"
#include "lerm/risks.hpp"
#include "lerm/tasks.hpp"
#include "lerm/theory.hpp"
#include "lerm/trainer.hpp"

namespace lerm::cli {

namespace fs = std::filesystem;

inline constexpr const char* kOutEnv = "LERM_LAB_OUT";
inline constexpr const char* kDefaultOut = "lerm_out";

struct Options {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed_task;
    std::optional<std::uint64_t> seed_train;
    bool quiet = false;
};

/// Loads the config (SSL defaults when none is given), applies seed flags and
/// resolves the output directory: --out, then the config, then LERM_LAB_OUT.
[[nodiscard]] inline RunConfig resolve_config(const Options& o) {
    RunConfig cfg = o.config.empty() ? RunConfig::defaults(Scenario::ssl) : load_config(o.config);
    if (o.seed_task) cfg.seed_task = *o.seed_task;
    if (o.seed_train) cfg.seed_train = *o.seed_train;
    if (!o.out.empty()) {
        cfg.out = o.out;
    } else if (cfg.out.empty()) {
        const char* env = std::getenv(kOutEnv);
        cfg.out = env && *env ? env : kDefaultOut;
    }
    return cfg;
}

namespace detail {

inline fs::path prepare_out(const std::string& dir) {
    fs::path p(dir);
    fs::create_directories(p);
    return p;
}

inline void write_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
}

inline void write_resolved_file(const fs::path& dir, const RunConfig& cfg) {
    write_file(dir / "resolved.cfg", resolved_text(cfg));
}

/// Mean recall over the configured minority classes, else the worst class recall.
inline double focus_recall(const RunConfig& cfg, const MetricsRecord& m) {
    if (cfg.task == TaskPreset::imbalanced && !cfg.minority_classes.empty()) {
        double s = 0.0;
        for (auto c : cfg.minority_classes) s += m.recall.at(c - 1);
        return s / static_cast<double>(cfg.minority_classes.size());
    }
    return *std::min_element(m.recall.begin(), m.recall.end());
}

/// Final metrics averaged over `repeats` seed offsets; histograms are summed.
struct Summary {
    double top1 = 0.0;
    double macro_f1 = 0.0;
    double mean_entropy = 0.0;
    double focus_recall = 0.0;
    std::vector<std::size_t> histogram;
    std::size_t diverged = 0;
};

inline Summary summarize(const RunConfig& cfg) {
    if (cfg.repeats == 0) throw ConfigError("repeats must be positive");
    Summary s;
    s.histogram.assign(cfg.classes, 0);
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
        const TrainResult res = run_once(cfg, r);
        const MetricsRecord& m = res.metrics.back();
        s.top1 += m.top1;
        s.macro_f1 += m.macro_f1;
        s.mean_entropy += m.mean_entropy;
        s.focus_recall += focus_recall(cfg, m);
        for (std::size_t c = 0; c < m.histogram.size(); ++c) s.histogram[c] += m.histogram[c];
        if (res.diverged) ++s.diverged;
    }
    const double k = static_cast<double>(cfg.repeats);
    s.top1 /= k;
    s.macro_f1 /= k;
    s.mean_entropy /= k;
    s.focus_recall /= k;
    return s;
}

inline std::string summary_fields(const Summary& s) {
    std::string row = format_double(s.top1) + ',' + format_double(s.macro_f1) + ',' +
                      format_double(s.mean_entropy) + ',' + format_double(s.focus_recall) + ',' +
                      std::to_string(s.diverged);
    for (auto h : s.histogram) row += ',' + std::to_string(h);
    return row;
}

inline std::string summary_header(std::size_t classes) {
    std::string h = "top1,macro_f1,mean_entropy,focus_recall,diverged";
    for (std::size_t c = 0; c < classes; ++c) h += ",hist_" + std::to_string(c + 1);
    return h;
}

/// Applies an arm name (erm, entmin, lerm, lerm_l1, lerm_l2, lerm_ce) to a config.
inline RunConfig arm_config(const RunConfig& base, const std::string& arm) {
    RunConfig c = base;
    if (arm == "erm") {
        if (c.scenario == Scenario::sfda) {
            // the frozen source model: no adaptation epochs
            c.regularizer = Regularizer::lerm;
            c.epochs = 0;
        } else {
            c.regularizer = Regularizer::none;
        }
    } else if (arm == "entmin") {
        c.regularizer = Regularizer::entmin;
    } else if (arm == "lerm") {
        c.regularizer = Regularizer::lerm;
    } else if (arm.rfind("lerm_", 0) == 0) {
        c.regularizer = Regularizer::lerm;
        c.divergence = lerm::detail::parse_divergence(arm.substr(5));
    } else {
        throw ConfigError("unknown arm '" + arm + "'");
    }
    return c;
}

}  // namespace detail

/// One training run: metrics.csv, resolved.cfg and model.ckpt in the output directory.
inline int cmd_run(const Options& o, std::ostream& out, std::ostream& err) {
    const RunConfig cfg = resolve_config(o);
    const fs::path dir = detail::prepare_out(cfg.out);
    detail::write_resolved_file(dir, cfg);
    const TrainResult res = run_once(cfg);
    if (res.small_batch_warning)
        err << "warning: batch_size " << cfg.batch_size << " is below the class count " << cfg.classes
            << "; per-batch means may miss classes\n";
    std::ostringstream csv;
    write_metrics_csv(csv, res.metrics, cfg.classes);
    detail::write_file(dir / "metrics.csv", csv.str());
    std::ostringstream ckpt;
    std::visit([&](const auto& m) { save_checkpoint(ckpt, m); }, res.model);
    detail::write_file(dir / "model.ckpt", ckpt.str());
    const MetricsRecord& last = res.metrics.back();
    if (!o.quiet)
        out << "epoch " << last.epoch << " top1 " << format_double(last.top1) << " macro_f1 "
            << format_double(last.macro_f1) << " mean_entropy " << format_double(last.mean_entropy) << '\n';
    if (res.diverged) {
        err << "error: training diverged (" << res.message << ")\n";
        return 2;
    }
    return 0;
}

/// Runs each arm on the same task and seeds; one compare.csv row per arm.
inline int cmd_compare(const Options& o, const std::vector<std::string>& arms, std::ostream& out,
                       std::ostream& err) {
    if (arms.empty()) throw ConfigError("compare: empty arm list");
    const RunConfig cfg = resolve_config(o);
    const fs::path dir = detail::prepare_out(cfg.out);
    detail::write_resolved_file(dir, cfg);
    std::string csv = "arm,regularizer,divergence,lambda," + detail::summary_header(cfg.classes) + '\n';
    std::size_t diverged = 0;
    for (const auto& arm : arms) {
        const RunConfig c = detail::arm_config(cfg, arm);
        const detail::Summary s = detail::summarize(c);
        diverged += s.diverged;
        csv += arm + ',' + to_string(c.regularizer) + ',' + to_string(c.divergence) + ',' +
               format_double(c.lambda) + ',' + detail::summary_fields(s) + '\n';
        if (!o.quiet)
            out << arm << " top1 " << format_double(s.top1) << " macro_f1 " << format_double(s.macro_f1)
                << " mean_entropy " << format_double(s.mean_entropy) << '\n';
    }
    detail::write_file(dir / "compare.csv", csv);
    if (diverged) {
        err << "error: " << diverged << " run(s) diverged\n";
        return 2;
    }
    return 0;
}

/// One run per value of a numeric key, on the shared task seed; sweep.csv.
inline int cmd_sweep(const Options& o, const std::string& key, const std::vector<std::string>& values,
                     std::ostream& out, std::ostream& err) {
    if (!is_numeric_key(key)) throw ConfigError("sweep: '" + key + "' is not a numeric key");
    if (values.empty()) throw ConfigError("sweep: empty value list");
    for (const auto& v : values) (void)parse_double(v);
    const RunConfig cfg = resolve_config(o);
    const fs::path dir = detail::prepare_out(cfg.out);
    detail::write_resolved_file(dir, cfg);
    std::string csv = "key,value," + detail::summary_header(cfg.classes) + '\n';
    std::size_t diverged = 0;
    for (const auto& v : values) {
        RunConfig c = cfg;
        apply_setting(c, key, v);
        const detail::Summary s = detail::summarize(c);
        diverged += s.diverged;
        csv += key + ',' + get_setting(c, key) + ',' + detail::summary_fields(s) + '\n';
        if (!o.quiet) out << key << '=' << get_setting(c, key) << " top1 " << format_double(s.top1) << '\n';
    }
    detail::write_file(dir / "sweep.csv", csv);
    if (diverged) {
        err << "error: " << diverged << " run(s) diverged\n";
        return 2;
    }
    return 0;
}

struct TheoremCounts {
    std::size_t unconditional = 0;  // violations of a step that must always hold
    std::size_t conditional = 0;    // assumption held but the bound failed
    std::size_t assumption = 0;     // trials where the hypothesis held
};

/// Certification rows for T1, T2, T3 on Dirichlet-random batches. Trial 0 is
/// an injected one-hot batch covering every class (when n ≥ C).
inline int cmd_check_theorems(std::uint64_t seed, std::size_t trials, std::size_t n, std::size_t C,
                              const std::string& out_dir, bool quiet, std::ostream& out, std::ostream& err) {
    if (trials == 0) throw std::invalid_argument("check-theorems: trials must be >= 1");
    if (n == 0) throw std::invalid_argument("check-theorems: n must be >= 1");
    if (C < 2) throw std::invalid_argument("check-theorems: C must be >= 2");
    const fs::path dir = detail::prepare_out(out_dir);
    std::string csv = "trial,theorem,unconditional_ok,assumption_holds,conclusion_ok,equality,quantities\n";
    TheoremCounts counts[3];

    auto record = [&](std::size_t trial, const TheoremReport& r) {
        auto& k = counts[static_cast<int>(r.theorem)];
        if (!r.unconditional_holds) ++k.unconditional;
        if (r.assumption_holds) {
            ++k.assumption;
            if (!r.conclusion_holds) ++k.conditional;
        }
        std::string q;
        for (const auto& [name, v] : r.quantities) q += (q.empty() ? "" : ";") + name + '=' + format_double(v);
        csv += std::to_string(trial) + ',' + to_string(r.theorem) + ',' + format_bool(r.unconditional_holds) +
               ',' + format_bool(r.assumption_holds) + ',' + format_bool(r.conclusion_holds) + ',' +
               format_bool(r.equality) + ',' + q + '\n';
    };
    auto certify = [&](std::size_t trial, const Matrix& p, const std::vector<std::size_t>& labels) {
        const ProbBatch batch(p);
        record(trial, check_theorem1(batch));
        record(trial, check_theorem2(batch, labels));
        record(trial, check_theorem3(batch));
    };

    if (n >= C) {
        Matrix onehot(n, C);
        std::vector<std::size_t> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = i % C;
            onehot(i, labels[i]) = 1.0;
        }
        certify(0, onehot, labels);
    }
    for (std::size_t t = 1; t <= trials; ++t) {
        Rng rng(derive_seed(seed, t));
        const Matrix p = draw_dirichlet_rows(rng, n, C);
        std::vector<std::size_t> labels(n);
        for (auto& y : labels) y = static_cast<std::size_t>(rng.below(C));
        certify(t, p, labels);
    }
    detail::write_file(dir / "theorems.csv", csv);

    std::ostringstream summary;
    summary << "trials " << trials << " n " << n << " C " << C << " seed " << seed << '\n';
    std::size_t unconditional = 0;
    std::size_t conditional = 0;
    for (auto id : {TheoremId::t1, TheoremId::t2, TheoremId::t3}) {
        const auto& k = counts[static_cast<int>(id)];
        unconditional += k.unconditional;
        conditional += k.conditional;
        summary << to_string(id) << " unconditional_violations " << k.unconditional << " assumption_holds "
                << k.assumption << " conditional_violations " << k.conditional << '\n';
    }
    detail::write_file(dir / "theorems_summary.txt", summary.str());
    if (!quiet) out << summary.str();
    if (unconditional + conditional > 0) {
        err << "error: " << unconditional + conditional << " theorem violation(s)\n";
        return 3;
    }
    return 0;
}

/// Dumps the configured task bundle as CSV files.
inline int cmd_export_task(const Options& o, std::ostream& out, std::ostream&) {
    const RunConfig cfg = resolve_config(o);
    const fs::path dir = detail::prepare_out(cfg.out);
    detail::write_resolved_file(dir, cfg);
    export_bundle_csv(cfg.make_task(), dir);
    if (!o.quiet) out << "exported " << to_string(cfg.task) << " task to " << dir.string() << '\n';
    return 0;
}

/// Entry point; returns the process exit status.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Label-encoding risk minimization lab"};
    app.require_subcommand(1);
    app.fallthrough();

    Options o;
    std::uint64_t seed_task = 0;
    std::uint64_t seed_train = 0;
    auto* seed_task_opt = app.add_option("--seed-task", seed_task, "Override the task seed");
    auto* seed_train_opt = app.add_option("--seed-train", seed_train, "Override the training seed");
    app.add_option("--config", o.config, "key=value config file");
    app.add_option("--out", o.out, "Output directory (default: $LERM_LAB_OUT, then ./lerm_out)");
    app.add_flag("--quiet", o.quiet, "Suppress progress output");

    auto* run_cmd = app.add_subcommand("run", "Train one configured run");
    auto* compare_cmd = app.add_subcommand("compare", "Compare ERM, EntMin and LERM arms");
    std::vector<std::string> arms{"erm", "entmin", "lerm"};
    compare_cmd->add_option("--arms", arms, "Arms: erm, entmin, lerm, lerm_l1, lerm_l2, lerm_ce")
        ->delimiter(',')
        ->capture_default_str();
    auto* sweep_cmd = app.add_subcommand("sweep", "Sweep one numeric config key");
    std::string sweep_key = "lambda";
    std::string sweep_values;
    sweep_cmd->add_option("--key", sweep_key, "Numeric config key")->capture_default_str();
    sweep_cmd->add_option("--values", sweep_values, "Comma-separated values")->required();
    auto* theorems_cmd = app.add_subcommand("check-theorems", "Certify the bounds on random batches");
    std::uint64_t th_seed = 0;
    std::size_t th_trials = 1000;
    std::size_t th_n = 32;
    std::size_t th_C = 5;
    theorems_cmd->add_option("--seed", th_seed)->capture_default_str();
    theorems_cmd->add_option("--trials", th_trials)->capture_default_str();
    theorems_cmd->add_option("--n", th_n)->capture_default_str();
    theorems_cmd->add_option("--C", th_C)->capture_default_str();
    auto* export_cmd = app.add_subcommand("export-task", "Write the configured task as CSV files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }
    if (*seed_task_opt) o.seed_task = seed_task;
    if (*seed_train_opt) o.seed_train = seed_train;

    try {
        if (*run_cmd) return cmd_run(o, out, err);
        if (*compare_cmd) return cmd_compare(o, arms, out, err);
        if (*sweep_cmd) {
            std::vector<std::string> values;
            if (!trim(sweep_values).empty()) values = lerm::detail::split_list(sweep_values);
            return cmd_sweep(o, sweep_key, values, out, err);
        }
        if (*theorems_cmd) {
            std::string dir = o.out;
            if (dir.empty()) {
                const char* env = std::getenv(kOutEnv);
                dir = env && *env ? env : kDefaultOut;
            }
            return cmd_check_theorems(th_seed, th_trials, th_n, th_C, dir, o.quiet, out, err);
        }
        if (*export_cmd) return cmd_export_task(o, out, err);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

}  // namespace lerm::cli
