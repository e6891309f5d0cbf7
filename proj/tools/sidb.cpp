#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "sidb/harness.hpp"
#include "sidb/io.hpp"

namespace fs = std::filesystem;
using namespace sidb;

namespace {

enum Exit { kOk = 0, kUsage = 1, kRuntime = 2, kVerifyFailed = 3 };

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed_override;
    std::string out;
    std::string solver;
    int threads = 1;
};

RunConfig effective_config(const CommonOptions& o) {
    RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
    if (o.seed_override) cfg.seeds = {*o.seed_override};
    if (!o.solver.empty()) cfg.solver.kind = solver_kind_from_string(o.solver);
    if (!o.out.empty()) cfg.output_dir = o.out;
    return cfg;
}

std::mutex g_print;

void say(const std::string& line) {
    std::lock_guard lock(g_print);
    std::cout << line << std::endl;
}

std::string fixed(double v, int digits = 4) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

void write_histograms(const fs::path& dir, const std::vector<EpisodeLog>& episodes, const RunConfig& cfg) {
    const int per_epoch = cfg.hp.episodes_per_epoch;
    const int last = full_epochs(episodes, per_epoch);
    if (last < 1) return;
    write_file_atomic(dir / "histogram_first.csv", histogram_csv(first_placement_histogram(episodes, per_epoch, 1, cfg.task.canvas)));
    write_file_atomic(dir / "histogram_final.csv", histogram_csv(first_placement_histogram(episodes, per_epoch, last, cfg.task.canvas)));
}

// One seed's run, streaming its artifacts into dir.
RunArtifacts run_seed(const RunConfig& cfg, std::uint64_t seed, bool control, const fs::path& dir) {
    fs::create_directories(dir);
    TrainingSetup setup = cfg.training_setup();
    setup.hp.seeds = seeds_from(seed);
    setup.policy = control ? Policy::uniform_random : Policy::learning;

    const fs::path registry = dir / "registry.jsonl";
    const fs::path episodes = dir / "episodes.jsonl";
    write_file_atomic(registry, "");
    std::ofstream episode_out(episodes, std::ios::binary | std::ios::trunc);
    if (!episode_out) throw std::runtime_error("cannot open " + episodes.string());
    std::vector<EpochMetrics> metrics;

    TrainingHooks hooks;
    hooks.on_solution = [&](const SolutionRecord& s) { append_registry(registry, make_layout_record(s, seed)); };
    hooks.on_episode = [&](const EpisodeLog& e) { episode_out << episode_line(e); };
    hooks.on_epoch = [&](const EpochMetrics& m) {
        metrics.push_back(m);
        write_file_atomic(dir / "metrics.csv", metrics_csv(metrics));
        say("seed " + std::to_string(seed) + " epoch " + std::to_string(m.epoch) + " mean_reward " + fixed(m.mean_reward) +
            " solutions " + std::to_string(m.solutions_total) + " epsilon " + fixed(m.epsilon, 3));
    };
    if (!control) {
        hooks.on_checkpoint = [&](const Agent& agent, int epoch) {
            save_checkpoint(dir / ("checkpoint_epoch_" + std::to_string(epoch) + ".ckpt"),
                            Checkpoint{agent.online(), agent.target(), agent.optimizer(),
                                       {{"epoch", std::to_string(epoch)}, {"seed", std::to_string(seed)}}});
        };
    }
    RunArtifacts run = run_training(setup, hooks);
    episode_out.close();
    if (!episode_out) throw std::runtime_error("failed writing " + episodes.string());
    if (!control) {
        save_checkpoint(dir / "checkpoint_final.ckpt",
                        Checkpoint{run.online, run.target, run.optimizer,
                                   {{"steps", std::to_string(run.steps)}, {"seed", std::to_string(seed)}}});
    }
    write_histograms(dir, run.episodes, cfg);
    return run;
}

int cmd_run(const CommonOptions& o, bool control) {
    const RunConfig cfg = effective_config(o);
    const fs::path root = make_run_directory(cfg.output_dir, cfg);
    write_file_atomic(root / "config.json", serialize_config(cfg));
    write_file_atomic(root / "policy.txt", control ? "uniform_random\n" : "learning\n");
    say((control ? "baseline" : "design") + std::string(" run directory ") + root.string());

    std::vector<std::optional<RunArtifacts>> runs(cfg.seeds.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < runs.size(); i = next++) {
            try {
                runs[i] = run_seed(cfg, cfg.seeds[i], control, root / ("seed_" + std::to_string(cfg.seeds[i])));
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const int n = std::clamp(o.threads, 1, static_cast<int>(runs.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);

    std::vector<ChartSeries> series;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        ChartSeries s{(control ? "control seed " : "seed ") + std::to_string(cfg.seeds[i]), {}};
        for (const auto& m : runs[i]->metrics) s.values.push_back(m.mean_reward);
        series.push_back(std::move(s));
        say("seed " + std::to_string(cfg.seeds[i]) + ": " + std::to_string(runs[i]->solutions.size()) +
            " working layouts in " + std::to_string(runs[i]->steps) + " steps");
    }
    write_file_atomic(root / "reward.svg", reward_chart_svg(series, cfg.task.name + (control ? " control" : " design")));
    say(root.string());
    return kOk;
}

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

int cmd_verify(const std::string& layout_path, const std::string& config_path, const std::string& solver) {
    RunConfig cfg = config_or_default(config_path);
    if (!solver.empty()) cfg.solver.kind = solver_kind_from_string(solver);
    const DBLayout placed = import_layout(layout_path);
    GroundStateSolver gs(cfg.physics, cfg.solver);
    const EvalResult r = evaluate_layout(cfg.task, placed, gs);
    for (std::size_t i = 0; i < r.per_row.size(); ++i) {
        const auto& row = cfg.task.table.row(i);
        std::string in, out;
        for (int b : row.inputs) in += static_cast<char>('0' + b);
        for (int b : row.outputs) out += static_cast<char>('0' + b);
        say("row " + in + " -> " + out + ": " + (r.per_row[i].pass() ? "ok" : to_string(r.per_row[i].failure)) +
            " energy " + fixed(r.per_row[i].energy, 6) + " eV");
    }
    say(std::string(r.working ? "WORKING" : "NOT WORKING") + " (" + std::to_string(r.satisfied_rows) + "/" +
        std::to_string(r.per_row.size()) + " rows)");
    return r.working ? kOk : kVerifyFailed;
}

int cmd_simulate(const std::string& layout_path, const std::string& config_path, const std::string& solver) {
    RunConfig cfg = config_or_default(config_path);
    if (!solver.empty()) cfg.solver.kind = solver_kind_from_string(solver);
    const DBLayout placed = import_layout(layout_path);
    GroundStateSolver gs(cfg.physics, cfg.solver);
    for (std::size_t i = 0; i < cfg.task.table.row_count(); ++i) {
        const DBLayout full = assemble_row_layout(cfg.task, placed, i);
        const GroundStateResult g = gs.solve(full);
        std::string in;
        for (int b : cfg.task.table.row(i).inputs) in += static_cast<char>('0' + b);
        say("row " + in + ": " + std::to_string(full.size()) + " DBs, energy " + fixed(g.energy, 6) + " eV, " +
            std::to_string(g.configs.size()) + " ground state(s)" + (g.converged ? "" : ", unconverged") +
            (g.contains_positive ? ", positive charge" : ""));
        for (const auto& c : g.configs) {
            std::string line = "  ";
            std::size_t k = 0;
            for (const auto& s : full) line += s.to_string() + "=" + std::to_string(static_cast<int>(c[k++])) + " ";
            say(line);
        }
    }
    return kOk;
}

int cmd_export(const std::string& registry, const std::string& format, const std::string& out, const std::optional<std::size_t>& index) {
    const LayoutFormat f = layout_format_from_string(format);
    const auto records = read_registry(registry);
    const fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
    std::size_t written = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (index && *index != i) continue;
        export_layout(records[i], f, dir / ("solution_" + std::to_string(i) + (f == LayoutFormat::json ? ".json" : ".sqd")));
        ++written;
    }
    if (index && written == 0) throw std::invalid_argument("registry holds no record " + std::to_string(*index));
    say("exported " + std::to_string(written) + " layout(s) to " + dir.string());
    return kOk;
}

struct LoadedRun {
    RunConfig cfg;
    std::vector<std::pair<std::uint64_t, std::vector<EpisodeLog>>> seeds;
};

LoadedRun load_run(const fs::path& root) {
    LoadedRun r;
    r.cfg = load_config(root / "config.json");
    for (std::uint64_t s : r.cfg.seeds) {
        const fs::path p = root / ("seed_" + std::to_string(s)) / "episodes.jsonl";
        if (fs::exists(p)) r.seeds.emplace_back(s, read_episodes(p));
    }
    if (r.seeds.empty()) throw std::runtime_error(root.string() + " holds no episode logs");
    return r;
}

std::string tail_text(const std::vector<EpochMetrics>& m, int per_epoch) {
    const int full = static_cast<int>(std::count_if(m.begin(), m.end(), [&](const auto& e) { return e.episodes == per_epoch; }));
    if (full == 0) return "n/a";
    return fixed(final_epochs_mean(m, per_epoch, std::min(full, 5)));
}

int cmd_report(const std::string& run_dir, const std::string& control_dir, const std::string& out) {
    const LoadedRun run = load_run(run_dir);
    const int per_epoch = run.cfg.hp.episodes_per_epoch;
    const fs::path dest = out.empty() ? fs::path(run_dir) / "report" : fs::path(out);
    std::vector<ChartSeries> series;
    std::vector<const std::vector<EpisodeLog>*> logs;
    int status = kOk;

    for (const auto& [seed, episodes] : run.seeds) {
        const auto metrics = epoch_metrics(episodes, per_epoch);
        const fs::path seed_dir = fs::path(run_dir) / ("seed_" + std::to_string(seed));
        if (fs::exists(seed_dir / "metrics.csv") && read_file(seed_dir / "metrics.csv") != metrics_csv(metrics)) {
            say("seed " + std::to_string(seed) + ": recomputed metrics differ from the streamed metrics.csv");
            status = kRuntime;
        }
        std::vector<double> curve;
        for (const auto& m : metrics) curve.push_back(m.mean_reward);
        const auto mk = mann_kendall(curve);
        say("seed " + std::to_string(seed) + ": " + std::to_string(metrics.size()) + " epochs, last-5 mean reward " +
            tail_text(metrics, per_epoch) + ", Mann-Kendall S " + std::to_string(mk.s) + " z " + fixed(mk.z, 3));
        write_file_atomic(dest / ("metrics_seed_" + std::to_string(seed) + ".csv"), metrics_csv(metrics));
        write_histograms(dest / ("seed_" + std::to_string(seed)), episodes, run.cfg);
        series.push_back({"seed " + std::to_string(seed), std::move(curve)});
        if (full_epochs(episodes, per_epoch) >= 1) logs.push_back(&episodes);
    }
    if (!control_dir.empty()) {
        const LoadedRun control = load_run(control_dir);
        for (const auto& [seed, episodes] : control.seeds) {
            const auto metrics = epoch_metrics(episodes, control.cfg.hp.episodes_per_epoch);
            ChartSeries s{"control " + std::to_string(seed), {}};
            for (const auto& m : metrics) s.values.push_back(m.mean_reward);
            say("control " + std::to_string(seed) + ": last-5 mean reward " + tail_text(metrics, control.cfg.hp.episodes_per_epoch));
            series.push_back(std::move(s));
        }
    }
    write_file_atomic(dest / "reward.svg", reward_chart_svg(series, run.cfg.task.name + " mean reward"));

    if (logs.size() >= 2) {
        const std::vector<const GateTask*> tasks(logs.size(), &run.cfg.task);
        const auto rep = seed_convergence_report(logs, tasks, per_epoch);
        std::string modal;
        for (auto m : rep.modal_sites) modal += run.cfg.task.canvas.site(m).to_string() + " ";
        say("final modal first placements: " + modal);
        say("modal agreement up to mirror symmetry: " + std::to_string(rep.agreement) + "/" + std::to_string(logs.size()) +
            " at " + run.cfg.task.canvas.site(rep.plurality_site).to_string());
        std::string csv = "run_a,run_b,total_variation\n";
        for (std::size_t i = 0; i < rep.distances.size(); ++i)
            for (std::size_t j = i + 1; j < rep.distances.size(); ++j)
                csv += std::to_string(i) + "," + std::to_string(j) + "," + fixed(rep.distances[i][j], 6) + "\n";
        write_file_atomic(dest / "convergence.csv", csv);
    }
    say("report written to " + dest.string());
    return status;
}

void add_common(CLI::App* app, CommonOptions& o, bool config_required) {
    auto* c = app->add_option("--config", o.config, "Run configuration (JSON)");
    if (config_required) c->required()->check(CLI::ExistingFile);
    app->add_option("--seed-override", o.seed_override, "Run a single seed instead of the configured list");
    app->add_option("--out", o.out, "Base directory for run artifacts");
    app->add_option("--solver", o.solver, "Ground-state solver")->check(CLI::IsMember({"exhaustive", "anneal", "auto"}));
    app->add_option("--threads", o.threads, "Seeds run concurrently")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator_for_training();
    CLI::App app{"Reinforcement-learning designer for SiDB logic gates"};
    app.require_subcommand(1);

    CommonOptions design_opts, baseline_opts;
    add_common(app.add_subcommand("design", "Train agents and collect working layouts"), design_opts, true);
    add_common(app.add_subcommand("baseline", "Run the uniformly random control policy"), baseline_opts, true);

    std::string layout, config, solver, registry, format = "json", out, run_dir, control_dir;
    std::optional<std::size_t> index;
    auto* verify = app.add_subcommand("verify", "Check a layout against the task truth table");
    verify->add_option("layout", layout, "Layout file (.json or .sqd)")->required()->check(CLI::ExistingFile);
    verify->add_option("config", config, "Run configuration naming the task")->required()->check(CLI::ExistingFile);
    verify->add_option("--solver", solver)->check(CLI::IsMember({"exhaustive", "anneal", "auto"}));

    auto* simulate = app.add_subcommand("simulate", "Ground state of a layout for every input row");
    simulate->add_option("layout", layout, "Layout file (.json or .sqd)")->required()->check(CLI::ExistingFile);
    simulate->add_option("--config", config, "Run configuration naming the task")->check(CLI::ExistingFile);
    simulate->add_option("--solver", solver)->check(CLI::IsMember({"exhaustive", "anneal", "auto"}));

    auto* exp = app.add_subcommand("export", "Export registry solutions as layout files");
    exp->add_option("registry", registry, "registry.jsonl of a run")->required()->check(CLI::ExistingFile);
    exp->add_option("--format", format, "json or sqd")->check(CLI::IsMember({"json", "sqd"}));
    exp->add_option("--out", out, "Destination directory");
    exp->add_option("--index", index, "Export only this record");

    auto* report = app.add_subcommand("report", "Metrics, histograms and charts from a run directory");
    report->add_option("run", run_dir, "Run directory written by design")->required()->check(CLI::ExistingDirectory);
    report->add_option("--control", control_dir, "Run directory written by baseline")->check(CLI::ExistingDirectory);
    report->add_option("--out", out, "Destination directory (default <run>/report)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (app.got_subcommand("design")) return cmd_run(design_opts, false);
        if (app.got_subcommand("baseline")) return cmd_run(baseline_opts, true);
        if (app.got_subcommand("verify")) return cmd_verify(layout, config, solver);
        if (app.got_subcommand("simulate")) return cmd_simulate(layout, config, solver);
        if (app.got_subcommand("export")) return cmd_export(registry, format, out, index);
        if (app.got_subcommand("report")) return cmd_report(run_dir, control_dir, out);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntime;
    }
    return kUsage;
}
