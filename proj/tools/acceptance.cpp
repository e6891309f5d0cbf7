#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "sidb/harness.hpp"
#include "sidb/io.hpp"

namespace fs = std::filesystem;
using namespace sidb;

namespace {

// Tolerances and sizes of every criterion.
constexpr double kOracleEnergyTolerance = 1e-9;  // eV
constexpr int kOracleLayouts = 100;
constexpr int kOracleMaxDBs = 12;
constexpr int kOracleMinMatches = 95;
constexpr int kGradientCoordinates = 100;
constexpr double kGradientMaxRelativeError = 1e-4;
constexpr double kGradientStep = 1e-5;
constexpr int kDdqnInstances = 1000;
constexpr double kDdqnTolerance = 1e-12;
constexpr int kTailEpochs = 5;
constexpr double kSeparationMargin = 0.1;
constexpr int kConvergenceSeeds = 5;
constexpr int kConvergenceAgreement = 3;
constexpr int kEpsilonSamples = 10000;
constexpr std::size_t kSqdSolutions = 60;
constexpr std::size_t kReplayEpisodes = 300;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt_double(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

Outcome reward_arithmetic() {
    RewardParams no_cost;
    no_cost.step_cost = 0.0;
    const RewardParams rp;
    std::ostringstream why;
    bool ok = true;
    auto expect = [&](const char* what, double got, double want) {
        if (got != want) {
            ok = false;
            why << what << " " << got << " != " << want << "; ";
        }
    };
    expect("row gain", step_reward(no_cost, +1, 4, 15, false), 0.1);
    expect("row loss", step_reward(no_cost, -1, 4, 15, false), -0.1);
    expect("step cost", step_reward(rp, 0, 4, 15, false), -0.05);
    expect("new solution", step_reward(rp, +1, 4, 15, true), 1.0);
    expect("lower clamp", step_reward(rp, -4, 4, 1, false), -1.0);

    long emitted = 0;
    for (int rows : {1, 2, 4, 8})
        for (int m : {1, 2, 8, 15, 40})
            for (int delta = -rows; delta <= rows; ++delta)
                for (bool win : {false, true}) {
                    const double r = step_reward(rp, delta, rows, m, win);
                    ++emitted;
                    if (!(r >= -1.0 && r <= 1.0)) {
                        ok = false;
                        why << "reward " << r << " out of range; ";
                    }
                }
    if (ok) why << "exact; " << emitted << " rewards within [-1, 1]";
    return {ok, why.str()};
}

Outcome epsilon_schedule() {
    const EpsilonSchedule s;
    bool ok = s.at(0.0) == 1.0 && s.at(0.8) == 0.1 && s.at(1.0) == 0.1 && s.at(0.4) == 0.55;
    double lowest = 1.0;
    std::mt19937_64 gen(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < kEpsilonSamples; ++i) lowest = std::min(lowest, s.at(u(gen)));
    ok = ok && lowest >= 0.1;
    return {ok, "eps(0)=" + fmt_double(s.at(0.0)) + " eps(0.4)=" + fmt_double(s.at(0.4), 17) + " eps(0.8)=" +
                    fmt_double(s.at(0.8), 17) + " eps(1)=" + fmt_double(s.at(1.0), 17) + " min over " +
                    std::to_string(kEpsilonSamples) + " samples " + fmt_double(lowest, 17)};
}

DBLayout random_spaced_layout(std::mt19937& gen, int count, int cols, int lines) {
    std::uniform_int_distribution<int> col(0, cols - 1), line(0, lines - 1);
    std::vector<LatticeSite> sites;
    for (int attempts = 0; static_cast<int>(sites.size()) < count && attempts < 10000; ++attempts) {
        const auto s = LatticeSite::from_line(col(gen), line(gen));
        bool ok = true;
        for (const auto& t : sites) ok = ok && s != t && !is_adjacent(s, t);
        if (ok) sites.push_back(s);
    }
    return DBLayout(sites, true);
}

Outcome physics_oracle(const RunConfig& cfg) {
    std::mt19937 gen(31);
    std::uniform_int_distribution<int> size(1, kOracleMaxDBs);
    int matches = 0;
    int unstable = 0;
    int largest = 0;
    for (int trial = 0; trial < kOracleLayouts; ++trial) {
        const DBLayout layout = random_spaced_layout(gen, size(gen), 10, 6);
        largest = std::max(largest, static_cast<int>(layout.size()));
        const auto exact = exhaustive_ground_states(layout, cfg.physics, cfg.solver.model, kOracleMaxDBs);
        const auto approx = anneal_ground_state(layout, cfg.physics, cfg.solver.schedule, 1000 + trial, cfg.solver.model);
        const InteractionMatrix w(layout, cfg.physics);
        for (const auto& c : approx.configs) unstable += check_stability(w, c, cfg.physics, cfg.solver.model).stable() ? 0 : 1;
        if (exact.converged && approx.converged && std::abs(exact.energy - approx.energy) <= kOracleEnergyTolerance)
            ++matches;
    }
    return {matches >= kOracleMinMatches && unstable == 0,
            std::to_string(matches) + "/" + std::to_string(kOracleLayouts) + " energies match (need " +
                std::to_string(kOracleMinMatches) + "), " + std::to_string(unstable) +
                " unstable annealer configs, layouts up to " + std::to_string(largest) + " DBs"};
}

Outcome qualitative_physics(const RunConfig& cfg) {
    const auto& p = cfg.physics;
    const auto single = exhaustive_ground_states(DBLayout{{0, 0, 0}}, p);
    const bool isolated = single.configs == std::vector<ChargeConfig>{{Charge::negative}};
    const DBLayout pair{{0, 0, 0}, {0, 1, 0}};
    const double d = distance(pair.sites()[0], pair.sites()[1]);
    const auto shared = exhaustive_ground_states(pair, p);
    const bool sharing = std::abs(d - 7.68) < 1e-12 &&
                         shared.configs == std::vector<ChargeConfig>{{Charge::negative, Charge::neutral},
                                                                     {Charge::neutral, Charge::negative}};
    const auto crowded = exhaustive_ground_states(DBLayout({{0, 0, 0}, {0, 0, 1}, {1, 0, 0}, {1, 0, 1}}), p);
    const bool positive = crowded.converged && crowded.contains_positive;
    return {isolated && sharing && positive, std::string("isolated DB ") + (isolated ? "-1" : "wrong") +
                                                 ", pair at 7.68 A " + (sharing ? "degenerate {(-1,0),(0,-1)}" : "wrong") +
                                                 ", crowded cluster " + (positive ? "flagged positive" : "not flagged")};
}

StateTensor random_state(const NetShape& s, std::mt19937& gen) {
    StateTensor x(s.in_channels, s.height + 2, s.width + 2);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& v : x.data) v = u(gen);
    return x;
}

Outcome gradient_correctness(const RunConfig& cfg) {
    const NetShape shape = network_shape_for(cfg.task, cfg.hp.network);
    QNetwork net(shape, 11);
    std::mt19937 gen(12);
    std::vector<StateTensor> xs;
    std::vector<const StateTensor*> ptrs;
    for (int i = 0; i < 3; ++i) xs.push_back(random_state(shape, gen));
    for (const auto& x : xs) ptrs.push_back(&x);
    const std::size_t n_out = static_cast<std::size_t>(shape.outputs());
    const std::vector<std::size_t> actions{0, n_out / 2, n_out - 1};
    const auto q = net.forward_batch(ptrs);
    const std::vector<double> targets{q(static_cast<Eigen::Index>(actions[0]), 0) + 0.4,
                                      q(static_cast<Eigen::Index>(actions[1]), 1) - 2.5,
                                      q(static_cast<Eigen::Index>(actions[2]), 2) + 3.0};
    ParamVector grad, scratch;
    (void)net.loss_and_gradient(ptrs, actions, targets, grad);

    auto check = [&](std::size_t lo, std::size_t hi) {
        std::uniform_int_distribution<std::size_t> pick(lo, hi - 1);
        double worst = 0.0;
        for (int k = 0; k < kGradientCoordinates; ++k) {
            const std::size_t i = pick(gen);
            const double saved = net.params()[i];
            net.params()[i] = saved + kGradientStep;
            const double up = net.loss_and_gradient(ptrs, actions, targets, scratch);
            net.params()[i] = saved - kGradientStep;
            const double down = net.loss_and_gradient(ptrs, actions, targets, scratch);
            net.params()[i] = saved;
            const double fd = (up - down) / (2 * kGradientStep);
            const double scale = std::max(std::abs(fd), std::abs(grad[i]));
            worst = std::max(worst, scale < 1e-10 ? std::abs(fd - grad[i]) : std::abs(fd - grad[i]) / scale);
        }
        return worst;
    };
    double worst = 0.0;
    std::string worst_name;
    for (const auto& t : net.tensors()) {
        const double e = check(t.offset, t.offset + t.size);
        if (e >= worst) worst = e, worst_name = t.name;
    }
    const double whole = check(0, net.params().size());
    if (whole >= worst) worst = whole, worst_name = "network";
    return {worst < kGradientMaxRelativeError,
            std::to_string(net.tensors().size()) + " tensors plus the whole network, max relative error " +
                fmt_double(worst, 3) + " (" + worst_name + ")"};
}

Outcome double_dqn(const RunConfig& cfg) {
    const NetShape shape = network_shape_for(cfg.task, cfg.hp.network);
    QNetwork online(shape), target(shape);
    const auto& b = online.tensor("fc3.bias");
    for (std::size_t i = 0; i < b.size; ++i) {
        online.params()[b.offset + i] = i == 0 ? 1.0 : i == 1 ? 2.0 : -100.0;
        target.params()[b.offset + i] = i == 0 ? 10.0 : i == 1 ? 0.0 : -100.0;
    }
    Transition t;
    t.state = StateTensor(shape.in_channels, shape.height + 2, shape.width + 2);
    t.next_state = t.state;
    t.reward = 0.05;
    t.next_mask.assign(b.size, 0);
    t.next_mask[0] = t.next_mask[1] = 1;
    const double y = ddqn_targets({&t}, online, target, 0.99)[0];
    const bool crafted = y == 0.05;

    std::mt19937 gen(7);
    std::uniform_real_distribution<double> u(-1, 1);
    std::bernoulli_distribution coin(0.6);
    double worst = 0.0;
    for (int trial = 0; trial < kDdqnInstances; ++trial) {
        const QNetwork net(shape, static_cast<std::uint64_t>(trial % 10));
        Transition r;
        r.state = random_state(shape, gen);
        r.next_state = random_state(shape, gen);
        r.reward = u(gen);
        r.terminal = trial % 7 == 0;
        r.next_mask.resize(static_cast<std::size_t>(shape.outputs()));
        for (auto& m : r.next_mask) m = coin(gen);
        r.next_mask[gen() % r.next_mask.size()] = 1;
        const auto q = net.forward(r.next_state);
        double best = -INFINITY;
        for (std::size_t i = 0; i < q.size(); ++i)
            if (r.next_mask[i]) best = std::max(best, q[i]);
        const double want = r.terminal ? r.reward : r.reward + 0.99 * best;
        worst = std::max(worst, std::abs(ddqn_targets({&r}, net, net, 0.99)[0] - want));
    }
    return {crafted && worst <= kDdqnTolerance, "crafted y = " + fmt_double(y, 17) + " (vanilla max would give " +
                                                    fmt_double(0.05 + 0.99 * 10.0, 17) + "), shared-network max deviation " +
                                                    fmt_double(worst, 3) + " over " + std::to_string(kDdqnInstances)};
}

// Long runs shared by the learning, convergence, round-trip and replay criteria.
struct Runs {
    std::vector<SeedRun> learning;
    std::optional<RunArtifacts> control;
};

Outcome learning_separation(const RunConfig& cfg, const Runs& runs) {
    const auto& trained = runs.learning.front().artifacts;
    const int per_epoch = cfg.hp.episodes_per_epoch;
    GroundStateSolver exact(cfg.physics, SolverConfig{SolverKind::exhaustive, cfg.solver.model, 20, cfg.solver.schedule, cfg.solver.seed});
    std::size_t verified = 0;
    for (const auto& s : trained.solutions) {
        if (evaluate_layout(cfg.task, s.layout, exact).working) ++verified;
        if (verified >= 1) break;
    }
    bool in_range = true;
    for (const auto* run : {&trained, &*runs.control})
        for (const auto& e : run->episodes)
            for (double r : e.rewards) in_range = in_range && r >= -1.0 && r <= 1.0;
    const double agent = final_epochs_mean(trained.metrics, per_epoch, kTailEpochs);
    const double control = final_epochs_mean(runs.control->metrics, per_epoch, kTailEpochs);
    return {verified >= 1 && in_range && agent - control >= kSeparationMargin,
            "seed " + std::to_string(runs.learning.front().seed) + ": " + std::to_string(trained.solutions.size()) +
                " layouts found (first re-verified exhaustively: " + (verified ? "yes" : "no") + "), final-" +
                std::to_string(kTailEpochs) + "-epoch mean reward " + fmt_double(agent) + " vs control " +
                fmt_double(control) + ", margin " + fmt_double(agent - control) + " (need " +
                fmt_double(kSeparationMargin) + ")"};
}

Outcome convergence(const RunConfig& cfg, const Runs& runs) {
    std::vector<const std::vector<EpisodeLog>*> logs;
    for (const auto& r : runs.learning) logs.push_back(&r.artifacts.episodes);
    const std::vector<const GateTask*> tasks(logs.size(), &cfg.task);
    const auto rep = seed_convergence_report(logs, tasks, cfg.hp.episodes_per_epoch);
    std::string modal;
    for (std::size_t i = 0; i < rep.modal_sites.size(); ++i) {
        const auto& h = rep.final_histograms[i];
        modal += (i ? " " : "") + cfg.task.canvas.site(rep.modal_sites[i]).to_string() + "x" +
                 std::to_string(h.counts[rep.modal_sites[i]]);
    }
    return {static_cast<int>(logs.size()) == kConvergenceSeeds && rep.agreement >= kConvergenceAgreement,
            std::to_string(rep.agreement) + "/" + std::to_string(logs.size()) + " modal first placements agree up to mirror at " +
                cfg.task.canvas.site(rep.plurality_site).to_string() + " (need " + std::to_string(kConvergenceAgreement) +
                "); modes " + modal};
}

int run_command(const std::string& cmd) {
    const int rc = std::system(cmd.c_str());
    return rc;
}

Outcome determinism(const std::string& cli, const fs::path& smoke_config, const fs::path& work) {
    if (cli.empty()) return {false, "no CLI executable given"};
    const RunConfig smoke = load_config(smoke_config);
    std::vector<fs::path> dirs;
    for (int i = 0; i < 2; ++i) {
        const fs::path base = work / ("determinism_" + std::to_string(i));
        fs::remove_all(base);
        const std::string cmd = "\"" + cli + "\" design --config \"" + smoke_config.string() + "\" --out \"" +
                                base.string() + "\" > \"" + (work / "determinism.log").string() + "\" 2>&1";
        if (run_command(cmd) != 0) return {false, "design invocation failed: " + cmd};
        const auto it = fs::directory_iterator(base);
        if (it == fs::directory_iterator()) return {false, "no run directory under " + base.string()};
        dirs.push_back(it->path());
    }
    int compared = 0;
    for (auto seed : smoke.seeds) {
        for (const char* file : {"metrics.csv", "registry.jsonl", "episodes.jsonl"}) {
            const fs::path rel = fs::path("seed_" + std::to_string(seed)) / file;
            if (read_file(dirs[0] / rel) != read_file(dirs[1] / rel)) return {false, rel.string() + " differs"};
            ++compared;
        }
    }
    return {true, std::to_string(compared) + " files byte-identical across two design invocations"};
}

Outcome round_trips(const RunConfig& cfg, const Runs& runs) {
    std::string why;
    const bool config_ok = parse_config(serialize_config(cfg)) == cfg &&
                           serialize_config(parse_config(serialize_config(cfg))) == serialize_config(cfg);
    if (!config_ok) why += "config differs; ";

    const auto& trained = runs.learning.front().artifacts;
    std::size_t layouts = 0;
    bool layout_ok = true;
    for (const auto& s : trained.solutions) {
        const auto rec = make_layout_record(s, runs.learning.front().seed);
        layout_ok = layout_ok && layout_from_json(layout_to_json(rec)) == rec;
        ++layouts;
    }
    if (!layout_ok) why += "layout JSON differs; ";

    const Checkpoint ck{trained.online, trained.target, trained.optimizer, {{"seed", "1"}}};
    const std::string bytes = encode_checkpoint(ck);
    const Checkpoint back = decode_checkpoint(bytes);
    const bool ck_ok = back.online == ck.online && back.target == ck.target && back.optimizer == ck.optimizer &&
                       back.metadata == ck.metadata && encode_checkpoint(back) == bytes;
    if (!ck_ok) why += "checkpoint differs; ";

    GroundStateSolver solver(cfg.physics, cfg.solver);
    std::size_t sqd = 0, working = 0;
    bool sqd_ok = true;
    auto check_sqd = [&](const DBLayout& layout) {
        LayoutRecord rec;
        rec.layout = layout;
        rec.digest = canonical_digest(layout);
        const DBLayout back_layout = layout_from_sqd(layout_to_sqd(rec));
        const auto a = evaluate_layout(cfg.task, layout, solver);
        const auto b = evaluate_layout(cfg.task, back_layout, solver);
        sqd_ok = sqd_ok && back_layout == layout && a.working == b.working && a.satisfied_rows == b.satisfied_rows;
        working += a.working ? 1 : 0;
        ++sqd;
    };
    for (std::size_t i = 0; i < std::min(kSqdSolutions, trained.solutions.size()); ++i) check_sqd(trained.solutions[i].layout);
    for (std::size_t e = 0; e < std::min(kSqdSolutions, trained.episodes.size()); ++e) {
        std::vector<LatticeSite> sites;
        for (auto a : trained.episodes[e].actions) sites.push_back(cfg.task.canvas.site(a));
        if (sites.size() > 1) sites.pop_back();  // usually not a working layout
        check_sqd(DBLayout(sites));
    }
    if (!sqd_ok) why += "sqd verdicts differ; ";

    const bool ok = config_ok && layout_ok && ck_ok && sqd_ok;
    if (ok)
        why = "config exact, " + std::to_string(layouts) + " layout JSON records exact, checkpoint of " +
              std::to_string(ck.online.params().size()) + " parameters bit-exact, " + std::to_string(sqd) +
              " sqd re-imports keep their verdicts (" + std::to_string(working) + " working)";
    return {ok, why};
}

Outcome mirror_replay(const RunConfig& cfg, const Runs& runs) {
    if (!is_mirror_symmetric(cfg.task)) return {false, "task is not mirror symmetric"};
    const auto& source = runs.control->episodes;
    const std::vector<EpisodeLog> logs(source.begin(), source.begin() + static_cast<long>(std::min(kReplayEpisodes, source.size())));
    GroundStateSolver solver(cfg.physics, cfg.solver);
    const Environment env(cfg.task, solver, cfg.reward);
    const auto identity = replay_actions(env, logs, [](std::size_t a) { return a; });
    const auto mirrored = replay_actions(env, logs, [&](std::size_t a) { return mirror_index(cfg.task.canvas, a); });
    bool ok = identity == mirrored;
    long steps = 0;
    for (std::size_t i = 0; i < logs.size(); ++i) {
        ok = ok && identity[i] == logs[i].rewards;
        steps += static_cast<long>(logs[i].rewards.size());
    }
    return {ok, std::to_string(logs.size()) + " control episodes (" + std::to_string(steps) +
                    " steps) replayed mirrored with identical rewards" + (ok ? "" : ": MISMATCH")};
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator_for_training();
    CLI::App app{"Acceptance checks"};
    std::string config_path, smoke_path, cli, work = "acceptance_work";
    std::vector<int> only;
    int threads = 1;
    app.add_option("--config", config_path, "Acceptance run configuration")->required()->check(CLI::ExistingFile);
    app.add_option("--smoke-config", smoke_path, "Small configuration for the determinism check")->check(CLI::ExistingFile);
    app.add_option("--cli", cli, "Path of the sidb executable");
    app.add_option("--work", work, "Scratch directory");
    app.add_option("--threads", threads, "Training runs executed concurrently")->check(CLI::PositiveNumber);
    app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 11));
    CLI11_PARSE(app, argc, argv);

    const RunConfig cfg = load_config(config_path);
    fs::create_directories(work);
    const std::set<int> selected(only.begin(), only.end());
    auto wanted = [&](int c) { return selected.empty() || selected.count(c) > 0; };

    Runs runs;
    auto need_runs = [&](bool all_seeds) {
        const std::size_t want = all_seeds ? static_cast<std::size_t>(kConvergenceSeeds) : 1;
        if (runs.learning.size() < want) {
            ExperimentConfig exp = cfg.experiment(false);
            exp.seeds.assign(cfg.seeds.begin(), cfg.seeds.begin() + static_cast<long>(std::min(want, cfg.seeds.size())));
            std::cout << "training " << exp.seeds.size() << " seed(s) on the " << cfg.task.name << " task..." << std::endl;
            runs.learning = run_experiment(exp, threads);
        }
        if (!runs.control) {
            std::cout << "running the random control..." << std::endl;
            runs.control = run_control_baseline(cfg.training_setup());
        }
    };
    if (wanted(8)) need_runs(true);
    else if (wanted(7) || wanted(10) || wanted(11)) need_runs(false);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"reward arithmetic", reward_arithmetic},
        {"epsilon schedule", epsilon_schedule},
        {"physics oracle equivalence", [&] { return physics_oracle(cfg); }},
        {"qualitative physics", [&] { return qualitative_physics(cfg); }},
        {"gradient correctness", [&] { return gradient_correctness(cfg); }},
        {"double-DQN semantics", [&] { return double_dqn(cfg); }},
        {"learning separation vs control", [&] { return learning_separation(cfg, runs); }},
        {"multi-seed convergence", [&] { return convergence(cfg, runs); }},
        {"determinism of design output", [&] { return determinism(cli, smoke_path, work); }},
        {"round-trips", [&] { return round_trips(cfg, runs); }},
        {"mirror-symmetry replay", [&] { return mirror_replay(cfg, runs); }},
    };

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int number = static_cast<int>(i) + 1;
        if (!wanted(number)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += o.pass ? 0 : 1;
        std::printf("[%s] %2d %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", number, criteria[i].first.c_str(),
                    o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    std::printf("%d criteria failed\n", failed);
    return failed == 0 ? 0 : 1;
}
