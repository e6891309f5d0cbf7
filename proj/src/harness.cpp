#include "sidb/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace sidb {

namespace {

std::string number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string short_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::set<LatticeSite> mirrored(const Canvas& canvas, std::span<const LatticeSite> sites) {
    std::set<LatticeSite> out;
    for (const auto& s : sites) out.insert(canvas.mirror(s));
    return out;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw std::invalid_argument("an experiment needs at least one seed");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
        throw std::invalid_argument("experiment seeds must be distinct");
    }
    setup.hp.validate();
    setup.reward.validate();
}

void tune_allocator_for_training() {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif
}

Seeds seeds_from(std::uint64_t seed) {
    return Seeds{derive_seed(seed, 0), derive_seed(seed, 1), derive_seed(seed, 2), derive_seed(seed, 3)};
}

RunArtifacts run_control_baseline(TrainingSetup setup, const TrainingHooks& hooks) {
    setup.policy = Policy::uniform_random;
    return run_training(setup, hooks);
}

std::vector<SeedRun> run_experiment(const ExperimentConfig& cfg, int threads,
                                    const std::function<void(std::uint64_t, const EpochMetrics&)>& on_epoch) {
    cfg.validate();
    std::vector<SeedRun> runs(cfg.seeds.size());
    std::atomic<std::size_t> next{0};
    std::mutex report_mutex;
    std::exception_ptr failure;

    auto worker = [&] {
        for (std::size_t i = next++; i < runs.size(); i = next++) {
            try {
                TrainingSetup setup = cfg.setup;
                setup.hp.seeds = seeds_from(cfg.seeds[i]);
                setup.policy = cfg.control_policy ? Policy::uniform_random : Policy::learning;
                TrainingHooks hooks;
                if (on_epoch) {
                    hooks.on_epoch = [&, seed = cfg.seeds[i]](const EpochMetrics& m) {
                        std::lock_guard lock(report_mutex);
                        on_epoch(seed, m);
                    };
                }
                runs[i] = SeedRun{cfg.seeds[i], run_training(setup, hooks)};
            } catch (...) {
                std::lock_guard lock(report_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const int n = std::clamp(threads, 1, static_cast<int>(runs.size()));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    return runs;
}

std::vector<double> PlacementHistogram::probabilities() const {
    std::vector<double> p(counts.size(), 0.0);
    if (episodes == 0) return p;
    for (std::size_t i = 0; i < counts.size(); ++i) p[i] = static_cast<double>(counts[i]) / static_cast<double>(episodes);
    return p;
}

std::size_t PlacementHistogram::mode() const {
    return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

int full_epochs(const std::vector<EpisodeLog>& logs, int episodes_per_epoch) {
    if (episodes_per_epoch < 1) throw std::invalid_argument("episodes_per_epoch must be at least 1");
    return static_cast<int>(logs.size() / static_cast<std::size_t>(episodes_per_epoch));
}

double final_epochs_mean(const std::vector<EpochMetrics>& metrics, int episodes_per_epoch, int k) {
    if (k < 1) throw std::invalid_argument("k must be at least 1");
    std::vector<double> full;
    for (const auto& m : metrics) {
        if (m.episodes == episodes_per_epoch) full.push_back(m.mean_reward);
    }
    if (full.size() < static_cast<std::size_t>(k))
        throw std::invalid_argument("only " + std::to_string(full.size()) + " complete epochs");
    double sum = 0.0;
    for (auto it = full.end() - k; it != full.end(); ++it) sum += *it;
    return sum / k;
}

PlacementHistogram first_placement_histogram(const std::vector<EpisodeLog>& logs, int episodes_per_epoch, int epoch,
                                             const Canvas& canvas) {
    if (episodes_per_epoch < 1) throw std::invalid_argument("episodes_per_epoch must be at least 1");
    if (epoch < 1) throw std::invalid_argument("epochs are numbered from 1");
    const std::size_t begin = static_cast<std::size_t>(epoch - 1) * static_cast<std::size_t>(episodes_per_epoch);
    const std::size_t end = std::min(logs.size(), begin + static_cast<std::size_t>(episodes_per_epoch));
    if (begin >= end) throw std::invalid_argument("epoch " + std::to_string(epoch) + " holds no episodes");
    PlacementHistogram h;
    h.epoch = epoch;
    h.height = canvas.height();
    h.width = canvas.width();
    h.counts.assign(canvas.size(), 0);
    for (std::size_t i = begin; i < end; ++i) {
        const auto& actions = logs[i].actions;
        if (actions.empty()) continue;
        if (actions.front() >= canvas.size()) throw std::out_of_range("logged action outside the canvas");
        ++h.counts[actions.front()];
        ++h.episodes;
    }
    return h;
}

double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw std::invalid_argument("distributions differ in support size");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
    return 0.5 * s;
}

double total_variation(const PlacementHistogram& a, const PlacementHistogram& b) {
    if (a.height != b.height || a.width != b.width) throw std::invalid_argument("histograms differ in shape");
    return total_variation(a.probabilities(), b.probabilities());
}

std::size_t mirror_index(const Canvas& canvas, std::size_t index) { return canvas.index(canvas.mirror(canvas.site(index))); }

ConvergenceReport seed_convergence_report(const std::vector<const std::vector<EpisodeLog>*>& runs,
                                          const std::vector<const GateTask*>& tasks, int episodes_per_epoch) {
    if (runs.size() < 2) throw std::invalid_argument("a convergence report needs at least two runs");
    if (tasks.size() != runs.size()) throw std::invalid_argument("one task per run is required");
    for (const auto* t : tasks) {
        if (!(*t == *tasks.front())) throw std::invalid_argument("runs were made on different tasks");
    }
    const Canvas& canvas = tasks.front()->canvas;
    ConvergenceReport r;
    for (const auto* logs : runs) {
        const int last = full_epochs(*logs, episodes_per_epoch);
        if (last < 1) throw std::invalid_argument("a run holds no complete epoch");
        r.final_histograms.push_back(first_placement_histogram(*logs, episodes_per_epoch, last, canvas));
        r.modal_sites.push_back(r.final_histograms.back().mode());
    }
    const std::size_t n = runs.size();
    r.distances.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            r.distances[i][j] = r.distances[j][i] = total_variation(r.final_histograms[i], r.final_histograms[j]);
        }
    }
    // Mirror classes are keyed by their lower index; the smallest key wins ties.
    std::map<std::size_t, int> votes;
    for (auto m : r.modal_sites) ++votes[std::min(m, mirror_index(canvas, m))];
    auto best = votes.begin();
    for (auto it = votes.begin(); it != votes.end(); ++it) {
        if (it->second > best->second) best = it;
    }
    r.plurality_site = best->first;
    r.agreement = best->second;
    return r;
}

MannKendall mann_kendall(const std::vector<double>& x) {
    MannKendall mk;
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) mk.s += (x[j] > x[i]) - (x[j] < x[i]);
    }
    std::map<double, long> ties;
    for (double v : x) ++ties[v];
    const double nn = static_cast<double>(n);
    double var = nn * (nn - 1) * (2 * nn + 5);
    for (const auto& [v, t] : ties) var -= static_cast<double>(t * (t - 1) * (2 * t + 5));
    mk.variance = var / 18.0;
    if (mk.variance > 0.0) {
        if (mk.s > 0) mk.z = static_cast<double>(mk.s - 1) / std::sqrt(mk.variance);
        if (mk.s < 0) mk.z = static_cast<double>(mk.s + 1) / std::sqrt(mk.variance);
    }
    return mk;
}

bool is_mirror_symmetric(const GateTask& task) {
    const Canvas& c = task.canvas;
    if (mirrored(c, task.scaffold.sites()) != std::set<LatticeSite>(task.scaffold.begin(), task.scaffold.end())) return false;

    std::vector<std::size_t> in_perm(task.inputs.size(), task.inputs.size());
    for (std::size_t i = 0; i < task.inputs.size(); ++i) {
        const auto image = mirrored(c, task.inputs[i].perturbers);
        for (std::size_t j = 0; j < task.inputs.size(); ++j) {
            const auto& p = task.inputs[j].perturbers;
            if (image == std::set<LatticeSite>(p.begin(), p.end())) in_perm[i] = j;
        }
        if (in_perm[i] == task.inputs.size()) return false;
    }
    std::vector<std::size_t> out_perm(task.outputs.size(), task.outputs.size());
    for (std::size_t i = 0; i < task.outputs.size(); ++i) {
        for (std::size_t j = 0; j < task.outputs.size(); ++j) {
            if (c.mirror(task.outputs[i].dot_one) == task.outputs[j].dot_one &&
                c.mirror(task.outputs[i].dot_zero) == task.outputs[j].dot_zero) {
                out_perm[i] = j;
            }
        }
        if (out_perm[i] == task.outputs.size()) return false;
    }
    // Input pattern x in the mirrored world is pattern x' of the original, with x'[perm(i)] = x[i].
    for (std::size_t r = 0; r < task.table.row_count(); ++r) {
        const auto& row = task.table.row(r);
        std::vector<int> image(row.inputs.size());
        for (std::size_t i = 0; i < row.inputs.size(); ++i) image[in_perm[i]] = row.inputs[i];
        const TruthRow* match = nullptr;
        for (std::size_t k = 0; k < task.table.row_count(); ++k) {
            if (task.table.row(k).inputs == image) match = &task.table.row(k);
        }
        if (match == nullptr) return false;
        for (std::size_t o = 0; o < row.outputs.size(); ++o) {
            if (match->outputs[out_perm[o]] != row.outputs[o]) return false;
        }
    }
    return true;
}

std::vector<std::vector<double>> replay_actions(const Environment& env, const std::vector<EpisodeLog>& logs,
                                                const std::function<std::size_t(std::size_t)>& transform) {
    SolutionRegistry registry;
    std::vector<std::vector<double>> out;
    out.reserve(logs.size());
    for (const auto& log : logs) {
        auto& rewards = out.emplace_back();
        EnvState state = env.reset();
        for (std::size_t k = 0; k < log.actions.size(); ++k) {
            auto r = env.step(state, transform(log.actions[k]), registry, log.episode);
            rewards.push_back(r.reward);
            state = std::move(r.next);
            if (r.terminal && k + 1 != log.actions.size()) {
                throw std::logic_error("replayed episode " + std::to_string(log.episode) + " terminated early");
            }
        }
    }
    return out;
}

std::string metrics_csv(const std::vector<EpochMetrics>& metrics) {
    std::string out = "epoch,episodes,mean_reward,mean_step_reward,mean_return,solutions_total,new_solutions,epsilon,loss_mean\n";
    for (const auto& m : metrics) {
        out += std::to_string(m.epoch) + ',' + std::to_string(m.episodes) + ',' + number(m.mean_reward) + ',' +
               number(m.mean_step_reward) + ',' + number(m.mean_return) + ',' + std::to_string(m.solutions_total) + ',' +
               std::to_string(m.new_solutions) + ',' + number(m.epsilon) + ',' + (m.loss_mean ? number(*m.loss_mean) : "") +
               '\n';
    }
    return out;
}

std::string histogram_csv(const PlacementHistogram& h) {
    std::string out = "epoch,episodes,y,x,count,probability\n";
    const auto p = h.probabilities();
    for (int y = 0; y < h.height; ++y) {
        for (int x = 0; x < h.width; ++x) {
            const auto i = static_cast<std::size_t>(y * h.width + x);
            out += std::to_string(h.epoch) + ',' + std::to_string(h.episodes) + ',' + std::to_string(y) + ',' +
                   std::to_string(x) + ',' + std::to_string(h.counts[i]) + ',' + number(p[i]) + '\n';
        }
    }
    return out;
}

std::string reward_chart_svg(const std::vector<ChartSeries>& series, const std::string& title) {
    static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#7f7f7f"};
    constexpr double W = 720, H = 420, left = 70, right = 170, top = 40, bottom = 50;
    std::size_t n = 1;
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (const auto& s : series) {
        n = std::max(n, s.values.size());
        for (double v : s.values) {
            lo = any ? std::min(lo, v) : v;
            hi = any ? std::max(hi, v) : v;
            any = true;
        }
    }
    if (hi - lo < 1e-9) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double pw = W - left - right, ph = H - top - bottom;
    auto px = [&](std::size_t i) { return left + (n > 1 ? pw * static_cast<double>(i) / static_cast<double>(n - 1) : pw / 2); };
    auto py = [&](double v) { return top + ph * (hi - v) / (hi - lo); };

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + short_number(W) + "\" height=\"" +
                      short_number(H) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + short_number(left) + "\" y=\"24\" font-size=\"15\">" + xml_escape(title) + "</text>\n";
    svg += "<g stroke=\"#333\">\n<line x1=\"" + short_number(left) + "\" y1=\"" + short_number(top + ph) + "\" x2=\"" +
           short_number(left + pw) + "\" y2=\"" + short_number(top + ph) + "\"/>\n<line x1=\"" + short_number(left) +
           "\" y1=\"" + short_number(top) + "\" x2=\"" + short_number(left) + "\" y2=\"" + short_number(top + ph) +
           "\"/>\n</g>\n";
    for (int k = 0; k <= 4; ++k) {
        const double v = lo + (hi - lo) * k / 4.0;
        svg += "<text x=\"" + short_number(left - 8) + "\" y=\"" + short_number(py(v) + 4) + "\" text-anchor=\"end\">" +
               short_number(v) + "</text>\n";
        const std::size_t e = (n - 1) * static_cast<std::size_t>(k) / 4;
        svg += "<text x=\"" + short_number(px(e)) + "\" y=\"" + short_number(top + ph + 18) + "\" text-anchor=\"middle\">" +
               std::to_string(e + 1) + "</text>\n";
    }
    svg += "<text x=\"" + short_number(left + pw / 2) + "\" y=\"" + short_number(H - 10) +
           "\" text-anchor=\"middle\">epoch</text>\n";
    svg += "<text transform=\"translate(18," + short_number(top + ph / 2) +
           ") rotate(-90)\" text-anchor=\"middle\">mean reward</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = kColors[s % std::size(kColors)];
        std::string points;
        for (std::size_t i = 0; i < series[s].values.size(); ++i) {
            points += short_number(px(i)) + ',' + short_number(py(series[s].values[i])) + ' ';
        }
        svg += std::string("<polyline fill=\"none\" stroke=\"") + color + "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
        const double ly = top + 16.0 * static_cast<double>(s + 1);
        svg += std::string("<line x1=\"") + short_number(left + pw + 12) + "\" y1=\"" + short_number(ly - 4) + "\" x2=\"" +
               short_number(left + pw + 32) + "\" y2=\"" + short_number(ly - 4) + "\" stroke=\"" + color +
               "\" stroke-width=\"2\"/>\n";
        svg += "<text x=\"" + short_number(left + pw + 38) + "\" y=\"" + short_number(ly) + "\">" +
               xml_escape(series[s].label) + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace sidb
