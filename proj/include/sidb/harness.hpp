#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sidb/agent.hpp"

namespace sidb {

struct ExperimentConfig {
    std::string task_name = "or";
    TrainingSetup setup;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    bool control_policy = false;

    void validate() const;
};

// Keeps the large per-step network buffers on the heap instead of mapping and unmapping them on every
// training step. Process-wide; a no-op outside glibc.
void tune_allocator_for_training();

// The four named random streams of one experiment seed.
[[nodiscard]] Seeds seeds_from(std::uint64_t seed);

// Same loop as run_training with epsilon fixed at 1 and no learning.
[[nodiscard]] RunArtifacts run_control_baseline(TrainingSetup setup, const TrainingHooks& hooks = {});

struct SeedRun {
    std::uint64_t seed = 0;
    RunArtifacts artifacts;
};

// One run per seed. Runs are independent, so up to `threads` of them execute concurrently.
[[nodiscard]] std::vector<SeedRun> run_experiment(const ExperimentConfig& cfg, int threads = 1,
                                                  const std::function<void(std::uint64_t, const EpochMetrics&)>& on_epoch = {});

struct PlacementHistogram {
    int epoch = 0;  // 1-based
    int height = 0;
    int width = 0;
    std::vector<long> counts;  // row-major over the canvas
    long episodes = 0;

    [[nodiscard]] long at(int y, int x) const { return counts.at(static_cast<std::size_t>(y * width + x)); }
    [[nodiscard]] std::vector<double> probabilities() const;
    // Most frequent cell; the lowest index wins ties.
    [[nodiscard]] std::size_t mode() const;
};

// Number of complete epochs in the logs.
[[nodiscard]] int full_epochs(const std::vector<EpisodeLog>& logs, int episodes_per_epoch);

// Mean of mean_reward over the last k complete epochs. Throws std::invalid_argument when fewer exist.
[[nodiscard]] double final_epochs_mean(const std::vector<EpochMetrics>& metrics, int episodes_per_epoch, int k);

// Histogram of the first action of each episode in the given 1-based epoch.
// Throws std::invalid_argument when the epoch holds no episodes.
[[nodiscard]] PlacementHistogram first_placement_histogram(const std::vector<EpisodeLog>& logs, int episodes_per_epoch,
                                                           int epoch, const Canvas& canvas);

[[nodiscard]] double total_variation(const std::vector<double>& p, const std::vector<double>& q);
[[nodiscard]] double total_variation(const PlacementHistogram& a, const PlacementHistogram& b);

// Canvas index of the mirror image of a canvas index.
[[nodiscard]] std::size_t mirror_index(const Canvas& canvas, std::size_t index);

struct ConvergenceReport {
    std::vector<PlacementHistogram> final_histograms;
    std::vector<std::vector<double>> distances;  // pairwise total variation
    std::vector<std::size_t> modal_sites;
    std::size_t plurality_site = 0;  // representative of the most common mirror class
    int agreement = 0;               // runs whose modal site is the plurality site or its mirror
};

// Compares the last full epoch of every run. Throws std::invalid_argument for fewer than two runs
// or runs over different tasks.
[[nodiscard]] ConvergenceReport seed_convergence_report(const std::vector<const std::vector<EpisodeLog>*>& runs,
                                                        const std::vector<const GateTask*>& tasks,
                                                        int episodes_per_epoch);

struct MannKendall {
    long s = 0;
    double variance = 0.0;
    double z = 0.0;
};

// Trend statistic of a series, with the tie-corrected variance and continuity-corrected z score.
[[nodiscard]] MannKendall mann_kendall(const std::vector<double>& series);

// True when reflecting the task across the canvas center axis maps it onto itself, allowing the
// reflection to permute inputs and outputs consistently with the truth table.
[[nodiscard]] bool is_mirror_symmetric(const GateTask& task);

// Replays logged episodes in order through a fresh registry, mapping each action through `transform`.
// Returns the reward sequence of every episode.
[[nodiscard]] std::vector<std::vector<double>> replay_actions(const Environment& env, const std::vector<EpisodeLog>& logs,
                                                              const std::function<std::size_t(std::size_t)>& transform);

[[nodiscard]] std::string metrics_csv(const std::vector<EpochMetrics>& metrics);
[[nodiscard]] std::string histogram_csv(const PlacementHistogram& h);

struct ChartSeries {
    std::string label;
    std::vector<double> values;  // one value per epoch
};

// Self-contained SVG line chart of mean reward against epoch.
[[nodiscard]] std::string reward_chart_svg(const std::vector<ChartSeries>& series, const std::string& title);

}  // namespace sidb
