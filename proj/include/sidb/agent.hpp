#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sidb/env.hpp"
#include "sidb/qnet.hpp"
#include "sidb/random.hpp"

namespace sidb {

struct EpsilonSchedule {
    double eps_start = 1.0;
    double eps_min = 0.1;
    double anneal_fraction = 0.8;

    void validate() const;
    [[nodiscard]] double at(double progress) const;

    friend bool operator==(const EpsilonSchedule&, const EpsilonSchedule&) = default;
};

// Linear decay from eps_start to eps_min, reached at anneal_fraction of the design time.
[[nodiscard]] double epsilon_at(double progress, const EpsilonSchedule& sched);

// FIFO ring of transitions with seeded uniform sampling.
class ReplayBuffer {
  public:
    explicit ReplayBuffer(std::size_t capacity);

    void push(Transition t);
    [[nodiscard]] std::size_t size() const { return items_.size(); }
    [[nodiscard]] std::size_t capacity() const { return capacity_; }
    // i = 0 is the oldest stored transition.
    [[nodiscard]] const Transition& at(std::size_t i) const { return items_.at(i); }
    // n indices drawn uniformly with replacement. Throws std::logic_error when empty.
    [[nodiscard]] std::vector<const Transition*> sample(std::size_t n, Rng& rng) const;

  private:
    std::size_t capacity_;
    std::deque<Transition> items_;
};

struct Seeds {
    std::uint64_t net_init = 1;
    std::uint64_t exploration = 2;
    std::uint64_t replay = 3;
    std::uint64_t annealer = 4;

    friend bool operator==(const Seeds&, const Seeds&) = default;
};

struct Hyperparams {
    long total_steps = 30000;  // design time, in environment steps
    int batch_size = 64;
    long warmup_steps = 1000;
    int train_every = 1;
    int target_sync_every = 500;  // in training steps
    double gamma = 0.99;
    double learning_rate = 1e-4;
    double huber_delta = 1.0;
    std::size_t buffer_capacity = 100000;
    int episodes_per_epoch = 50;
    int checkpoint_every_epochs = 0;  // 0 disables periodic checkpoints
    EpsilonSchedule epsilon{};
    NetShape network{};  // height and width are taken from the task canvas
    Seeds seeds{};

    void validate() const;

    friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
};

enum class Policy { learning, uniform_random };

struct EpisodeLog {
    long episode = 0;
    long start_step = 0;  // global step count before the episode
    std::vector<std::size_t> actions;
    std::vector<double> rewards;
    std::vector<std::uint8_t> explored;  // 1 when the action came from the exploratory policy
    bool found_new_solution = false;
    int final_satisfied = 0;
    double epsilon = 0.0;  // at the last action
    double loss_sum = 0.0;
    int loss_count = 0;
    std::vector<std::string> diagnostics;

    [[nodiscard]] double mean_reward() const;
    [[nodiscard]] double total_reward() const;
};

struct EpochMetrics {
    int epoch = 0;  // 1-based
    int episodes = 0;
    double mean_reward = 0.0;       // mean over episodes of each episode's mean step reward
    double mean_step_reward = 0.0;  // mean over all steps of the epoch
    double mean_return = 0.0;       // mean over episodes of the summed reward
    long solutions_total = 0;
    long new_solutions = 0;
    double epsilon = 0.0;
    std::optional<double> loss_mean;  // absent when no training step ran

    friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

// Groups consecutive episodes into epochs; a trailing partial epoch is kept.
[[nodiscard]] std::vector<EpochMetrics> epoch_metrics(const std::vector<EpisodeLog>& logs, int episodes_per_epoch);

// Learner state: networks, optimizer, replay memory, and the named random streams.
class Agent {
  public:
    Agent(const Environment& env, Hyperparams hp, Policy policy = Policy::learning);

    [[nodiscard]] EpisodeLog run_episode(SolutionRegistry& registry, long episode);

    [[nodiscard]] std::size_t select_action(const EnvState& state, const StateTensor& x, double epsilon, bool& explored);
    [[nodiscard]] double epsilon_now() const;

    [[nodiscard]] const QNetwork& online() const { return online_; }
    [[nodiscard]] const QNetwork& target() const { return target_; }
    [[nodiscard]] const AdamState& optimizer() const { return opt_; }
    [[nodiscard]] const ReplayBuffer& buffer() const { return buffer_; }
    [[nodiscard]] const Hyperparams& hyperparams() const { return hp_; }
    [[nodiscard]] long steps() const { return steps_; }
    [[nodiscard]] long train_steps() const { return train_steps_; }

    void load_state(QNetwork online, QNetwork target, AdamState opt);

  private:
    const Environment& env_;
    Hyperparams hp_;
    Policy policy_;
    QNetwork online_;
    QNetwork target_;
    AdamState opt_;
    ReplayBuffer buffer_;
    Rng explore_rng_;
    Rng replay_rng_;
    long steps_ = 0;
    long train_steps_ = 0;
};

[[nodiscard]] NetShape network_shape_for(const GateTask& task, const NetShape& widths);

struct RunArtifacts {
    std::vector<SolutionRecord> solutions;
    std::vector<EpochMetrics> metrics;
    std::vector<EpisodeLog> episodes;
    long steps = 0;
    long train_steps = 0;
    QNetwork online;
    QNetwork target;
    AdamState optimizer;
};

struct TrainingHooks {
    std::function<void(const EpisodeLog&)> on_episode;
    std::function<void(const EpochMetrics&)> on_epoch;
    std::function<void(const Agent&, int epoch)> on_checkpoint;
    std::function<void(const SolutionRecord&)> on_solution;
};

struct TrainingSetup {
    GateTask task;
    Hyperparams hp;
    RewardParams reward;
    PhysParams physics;
    SolverConfig solver;
    Policy policy = Policy::learning;
};

// Runs whole episodes until total_steps environment steps have been taken (the last episode is
// allowed to finish). Deterministic for a fixed setup.
[[nodiscard]] RunArtifacts run_training(const TrainingSetup& setup, const TrainingHooks& hooks = {});

}  // namespace sidb
