#include "sidb/agent.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sidb {

void EpsilonSchedule::validate() const {
    if (!(eps_min >= 0.0 && eps_min <= eps_start && eps_start <= 1.0)) {
        throw std::invalid_argument("epsilon schedule needs 0 <= eps_min <= eps_start <= 1");
    }
    if (!(anneal_fraction > 0.0 && anneal_fraction <= 1.0)) {
        throw std::invalid_argument("epsilon anneal_fraction must lie in (0, 1]");
    }
}

double EpsilonSchedule::at(double progress) const {
    const double p = std::clamp(progress, 0.0, 1.0);
    if (p >= anneal_fraction) return eps_min;
    return std::max(eps_min, eps_start - (eps_start - eps_min) * p / anneal_fraction);
}

double epsilon_at(double progress, const EpsilonSchedule& sched) { return sched.at(progress); }

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("replay buffer capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(t));
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
    if (items_.empty()) throw std::logic_error("cannot sample from an empty replay buffer");
    std::vector<const Transition*> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) out.push_back(&items_[rng.below(items_.size())]);
    return out;
}

void Hyperparams::validate() const {
    if (total_steps < 1 || batch_size < 1 || warmup_steps < 0 || train_every < 1 || target_sync_every < 1 ||
        episodes_per_epoch < 1 || checkpoint_every_epochs < 0 || buffer_capacity < 1) {
        throw std::invalid_argument("hyperparameters must be positive");
    }
    if (total_steps < warmup_steps) throw std::invalid_argument("total_steps must be at least warmup_steps");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in [0, 1]");
    if (!(learning_rate > 0.0) || !(huber_delta > 0.0)) {
        throw std::invalid_argument("learning_rate and huber_delta must be positive");
    }
    epsilon.validate();
}

double EpisodeLog::mean_reward() const { return rewards.empty() ? 0.0 : total_reward() / static_cast<double>(rewards.size()); }

double EpisodeLog::total_reward() const {
    double s = 0.0;
    for (double r : rewards) s += r;
    return s;
}

std::vector<EpochMetrics> epoch_metrics(const std::vector<EpisodeLog>& logs, int episodes_per_epoch) {
    if (episodes_per_epoch < 1) throw std::invalid_argument("episodes_per_epoch must be at least 1");
    std::vector<EpochMetrics> out;
    long solutions = 0;
    for (std::size_t start = 0; start < logs.size(); start += static_cast<std::size_t>(episodes_per_epoch)) {
        const std::size_t end = std::min(logs.size(), start + static_cast<std::size_t>(episodes_per_epoch));
        EpochMetrics m;
        m.epoch = static_cast<int>(out.size()) + 1;
        m.episodes = static_cast<int>(end - start);
        double mean_sum = 0.0, step_sum = 0.0, loss_sum = 0.0;
        long steps = 0, losses = 0;
        for (std::size_t i = start; i < end; ++i) {
            const auto& log = logs[i];
            mean_sum += log.mean_reward();
            step_sum += log.total_reward();
            steps += static_cast<long>(log.rewards.size());
            loss_sum += log.loss_sum;
            losses += log.loss_count;
            if (log.found_new_solution) ++m.new_solutions;
        }
        solutions += m.new_solutions;
        m.mean_reward = mean_sum / m.episodes;
        m.mean_return = step_sum / m.episodes;
        m.mean_step_reward = steps > 0 ? step_sum / static_cast<double>(steps) : 0.0;
        m.solutions_total = solutions;
        m.epsilon = logs[end - 1].epsilon;
        if (losses > 0) m.loss_mean = loss_sum / static_cast<double>(losses);
        out.push_back(m);
    }
    return out;
}

NetShape network_shape_for(const GateTask& task, const NetShape& widths) {
    NetShape s = widths;
    s.in_channels = 3;
    s.height = task.canvas.height();
    s.width = task.canvas.width();
    s.validate();
    return s;
}

Agent::Agent(const Environment& env, Hyperparams hp, Policy policy)
    : env_(env),
      hp_(std::move(hp)),
      policy_(policy),
      buffer_(hp_.buffer_capacity),
      explore_rng_(hp_.seeds.exploration),
      replay_rng_(hp_.seeds.replay) {
    hp_.validate();
    hp_.network = network_shape_for(env_.task(), hp_.network);
    online_ = QNetwork(hp_.network, hp_.seeds.net_init);
    target_ = online_;
    opt_.learning_rate = hp_.learning_rate;
}

void Agent::load_state(QNetwork online, QNetwork target, AdamState opt) {
    if (!(online.shape() == hp_.network) || !(target.shape() == hp_.network)) {
        throw std::invalid_argument("network shape does not match the agent");
    }
    online_ = std::move(online);
    target_ = std::move(target);
    opt_ = std::move(opt);
}

double Agent::epsilon_now() const {
    if (policy_ == Policy::uniform_random) return 1.0;
    return hp_.epsilon.at(static_cast<double>(steps_) / static_cast<double>(hp_.total_steps));
}

std::size_t Agent::select_action(const EnvState& state, const StateTensor& x, double epsilon, bool& explored) {
    explored = explore_rng_.bernoulli(epsilon);
    if (explored) {
        std::vector<std::size_t> valid;
        for (std::size_t i = 0; i < state.mask.size(); ++i) {
            if (state.mask[i]) valid.push_back(i);
        }
        if (valid.empty()) throw std::logic_error("no valid action in a live episode");
        return valid[explore_rng_.below(valid.size())];
    }
    return masked_argmax(online_.forward(x), state.mask);
}

EpisodeLog Agent::run_episode(SolutionRegistry& registry, long episode) {
    EpisodeLog log;
    log.episode = episode;
    log.start_step = steps_;
    EnvState state = env_.reset();
    StateTensor x = env_.encode_state(state);
    const bool learning = policy_ == Policy::learning;
    while (true) {
        const double eps = epsilon_now();
        bool explored = false;
        const std::size_t action = select_action(state, x, eps, explored);
        StepResult r = env_.step(state, action, registry, episode);
        StateTensor next_x = env_.encode_state(r.next);
        ++steps_;
        log.actions.push_back(action);
        log.rewards.push_back(r.reward);
        log.explored.push_back(explored ? 1 : 0);
        log.epsilon = eps;
        if (r.info.new_solution) log.found_new_solution = true;

        if (learning) {
            buffer_.push(Transition{x, action, r.reward, next_x, r.terminal, r.next.mask});
            const bool due = steps_ % hp_.train_every == 0;
            if (steps_ >= hp_.warmup_steps && due && buffer_.size() >= static_cast<std::size_t>(hp_.batch_size)) {
                const auto batch = buffer_.sample(static_cast<std::size_t>(hp_.batch_size), replay_rng_);
                try {
                    const double loss = train_batch(online_, target_, opt_, batch, hp_.gamma, hp_.huber_delta);
                    log.loss_sum += loss;
                    ++log.loss_count;
                } catch (const NonFiniteError& e) {
                    log.diagnostics.push_back(std::string("skipped training batch: ") + e.what());
                }
                ++train_steps_;
                if (train_steps_ % hp_.target_sync_every == 0) sync_target(online_, target_);
            }
        }
        state = std::move(r.next);
        x = std::move(next_x);
        if (r.terminal) break;
    }
    log.final_satisfied = state.satisfied;
    return log;
}

RunArtifacts run_training(const TrainingSetup& setup, const TrainingHooks& hooks) {
    SolverConfig solver_cfg = setup.solver;
    solver_cfg.seed = setup.hp.seeds.annealer;
    GroundStateSolver solver(setup.physics, solver_cfg);
    const Environment env(setup.task, solver, setup.reward);
    Agent agent(env, setup.hp, setup.policy);
    SolutionRegistry registry;
    RunArtifacts out;

    const int per_epoch = setup.hp.episodes_per_epoch;
    std::size_t epoch_start = 0;
    auto close_epoch = [&] {
        auto m = epoch_metrics({out.episodes.begin() + static_cast<long>(epoch_start), out.episodes.end()}, per_epoch).front();
        m.epoch = static_cast<int>(out.metrics.size()) + 1;
        m.solutions_total = static_cast<long>(registry.size());
        out.metrics.push_back(m);
        if (hooks.on_epoch) hooks.on_epoch(m);
        if (hooks.on_checkpoint && setup.hp.checkpoint_every_epochs > 0 && m.epoch % setup.hp.checkpoint_every_epochs == 0) {
            hooks.on_checkpoint(agent, m.epoch);
        }
        epoch_start = out.episodes.size();
    };

    long episode = 0;
    while (agent.steps() < setup.hp.total_steps) {
        const std::size_t before = registry.size();
        out.episodes.push_back(agent.run_episode(registry, episode++));
        if (hooks.on_solution && registry.size() > before) {
            const auto records = registry.records();
            for (std::size_t i = before; i < records.size(); ++i) hooks.on_solution(records[i]);
        }
        if (hooks.on_episode) hooks.on_episode(out.episodes.back());
        if (out.episodes.size() - epoch_start == static_cast<std::size_t>(per_epoch)) close_epoch();
    }
    if (out.episodes.size() > epoch_start) close_epoch();

    out.solutions = registry.records();
    out.steps = agent.steps();
    out.train_steps = agent.train_steps();
    out.online = agent.online();
    out.target = agent.target();
    out.optimizer = agent.optimizer();
    return out;
}

}  // namespace sidb
