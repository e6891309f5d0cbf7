#include <gtest/gtest.h>

#include <cmath>

#include "sidb/agent.hpp"

using namespace sidb;

namespace {

NetShape tiny_widths() {
    NetShape s;
    s.conv1 = 4;
    s.conv2 = 6;
    s.conv3 = 6;
    s.fc1 = 24;
    s.fc2 = 16;
    return s;
}

Hyperparams tiny_hp() {
    Hyperparams hp;
    hp.total_steps = 400;
    hp.warmup_steps = 60;
    hp.batch_size = 8;
    hp.train_every = 2;
    hp.target_sync_every = 20;
    hp.episodes_per_epoch = 10;
    hp.network = tiny_widths();
    return hp;
}

struct Fixture {
    GroundStateSolver solver{PhysParams{}, SolverConfig{SolverKind::exhaustive}};
    Environment env{or_gate_task(), solver};
};

Transition numbered(std::size_t action) {
    Transition t;
    t.action = action;
    return t;
}

}  // namespace

TEST(Epsilon, LinearScheduleExamples) {
    const EpsilonSchedule s;
    EXPECT_DOUBLE_EQ(epsilon_at(0.0, s), 1.0);
    EXPECT_DOUBLE_EQ(epsilon_at(0.4, s), 0.55);
    EXPECT_DOUBLE_EQ(epsilon_at(0.8, s), 0.1);
    EXPECT_DOUBLE_EQ(epsilon_at(1.0, s), 0.1);
    EXPECT_DOUBLE_EQ(epsilon_at(-0.5, s), 1.0);
    EXPECT_DOUBLE_EQ(epsilon_at(7.0, s), 0.1);
    double prev = 2.0;
    for (int i = 0; i <= 10000; ++i) {
        const double e = epsilon_at(i / 10000.0, s);
        EXPECT_GE(e, 0.1);
        EXPECT_LE(e, prev);
        prev = e;
    }
    EpsilonSchedule bad;
    bad.anneal_fraction = 0.0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = {};
    bad.eps_min = 0.5;
    bad.eps_start = 0.2;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Replay, FifoEviction) {
    ReplayBuffer buf(3);
    EXPECT_THROW((void)ReplayBuffer(0), std::invalid_argument);
    Rng rng(1);
    EXPECT_THROW((void)buf.sample(1, rng), std::logic_error);
    for (std::size_t a = 0; a < 5; ++a) buf.push(numbered(a));
    ASSERT_EQ(buf.size(), 3u);
    EXPECT_EQ(buf.at(0).action, 2u);
    EXPECT_EQ(buf.at(2).action, 4u);
}

TEST(Replay, SeededSamplingIsReproducibleAndCoversTheBuffer) {
    ReplayBuffer buf(10);
    for (std::size_t a = 0; a < 10; ++a) buf.push(numbered(a));
    Rng r1(9), r2(9);
    const auto s1 = buf.sample(2000, r1);
    const auto s2 = buf.sample(2000, r2);
    std::vector<int> hist(10, 0);
    for (std::size_t i = 0; i < s1.size(); ++i) {
        EXPECT_EQ(s1[i], s2[i]);
        ++hist[s1[i]->action];
    }
    for (int h : hist) EXPECT_GT(h, 120);
}

TEST(Agent, FullExplorationIsUniformOverValidActions) {
    Fixture f;
    Agent agent(f.env, tiny_hp());
    const auto s = f.env.reset();
    const auto x = f.env.encode_state(s);
    std::vector<int> hist(s.mask.size(), 0);
    const int draws = 30000;
    for (int i = 0; i < draws; ++i) {
        bool explored = false;
        const auto a = agent.select_action(s, x, 1.0, explored);
        ASSERT_TRUE(explored);
        ASSERT_TRUE(s.mask[a]);
        ++hist[a];
    }
    int k = 0;
    for (auto m : s.mask) k += m;
    const double expected = static_cast<double>(draws) / k;
    double chi2 = 0.0;
    for (std::size_t i = 0; i < hist.size(); ++i)
        if (s.mask[i]) chi2 += (hist[i] - expected) * (hist[i] - expected) / expected;
    // Upper 0.1% point of chi-square with k - 1 degrees of freedom (Wilson-Hilferty).
    const double dof = k - 1, z = 3.090232;
    const double crit = dof * std::pow(1.0 - 2.0 / (9.0 * dof) + z * std::sqrt(2.0 / (9.0 * dof)), 3);
    EXPECT_LT(chi2, crit);
}

TEST(Agent, GreedySelectionFollowsTheOnlineNetwork) {
    Fixture f;
    Agent agent(f.env, tiny_hp());
    const auto s = f.env.reset();
    const auto x = f.env.encode_state(s);
    const auto expected = masked_argmax(agent.online().forward(x), s.mask);
    for (int i = 0; i < 50; ++i) {
        bool explored = true;
        EXPECT_EQ(agent.select_action(s, x, 0.0, explored), expected);
        EXPECT_FALSE(explored);
    }
}

TEST(Agent, ExplorationFractionTracksEpsilon) {
    Fixture f;
    Hyperparams hp = tiny_hp();
    hp.total_steps = 10000;
    hp.warmup_steps = hp.total_steps;  // no training, only action selection
    hp.epsilon = {0.3, 0.3, 0.8};
    Agent agent(f.env, hp);
    SolutionRegistry reg;
    long explored = 0, steps = 0;
    for (long e = 0; agent.steps() < hp.total_steps; ++e) {
        const auto log = agent.run_episode(reg, e);
        for (auto v : log.explored) explored += v;
        steps += static_cast<long>(log.actions.size());
    }
    EXPECT_NEAR(static_cast<double>(explored) / steps, 0.3, 0.02);
}

TEST(Metrics, SingleEpisodeMean) {
    EpisodeLog e;
    e.rewards = {-0.05, 1.0};
    EXPECT_DOUBLE_EQ(e.mean_reward(), 0.475);
    EXPECT_DOUBLE_EQ(epoch_metrics({e}, 50).front().mean_reward, 0.475);
}

TEST(Metrics, EpochAggregation) {
    EpisodeLog a, b, c;
    a.rewards = {0.5, 0.5};
    b.rewards = {0.45};
    b.found_new_solution = true;
    b.epsilon = 0.7;
    c.rewards = {-0.2, 0.0, 0.2, 0.4};
    c.loss_sum = 3.0;
    c.loss_count = 2;
    c.epsilon = 0.6;
    const auto m = epoch_metrics({a, b, c}, 2);
    ASSERT_EQ(m.size(), 2u);
    EXPECT_EQ(m[0].epoch, 1);
    EXPECT_EQ(m[0].episodes, 2);
    EXPECT_DOUBLE_EQ(m[0].mean_reward, 0.475);
    EXPECT_DOUBLE_EQ(m[0].mean_return, 0.725);
    EXPECT_DOUBLE_EQ(m[0].mean_step_reward, 1.45 / 3);
    EXPECT_EQ(m[0].new_solutions, 1);
    EXPECT_EQ(m[0].solutions_total, 1);
    EXPECT_DOUBLE_EQ(m[0].epsilon, 0.7);
    EXPECT_FALSE(m[0].loss_mean.has_value());
    EXPECT_EQ(m[1].episodes, 1);
    EXPECT_DOUBLE_EQ(m[1].mean_reward, 0.1);
    EXPECT_EQ(m[1].solutions_total, 1);
    ASSERT_TRUE(m[1].loss_mean.has_value());
    EXPECT_DOUBLE_EQ(*m[1].loss_mean, 1.5);
    EXPECT_THROW((void)epoch_metrics({a}, 0), std::invalid_argument);
}

TEST(Hyperparams, Validation) {
    Hyperparams hp;
    EXPECT_NO_THROW(hp.validate());
    hp.gamma = 1.5;
    EXPECT_THROW(hp.validate(), std::invalid_argument);
    hp = {};
    hp.warmup_steps = hp.total_steps + 1;
    EXPECT_THROW(hp.validate(), std::invalid_argument);
    hp = {};
    hp.learning_rate = 0.0;
    EXPECT_THROW(hp.validate(), std::invalid_argument);
}

TEST(Training, TinyRunProducesMetricsAndLearns) {
    TrainingSetup setup;
    setup.task = or_gate_task();
    setup.hp = tiny_hp();
    int epochs_seen = 0;
    long episodes_seen = 0;
    TrainingHooks hooks;
    hooks.on_epoch = [&](const EpochMetrics&) { ++epochs_seen; };
    hooks.on_episode = [&](const EpisodeLog&) { ++episodes_seen; };
    const auto run = run_training(setup, hooks);
    ASSERT_GE(run.metrics.size(), 1u);
    EXPECT_EQ(static_cast<std::size_t>(epochs_seen), run.metrics.size());
    EXPECT_EQ(static_cast<std::size_t>(episodes_seen), run.episodes.size());
    EXPECT_GE(run.steps, setup.hp.total_steps);
    EXPECT_LT(run.steps, setup.hp.total_steps + setup.task.max_placements);
    EXPECT_GT(run.train_steps, 0);
    EXPECT_EQ(run.metrics.back().solutions_total, static_cast<long>(run.solutions.size()));
    EXPECT_FALSE(run.online == QNetwork(network_shape_for(setup.task, setup.hp.network), setup.hp.seeds.net_init));
    long steps = 0;
    for (std::size_t i = 0; i < run.episodes.size(); ++i) {
        EXPECT_EQ(run.episodes[i].start_step, steps);
        steps += static_cast<long>(run.episodes[i].actions.size());
    }
    EXPECT_EQ(steps, run.steps);
}

TEST(Training, IdenticalSetupsReproduceBitForBit) {
    TrainingSetup setup;
    setup.task = or_gate_task();
    setup.hp = tiny_hp();
    const auto a = run_training(setup);
    const auto b = run_training(setup);
    EXPECT_EQ(a.metrics, b.metrics);
    EXPECT_TRUE(a.online == b.online);
    EXPECT_TRUE(a.target == b.target);
    ASSERT_EQ(a.solutions.size(), b.solutions.size());
    for (std::size_t i = 0; i < a.solutions.size(); ++i) EXPECT_EQ(a.solutions[i].digest, b.solutions[i].digest);

    setup.hp.seeds.exploration = 99;
    const auto c = run_training(setup);
    EXPECT_FALSE(a.online == c.online);
}

TEST(Training, UniformPolicySkipsLearning) {
    TrainingSetup setup;
    setup.task = or_gate_task();
    setup.hp = tiny_hp();
    setup.policy = Policy::uniform_random;
    const auto run = run_training(setup);
    EXPECT_EQ(run.train_steps, 0);
    EXPECT_TRUE(run.online == QNetwork(network_shape_for(setup.task, setup.hp.network), setup.hp.seeds.net_init));
    for (const auto& e : run.episodes)
        for (auto v : e.explored) EXPECT_EQ(v, 1);
}
