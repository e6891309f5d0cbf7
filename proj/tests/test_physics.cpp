#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "sidb/physics.hpp"
#include "oracle.hpp"

using namespace sidb;
using sidb::testing::NaiveOracle;
using sidb::testing::random_layout;

namespace {

const LatticeSite kOrigin{0, 0, 0};
const LatticeSite kNextRow{0, 1, 0};  // 7.68 Angstrom from the origin

}  // namespace

TEST(Physics, PairInteraction) {
    const PhysParams p;
    EXPECT_NEAR(pair_interaction(7.68, p), 0.28713990260220673, 1e-12);
    EXPECT_NEAR(pair_interaction(50.0, p), 0.018918988575329646, 1e-12);
    EXPECT_LT(pair_interaction(1e4, p), 1e-80);
    EXPECT_THROW((void)pair_interaction(0.0, p), std::invalid_argument);
    EXPECT_THROW((void)pair_interaction(-1.0, p), std::invalid_argument);
}

TEST(Physics, PairInteractionMonotone) {
    const PhysParams p;
    std::mt19937 gen(11);
    std::uniform_real_distribution<double> d(0.5, 200.0);
    for (int i = 0; i < 5000; ++i) {
        double a = d(gen), b = d(gen);
        if (a == b) continue;
        if (a > b) std::swap(a, b);
        EXPECT_GT(pair_interaction(a, p), pair_interaction(b, p));
        EXPECT_GT(pair_interaction(b, p), 0.0);
    }
}

TEST(Physics, ParamsValidation) {
    PhysParams p;
    EXPECT_NO_THROW(p.validate());
    p.mu_plus = -0.1;
    EXPECT_THROW(p.validate(), std::invalid_argument);
    p = {};
    p.mu_minus = 0.1;
    p.mu_plus = -0.2;
    EXPECT_THROW(p.validate(), std::invalid_argument);
    p = {};
    p.lambda_tf = 0.0;
    EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(Physics, ConfigEnergy) {
    const PhysParams p;
    const DBLayout pair{kOrigin, kNextRow};
    EXPECT_DOUBLE_EQ(config_energy(pair, {Charge::neutral, Charge::neutral}, p), 0.0);
    EXPECT_NEAR(config_energy(pair, {Charge::negative, Charge::negative}, p), 0.28713990260220673, 1e-12);
    EXPECT_NEAR(config_energy(pair, {Charge::negative, Charge::positive}, p), -0.28713990260220673, 1e-12);
    EXPECT_THROW((void)config_energy(pair, {Charge::negative}, p), std::invalid_argument);
}

TEST(Physics, EnergySymmetries) {
    const PhysParams p;
    std::mt19937 gen(5);
    std::uniform_int_distribution<int> q(-1, 1);
    for (int trial = 0; trial < 200; ++trial) {
        const auto layout = random_layout(gen, 7, 10, 8);
        ChargeConfig cfg, neg;
        for (std::size_t i = 0; i < layout.size(); ++i) {
            cfg.push_back(static_cast<Charge>(q(gen)));
            neg.push_back(static_cast<Charge>(-value(cfg.back())));
        }
        const double e = config_energy(layout, cfg, p);
        EXPECT_NEAR(config_energy(layout, neg, p), e, 1e-12);

        // Translating the whole layout reorders nothing physical.
        std::vector<LatticeSite> moved;
        for (const auto& s : layout) moved.push_back({s.col + 3, s.row - 2, s.sub});
        EXPECT_NEAR(config_energy(DBLayout(moved), cfg, p), e, 1e-12);

        // Mirroring in x reverses column order, so the config must be reindexed with it.
        std::vector<LatticeSite> mirrored;
        for (const auto& s : layout) mirrored.push_back({-s.col, s.row, s.sub});
        const DBLayout ml(mirrored);
        ChargeConfig mcfg(cfg.size());
        for (std::size_t i = 0; i < layout.size(); ++i) mcfg[ml.index_of(mirrored[i])] = cfg[i];
        EXPECT_NEAR(config_energy(ml, mcfg, p), e, 1e-12);
    }
}

TEST(Physics, StabilityExamples) {
    const PhysParams p;
    const DBLayout single{kOrigin};
    auto r = check_stability(single, {Charge::negative}, p);
    EXPECT_TRUE(r.population_ok);
    EXPECT_TRUE(r.stable());
    r = check_stability(single, {Charge::positive}, p);
    EXPECT_FALSE(r.population_ok);
    EXPECT_EQ(r.violating_sites, std::vector<std::size_t>{0});

    const DBLayout pair{kOrigin, kNextRow};
    r = check_stability(pair, {Charge::negative, Charge::negative}, p);
    EXPECT_FALSE(r.population_ok);
    EXPECT_EQ(r.violating_sites, (std::vector<std::size_t>{0, 1}));

    r = check_stability(pair, {Charge::negative, Charge::neutral}, p);
    EXPECT_TRUE(r.stable());
}

TEST(Physics, ExhaustiveExamples) {
    const PhysParams p;
    auto r = exhaustive_ground_states(DBLayout{}, p);
    EXPECT_DOUBLE_EQ(r.energy, 0.0);
    ASSERT_EQ(r.configs.size(), 1u);
    EXPECT_TRUE(r.configs[0].empty());

    r = exhaustive_ground_states(DBLayout{kOrigin}, p, ChargeModel::three_state);
    ASSERT_EQ(r.configs.size(), 1u);
    EXPECT_EQ(r.configs[0], ChargeConfig{Charge::negative});
    EXPECT_DOUBLE_EQ(r.energy, 0.0);
    EXPECT_FALSE(r.contains_positive);

    for (auto mode : {ChargeModel::two_state, ChargeModel::three_state}) {
        r = exhaustive_ground_states(DBLayout{kOrigin, kNextRow}, p, mode);
        const std::vector<ChargeConfig> expected{{Charge::negative, Charge::neutral},
                                                 {Charge::neutral, Charge::negative}};
        EXPECT_EQ(r.configs, expected);
        EXPECT_DOUBLE_EQ(r.energy, 0.0);
    }
}

TEST(Physics, ExhaustiveRefusesOversizedLayouts) {
    std::vector<LatticeSite> sites;
    for (int i = 0; i < 17; ++i) sites.push_back({3 * i, 0, 0});
    EXPECT_THROW((void)exhaustive_ground_states(DBLayout(sites), PhysParams{}), SizingError);
    EXPECT_NO_THROW((void)exhaustive_ground_states(DBLayout(sites), PhysParams{}, ChargeModel::two_state, 17));
}

TEST(Physics, CrowdedClusterGoesPositive) {
    // Four DBs packed within a single dimer pair footprint.
    const DBLayout cluster({{0, 0, 0}, {0, 0, 1}, {1, 0, 0}, {1, 0, 1}});
    const auto r = exhaustive_ground_states(cluster, PhysParams{}, ChargeModel::three_state);
    ASSERT_TRUE(r.converged);
    EXPECT_TRUE(r.contains_positive);
}

TEST(Physics, IsolatedDBsAreAllNegative) {
    std::vector<LatticeSite> sites;
    for (int i = 0; i < 5; ++i) sites.push_back({17 * i, (i % 2) * 9, i % 2});  // > 60 Angstrom apart
    const DBLayout layout(sites);
    for (std::size_t i = 0; i < layout.size(); ++i)
        for (std::size_t j = i + 1; j < layout.size(); ++j) ASSERT_GT(distance(layout.sites()[i], layout.sites()[j]), 60.0);
    const auto r = exhaustive_ground_states(layout, PhysParams{});
    ASSERT_EQ(r.configs.size(), 1u);
    EXPECT_EQ(r.configs[0], ChargeConfig(layout.size(), Charge::negative));
}

TEST(Physics, ExhaustiveMatchesNaiveEnumeration) {
    const PhysParams p;
    std::mt19937 gen(2024);
    std::uniform_int_distribution<int> count(1, 8);
    for (int trial = 0; trial < 150; ++trial) {
        // Dense canvases force neutral and positive states into play.
        const auto layout = random_layout(gen, count(gen), 6, 5);
        for (auto mode : {ChargeModel::two_state, ChargeModel::three_state}) {
            const auto fast = exhaustive_ground_states(layout, p, mode);
            const auto slow = NaiveOracle{}.solve(layout, p, mode);
            ASSERT_EQ(fast.configs, slow.configs) << "trial " << trial;
            if (slow.converged) EXPECT_NEAR(fast.energy, slow.energy, 1e-12);
        }
    }
}

TEST(Physics, GroundStatesAreStableAndMinimal) {
    const PhysParams p;
    std::mt19937 gen(99);
    int solved = 0;
    for (int trial = 0; trial < 40; ++trial) {
        const auto layout = random_layout(gen, 9, 14, 8);
        const auto r = exhaustive_ground_states(layout, p);
        if (!r.converged) continue;
        ++solved;
        const InteractionMatrix w(layout, p);
        for (const auto& cfg : r.configs) {
            EXPECT_TRUE(check_stability(w, cfg, p).stable());
            EXPECT_NEAR(config_energy(w, cfg), r.energy, kDegeneracyTolerance);
        }
        // Every permitted hop from a ground state leaves the energy (plus the transition gap for
        // hops that create a +/- pair, minus it for hops that annihilate one) no lower.
        const double gap = p.mu_minus - p.mu_plus;
        for (const auto& cfg : r.configs) {
            const auto v = local_potentials(w, cfg);
            for (std::size_t i = 0; i < cfg.size(); ++i)
                for (std::size_t j = 0; j < cfg.size(); ++j) {
                    if (i == j || value(cfg[i]) > 0 || value(cfg[j]) < 0) continue;
                    auto hopped = cfg;
                    hopped[i] = static_cast<Charge>(value(cfg[i]) + 1);
                    hopped[j] = static_cast<Charge>(value(cfg[j]) - 1);
                    double de = config_energy(w, hopped) - config_energy(w, cfg);
                    if (cfg[i] == Charge::neutral && cfg[j] == Charge::neutral) de += gap;
                    if (cfg[i] == Charge::negative && cfg[j] == Charge::positive) de -= gap;
                    EXPECT_NEAR(de, hop_energy_change(w, cfg, v, i, j, p), 1e-12);
                    EXPECT_GE(de, -1e-12);
                }
        }
    }
    EXPECT_EQ(solved, 40);
}

TEST(Physics, AnnealSingleSiteAndDeterminism) {
    const PhysParams p;
    const AnnealSchedule sched;
    auto r = anneal_ground_state(DBLayout{kOrigin}, p, sched, 1);
    ASSERT_TRUE(r.converged);
    ASSERT_EQ(r.configs.size(), 1u);
    EXPECT_EQ(r.configs[0], ChargeConfig{Charge::negative});
    EXPECT_DOUBLE_EQ(r.energy, 0.0);

    std::mt19937 gen(4);
    const auto layout = random_layout(gen, 10, 10, 6);
    const auto a = anneal_ground_state(layout, p, sched, 77);
    const auto b = anneal_ground_state(layout, p, sched, 77);
    EXPECT_EQ(a.configs, b.configs);
    EXPECT_EQ(a.energy, b.energy);
    EXPECT_THROW((void)anneal_ground_state(DBLayout{}, p, sched, 1), std::invalid_argument);
}

TEST(Physics, AnnealNeverBeatsOracle) {
    const PhysParams p;
    std::mt19937 gen(17);
    int matches = 0;
    const int trials = 40;
    for (int trial = 0; trial < trials; ++trial) {
        const auto layout = random_layout(gen, 8, 10, 6);
        const auto exact = exhaustive_ground_states(layout, p);
        const auto approx = anneal_ground_state(layout, p, AnnealSchedule{}, trial);
        if (!exact.converged) EXPECT_FALSE(approx.converged);
        if (!approx.converged) {
            if (!exact.converged) ++matches;
            continue;
        }
        EXPECT_GE(approx.energy, exact.energy - 1e-9);
        const InteractionMatrix w(layout, p);
        for (const auto& cfg : approx.configs) EXPECT_TRUE(check_stability(w, cfg, p).stable());
        if (std::abs(approx.energy - exact.energy) < 1e-9) ++matches;
    }
    EXPECT_GE(matches, trials * 9 / 10);
}

TEST(Physics, DegenerateMinimaSurviveLowerEnergyRefinement) {
    const PhysParams p;
    const DBLayout layout({{4, -1, 0}, {1, 1, 0}, {5, 1, 0}, {2, 3, 0}, {3, 3, 1}, {3, 4, 1}});
    const auto got = exhaustive_ground_states(layout, p);
    const auto want = NaiveOracle{}.solve(layout, p, ChargeModel::three_state);
    ASSERT_EQ(got.configs.size(), want.configs.size());
    EXPECT_EQ(got.configs, want.configs);
    for (const auto& cfg : got.configs) EXPECT_EQ(cfg.size(), layout.size());
}
