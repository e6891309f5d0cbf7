#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sidb/lattice.hpp"

namespace sidb {

enum class Charge : std::int8_t { negative = -1, neutral = 0, positive = 1 };

[[nodiscard]] constexpr int value(Charge c) { return static_cast<int>(c); }

using ChargeConfig = std::vector<Charge>;

std::string to_string(const ChargeConfig& cfg);

struct PhysParams {
    double eps_r = 5.6;
    double lambda_tf = 50.0;   // Angstrom
    double mu_minus = -0.25;   // eV, (0/-) threshold
    double mu_plus = -0.84;    // eV, (+/0) threshold
    double k_coulomb = 14.3996;  // eV * Angstrom

    void validate() const;

    friend bool operator==(const PhysParams&, const PhysParams&) = default;
};

enum class ChargeModel { two_state, three_state };

// Screened Coulomb pair energy in eV between two unit charges d Angstrom apart.
[[nodiscard]] double pair_interaction(double d, const PhysParams& p);

// Dense symmetric matrix of pair_interaction over a layout's sites (zero diagonal).
class InteractionMatrix {
  public:
    InteractionMatrix(const DBLayout& layout, const PhysParams& p, const LatticeGeometry& geom = {});

    [[nodiscard]] std::size_t size() const { return n_; }
    [[nodiscard]] double operator()(std::size_t i, std::size_t j) const { return w_[i * n_ + j]; }
    [[nodiscard]] const double* row(std::size_t i) const { return w_.data() + i * n_; }

  private:
    std::size_t n_;
    std::vector<double> w_;
};

[[nodiscard]] double config_energy(const DBLayout& layout, const ChargeConfig& cfg, const PhysParams& p,
                                   const LatticeGeometry& geom = {});
[[nodiscard]] double config_energy(const InteractionMatrix& w, const ChargeConfig& cfg);

// Local potentials v_i = sum_{j != i} W_ij n_j in eV.
[[nodiscard]] std::vector<double> local_potentials(const InteractionMatrix& w, const ChargeConfig& cfg);

struct StabilityReport {
    bool population_ok = true;
    bool hop_ok = true;
    std::vector<std::size_t> violating_sites;  // population violations, ascending

    [[nodiscard]] bool stable() const { return population_ok && hop_ok; }
};

// Population stability of every site plus stability against every single-electron hop the
// charge model allows. The two-state model has no positive state, so its neutral sites only
// need v < mu_minus and its hops only move an electron from a negative to a neutral site.
[[nodiscard]] StabilityReport check_stability(const DBLayout& layout, const ChargeConfig& cfg, const PhysParams& p,
                                              ChargeModel mode = ChargeModel::three_state,
                                              const LatticeGeometry& geom = {});
[[nodiscard]] StabilityReport check_stability(const InteractionMatrix& w, const ChargeConfig& cfg,
                                              const PhysParams& p, ChargeModel mode = ChargeModel::three_state);

// Energy change when one electron moves from site `from` to site `to`, v being the local
// potentials of cfg. Hops that create or annihilate a +/- pair also pay or recover the gap
// between the two charge transition levels (mu_minus - mu_plus).
[[nodiscard]] double hop_energy_change(const InteractionMatrix& w, const ChargeConfig& cfg,
                                       const std::vector<double>& v, std::size_t from, std::size_t to,
                                       const PhysParams& p);

// Is charge n consistent with local potential v?
[[nodiscard]] bool population_consistent(Charge n, double v, const PhysParams& p,
                                         ChargeModel mode = ChargeModel::three_state);

struct GroundStateResult {
    double energy = 0.0;
    std::vector<ChargeConfig> configs;  // all degenerate minima, lexicographically sorted
    bool contains_positive = false;
    bool converged = true;
};

inline constexpr std::size_t kDefaultExhaustiveLimit = 16;
// Energies within this many eV of the minimum count as degenerate.
inline constexpr double kDegeneracyTolerance = 1e-9;

class SizingError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Exact ground states by enumerating the 2^N or 3^N charge configurations.
// Partial assignments whose population conditions can no longer be met are pruned.
[[nodiscard]] GroundStateResult exhaustive_ground_states(const DBLayout& layout, const PhysParams& p,
                                                         ChargeModel mode = ChargeModel::three_state,
                                                         std::size_t limit = kDefaultExhaustiveLimit,
                                                         const LatticeGeometry& geom = {});

struct AnnealSchedule {
    double initial_temperature = 1.0;  // eV
    double decay = 0.95;               // per sweep
    int sweeps = 120;
    int restarts = 6;

    void validate() const;

    friend bool operator==(const AnnealSchedule&, const AnnealSchedule&) = default;
};

// Simulated annealing over charge configurations. Each single-site or hop move is followed by
// relaxation to a population-stable configuration; Metropolis acceptance uses the energy plus a
// hop-instability penalty. Deterministic for fixed inputs and seed. Unconverged when no stable
// configuration was visited.
[[nodiscard]] GroundStateResult anneal_ground_state(const DBLayout& layout, const PhysParams& p,
                                                    const AnnealSchedule& schedule, std::uint64_t seed,
                                                    ChargeModel mode = ChargeModel::three_state,
                                                    const LatticeGeometry& geom = {});

}  // namespace sidb
