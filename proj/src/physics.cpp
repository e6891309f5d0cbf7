#include "sidb/physics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "sidb/random.hpp"

namespace sidb {

namespace {

// Slack applied to the interval pruning bounds so that rounding in the
// incremental updates never removes a feasible branch.
constexpr double kPruneSlack = 1e-9;
// Hop energy changes above -kHopTolerance count as non-negative.
constexpr double kHopTolerance = 1e-12;

void require_aligned(std::size_t sites, const ChargeConfig& cfg) {
    if (cfg.size() != sites) {
        throw std::invalid_argument("charge configuration has " + std::to_string(cfg.size()) +
                                    " entries for a layout of " + std::to_string(sites) + " sites");
    }
}

// Can an electron move from a site in state `from` to a site in state `to` within the model?
bool can_hop(Charge from, Charge to, ChargeModel mode) {
    if (mode == ChargeModel::two_state) return from == Charge::negative && to == Charge::neutral;
    return value(from) <= 0 && value(to) >= 0;
}

bool hop_stable(const InteractionMatrix& w, const ChargeConfig& cfg, const std::vector<double>& v,
                const PhysParams& p, ChargeModel mode) {
    const std::size_t n = cfg.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || !can_hop(cfg[i], cfg[j], mode)) continue;
            if (hop_energy_change(w, cfg, v, i, j, p) < -kHopTolerance) return false;
        }
    }
    return true;
}

// Keeps every configuration within kDegeneracyTolerance of the lowest energy seen.
class MinimumSet {
  public:
    void offer(const ChargeConfig& cfg, double energy) {
        if (configs_.empty() || energy < best_ - kDegeneracyTolerance) {
            best_ = energy;
            configs_.assign(1, cfg);
            energies_.assign(1, energy);
            return;
        }
        if (energy > best_ + kDegeneracyTolerance) return;
        if (std::find(configs_.begin(), configs_.end(), cfg) != configs_.end()) return;
        configs_.push_back(cfg);
        energies_.push_back(energy);
        if (energy < best_) {
            best_ = energy;
            prune();
        }
    }

    [[nodiscard]] bool empty() const { return configs_.empty(); }

    GroundStateResult result() && {
        GroundStateResult out;
        out.energy = best_;
        out.configs = std::move(configs_);
        std::sort(out.configs.begin(), out.configs.end());
        for (const auto& c : out.configs) {
            if (std::any_of(c.begin(), c.end(), [](Charge q) { return q == Charge::positive; })) {
                out.contains_positive = true;
            }
        }
        return out;
    }

  private:
    void prune() {
        std::size_t k = 0;
        for (std::size_t i = 0; i < configs_.size(); ++i) {
            if (energies_[i] <= best_ + kDegeneracyTolerance) {
                if (k != i) {
                    configs_[k] = std::move(configs_[i]);
                    energies_[k] = energies_[i];
                }
                ++k;
            }
        }
        configs_.resize(k);
        energies_.resize(k);
    }

    double best_ = 0.0;
    std::vector<ChargeConfig> configs_;
    std::vector<double> energies_;
};

std::vector<std::vector<Charge>> candidate_charges(const InteractionMatrix& w, const PhysParams& p,
                                                   ChargeModel mode) {
    // The lowest potential a site can see has every other site negative.
    std::vector<std::vector<Charge>> out(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        double min_v = 0.0;
        for (std::size_t j = 0; j < w.size(); ++j) min_v -= w(i, j);
        out[i].push_back(Charge::negative);
        if (min_v < p.mu_minus) out[i].push_back(Charge::neutral);
        if (mode == ChargeModel::three_state && min_v < p.mu_plus) out[i].push_back(Charge::positive);
    }
    return out;
}

class ExhaustiveSearch {
  public:
    ExhaustiveSearch(const InteractionMatrix& w, const PhysParams& p, ChargeModel mode)
        : w_(w), p_(p), mode_(mode), n_(w.size()), candidates_(candidate_charges(w, p, mode)), lo_(n_, 0.0), hi_(n_, 0.0),
          lo_val_(n_), hi_val_(n_), cfg_(n_, Charge::negative) {
        for (std::size_t j = 0; j < n_; ++j) {
            lo_val_[j] = value(candidates_[j].front());
            hi_val_[j] = lo_val_[j];
            for (Charge c : candidates_[j]) {
                lo_val_[j] = std::min(lo_val_[j], value(c));
                hi_val_[j] = std::max(hi_val_[j], value(c));
            }
        }
        for (std::size_t i = 0; i < n_; ++i) {
            for (std::size_t j = 0; j < n_; ++j) {
                lo_[i] += w_(i, j) * lo_val_[j];
                hi_[i] += w_(i, j) * hi_val_[j];
            }
        }
    }

    GroundStateResult run() && {
        descend(0);
        return std::move(minima_).result();
    }

  private:
    [[nodiscard]] bool could_hold(Charge c, std::size_t i) const {
        switch (c) {
            case Charge::negative: return hi_[i] + kPruneSlack >= p_.mu_minus;
            case Charge::neutral:
                return lo_[i] - kPruneSlack < p_.mu_minus &&
                       (mode_ == ChargeModel::two_state || hi_[i] + kPruneSlack >= p_.mu_plus);
            case Charge::positive: return lo_[i] - kPruneSlack < p_.mu_plus;
        }
        return false;
    }

    [[nodiscard]] bool feasible(std::size_t depth) const {
        for (std::size_t i = 0; i < depth; ++i) {
            if (!could_hold(cfg_[i], i)) return false;
        }
        for (std::size_t i = depth; i < n_; ++i) {
            if (std::none_of(candidates_[i].begin(), candidates_[i].end(),
                             [&](Charge c) { return could_hold(c, i); })) {
                return false;
            }
        }
        return true;
    }

    void assign(std::size_t k, int n, int sign) {
        const double* wk = w_.row(k);
        const double dlo = sign * (n - lo_val_[k]);
        const double dhi = sign * (hi_val_[k] - n);
        for (std::size_t i = 0; i < n_; ++i) {
            lo_[i] += wk[i] * dlo;
            hi_[i] -= wk[i] * dhi;
        }
    }

    void descend(std::size_t depth) {
        if (depth == n_) {
            leaf();
            return;
        }
        for (Charge c : candidates_[depth]) {
            cfg_[depth] = c;
            assign(depth, value(c), +1);
            if (feasible(depth + 1)) descend(depth + 1);
            assign(depth, value(c), -1);
        }
    }

    void leaf() {
        const auto v = local_potentials(w_, cfg_);
        for (std::size_t i = 0; i < n_; ++i) {
            if (!population_consistent(cfg_[i], v[i], p_, mode_)) return;
        }
        if (!hop_stable(w_, cfg_, v, p_, mode_)) return;
        minima_.offer(cfg_, config_energy(w_, cfg_));
    }

    const InteractionMatrix& w_;
    const PhysParams& p_;
    ChargeModel mode_;
    std::size_t n_;
    std::vector<std::vector<Charge>> candidates_;
    std::vector<double> lo_, hi_;
    std::vector<int> lo_val_, hi_val_;
    ChargeConfig cfg_;
    MinimumSet minima_;
};

// Total energy released by hops that would lower the energy (zero for hop-stable configurations).
double hop_violation(const InteractionMatrix& w, const ChargeConfig& cfg, const std::vector<double>& v,
                     const PhysParams& p, ChargeModel mode) {
    const std::size_t n = cfg.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || !can_hop(cfg[i], cfg[j], mode)) continue;
            const double de = hop_energy_change(w, cfg, v, i, j, p);
            if (de < -kHopTolerance) total -= de;
        }
    }
    return total;
}

// Drives a configuration to a population-stable fixed point by asynchronous updates:
// each visited site takes the charge its current local potential calls for.
class Relaxer {
  public:
    Relaxer(const InteractionMatrix& w, const PhysParams& p, ChargeModel mode)
        : w_(w), p_(p), mode_(mode), order_(w.size()) {
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    }

    void operator()(ChargeConfig& cfg, std::vector<double>& v, Rng& rng) {
        const std::size_t n = cfg.size();
        for (int pass = 0; pass < kMaxPasses; ++pass) {
            for (std::size_t k = n; k > 1; --k) std::swap(order_[k - 1], order_[rng.below(k)]);
            bool changed = false;
            for (std::size_t i : order_) {
                const Charge want = preferred(v[i]);
                if (want == cfg[i]) continue;
                const int delta = value(want) - value(cfg[i]);
                cfg[i] = want;
                const double* wi = w_.row(i);
                for (std::size_t j = 0; j < n; ++j) v[j] += wi[j] * delta;
                changed = true;
            }
            if (!changed) return;
        }
    }

  private:
    static constexpr int kMaxPasses = 64;

    [[nodiscard]] Charge preferred(double v) const {
        if (v >= p_.mu_minus) return Charge::negative;
        if (v >= p_.mu_plus || mode_ == ChargeModel::two_state) return Charge::neutral;
        return Charge::positive;
    }

    const InteractionMatrix& w_;
    const PhysParams& p_;
    ChargeModel mode_;
    std::vector<std::size_t> order_;
};

// Weight of the hop-stability violation relative to the configuration energy.
constexpr double kHopPenalty = 1.0;

}  // namespace

std::string to_string(const ChargeConfig& cfg) {
    std::string s;
    for (Charge c : cfg) s += c == Charge::negative ? '-' : c == Charge::neutral ? '0' : '+';
    return s;
}

void PhysParams::validate() const {
    if (!(eps_r > 0.0)) throw std::invalid_argument("eps_r must be positive");
    if (!(lambda_tf > 0.0)) throw std::invalid_argument("lambda_tf must be positive");
    if (!(k_coulomb > 0.0)) throw std::invalid_argument("k_coulomb must be positive");
    if (!(mu_plus < mu_minus)) throw std::invalid_argument("mu_plus must be below mu_minus");
    if (!(mu_minus < 0.0)) throw std::invalid_argument("mu_minus must be negative");
}

void AnnealSchedule::validate() const {
    if (!(initial_temperature > 0.0)) throw std::invalid_argument("anneal initial temperature must be positive");
    if (!(decay > 0.0 && decay <= 1.0)) throw std::invalid_argument("anneal decay must lie in (0, 1]");
    if (sweeps < 1 || restarts < 1) throw std::invalid_argument("anneal sweeps and restarts must be positive");
}

double pair_interaction(double d, const PhysParams& p) {
    if (!(d > 0.0)) throw std::invalid_argument("pair_interaction requires a positive distance");
    return (p.k_coulomb / p.eps_r) * std::exp(-d / p.lambda_tf) / d;
}

InteractionMatrix::InteractionMatrix(const DBLayout& layout, const PhysParams& p, const LatticeGeometry& geom)
    : n_(layout.size()), w_(n_ * n_, 0.0) {
    const auto sites = layout.sites();
    for (std::size_t i = 0; i < n_; ++i) {
        for (std::size_t j = i + 1; j < n_; ++j) {
            const double wij = pair_interaction(distance(sites[i], sites[j], geom), p);
            w_[i * n_ + j] = wij;
            w_[j * n_ + i] = wij;
        }
    }
}

double config_energy(const InteractionMatrix& w, const ChargeConfig& cfg) {
    require_aligned(w.size(), cfg);
    double e = 0.0;
    for (std::size_t i = 0; i < cfg.size(); ++i) {
        if (cfg[i] == Charge::neutral) continue;
        for (std::size_t j = i + 1; j < cfg.size(); ++j) {
            e += w(i, j) * value(cfg[i]) * value(cfg[j]);
        }
    }
    return e;
}

double config_energy(const DBLayout& layout, const ChargeConfig& cfg, const PhysParams& p,
                     const LatticeGeometry& geom) {
    require_aligned(layout.size(), cfg);
    return config_energy(InteractionMatrix(layout, p, geom), cfg);
}

std::vector<double> local_potentials(const InteractionMatrix& w, const ChargeConfig& cfg) {
    require_aligned(w.size(), cfg);
    std::vector<double> v(cfg.size(), 0.0);
    for (std::size_t j = 0; j < cfg.size(); ++j) {
        const int nj = value(cfg[j]);
        if (nj == 0) continue;
        const double* wj = w.row(j);
        for (std::size_t i = 0; i < cfg.size(); ++i) v[i] += wj[i] * nj;
    }
    return v;
}

double hop_energy_change(const InteractionMatrix& w, const ChargeConfig& cfg, const std::vector<double>& v,
                         std::size_t from, std::size_t to, const PhysParams& p) {
    double de = v[from] - v[to] - w(from, to);
    const double gap = p.mu_minus - p.mu_plus;
    if (cfg[from] == Charge::neutral && cfg[to] == Charge::neutral) de += gap;
    if (cfg[from] == Charge::negative && cfg[to] == Charge::positive) de -= gap;
    return de;
}

bool population_consistent(Charge n, double v, const PhysParams& p, ChargeModel mode) {
    if (mode == ChargeModel::two_state) {
        if (n == Charge::positive) return false;
        return n == Charge::negative ? v >= p.mu_minus : v < p.mu_minus;
    }
    switch (n) {
        case Charge::negative: return v >= p.mu_minus;
        case Charge::neutral: return v < p.mu_minus && v >= p.mu_plus;
        case Charge::positive: return v < p.mu_plus;
    }
    return false;
}

StabilityReport check_stability(const InteractionMatrix& w, const ChargeConfig& cfg, const PhysParams& p,
                                ChargeModel mode) {
    const auto v = local_potentials(w, cfg);
    StabilityReport report;
    for (std::size_t i = 0; i < cfg.size(); ++i) {
        if (!population_consistent(cfg[i], v[i], p, mode)) {
            report.population_ok = false;
            report.violating_sites.push_back(i);
        }
    }
    report.hop_ok = hop_stable(w, cfg, v, p, mode);
    return report;
}

StabilityReport check_stability(const DBLayout& layout, const ChargeConfig& cfg, const PhysParams& p,
                                ChargeModel mode, const LatticeGeometry& geom) {
    require_aligned(layout.size(), cfg);
    return check_stability(InteractionMatrix(layout, p, geom), cfg, p, mode);
}

GroundStateResult exhaustive_ground_states(const DBLayout& layout, const PhysParams& p, ChargeModel mode,
                                           std::size_t limit, const LatticeGeometry& geom) {
    if (layout.size() > limit) {
        throw SizingError("exhaustive ground-state search refused: " + std::to_string(layout.size()) +
                          " sites exceeds the limit of " + std::to_string(limit));
    }
    if (layout.empty()) {
        GroundStateResult out;
        out.configs.emplace_back();
        return out;
    }
    const InteractionMatrix w(layout, p, geom);
    auto result = ExhaustiveSearch(w, p, mode).run();
    if (result.configs.empty()) result.converged = false;
    return result;
}

GroundStateResult anneal_ground_state(const DBLayout& layout, const PhysParams& p, const AnnealSchedule& schedule,
                                      std::uint64_t seed, ChargeModel mode, const LatticeGeometry& geom) {
    schedule.validate();
    if (layout.empty()) throw std::invalid_argument("anneal_ground_state requires a nonempty layout");

    const InteractionMatrix w(layout, p, geom);
    const std::size_t n = layout.size();
    const auto candidates = candidate_charges(w, p, mode);
    Rng rng(seed);
    MinimumSet minima;
    Relaxer relax(w, p, mode);

    auto objective = [&](const ChargeConfig& c, const std::vector<double>& v) {
        return config_energy(w, c) + kHopPenalty * hop_violation(w, c, v, p, mode);
    };
    auto record = [&](const ChargeConfig& c, const std::vector<double>& v) {
        if (hop_violation(w, c, v, p, mode) == 0.0 && check_stability(w, c, p, mode).stable()) {
            minima.offer(c, config_energy(w, c));
        }
    };

    ChargeConfig cur(n), trial(n);
    std::vector<double> v, tv;
    for (int restart = 0; restart < schedule.restarts; ++restart) {
        for (std::size_t i = 0; i < n; ++i) cur[i] = candidates[i][rng.below(candidates[i].size())];
        v = local_potentials(w, cur);
        relax(cur, v, rng);
        record(cur, v);
        double obj = objective(cur, v);
        double temperature = schedule.initial_temperature;

        for (int sweep = 0; sweep < schedule.sweeps; ++sweep) {
            for (std::size_t step = 0; step < n; ++step) {
                trial = cur;
                const std::size_t i = rng.below(n);
                if (rng.bernoulli(0.5)) {
                    const auto& options = candidates[i];
                    if (options.size() < 2) continue;
                    Charge next = cur[i];
                    while (next == cur[i]) next = options[rng.below(options.size())];
                    trial[i] = next;
                } else {
                    const std::size_t j = rng.below(n);
                    if (i == j || !can_hop(cur[i], cur[j], mode)) continue;
                    trial[i] = static_cast<Charge>(value(cur[i]) + 1);
                    trial[j] = static_cast<Charge>(value(cur[j]) - 1);
                }
                tv = local_potentials(w, trial);
                relax(trial, tv, rng);
                const double tobj = objective(trial, tv);
                const double delta = tobj - obj;
                if (delta <= 0.0 || rng.uniform() < std::exp(-delta / temperature)) {
                    cur.swap(trial);
                    v.swap(tv);
                    obj = tobj;
                    record(cur, v);
                }
            }
            temperature *= schedule.decay;
        }
    }

    if (minima.empty()) {
        GroundStateResult out;
        out.converged = false;
        return out;
    }
    return std::move(minima).result();
}

}  // namespace sidb
