#pragma once

#include <array>
#include <cstdint>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sidb/logic.hpp"
#include "sidb/tensor.hpp"

namespace sidb {

using Digest = std::array<std::uint8_t, 32>;

[[nodiscard]] std::string to_hex(const Digest& d);
[[nodiscard]] Digest digest_from_hex(const std::string& hex);

// SHA-256 over the canonical (row, col, sub)-sorted site list, each site written as "col,row,sub;".
// The empty layout hashes the empty string: e3b0c442...b855.
[[nodiscard]] Digest canonical_digest(const DBLayout& placed);

struct RewardParams {
    double row_gain = 0.4;
    double row_loss = -0.4;
    double step_cost = -0.75;
    double win = 1.0;
    double clamp_min = -1.0;
    double clamp_max = 1.0;
    RowCounting counting = RowCounting::rows;

    void validate() const;

    friend bool operator==(const RewardParams&, const RewardParams&) = default;
};

// Reward of one placement: row_gain / rows per gained row, row_loss / rows per lost row,
// step_cost / max_placements, plus win for a new working layout, clamped to the bounds.
[[nodiscard]] double step_reward(const RewardParams& rp, int delta, int rows, int max_placements, bool new_solution);

struct SolutionRecord {
    Digest digest{};
    DBLayout layout;
    long episode = -1;
    int step = -1;
    std::vector<double> row_energies;
};

// Set of discovered working layouts. Novelty check and insertion form one atomic operation.
class SolutionRegistry {
  public:
    // True when the digest was new and the record has been stored.
    bool try_insert(SolutionRecord record);
    [[nodiscard]] bool contains(const Digest& d) const;
    [[nodiscard]] std::size_t size() const;
    [[nodiscard]] std::vector<SolutionRecord> records() const;  // insertion order

  private:
    mutable std::mutex mutex_;
    std::set<Digest> digests_;
    std::vector<SolutionRecord> records_;
};

struct EnvState {
    DBLayout placed;
    int t = 0;
    int satisfied = 0;
    std::vector<std::uint8_t> mask;  // valid_action_mask of this state
};

struct StepInfo {
    int delta = 0;
    bool working = false;
    bool new_solution = false;
    bool known_solution = false;
    bool budget_exhausted = false;
    bool canvas_exhausted = false;
    EvalResult eval;
};

struct StepResult {
    EnvState next;
    double reward = 0.0;
    bool terminal = false;
    StepInfo info;
};

// Placement environment over one gate task. The solver is shared so its cache spans episodes.
class Environment {
  public:
    Environment(GateTask task, GroundStateSolver& solver, RewardParams reward = {});

    [[nodiscard]] const GateTask& task() const { return task_; }
    [[nodiscard]] const RewardParams& reward_params() const { return reward_; }
    [[nodiscard]] std::size_t action_count() const { return task_.canvas.size(); }
    // R in the reward formulas: truth-table rows, or (row, output) pairs under per-output counting.
    [[nodiscard]] int row_count() const;

    [[nodiscard]] EnvState reset() const;
    [[nodiscard]] std::vector<std::uint8_t> valid_action_mask(const EnvState& state) const;
    // Throws std::logic_error for a masked-out action or a finished episode.
    [[nodiscard]] StepResult step(const EnvState& state, std::size_t action, SolutionRegistry& registry,
                                  long episode = -1) const;

    // Shape (3, H + 2, W + 2): channel 0 fixed sites clamped onto a one-site frame around the canvas,
    // channel 1 placed DBs, channel 2 the valid-action mask. Canvas cell (line, col) maps to (1 + y, 1 + x).
    [[nodiscard]] StateTensor encode_state(const EnvState& state) const;

    [[nodiscard]] int satisfied_count(const DBLayout& placed) const;

  private:
    [[nodiscard]] int count(const EvalResult& r) const { return r.satisfied(reward_.counting); }

    GateTask task_;
    GroundStateSolver& solver_;
    RewardParams reward_;
    std::vector<std::uint8_t> base_mask_;
    std::vector<std::vector<std::size_t>> neighbours_;  // canvas indices within the adjacency cutoff
    StateTensor frame_;
};

}  // namespace sidb
