#include "sidb/env.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sidb {

std::string to_hex(const Digest& d) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (auto b : d) {
        out.push_back(kHex[b >> 4U]);
        out.push_back(kHex[b & 15U]);
    }
    return out;
}

Digest digest_from_hex(const std::string& hex) {
    if (hex.size() != 64) throw std::invalid_argument("digest must be 64 hex characters");
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw std::invalid_argument(std::string("invalid hex character '") + c + "' in digest");
    };
    Digest d{};
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) * 16 + nibble(hex[2 * i + 1]));
    }
    return d;
}

Digest canonical_digest(const DBLayout& placed) {
    std::string text;
    for (const auto& s : placed) {
        text += std::to_string(s.col) + ',' + std::to_string(s.row) + ',' + std::to_string(s.sub) + ';';
    }
    Digest d{};
    unsigned int len = 0;
    if (EVP_Digest(text.data(), text.size(), d.data(), &len, EVP_sha256(), nullptr) != 1 || len != d.size()) {
        throw std::runtime_error("SHA-256 computation failed");
    }
    return d;
}

void RewardParams::validate() const {
    for (double v : {row_gain, row_loss, step_cost, win, clamp_min, clamp_max}) {
        if (!std::isfinite(v)) throw std::invalid_argument("reward parameters must be finite");
    }
    if (clamp_min >= clamp_max) throw std::invalid_argument("reward clamp bounds must satisfy min < max");
}

double step_reward(const RewardParams& rp, int delta, int rows, int max_placements, bool new_solution) {
    if (rows < 1 || max_placements < 1) throw std::invalid_argument("rows and max_placements must be positive");
    double r = delta >= 0 ? delta * rp.row_gain / rows : -delta * rp.row_loss / rows;
    r += rp.step_cost / max_placements;
    if (new_solution) r += rp.win;
    return std::clamp(r, rp.clamp_min, rp.clamp_max);
}

bool SolutionRegistry::try_insert(SolutionRecord record) {
    std::lock_guard lock(mutex_);
    if (!digests_.insert(record.digest).second) return false;
    records_.push_back(std::move(record));
    return true;
}

bool SolutionRegistry::contains(const Digest& d) const {
    std::lock_guard lock(mutex_);
    return digests_.count(d) > 0;
}

std::size_t SolutionRegistry::size() const {
    std::lock_guard lock(mutex_);
    return records_.size();
}

std::vector<SolutionRecord> SolutionRegistry::records() const {
    std::lock_guard lock(mutex_);
    return records_;
}

Environment::Environment(GateTask task, GroundStateSolver& solver, RewardParams reward)
    : task_(std::move(task)), solver_(solver), reward_(reward) {
    const auto& geom = solver_.geometry();
    task_.validate(geom);
    reward_.validate();
    const auto& canvas = task_.canvas;
    const std::size_t n = canvas.size();
    const DBLayout fixed = task_.fixed_sites();

    base_mask_.assign(n, 1);
    neighbours_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto s = canvas.site(i);
        for (const auto& f : fixed) {
            if (is_adjacent(s, f, geom)) base_mask_[i] = 0;
        }
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i && is_adjacent(s, canvas.site(j), geom)) neighbours_[i].push_back(j);
        }
    }

    frame_ = StateTensor(3, canvas.height() + 2, canvas.width() + 2);
    for (const auto& f : fixed) {
        const int y = std::clamp(f.line() - canvas.line_min + 1, 0, canvas.height() + 1);
        const int x = std::clamp(f.col - canvas.col_min + 1, 0, canvas.width() + 1);
        frame_.at(0, y, x) = 1.0;
    }
}

int Environment::row_count() const {
    const int rows = static_cast<int>(task_.table.row_count());
    return reward_.counting == RowCounting::rows ? rows : rows * task_.table.n_outputs();
}

int Environment::satisfied_count(const DBLayout& placed) const {
    try {
        return count(evaluate_layout(task_, placed, solver_));
    } catch (const SizingError&) {
        return 0;
    }
}

EnvState Environment::reset() const {
    EnvState s;
    s.satisfied = satisfied_count(s.placed);
    s.mask = base_mask_;
    return s;
}

std::vector<std::uint8_t> Environment::valid_action_mask(const EnvState& state) const {
    std::vector<std::uint8_t> mask = base_mask_;
    for (const auto& s : state.placed) {
        const std::size_t i = task_.canvas.index(s);
        mask[i] = 0;
        for (std::size_t j : neighbours_[i]) mask[j] = 0;
    }
    return mask;
}

StepResult Environment::step(const EnvState& state, std::size_t action, SolutionRegistry& registry,
                             long episode) const {
    if (state.t >= task_.max_placements) throw std::logic_error("step called on a finished episode");
    if (action >= action_count() || !state.mask.at(action)) {
        throw std::logic_error("action " + std::to_string(action) + " is not a valid placement");
    }
    StepResult out;
    EnvState& next = out.next;
    next.placed = state.placed.with(task_.canvas.site(action));
    next.t = state.t + 1;
    next.mask = state.mask;
    next.mask[action] = 0;
    for (std::size_t j : neighbours_[action]) next.mask[j] = 0;

    StepInfo& info = out.info;
    try {
        info.eval = evaluate_layout(task_, next.placed, solver_);
    } catch (const SizingError&) {
        // Rows the solver refuses to size count as unsatisfied.
        info.eval = EvalResult{};
        info.eval.per_row.assign(task_.table.row_count(), RowVerdict{RowFailure::unconverged, 0.0, {}});
    }
    next.satisfied = count(info.eval);
    info.delta = next.satisfied - state.satisfied;
    info.working = info.eval.working;

    if (info.working) {
        SolutionRecord record;
        record.digest = canonical_digest(next.placed);
        record.layout = next.placed;
        record.episode = episode;
        record.step = next.t;
        for (const auto& v : info.eval.per_row) record.row_energies.push_back(v.energy);
        info.new_solution = registry.try_insert(std::move(record));
        info.known_solution = !info.new_solution;
    }
    if (info.new_solution) {
        out.terminal = true;
    } else if (next.t >= task_.max_placements) {
        info.budget_exhausted = true;
        out.terminal = true;
    } else if (std::none_of(next.mask.begin(), next.mask.end(), [](std::uint8_t m) { return m != 0; })) {
        info.canvas_exhausted = true;
        out.terminal = true;
    }
    out.reward = step_reward(reward_, info.delta, row_count(), task_.max_placements, info.new_solution);
    return out;
}

StateTensor Environment::encode_state(const EnvState& state) const {
    StateTensor x = frame_;
    const auto& canvas = task_.canvas;
    for (const auto& s : state.placed) x.at(1, s.line() - canvas.line_min + 1, s.col - canvas.col_min + 1) = 1.0;
    const int w = canvas.width();
    for (std::size_t i = 0; i < state.mask.size(); ++i) {
        if (state.mask[i]) x.at(2, static_cast<int>(i) / w + 1, static_cast<int>(i) % w + 1) = 1.0;
    }
    return x;
}

}  // namespace sidb
