#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sidb/lattice.hpp"
#include "sidb/physics.hpp"

namespace sidb {

struct TruthRow {
    std::vector<int> inputs;   // bits, input port order
    std::vector<int> outputs;  // bits, output port order

    friend bool operator==(const TruthRow&, const TruthRow&) = default;
};

class TruthTable {
  public:
    TruthTable() = default;
    // Rows must cover every input pattern exactly once; they are stored in ascending
    // input order (input 0 is the most significant bit).
    TruthTable(int n_inputs, int n_outputs, std::vector<TruthRow> rows);

    // Parses rows written as "01->1" (or with the arrow character U+2192).
    static TruthTable parse(const std::vector<std::string>& rows);
    static TruthTable preset(std::string_view name);
    static std::vector<std::string> preset_names();

    [[nodiscard]] int n_inputs() const { return n_inputs_; }
    [[nodiscard]] int n_outputs() const { return n_outputs_; }
    [[nodiscard]] std::size_t row_count() const { return rows_.size(); }
    [[nodiscard]] const TruthRow& row(std::size_t i) const { return rows_.at(i); }
    [[nodiscard]] const std::vector<TruthRow>& rows() const { return rows_; }

    [[nodiscard]] std::vector<std::string> to_strings() const;

    friend bool operator==(const TruthTable&, const TruthTable&) = default;

  private:
    int n_inputs_ = 0;
    int n_outputs_ = 0;
    std::vector<TruthRow> rows_;
};

// Binary-dot-logic output pair: the bit is 1 when the charge sits on dot_one.
struct OutputPort {
    LatticeSite dot_one;
    LatticeSite dot_zero;

    friend bool operator==(const OutputPort&, const OutputPort&) = default;
};

// Perturber DBs that are present exactly when the input bit is 1.
struct InputPort {
    std::vector<LatticeSite> perturbers;

    friend bool operator==(const InputPort&, const InputPort&) = default;
};

// Rectangular design area. Rows of the canvas are atom lines (2*row + sub), so a canvas
// of height H spans H lines; sites are indexed row-major from the top-left corner.
struct Canvas {
    int col_min = 0;
    int col_max = 0;
    int line_min = 0;
    int line_max = 0;

    [[nodiscard]] int width() const { return col_max - col_min + 1; }
    [[nodiscard]] int height() const { return line_max - line_min + 1; }
    [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(width() * height()); }
    [[nodiscard]] bool contains(const LatticeSite& s) const {
        return s.col >= col_min && s.col <= col_max && s.line() >= line_min && s.line() <= line_max;
    }
    [[nodiscard]] LatticeSite site(std::size_t index) const;
    // Throws std::out_of_range for sites outside the canvas.
    [[nodiscard]] std::size_t index(const LatticeSite& s) const;
    // Reflection across the vertical center axis.
    [[nodiscard]] LatticeSite mirror(const LatticeSite& s) const { return {col_min + col_max - s.col, s.row, s.sub}; }

    friend bool operator==(const Canvas&, const Canvas&) = default;
};

struct GateTask {
    std::string name;
    DBLayout scaffold;
    std::vector<InputPort> inputs;
    std::vector<OutputPort> outputs;
    Canvas canvas;
    int max_placements = 15;
    TruthTable table;

    // Every fixed site: scaffold, all perturbers, all output dots.
    [[nodiscard]] DBLayout fixed_sites() const;
    // Throws std::invalid_argument naming the offending site or field.
    void validate(const LatticeGeometry& geom = {}) const;

    friend bool operator==(const GateTask&, const GateTask&) = default;
};

// The reduced OR-gate task used throughout the tests and the default config.
[[nodiscard]] GateTask or_gate_task();
// Same scaffold with another two-input, one-output table.
[[nodiscard]] GateTask two_input_task(std::string_view table_preset);
[[nodiscard]] GateTask half_adder_task();

class AssemblyError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

[[nodiscard]] DBLayout assemble_row_layout(const GateTask& task, const DBLayout& placed, std::size_t row_index,
                                           const LatticeGeometry& geom = {});

enum class OutputBit { zero, one, ambiguous };

[[nodiscard]] OutputBit read_output(const OutputPort& port, const DBLayout& layout, const ChargeConfig& cfg);

enum class SolverKind { exhaustive, anneal, automatic };

[[nodiscard]] std::string to_string(SolverKind kind);
[[nodiscard]] SolverKind solver_kind_from_string(std::string_view s);

struct SolverConfig {
    SolverKind kind = SolverKind::automatic;  // exhaustive within the limit, annealing beyond it
    ChargeModel model = ChargeModel::three_state;
    std::size_t exhaustive_limit = kDefaultExhaustiveLimit;
    AnnealSchedule schedule{};
    std::uint64_t seed = 0;

    friend bool operator==(const SolverConfig&, const SolverConfig&) = default;
};

enum class RowCounting { rows, row_outputs };

enum class RowFailure { none, unconverged, positive_charge, ambiguous_output, wrong_output };

[[nodiscard]] std::string to_string(RowFailure f);

struct RowVerdict {
    RowFailure failure = RowFailure::none;
    double energy = 0.0;
    std::vector<int> outputs_ok;  // per output port, 1 when that port is correct in every ground state

    [[nodiscard]] bool pass() const { return failure == RowFailure::none; }
};

struct EvalResult {
    int satisfied_rows = 0;
    int satisfied_outputs = 0;  // (row, output) pairs that are correct
    std::vector<RowVerdict> per_row;
    bool working = false;

    // The satisfied count in the given counting mode.
    [[nodiscard]] int satisfied(RowCounting mode) const {
        return mode == RowCounting::rows ? satisfied_rows : satisfied_outputs;
    }
};

// Ground-state solver with a memo keyed on the assembled layout. Safe for concurrent use.
class GroundStateSolver {
  public:
    GroundStateSolver(PhysParams params, SolverConfig config, LatticeGeometry geom = {});

    [[nodiscard]] GroundStateResult solve(const DBLayout& layout);

    [[nodiscard]] std::uint64_t solves() const { return solves_.load(); }
    [[nodiscard]] std::uint64_t cache_hits() const { return hits_.load(); }
    [[nodiscard]] const PhysParams& params() const { return params_; }
    [[nodiscard]] const SolverConfig& config() const { return config_; }
    [[nodiscard]] const LatticeGeometry& geometry() const { return geom_; }

  private:
    [[nodiscard]] GroundStateResult compute(const DBLayout& layout) const;

    PhysParams params_;
    SolverConfig config_;
    LatticeGeometry geom_;
    std::mutex mutex_;
    std::map<std::vector<LatticeSite>, GroundStateResult> cache_;
    std::atomic<std::uint64_t> solves_{0};
    std::atomic<std::uint64_t> hits_{0};
};

[[nodiscard]] EvalResult evaluate_layout(const GateTask& task, const DBLayout& placed, GroundStateSolver& solver);

[[nodiscard]] EvalResult evaluate_layout(const GateTask& task, const DBLayout& placed, SolverKind kind,
                                         const PhysParams& p);

}  // namespace sidb
