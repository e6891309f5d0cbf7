#include "sidb/logic.hpp"

#include <algorithm>
#include <stdexcept>

#include "sidb/random.hpp"

namespace sidb {

namespace {

std::vector<int> bits_of(std::size_t value, int width) {
    std::vector<int> bits(static_cast<std::size_t>(width));
    for (int k = 0; k < width; ++k) bits[static_cast<std::size_t>(width - 1 - k)] = (value >> k) & 1U;
    return bits;
}

std::size_t code_of(const std::vector<int>& bits) {
    std::size_t v = 0;
    for (int b : bits) v = (v << 1U) | static_cast<std::size_t>(b);
    return v;
}

std::vector<int> parse_bits(std::string_view s, const std::string& row) {
    std::vector<int> bits;
    for (char c : s) {
        if (c == '0' || c == '1') {
            bits.push_back(c - '0');
        } else if (c != ' ' && c != '_') {
            throw std::invalid_argument("truth table row '" + row + "': unexpected character '" + std::string(1, c) + "'");
        }
    }
    return bits;
}

std::uint64_t layout_fingerprint(const DBLayout& layout) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t x) {
        h ^= x;
        h *= 0x100000001b3ULL;
    };
    for (const auto& s : layout) {
        mix(static_cast<std::uint32_t>(s.col));
        mix(static_cast<std::uint32_t>(s.row));
        mix(static_cast<std::uint32_t>(s.sub));
    }
    return h;
}

}  // namespace

TruthTable::TruthTable(int n_inputs, int n_outputs, std::vector<TruthRow> rows)
    : n_inputs_(n_inputs), n_outputs_(n_outputs), rows_(std::move(rows)) {
    if (n_inputs < 1 || n_outputs < 1) throw std::invalid_argument("truth table needs at least one input and output");
    if (n_inputs > 16) throw std::invalid_argument("truth table has too many inputs");
    const std::size_t expected = std::size_t{1} << n_inputs;
    if (rows_.size() != expected) {
        throw std::invalid_argument("truth table with " + std::to_string(n_inputs) + " inputs needs " +
                                    std::to_string(expected) + " rows, got " + std::to_string(rows_.size()));
    }
    std::vector<bool> seen(expected, false);
    for (const auto& r : rows_) {
        if (r.inputs.size() != static_cast<std::size_t>(n_inputs) ||
            r.outputs.size() != static_cast<std::size_t>(n_outputs)) {
            throw std::invalid_argument("truth table row has the wrong number of bits");
        }
        for (int b : r.inputs) if (b != 0 && b != 1) throw std::invalid_argument("truth table bits must be 0 or 1");
        for (int b : r.outputs) if (b != 0 && b != 1) throw std::invalid_argument("truth table bits must be 0 or 1");
        const auto code = code_of(r.inputs);
        if (seen[code]) throw std::invalid_argument("truth table repeats an input pattern");
        seen[code] = true;
    }
    std::sort(rows_.begin(), rows_.end(),
              [](const TruthRow& a, const TruthRow& b) { return code_of(a.inputs) < code_of(b.inputs); });
}

TruthTable TruthTable::parse(const std::vector<std::string>& rows) {
    std::vector<TruthRow> parsed;
    int n_in = -1, n_out = -1;
    for (const auto& row : rows) {
        std::size_t pos = row.find("->");
        std::size_t len = 2;
        if (pos == std::string::npos) {
            pos = row.find("→");
            len = std::string_view("→").size();
        }
        if (pos == std::string::npos) throw std::invalid_argument("truth table row '" + row + "' lacks '->'");
        TruthRow r{parse_bits(std::string_view(row).substr(0, pos), row),
                   parse_bits(std::string_view(row).substr(pos + len), row)};
        if (n_in < 0) {
            n_in = static_cast<int>(r.inputs.size());
            n_out = static_cast<int>(r.outputs.size());
        }
        parsed.push_back(std::move(r));
    }
    if (parsed.empty()) throw std::invalid_argument("truth table has no rows");
    return TruthTable(n_in, n_out, std::move(parsed));
}

std::vector<std::string> TruthTable::preset_names() {
    return {"or", "and", "nand", "nor", "xor", "xnor", "half_adder"};
}

TruthTable TruthTable::preset(std::string_view name) {
    auto two_input = [](auto fn) {
        std::vector<TruthRow> rows;
        for (std::size_t code = 0; code < 4; ++code) {
            const auto in = bits_of(code, 2);
            rows.push_back({in, {fn(in[0], in[1]) ? 1 : 0}});
        }
        return TruthTable(2, 1, std::move(rows));
    };
    if (name == "or") return two_input([](int a, int b) { return a | b; });
    if (name == "and") return two_input([](int a, int b) { return a & b; });
    if (name == "nand") return two_input([](int a, int b) { return !(a & b); });
    if (name == "nor") return two_input([](int a, int b) { return !(a | b); });
    if (name == "xor") return two_input([](int a, int b) { return a ^ b; });
    if (name == "xnor") return two_input([](int a, int b) { return !(a ^ b); });
    if (name == "half_adder") {
        std::vector<TruthRow> rows;
        for (std::size_t code = 0; code < 4; ++code) {
            const auto in = bits_of(code, 2);
            rows.push_back({in, {in[0] ^ in[1], in[0] & in[1]}});  // sum, carry
        }
        return TruthTable(2, 2, std::move(rows));
    }
    throw std::invalid_argument("unknown truth table preset '" + std::string(name) + "'");
}

std::vector<std::string> TruthTable::to_strings() const {
    std::vector<std::string> out;
    for (const auto& r : rows_) {
        std::string s;
        for (int b : r.inputs) s += static_cast<char>('0' + b);
        s += "->";
        for (int b : r.outputs) s += static_cast<char>('0' + b);
        out.push_back(std::move(s));
    }
    return out;
}

LatticeSite Canvas::site(std::size_t index) const {
    if (index >= size()) throw std::out_of_range("canvas index out of range");
    const int w = width();
    const int line = line_min + static_cast<int>(index) / w;
    const int col = col_min + static_cast<int>(index) % w;
    return LatticeSite::from_line(col, line);
}

std::size_t Canvas::index(const LatticeSite& s) const {
    if (!contains(s)) throw std::out_of_range("site " + s.to_string() + " lies outside the canvas");
    return static_cast<std::size_t>((s.line() - line_min) * width() + (s.col - col_min));
}

DBLayout GateTask::fixed_sites() const {
    std::vector<LatticeSite> sites(scaffold.begin(), scaffold.end());
    for (const auto& in : inputs) sites.insert(sites.end(), in.perturbers.begin(), in.perturbers.end());
    for (const auto& out : outputs) {
        sites.push_back(out.dot_one);
        sites.push_back(out.dot_zero);
    }
    return DBLayout(std::move(sites));
}

void GateTask::validate(const LatticeGeometry& geom) const {
    geom.validate();
    if (canvas.col_max < canvas.col_min || canvas.line_max < canvas.line_min) {
        throw std::invalid_argument("canvas bounds are inverted");
    }
    if (canvas.width() < 3 || canvas.height() < 3) throw std::invalid_argument("canvas must be at least 3x3 sites");
    if (max_placements < 1) throw std::invalid_argument("max_placements must be at least 1");
    if (static_cast<int>(inputs.size()) != table.n_inputs()) {
        throw std::invalid_argument("task has " + std::to_string(inputs.size()) + " input ports but the table has " +
                                    std::to_string(table.n_inputs()) + " inputs");
    }
    if (static_cast<int>(outputs.size()) != table.n_outputs()) {
        throw std::invalid_argument("task has " + std::to_string(outputs.size()) + " output ports but the table has " +
                                    std::to_string(table.n_outputs()) + " outputs");
    }
    for (const auto& in : inputs) {
        if (in.perturbers.empty()) throw std::invalid_argument("input port without perturbers");
    }
    for (const auto& out : outputs) {
        if (out.dot_one == out.dot_zero) throw std::invalid_argument("output port dots coincide at " + out.dot_one.to_string());
    }
    // Throws on any overlap between scaffold, perturbers and output dots.
    const DBLayout fixed = fixed_sites();
    for (const auto& s : fixed) {
        if (canvas.contains(s)) throw std::invalid_argument("canvas overlaps fixed site " + s.to_string());
    }
}

namespace {

GateTask two_input_scaffold() {
    GateTask t;
    // Perturbers sit above the canvas corners; the output pair and its
    // biasing DB hang below the canvas on the center axis (column 3).
    t.canvas = Canvas{0, 6, 2, 6};
    t.inputs = {InputPort{{LatticeSite{2, -1, 1}}}, InputPort{{LatticeSite{4, -1, 1}}}};
    t.outputs = {OutputPort{LatticeSite{3, 5, 1}, LatticeSite{3, 4, 1}}};
    t.scaffold = DBLayout({LatticeSite{3, 8, 1}});
    t.max_placements = 8;
    return t;
}

}  // namespace

GateTask or_gate_task() { return two_input_task("or"); }

GateTask two_input_task(std::string_view table_preset) {
    GateTask t = two_input_scaffold();
    t.name = std::string(table_preset);
    t.table = TruthTable::preset(table_preset);
    if (t.table.n_outputs() != 1) throw std::invalid_argument("two_input_task needs a single-output table");
    return t;
}

GateTask half_adder_task() {
    GateTask t;
    t.name = "half_adder";
    t.canvas = Canvas{0, 12, 2, 9};
    t.inputs = {InputPort{{LatticeSite{1, -1, 0}}}, InputPort{{LatticeSite{11, -1, 0}}}};
    t.outputs = {OutputPort{LatticeSite{2, 7, 0}, LatticeSite{2, 6, 0}},
                 OutputPort{LatticeSite{10, 7, 0}, LatticeSite{10, 6, 0}}};
    t.scaffold = DBLayout({LatticeSite{2, 9, 0}, LatticeSite{10, 9, 0}});
    t.max_placements = 15;
    t.table = TruthTable::preset("half_adder");
    return t;
}

DBLayout assemble_row_layout(const GateTask& task, const DBLayout& placed, std::size_t row_index,
                             const LatticeGeometry& geom) {
    if (row_index >= task.table.row_count()) throw std::out_of_range("truth table row index out of range");
    for (const auto& s : placed) {
        if (!task.canvas.contains(s)) throw AssemblyError("placed site " + s.to_string() + " lies outside the canvas");
    }
    std::vector<LatticeSite> fixed(task.scaffold.begin(), task.scaffold.end());
    const auto& row = task.table.row(row_index);
    for (std::size_t k = 0; k < task.inputs.size(); ++k) {
        if (row.inputs[k] == 1) {
            fixed.insert(fixed.end(), task.inputs[k].perturbers.begin(), task.inputs[k].perturbers.end());
        }
    }
    for (const auto& out : task.outputs) {
        fixed.push_back(out.dot_one);
        fixed.push_back(out.dot_zero);
    }
    const DBLayout fixed_layout(std::move(fixed));
    for (const auto& s : placed) {
        for (const auto& f : task.fixed_sites()) {
            if (s == f) throw AssemblyError("placed site " + s.to_string() + " overlaps a fixed site");
            if (is_adjacent(s, f, geom)) throw AssemblyError("placed site " + s.to_string() + " is adjacent to " + f.to_string());
        }
    }
    try {
        return fixed_layout.merged(placed);
    } catch (const std::invalid_argument& e) {
        throw AssemblyError(e.what());
    }
}

OutputBit read_output(const OutputPort& port, const DBLayout& layout, const ChargeConfig& cfg) {
    const std::size_t i1 = layout.index_of(port.dot_one);
    const std::size_t i0 = layout.index_of(port.dot_zero);
    if (i1 == layout.size() || i0 == layout.size()) {
        throw std::invalid_argument("output port dots are missing from the layout");
    }
    if (cfg.size() != layout.size()) throw std::invalid_argument("charge configuration does not match the layout");
    if (cfg[i1] == Charge::negative && cfg[i0] == Charge::neutral) return OutputBit::one;
    if (cfg[i0] == Charge::negative && cfg[i1] == Charge::neutral) return OutputBit::zero;
    return OutputBit::ambiguous;
}

std::string to_string(SolverKind kind) {
    switch (kind) {
        case SolverKind::exhaustive: return "exhaustive";
        case SolverKind::anneal: return "anneal";
        case SolverKind::automatic: return "auto";
    }
    return "?";
}

SolverKind solver_kind_from_string(std::string_view s) {
    if (s == "exhaustive") return SolverKind::exhaustive;
    if (s == "anneal") return SolverKind::anneal;
    if (s == "auto") return SolverKind::automatic;
    throw std::invalid_argument("unknown solver '" + std::string(s) + "' (expected exhaustive, anneal or auto)");
}

std::string to_string(RowFailure f) {
    switch (f) {
        case RowFailure::none: return "pass";
        case RowFailure::unconverged: return "unconverged";
        case RowFailure::positive_charge: return "positive charge";
        case RowFailure::ambiguous_output: return "ambiguous output";
        case RowFailure::wrong_output: return "wrong output";
    }
    return "?";
}

GroundStateSolver::GroundStateSolver(PhysParams params, SolverConfig config, LatticeGeometry geom)
    : params_(params), config_(config), geom_(geom) {
    params_.validate();
    config_.schedule.validate();
}

GroundStateResult GroundStateSolver::compute(const DBLayout& layout) const {
    const bool exhaustive = config_.kind == SolverKind::exhaustive ||
                            (config_.kind == SolverKind::automatic && layout.size() <= config_.exhaustive_limit);
    if (exhaustive) return exhaustive_ground_states(layout, params_, config_.model, config_.exhaustive_limit, geom_);
    if (layout.empty()) return exhaustive_ground_states(layout, params_, config_.model, config_.exhaustive_limit, geom_);
    // Seeding from the layout keeps results independent of evaluation order.
    const auto seed = derive_seed(config_.seed, layout_fingerprint(layout));
    return anneal_ground_state(layout, params_, config_.schedule, seed, config_.model, geom_);
}

GroundStateResult GroundStateSolver::solve(const DBLayout& layout) {
    std::vector<LatticeSite> key(layout.begin(), layout.end());
    {
        std::lock_guard lock(mutex_);
        if (auto it = cache_.find(key); it != cache_.end()) {
            ++hits_;
            return it->second;
        }
    }
    auto result = compute(layout);
    ++solves_;
    std::lock_guard lock(mutex_);
    cache_.insert_or_assign(std::move(key), result);
    return result;
}

EvalResult evaluate_layout(const GateTask& task, const DBLayout& placed, GroundStateSolver& solver) {
    EvalResult out;
    const auto& table = task.table;
    for (std::size_t r = 0; r < table.row_count(); ++r) {
        const DBLayout layout = assemble_row_layout(task, placed, r, solver.geometry());
        const auto gs = solver.solve(layout);
        RowVerdict verdict;
        verdict.energy = gs.energy;
        verdict.outputs_ok.assign(task.outputs.size(), 0);
        if (!gs.converged || gs.configs.empty()) {
            verdict.failure = RowFailure::unconverged;
        } else if (gs.contains_positive) {
            verdict.failure = RowFailure::positive_charge;
        } else {
            bool ambiguous = false;
            for (std::size_t k = 0; k < task.outputs.size(); ++k) {
                bool ok = true;
                for (const auto& cfg : gs.configs) {
                    const auto bit = read_output(task.outputs[k], layout, cfg);
                    if (bit == OutputBit::ambiguous) {
                        ambiguous = true;
                        ok = false;
                    } else if ((bit == OutputBit::one ? 1 : 0) != table.row(r).outputs[k]) {
                        ok = false;
                    }
                }
                verdict.outputs_ok[k] = ok ? 1 : 0;
            }
            const bool all_ok = std::all_of(verdict.outputs_ok.begin(), verdict.outputs_ok.end(), [](int b) { return b == 1; });
            if (!all_ok) verdict.failure = ambiguous ? RowFailure::ambiguous_output : RowFailure::wrong_output;
        }
        if (verdict.pass()) ++out.satisfied_rows;
        // Positive or unconverged rows count as wrong on every output.
        if (verdict.failure != RowFailure::unconverged && verdict.failure != RowFailure::positive_charge) {
            for (int ok : verdict.outputs_ok) out.satisfied_outputs += ok;
        }
        out.per_row.push_back(std::move(verdict));
    }
    out.working = out.satisfied_rows == static_cast<int>(table.row_count());
    return out;
}

EvalResult evaluate_layout(const GateTask& task, const DBLayout& placed, SolverKind kind, const PhysParams& p) {
    SolverConfig cfg;
    cfg.kind = kind;
    GroundStateSolver solver(p, cfg);
    return evaluate_layout(task, placed, solver);
}

}  // namespace sidb
