#include "sidb/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <charconv>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "json.hpp"

namespace sidb {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string sha256(const std::string& data) {
    unsigned char out[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), out, &len, EVP_sha256(), nullptr) != 1 || len != 32) {
        throw std::runtime_error("SHA-256 computation failed");
    }
    return {reinterpret_cast<const char*>(out), len};
}

std::string hex(const std::string& bytes) {
    Digest d{};
    std::memcpy(d.data(), bytes.data(), d.size());
    return to_hex(d);
}

std::string shortest(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Strict field access over one JSON object.
class Fields {
  public:
    Fields(const json& obj, std::string path, std::initializer_list<const char*> allowed) : obj_(obj), path_(std::move(path)) {
        if (!obj.is_object()) throw ConfigError(where() + "expected an object");
        for (const auto& [key, value] : obj.items()) {
            bool known = false;
            for (const char* a : allowed) known = known || key == a;
            if (!known) throw ConfigError(where() + "unknown key '" + key + "'");
        }
    }

    [[nodiscard]] bool has(const char* key) const { return obj_.contains(key); }
    [[nodiscard]] const json& at(const char* key) const {
        if (!obj_.contains(key)) throw ConfigError(where() + "missing required key '" + key + "'");
        return obj_.at(key);
    }
    [[nodiscard]] std::string path(const char* key) const { return join(path_, key); }

    void get(const char* key, double& out) const {
        if (!has(key)) return;
        const auto& v = obj_.at(key);
        if (!v.is_number()) throw ConfigError(path(key) + ": expected a number");
        out = v.get<double>();
    }
    template <typename Int>
        requires std::is_integral_v<Int>
    void get(const char* key, Int& out) const {
        if (!has(key)) return;
        const auto& v = obj_.at(key);
        if (!v.is_number_integer()) throw ConfigError(path(key) + ": expected an integer");
        if (std::is_unsigned_v<Int> && v.is_number_integer() && !v.is_number_unsigned()) {
            throw ConfigError(path(key) + ": expected a non-negative integer");
        }
        out = v.get<Int>();
    }
    void get(const char* key, std::string& out) const {
        if (!has(key)) return;
        const auto& v = obj_.at(key);
        if (!v.is_string()) throw ConfigError(path(key) + ": expected a string");
        out = v.get<std::string>();
    }

  private:
    [[nodiscard]] std::string where() const { return path_.empty() ? "config: " : path_ + ": "; }

    const json& obj_;
    std::string path_;
};

LatticeSite site_from(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 3 || !j[0].is_number_integer() || !j[1].is_number_integer() || !j[2].is_number_integer()) {
        throw ConfigError(path + ": expected a site [col, row, sub]");
    }
    const int sub = j[2].get<int>();
    if (sub != 0 && sub != 1) throw ConfigError(path + ": sub must be 0 or 1");
    return {j[0].get<int>(), j[1].get<int>(), sub};
}

json site_to(const LatticeSite& s) { return json::array({s.col, s.row, s.sub}); }

std::vector<LatticeSite> sites_from(const json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError(path + ": expected a list of sites");
    std::vector<LatticeSite> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(site_from(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

json sites_to(std::span<const LatticeSite> sites) {
    json out = json::array();
    for (const auto& s : sites) out.push_back(site_to(s));
    return out;
}

GateTask task_preset(const std::string& name, const std::string& path) {
    if (name == "half_adder") return half_adder_task();
    try {
        return two_input_task(name);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path + ": unknown task preset '" + name + "'");
    }
}

TruthTable table_from(const json& j, const std::string& path) {
    try {
        if (j.is_string()) return TruthTable::preset(j.get<std::string>());
        if (j.is_array()) {
            std::vector<std::string> rows;
            for (const auto& r : j) {
                if (!r.is_string()) throw ConfigError(path + ": rows must be strings such as \"01->1\"");
                rows.push_back(r.get<std::string>());
            }
            return TruthTable::parse(rows);
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path + ": " + e.what());
    }
    throw ConfigError(path + ": expected a preset name or a list of rows");
}

json table_to(const TruthTable& t) {
    json rows = json::array();
    for (std::size_t i = 0; i < t.row_count(); ++i) {
        std::string s;
        for (int b : t.row(i).inputs) s += static_cast<char>('0' + b);
        s += "->";
        for (int b : t.row(i).outputs) s += static_cast<char>('0' + b);
        rows.push_back(s);
    }
    return rows;
}

GateTask task_from(const json& j) {
    const std::string path = "task";
    if (j.is_string()) return task_preset(j.get<std::string>(), path);
    Fields f(j, path, {"preset", "name", "scaffold", "inputs", "outputs", "canvas", "max_placements", "table"});
    GateTask t;
    const bool preset = f.has("preset");
    if (preset) {
        if (!f.at("preset").is_string()) throw ConfigError("task.preset: expected a string");
        t = task_preset(f.at("preset").get<std::string>(), "task.preset");
    } else {
        t.name = "custom";
        for (const char* required : {"inputs", "outputs", "canvas", "table"}) (void)f.at(required);
    }
    f.get("name", t.name);
    if (f.has("scaffold")) {
        try {
            t.scaffold = DBLayout(sites_from(f.at("scaffold"), "task.scaffold"));
        } catch (const ConfigError&) {
            throw;
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("task.scaffold: ") + e.what());
        }
    }
    if (f.has("inputs")) {
        const auto& arr = f.at("inputs");
        if (!arr.is_array()) throw ConfigError("task.inputs: expected a list of perturber lists");
        t.inputs.clear();
        for (std::size_t i = 0; i < arr.size(); ++i) {
            t.inputs.push_back(InputPort{sites_from(arr[i], "task.inputs[" + std::to_string(i) + "]")});
        }
    }
    if (f.has("outputs")) {
        const auto& arr = f.at("outputs");
        if (!arr.is_array()) throw ConfigError("task.outputs: expected a list of output ports");
        t.outputs.clear();
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string p = "task.outputs[" + std::to_string(i) + "]";
            Fields o(arr[i], p, {"one", "zero"});
            t.outputs.push_back(OutputPort{site_from(o.at("one"), p + ".one"), site_from(o.at("zero"), p + ".zero")});
        }
    }
    if (f.has("canvas")) {
        Fields c(f.at("canvas"), "task.canvas", {"col_min", "col_max", "line_min", "line_max"});
        for (const char* k : {"col_min", "col_max", "line_min", "line_max"}) (void)c.at(k);
        c.get("col_min", t.canvas.col_min);
        c.get("col_max", t.canvas.col_max);
        c.get("line_min", t.canvas.line_min);
        c.get("line_max", t.canvas.line_max);
    }
    f.get("max_placements", t.max_placements);
    if (f.has("table")) t.table = table_from(f.at("table"), "task.table");
    try {
        t.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("task: ") + e.what());
    }
    return t;
}

ordered_json task_to(const GateTask& t) {
    ordered_json j;
    j["name"] = t.name;
    j["scaffold"] = sites_to(t.scaffold.sites());
    json inputs = json::array();
    for (const auto& in : t.inputs) inputs.push_back(sites_to(in.perturbers));
    j["inputs"] = inputs;
    json outputs = json::array();
    for (const auto& o : t.outputs) outputs.push_back(json{{"one", site_to(o.dot_one)}, {"zero", site_to(o.dot_zero)}});
    j["outputs"] = outputs;
    j["canvas"] = ordered_json{{"col_min", t.canvas.col_min},
                               {"col_max", t.canvas.col_max},
                               {"line_min", t.canvas.line_min},
                               {"line_max", t.canvas.line_max}};
    j["max_placements"] = t.max_placements;
    j["table"] = table_to(t.table);
    return j;
}

std::string model_name(ChargeModel m) { return m == ChargeModel::two_state ? "two_state" : "three_state"; }

std::string counting_name(RowCounting c) { return c == RowCounting::rows ? "rows" : "row_outputs"; }

template <typename Fn>
void wrap(const std::string& section, Fn&& fn) {
    try {
        fn();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(section + ": " + e.what());
    }
}

void put_le64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
}

std::uint64_t get_le64(const std::string& in, std::size_t pos) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return v;
}

template <typename Vec>
void put_doubles(std::string& out, const Vec& v) {
    for (double d : v) put_le64(out, std::bit_cast<std::uint64_t>(d));
}

constexpr char kMagic[8] = {'S', 'I', 'D', 'B', 'C', 'K', 'P', 'T'};

json shape_to(const NetShape& s) {
    return json{{"in_channels", s.in_channels}, {"height", s.height}, {"width", s.width}, {"conv1", s.conv1},
                {"conv2", s.conv2},             {"conv3", s.conv3},   {"fc1", s.fc1},     {"fc2", s.fc2}};
}

NetShape shape_from(const json& j) {
    NetShape s;
    s.in_channels = j.at("in_channels").get<int>();
    s.height = j.at("height").get<int>();
    s.width = j.at("width").get<int>();
    s.conv1 = j.at("conv1").get<int>();
    s.conv2 = j.at("conv2").get<int>();
    s.conv3 = j.at("conv3").get<int>();
    s.fc1 = j.at("fc1").get<int>();
    s.fc2 = j.at("fc2").get<int>();
    return s;
}

std::string shape_text(const NetShape& s) { return shape_to(s).dump(); }

ordered_json layout_json(const LayoutRecord& r) {
    ordered_json j;
    j["format"] = "sidb-layout";
    j["version"] = 1;
    j["sites"] = sites_to(r.layout.sites());
    j["digest"] = to_hex(r.digest);
    j["provenance"] = ordered_json{{"episode", r.episode}, {"step", r.step}, {"seed", r.seed}};
    j["row_energies"] = r.row_energies;
    return j;
}

LayoutRecord layout_from_value(const json& j, const std::string& path) {
    Fields f(j, path, {"format", "version", "sites", "digest", "provenance", "row_energies"});
    if (f.has("format") && f.at("format") != "sidb-layout") throw ConfigError(path + ": not a sidb-layout document");
    if (f.has("version") && f.at("version") != 1) throw ConfigError(path + ": unsupported layout version");
    LayoutRecord r;
    try {
        r.layout = DBLayout(sites_from(f.at("sites"), join(path, "sites")));
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(join(path, "sites") + ": " + e.what());
    }
    r.digest = canonical_digest(r.layout);
    if (f.has("digest")) {
        std::string d;
        f.get("digest", d);
        Digest stored{};
        try {
            stored = digest_from_hex(d);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(join(path, "digest") + ": " + e.what());
        }
        if (stored != r.digest) throw ConfigError(join(path, "digest") + ": does not match the site list");
    }
    if (f.has("provenance")) {
        Fields p(f.at("provenance"), join(path, "provenance"), {"episode", "step", "seed"});
        p.get("episode", r.episode);
        p.get("step", r.step);
        p.get("seed", r.seed);
    }
    if (f.has("row_energies")) {
        const auto& e = f.at("row_energies");
        if (!e.is_array()) throw ConfigError(join(path, "row_energies") + ": expected a list of numbers");
        for (const auto& v : e) {
            if (!v.is_number()) throw ConfigError(join(path, "row_energies") + ": expected a list of numbers");
            r.row_energies.push_back(v.get<double>());
        }
    }
    return r;
}

json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ConfigError(what + " line " + std::to_string(line) + ", column " + std::to_string(col) + ": malformed JSON");
    }
}

}  // namespace

TrainingSetup RunConfig::training_setup() const {
    TrainingSetup s;
    s.task = task;
    s.hp = hp;
    s.reward = reward;
    s.physics = physics;
    s.solver = solver;
    if (!seeds.empty()) s.hp.seeds = seeds_from(seeds.front());
    return s;
}

ExperimentConfig RunConfig::experiment(bool control) const {
    ExperimentConfig e;
    e.task_name = task.name;
    e.setup = training_setup();
    e.seeds = seeds;
    e.control_policy = control;
    return e;
}

RunConfig parse_config(const std::string& text) {
    const json root = parse_json(text, "config");
    Fields f(root, "", {"schema_version", "task", "physics", "solver", "hyperparams", "reward", "seeds", "output_dir"});
    RunConfig c;
    f.get("schema_version", c.schema_version);
    if (c.schema_version != kConfigSchemaVersion) {
        throw ConfigError("schema_version: unsupported version " + std::to_string(c.schema_version) + " (expected " +
                          std::to_string(kConfigSchemaVersion) + ")");
    }
    if (f.has("task")) c.task = task_from(f.at("task"));

    if (f.has("physics")) {
        Fields p(f.at("physics"), "physics", {"eps_r", "lambda_tf", "mu_minus", "mu_plus", "k_coulomb"});
        p.get("eps_r", c.physics.eps_r);
        p.get("lambda_tf", c.physics.lambda_tf);
        p.get("mu_minus", c.physics.mu_minus);
        p.get("mu_plus", c.physics.mu_plus);
        p.get("k_coulomb", c.physics.k_coulomb);
    }
    wrap("physics", [&] { c.physics.validate(); });

    if (f.has("solver")) {
        Fields s(f.at("solver"), "solver", {"kind", "model", "exhaustive_limit", "anneal"});
        if (s.has("kind")) {
            std::string kind;
            s.get("kind", kind);
            wrap("solver.kind", [&] { c.solver.kind = solver_kind_from_string(kind); });
        }
        if (s.has("model")) {
            std::string model;
            s.get("model", model);
            if (model == "two_state") {
                c.solver.model = ChargeModel::two_state;
            } else if (model == "three_state") {
                c.solver.model = ChargeModel::three_state;
            } else {
                throw ConfigError("solver.model: expected 'two_state' or 'three_state'");
            }
        }
        s.get("exhaustive_limit", c.solver.exhaustive_limit);
        if (s.has("anneal")) {
            Fields a(s.at("anneal"), "solver.anneal", {"initial_temperature", "decay", "sweeps", "restarts"});
            a.get("initial_temperature", c.solver.schedule.initial_temperature);
            a.get("decay", c.solver.schedule.decay);
            a.get("sweeps", c.solver.schedule.sweeps);
            a.get("restarts", c.solver.schedule.restarts);
        }
    }
    wrap("solver.anneal", [&] { c.solver.schedule.validate(); });

    if (f.has("hyperparams")) {
        Fields h(f.at("hyperparams"), "hyperparams",
                 {"total_steps", "batch_size", "warmup_steps", "train_every", "target_sync_every", "gamma", "learning_rate",
                  "huber_delta", "buffer_capacity", "episodes_per_epoch", "checkpoint_every_epochs", "epsilon", "network"});
        h.get("total_steps", c.hp.total_steps);
        h.get("batch_size", c.hp.batch_size);
        h.get("warmup_steps", c.hp.warmup_steps);
        h.get("train_every", c.hp.train_every);
        h.get("target_sync_every", c.hp.target_sync_every);
        h.get("gamma", c.hp.gamma);
        h.get("learning_rate", c.hp.learning_rate);
        h.get("huber_delta", c.hp.huber_delta);
        h.get("buffer_capacity", c.hp.buffer_capacity);
        h.get("episodes_per_epoch", c.hp.episodes_per_epoch);
        h.get("checkpoint_every_epochs", c.hp.checkpoint_every_epochs);
        if (h.has("epsilon")) {
            Fields e(h.at("epsilon"), "hyperparams.epsilon", {"start", "min", "anneal_fraction"});
            e.get("start", c.hp.epsilon.eps_start);
            e.get("min", c.hp.epsilon.eps_min);
            e.get("anneal_fraction", c.hp.epsilon.anneal_fraction);
        }
        if (h.has("network")) {
            Fields n(h.at("network"), "hyperparams.network", {"conv1", "conv2", "conv3", "fc1", "fc2"});
            n.get("conv1", c.hp.network.conv1);
            n.get("conv2", c.hp.network.conv2);
            n.get("conv3", c.hp.network.conv3);
            n.get("fc1", c.hp.network.fc1);
            n.get("fc2", c.hp.network.fc2);
        }
    }
    wrap("hyperparams", [&] {
        c.hp.validate();
        (void)network_shape_for(c.task, c.hp.network);
    });

    if (f.has("reward")) {
        Fields r(f.at("reward"), "reward", {"row_gain", "row_loss", "step_cost", "win", "clamp_min", "clamp_max", "counting"});
        r.get("row_gain", c.reward.row_gain);
        r.get("row_loss", c.reward.row_loss);
        r.get("step_cost", c.reward.step_cost);
        r.get("win", c.reward.win);
        r.get("clamp_min", c.reward.clamp_min);
        r.get("clamp_max", c.reward.clamp_max);
        if (r.has("counting")) {
            std::string counting;
            r.get("counting", counting);
            if (counting == "rows") {
                c.reward.counting = RowCounting::rows;
            } else if (counting == "row_outputs") {
                c.reward.counting = RowCounting::row_outputs;
            } else {
                throw ConfigError("reward.counting: expected 'rows' or 'row_outputs'");
            }
        }
    }
    wrap("reward", [&] { c.reward.validate(); });

    if (f.has("seeds")) {
        const auto& s = f.at("seeds");
        if (!s.is_array()) throw ConfigError("seeds: expected a list of non-negative integers");
        c.seeds.clear();
        for (const auto& v : s) {
            if (!v.is_number_unsigned()) throw ConfigError("seeds: expected a list of non-negative integers");
            c.seeds.push_back(v.get<std::uint64_t>());
        }
    }
    if (c.seeds.empty()) throw ConfigError("seeds: at least one seed is required");
    if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
        throw ConfigError("seeds: seeds must be distinct");
    }
    f.get("output_dir", c.output_dir);
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    try {
        return parse_config(read_file(path));
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string serialize_config(const RunConfig& c) {
    ordered_json j;
    j["schema_version"] = c.schema_version;
    j["task"] = task_to(c.task);
    j["physics"] = ordered_json{{"eps_r", c.physics.eps_r},
                                {"lambda_tf", c.physics.lambda_tf},
                                {"mu_minus", c.physics.mu_minus},
                                {"mu_plus", c.physics.mu_plus},
                                {"k_coulomb", c.physics.k_coulomb}};
    j["solver"] = ordered_json{{"kind", to_string(c.solver.kind)},
                               {"model", model_name(c.solver.model)},
                               {"exhaustive_limit", c.solver.exhaustive_limit},
                               {"anneal", ordered_json{{"initial_temperature", c.solver.schedule.initial_temperature},
                                                       {"decay", c.solver.schedule.decay},
                                                       {"sweeps", c.solver.schedule.sweeps},
                                                       {"restarts", c.solver.schedule.restarts}}}};
    const auto& h = c.hp;
    j["hyperparams"] = ordered_json{
        {"total_steps", h.total_steps},
        {"batch_size", h.batch_size},
        {"warmup_steps", h.warmup_steps},
        {"train_every", h.train_every},
        {"target_sync_every", h.target_sync_every},
        {"gamma", h.gamma},
        {"learning_rate", h.learning_rate},
        {"huber_delta", h.huber_delta},
        {"buffer_capacity", h.buffer_capacity},
        {"episodes_per_epoch", h.episodes_per_epoch},
        {"checkpoint_every_epochs", h.checkpoint_every_epochs},
        {"epsilon", ordered_json{{"start", h.epsilon.eps_start}, {"min", h.epsilon.eps_min}, {"anneal_fraction", h.epsilon.anneal_fraction}}},
        {"network", ordered_json{{"conv1", h.network.conv1},
                                 {"conv2", h.network.conv2},
                                 {"conv3", h.network.conv3},
                                 {"fc1", h.network.fc1},
                                 {"fc2", h.network.fc2}}}};
    j["reward"] = ordered_json{{"row_gain", c.reward.row_gain},   {"row_loss", c.reward.row_loss},
                               {"step_cost", c.reward.step_cost}, {"win", c.reward.win},
                               {"clamp_min", c.reward.clamp_min}, {"clamp_max", c.reward.clamp_max},
                               {"counting", counting_name(c.reward.counting)}};
    j["seeds"] = c.seeds;
    j["output_dir"] = c.output_dir;
    return j.dump(2) + "\n";
}

std::string config_digest(const RunConfig& cfg) { return hex(sha256(serialize_config(cfg))); }

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.close();
        if (!out) throw std::runtime_error("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::filesystem::path make_run_directory(const std::filesystem::path& base, const RunConfig& cfg) {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
    const std::string stem = config_digest(cfg).substr(0, 12) + "-" + stamp;
    auto dir = base / stem;
    for (int k = 1; std::filesystem::exists(dir); ++k) dir = base / (stem + "-" + std::to_string(k));
    std::filesystem::create_directories(dir);
    return dir;
}

std::string encode_checkpoint(const Checkpoint& ck) {
    const NetShape& shape = ck.online.shape();
    if (!(ck.target.shape() == shape)) throw CheckpointError("online and target networks differ in shape");
    const std::size_t n = ck.online.params().size();
    const std::size_t moments = ck.optimizer.m.size();
    if (ck.optimizer.v.size() != moments || (moments != 0 && moments != n)) {
        throw CheckpointError("optimizer moments do not match the parameter count");
    }
    json tensors = json::array();
    for (const auto& t : ck.online.tensors()) {
        tensors.push_back(json{{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}, {"size", t.size}});
    }
    const json header{{"shape", shape_to(shape)},
                      {"tensors", tensors},
                      {"param_count", n},
                      {"optimizer",
                       {{"learning_rate", ck.optimizer.learning_rate},
                        {"beta1", ck.optimizer.beta1},
                        {"beta2", ck.optimizer.beta2},
                        {"epsilon", ck.optimizer.epsilon},
                        {"step", ck.optimizer.step},
                        {"moment_count", moments}}},
                      {"metadata", ck.metadata}};
    const std::string h = header.dump();
    std::string out(kMagic, sizeof kMagic);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((kCheckpointVersion >> (8 * i)) & 0xFFU));
    put_le64(out, h.size());
    out += h;
    put_doubles(out, ck.online.params());
    put_doubles(out, ck.target.params());
    put_doubles(out, ck.optimizer.m);
    put_doubles(out, ck.optimizer.v);
    out += sha256(out);
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    constexpr std::size_t kFixed = sizeof kMagic + 4 + 8;
    if (bytes.size() < kFixed + 32 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw CheckpointError("not a checkpoint file");
    }
    std::uint32_t version = 0;
    for (int i = 0; i < 4; ++i) version |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    const std::string body = bytes.substr(0, bytes.size() - 32);
    if (sha256(body) != bytes.substr(bytes.size() - 32)) throw CheckpointError("checkpoint integrity check failed");

    const std::uint64_t hlen = get_le64(bytes, 12);
    if (hlen > body.size() - kFixed) throw CheckpointError("checkpoint header length is inconsistent");
    Checkpoint ck;
    std::size_t n = 0, moments = 0;
    NetShape shape;
    try {
        const json header = json::parse(body.substr(kFixed, hlen));
        shape = shape_from(header.at("shape"));
        shape.validate();
        n = header.at("param_count").get<std::size_t>();
        const auto& opt = header.at("optimizer");
        ck.optimizer.learning_rate = opt.at("learning_rate").get<double>();
        ck.optimizer.beta1 = opt.at("beta1").get<double>();
        ck.optimizer.beta2 = opt.at("beta2").get<double>();
        ck.optimizer.epsilon = opt.at("epsilon").get<double>();
        ck.optimizer.step = opt.at("step").get<std::uint64_t>();
        moments = opt.at("moment_count").get<std::size_t>();
        ck.metadata = header.at("metadata").get<std::map<std::string, std::string>>();
        ck.online = QNetwork(shape);
        const auto& tensors = header.at("tensors");
        if (tensors.size() != ck.online.tensors().size()) throw CheckpointError("tensor table does not match the shape");
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            const auto& t = ck.online.tensors()[i];
            if (tensors[i].at("name") != t.name || tensors[i].at("shape").get<std::vector<int>>() != t.shape ||
                tensors[i].at("offset").get<std::size_t>() != t.offset || tensors[i].at("size").get<std::size_t>() != t.size) {
                throw CheckpointError("tensor '" + t.name + "' does not match the shape");
            }
        }
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
    }
    if (n != ck.online.params().size() || (moments != 0 && moments != n)) {
        throw CheckpointError("checkpoint parameter count does not match its shape");
    }
    if (body.size() != kFixed + hlen + 8 * (2 * n + 2 * moments)) throw CheckpointError("checkpoint payload size is inconsistent");
    ck.target = QNetwork(shape);
    std::size_t pos = kFixed + hlen;
    auto read = [&](auto& v, std::size_t count) {
        v.resize(count);
        for (std::size_t i = 0; i < count; ++i, pos += 8) v[i] = std::bit_cast<double>(get_le64(body, pos));
    };
    read(ck.online.params(), n);
    read(ck.target.params(), n);
    read(ck.optimizer.m, moments);
    read(ck.optimizer.v, moments);
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) { write_file_atomic(path, encode_checkpoint(ck)); }

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<NetShape>& expected_shape) {
    Checkpoint ck = decode_checkpoint(read_file(path));
    if (expected_shape && !(ck.online.shape() == *expected_shape)) {
        throw CheckpointError("checkpoint shape " + shape_text(ck.online.shape()) + " does not match the expected " +
                              shape_text(*expected_shape));
    }
    return ck;
}

LayoutRecord make_layout_record(const SolutionRecord& s, std::uint64_t seed) {
    return LayoutRecord{s.layout, s.digest, s.episode, s.step, seed, s.row_energies};
}

LayoutFormat layout_format_from_string(std::string_view s) {
    if (s == "json") return LayoutFormat::json;
    if (s == "sqd") return LayoutFormat::sqd;
    throw std::invalid_argument("unsupported layout format '" + std::string(s) + "' (expected json or sqd)");
}

std::string layout_to_json(const LayoutRecord& r) {
    if (canonical_digest(r.layout) != r.digest) throw std::invalid_argument("layout digest does not match its sites");
    return layout_json(r).dump(2) + "\n";
}

LayoutRecord layout_from_json(const std::string& text) { return layout_from_value(parse_json(text, "layout"), "layout"); }

std::string layout_to_sqd(const LayoutRecord& r, const LatticeGeometry& geom) {
    std::string out =
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        "<!-- sidb sqd subset 1: lattice layer plus one DB layer; latcoord n = column, m = dimer row, l = dimer site -->\n"
        "<siqad>\n"
        "  <program>\n"
        "    <file_purpose>save</file_purpose>\n"
        "    <version>0.2.2</version>\n"
        "  </program>\n"
        "  <layers>\n"
        "    <layer_prop>\n"
        "      <name>Lattice</name>\n"
        "      <type>Lattice</type>\n"
        "      <role>Design</role>\n"
        "      <zoffset>0</zoffset>\n"
        "      <zheight>0</zheight>\n"
        "      <visible>1</visible>\n"
        "      <active>0</active>\n"
        "    </layer_prop>\n"
        "    <layer_prop>\n"
        "      <name>DB</name>\n"
        "      <type>DB</type>\n"
        "      <role>Design</role>\n"
        "      <zoffset>0</zoffset>\n"
        "      <zheight>0</zheight>\n"
        "      <visible>1</visible>\n"
        "      <active>1</active>\n"
        "    </layer_prop>\n"
        "  </layers>\n"
        "  <design>\n"
        "    <layer type=\"Lattice\">\n"
        "      <lattice_type>Si(100) 2x1</lattice_type>\n"
        "    </layer>\n"
        "    <layer type=\"DB\">\n";
    for (const auto& s : r.layout) {
        const auto p = to_physical(s, geom);
        const std::string loc = "x=\"" + shortest(p.x) + "\" y=\"" + shortest(p.y) + "\"";
        out += "      <dbdot>\n        <layer_id>1</layer_id>\n        <latcoord n=\"" + std::to_string(s.col) + "\" m=\"" +
               std::to_string(s.row) + "\" l=\"" + std::to_string(s.sub) + "\"/>\n        <physloc " + loc +
               "/>\n        <color>#ffc8c8c8</color>\n      </dbdot>\n";
    }
    out += "    </layer>\n  </design>\n</siqad>\n";
    return out;
}

DBLayout layout_from_sqd(const std::string& text) {
    if (text.find("<siqad>") == std::string::npos) throw std::invalid_argument("not an sqd document");
    static const std::regex dot(R"re(<dbdot>[\s\S]*?<latcoord\s+n="(-?\d+)"\s+m="(-?\d+)"\s+l="(-?\d+)"\s*/>[\s\S]*?</dbdot>)re");
    std::vector<LatticeSite> sites;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), dot); it != std::sregex_iterator(); ++it) {
        const int sub = std::stoi((*it)[3]);
        if (sub != 0 && sub != 1) throw std::invalid_argument("sqd dbdot has an invalid dimer site");
        sites.push_back({std::stoi((*it)[1]), std::stoi((*it)[2]), sub});
    }
    return DBLayout(std::move(sites));
}

void export_layout(const LayoutRecord& r, LayoutFormat format, const std::filesystem::path& path) {
    write_file_atomic(path, format == LayoutFormat::json ? layout_to_json(r) : layout_to_sqd(r));
}

DBLayout import_layout(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    if (path.extension() == ".sqd") return layout_from_sqd(text);
    return layout_from_json(text).layout;
}

std::string registry_line(const LayoutRecord& r) { return layout_json(r).dump() + "\n"; }

void append_registry(const std::filesystem::path& path, const LayoutRecord& r) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for appending");
    out << registry_line(r);
    if (!out) throw std::runtime_error("failed appending to " + path.string());
}

std::vector<LayoutRecord> read_registry(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::vector<LayoutRecord> out;
    std::string line;
    for (int n = 1; std::getline(in, line); ++n) {
        if (line.empty()) continue;
        const std::string where = path.string() + " line " + std::to_string(n);
        out.push_back(layout_from_value(parse_json(line, where), where));
    }
    return out;
}

std::string episode_line(const EpisodeLog& log) {
    ordered_json j;
    j["episode"] = log.episode;
    j["start_step"] = log.start_step;
    j["actions"] = log.actions;
    j["rewards"] = log.rewards;
    j["explored"] = log.explored;
    j["found_new_solution"] = log.found_new_solution;
    j["final_satisfied"] = log.final_satisfied;
    j["epsilon"] = log.epsilon;
    j["loss_sum"] = log.loss_sum;
    j["loss_count"] = log.loss_count;
    j["diagnostics"] = log.diagnostics;
    return j.dump() + "\n";
}

std::vector<EpisodeLog> read_episodes(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::vector<EpisodeLog> out;
    std::string line;
    for (int n = 1; std::getline(in, line); ++n) {
        if (line.empty()) continue;
        const std::string where = path.string() + " line " + std::to_string(n);
        const json j = parse_json(line, where);
        try {
            EpisodeLog e;
            e.episode = j.at("episode").get<long>();
            e.start_step = j.at("start_step").get<long>();
            e.actions = j.at("actions").get<std::vector<std::size_t>>();
            e.rewards = j.at("rewards").get<std::vector<double>>();
            e.explored = j.at("explored").get<std::vector<std::uint8_t>>();
            e.found_new_solution = j.at("found_new_solution").get<bool>();
            e.final_satisfied = j.at("final_satisfied").get<int>();
            e.epsilon = j.at("epsilon").get<double>();
            e.loss_sum = j.at("loss_sum").get<double>();
            e.loss_count = j.at("loss_count").get<int>();
            e.diagnostics = j.at("diagnostics").get<std::vector<std::string>>();
            out.push_back(std::move(e));
        } catch (const json::exception& ex) {
            throw ConfigError(where + ": " + ex.what());
        }
    }
    return out;
}

}  // namespace sidb
