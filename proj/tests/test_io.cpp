#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "sidb/io.hpp"

using namespace sidb;
namespace fs = std::filesystem;

namespace {

class TempDir {
  public:
    TempDir() {
        path_ = fs::temp_directory_path() / ("sidb_io_" + std::to_string(std::random_device{}()));
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    [[nodiscard]] const fs::path& path() const { return path_; }

  private:
    fs::path path_;
};

std::string message_of(const std::string& text) {
    try {
        (void)parse_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

Checkpoint random_checkpoint(std::uint64_t seed) {
    NetShape s;
    s.height = 5;
    s.width = 7;
    s.conv1 = 3;
    s.conv2 = 4;
    s.conv3 = 4;
    s.fc1 = 10;
    s.fc2 = 6;
    Checkpoint ck{QNetwork(s, seed), QNetwork(s, seed + 1), AdamState{}, {{"epoch", "12"}, {"note", "a \"quoted\" value"}}};
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(-1e3, 1e3);
    for (auto& p : ck.online.params()) p = u(gen) * 1e-7;
    ck.optimizer.step = 77;
    ck.optimizer.m.resize(ck.online.params().size());
    ck.optimizer.v.resize(ck.online.params().size());
    for (auto& x : ck.optimizer.m) x = u(gen);
    for (auto& x : ck.optimizer.v) x = std::abs(u(gen)) * 1e-300;
    return ck;
}

}  // namespace

TEST(Config, MinimalConfigIsFullyDefaulted) {
    const RunConfig defaults;
    EXPECT_EQ(parse_config("{}"), defaults);
    EXPECT_EQ(parse_config(R"({"task": "or"})"), defaults);
    EXPECT_EQ(parse_config(R"({"task": {"preset": "or"}})"), defaults);
    EXPECT_EQ(defaults.task, or_gate_task());
    EXPECT_EQ(defaults.hp, Hyperparams{});
    EXPECT_EQ(defaults.seeds.size(), 5u);
}

TEST(Config, RoundTrip) {
    RunConfig c;
    c.task = two_input_task("xor");
    c.task.max_placements = 6;
    c.hp.learning_rate = 3.3e-4;
    c.hp.network.fc1 = 77;
    c.hp.epsilon.anneal_fraction = 0.6;
    c.solver.kind = SolverKind::anneal;
    c.solver.model = ChargeModel::two_state;
    c.solver.schedule.sweeps = 33;
    c.reward.counting = RowCounting::row_outputs;
    c.reward.step_cost = -0.1 / 3.0;
    c.physics.mu_minus = -0.32;
    c.seeds = {9, 18446744073709551615ULL};
    c.output_dir = "elsewhere";
    const std::string text = serialize_config(c);
    const RunConfig back = parse_config(text);
    EXPECT_EQ(back, c);
    EXPECT_EQ(serialize_config(back), text);
    EXPECT_EQ(parse_config(serialize_config(RunConfig{})), RunConfig{});
    RunConfig adder;
    adder.task = half_adder_task();
    EXPECT_EQ(parse_config(serialize_config(adder)).task, half_adder_task());
    EXPECT_EQ(config_digest(back), config_digest(c));
    c.hp.batch_size += 1;
    EXPECT_NE(config_digest(back), config_digest(c));
}

TEST(Config, UnknownKeysAreRejectedWithTheirPath) {
    const auto m = message_of(R"({"hyperparams": {"batchsize": 3}})");
    EXPECT_NE(m.find("hyperparams"), std::string::npos) << m;
    EXPECT_NE(m.find("batchsize"), std::string::npos) << m;
    EXPECT_NE(message_of(R"({"extra": 1})").find("extra"), std::string::npos);
    EXPECT_NE(message_of(R"({"hyperparams": {"epsilon": {"max": 1}}})").find("hyperparams.epsilon"), std::string::npos);
}

TEST(Config, SyntaxErrorsReportTheLine) {
    const auto m = message_of("{\n  \"seeds\": [1, 2],\n  \"output_dir\": \"x\",,\n}");
    EXPECT_NE(m.find("line 3"), std::string::npos) << m;
}

TEST(Config, SchemaViolationsNameTheField) {
    EXPECT_NE(message_of(R"({"hyperparams": {"batch_size": "64"}})").find("hyperparams.batch_size"), std::string::npos);
    EXPECT_NE(message_of(R"({"hyperparams": {"gamma": 2.0}})").find("hyperparams"), std::string::npos);
    EXPECT_NE(message_of(R"({"seeds": [3, 3]})").find("distinct"), std::string::npos);
    EXPECT_NE(message_of(R"({"seeds": [-1]})").find("seeds"), std::string::npos);
    EXPECT_NE(message_of(R"({"solver": {"kind": "magic"}})").find("solver.kind"), std::string::npos);
    EXPECT_NE(message_of(R"({"schema_version": 2})").find("schema_version"), std::string::npos);
    EXPECT_NE(message_of(R"({"task": "nonsense"})").find("nonsense"), std::string::npos);
    EXPECT_NE(message_of(R"({"task": {"preset": "or", "table": ["0->1", "1->0"]}})").find("task"), std::string::npos);
}

TEST(Config, CanvasOverlappingAnOutputPortNamesTheSite) {
    const auto port = or_gate_task().outputs.front().dot_zero;
    const auto m = message_of(R"({"task": {"preset": "or", "canvas": {"col_min": 0, "col_max": 6, "line_min": 2, "line_max": )" +
                              std::to_string(port.line()) + "}}}");
    EXPECT_NE(m.find(port.to_string()), std::string::npos) << m;
}

TEST(Config, ExplicitTask) {
    const std::string text = R"({
      "task": {
        "name": "buffer",
        "scaffold": [[3, 9, 0]],
        "inputs": [[[3, -1, 1]]],
        "outputs": [{"one": [3, 6, 1], "zero": [3, 6, 0]}],
        "canvas": {"col_min": 0, "col_max": 6, "line_min": 2, "line_max": 6},
        "max_placements": 5,
        "table": ["0->0", "1->1"]
      }
    })";
    const auto c = parse_config(text);
    EXPECT_EQ(c.task.name, "buffer");
    EXPECT_EQ(c.task.inputs.size(), 1u);
    EXPECT_EQ(c.task.table.row_count(), 2u);
    EXPECT_EQ(c.task.max_placements, 5);
    EXPECT_EQ(parse_config(serialize_config(c)), c);
    EXPECT_NE(message_of(R"({"task": {"name": "x"}})").find("missing required key"), std::string::npos);
}

TEST(Checkpoint, BitExactRoundTrip) {
    TempDir dir;
    const auto ck = random_checkpoint(5);
    save_checkpoint(dir.path() / "a.ckpt", ck);
    const auto back = load_checkpoint(dir.path() / "a.ckpt", ck.online.shape());
    EXPECT_TRUE(back.online == ck.online);
    EXPECT_TRUE(back.target == ck.target);
    EXPECT_EQ(back.optimizer, ck.optimizer);
    EXPECT_EQ(back.metadata, ck.metadata);
    EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ck));
    EXPECT_FALSE(fs::exists(dir.path() / "a.ckpt.tmp"));

    Checkpoint fresh{QNetwork(ck.online.shape()), QNetwork(ck.online.shape()), AdamState{}, {}};
    const auto fresh_back = decode_checkpoint(encode_checkpoint(fresh));
    EXPECT_TRUE(fresh_back.optimizer.m.empty());
    EXPECT_TRUE(fresh_back.online == fresh.online);
}

TEST(Checkpoint, CorruptionIsDetected) {
    const std::string bytes = encode_checkpoint(random_checkpoint(6));
    for (std::size_t pos : {std::size_t{20}, bytes.size() / 2, bytes.size() - 40, bytes.size() - 1}) {
        std::string bad = bytes;
        bad[pos] = static_cast<char>(bad[pos] ^ 0x10);
        EXPECT_THROW((void)decode_checkpoint(bad), CheckpointError) << pos;
    }
    EXPECT_THROW((void)decode_checkpoint(bytes.substr(0, bytes.size() - 9)), CheckpointError);
    EXPECT_THROW((void)decode_checkpoint("not a checkpoint"), CheckpointError);
}

TEST(Checkpoint, VersionAndShapeAreChecked) {
    TempDir dir;
    std::string bytes = encode_checkpoint(random_checkpoint(7));
    bytes[8] = 2;
    try {
        (void)decode_checkpoint(bytes);
        FAIL() << "version mismatch accepted";
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos) << e.what();
    }
    const auto ck = random_checkpoint(8);
    save_checkpoint(dir.path() / "b.ckpt", ck);
    NetShape other = ck.online.shape();
    other.width += 2;
    EXPECT_THROW((void)load_checkpoint(dir.path() / "b.ckpt", other), CheckpointError);
}

TEST(Layout, JsonRoundTripAndDigestCheck) {
    TempDir dir;
    const DBLayout l({{0, 1, 0}, {4, 2, 1}, {2, 3, 0}});
    const LayoutRecord r{l, canonical_digest(l), 41, 3, 99, {-0.5, -0.25, 0.125, -1.0 / 3.0}};
    export_layout(r, LayoutFormat::json, dir.path() / "l.json");
    EXPECT_EQ(layout_from_json(read_file(dir.path() / "l.json")), r);
    EXPECT_EQ(import_layout(dir.path() / "l.json"), l);

    LayoutRecord tampered = r;
    tampered.layout = DBLayout({{0, 1, 0}});
    EXPECT_THROW((void)layout_to_json(tampered), std::invalid_argument);
    std::string text = layout_to_json(r);
    const auto digest = to_hex(r.digest);
    text.replace(text.find(digest), digest.size(), to_hex(canonical_digest(DBLayout({{0, 1, 0}}))));
    EXPECT_THROW((void)layout_from_json(text), ConfigError);
    EXPECT_EQ(layout_from_json(R"({"sites": [[1, 1, 0]]})").layout, DBLayout({{1, 1, 0}}));
    EXPECT_THROW((void)layout_format_from_string("png"), std::invalid_argument);
}

TEST(Layout, SqdExport) {
    const LayoutRecord empty{DBLayout{}, canonical_digest(DBLayout{}), -1, -1, 0, {}};
    const auto doc = layout_to_sqd(empty);
    EXPECT_NE(doc.find("<siqad>"), std::string::npos);
    EXPECT_NE(doc.find("<type>Lattice</type>"), std::string::npos);
    EXPECT_EQ(doc.find("<dbdot>"), std::string::npos);
    EXPECT_TRUE(layout_from_sqd(doc).empty());

    const DBLayout l({{-2, 1, 0}, {4, 2, 1}, {2, 3, 0}});
    const auto sqd = layout_to_sqd({l, canonical_digest(l), -1, -1, 0, {}});
    EXPECT_NE(sqd.find(R"(<latcoord n="-2" m="1" l="0"/>)"), std::string::npos);
    EXPECT_NE(sqd.find(R"(<physloc x="-7.68" y="7.68"/>)"), std::string::npos);
    EXPECT_EQ(layout_from_sqd(sqd), l);
    EXPECT_THROW((void)layout_from_sqd("<xml/>"), std::invalid_argument);
}

TEST(Layout, SqdReimportPreservesVerdicts) {
    TempDir dir;
    const auto task = or_gate_task();
    GroundStateSolver solver(PhysParams{}, SolverConfig{SolverKind::exhaustive});
    const Environment env(task, solver);
    SolutionRegistry reg;
    Rng rng(12);
    for (int e = 0; e < 60; ++e) {
        auto s = env.reset();
        while (true) {
            std::vector<std::size_t> valid;
            for (std::size_t i = 0; i < s.mask.size(); ++i)
                if (s.mask[i]) valid.push_back(i);
            auto r = env.step(s, valid[rng.below(valid.size())], reg, e);
            s = r.next;
            if (r.terminal) break;
        }
    }
    const auto solutions = reg.records();
    ASSERT_GE(solutions.size(), 3u);
    int i = 0;
    for (const auto& sol : solutions) {
        const auto path = dir.path() / ("s" + std::to_string(i++) + ".sqd");
        export_layout(make_layout_record(sol), LayoutFormat::sqd, path);
        const DBLayout back = import_layout(path);
        EXPECT_EQ(back, sol.layout);
        const auto a = evaluate_layout(task, sol.layout, solver);
        const auto b = evaluate_layout(task, back, solver);
        EXPECT_TRUE(b.working);
        EXPECT_EQ(a.satisfied_rows, b.satisfied_rows);
        for (std::size_t k = 0; k < a.per_row.size(); ++k) EXPECT_EQ(a.per_row[k].failure, b.per_row[k].failure);
    }
}

TEST(Registry, AppendOnlyJsonLines) {
    TempDir dir;
    const auto path = dir.path() / "registry.jsonl";
    std::vector<LayoutRecord> records;
    for (int c = 0; c < 4; ++c) {
        const DBLayout l({{c, 1, 0}, {c, 3, 1}});
        records.push_back({l, canonical_digest(l), c, c + 1, 5, {0.1 * c, -2.0}});
        append_registry(path, records.back());
    }
    EXPECT_EQ(read_registry(path), records);
    const auto text = read_file(path);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
    write_file_atomic(path, text + "{\"sites\": [[0,0,0]], \"bogus\": 1}\n");
    try {
        (void)read_registry(path);
        FAIL() << "bad registry line accepted";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 5"), std::string::npos) << e.what();
    }
}

TEST(Episodes, LogsRoundTripExactly) {
    TempDir dir;
    EpisodeLog a;
    a.episode = 3;
    a.start_step = 17;
    a.actions = {4, 0, 33};
    a.rewards = {0.1 - 0.09375, -1.0 / 3.0, 1.0};
    a.explored = {1, 0, 1};
    a.found_new_solution = true;
    a.final_satisfied = 4;
    a.epsilon = 0.123456789012345678;
    a.loss_sum = 1e-17;
    a.loss_count = 2;
    a.diagnostics = {"skipped training batch: nan"};
    EpisodeLog b;
    b.episode = 4;
    write_file_atomic(dir.path() / "episodes.jsonl", episode_line(a) + episode_line(b));
    const auto back = read_episodes(dir.path() / "episodes.jsonl");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].actions, a.actions);
    EXPECT_EQ(back[0].rewards, a.rewards);
    EXPECT_EQ(back[0].explored, a.explored);
    EXPECT_EQ(back[0].epsilon, a.epsilon);
    EXPECT_EQ(back[0].loss_sum, a.loss_sum);
    EXPECT_EQ(back[0].diagnostics, a.diagnostics);
    EXPECT_EQ(episode_line(back[0]), episode_line(a));
    EXPECT_EQ(episode_line(back[1]), episode_line(b));
}

TEST(Files, RunDirectoriesAreDistinct) {
    TempDir dir;
    const RunConfig c;
    const auto a = make_run_directory(dir.path(), c);
    const auto b = make_run_directory(dir.path(), c);
    EXPECT_NE(a, b);
    EXPECT_TRUE(fs::is_directory(a));
    EXPECT_EQ(a.filename().string().substr(0, 12), config_digest(c).substr(0, 12));
}
