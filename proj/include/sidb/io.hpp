#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sidb/agent.hpp"
#include "sidb/harness.hpp"

namespace sidb {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

struct RunConfig {
    int schema_version = kConfigSchemaVersion;
    GateTask task = or_gate_task();
    PhysParams physics;
    SolverConfig solver;
    Hyperparams hp;
    RewardParams reward;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::string output_dir = "runs";

    [[nodiscard]] TrainingSetup training_setup() const;
    [[nodiscard]] ExperimentConfig experiment(bool control) const;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Strict JSON parsing: unknown keys are rejected, omitted optional fields take their defaults.
// "task" is either a preset name or an object, optionally holding "preset" plus overrides.
// Errors carry the line and column for syntax problems and the field path otherwise.
[[nodiscard]] RunConfig parse_config(const std::string& text);
[[nodiscard]] RunConfig load_config(const std::filesystem::path& path);
// Fully explicit form; parse_config(serialize_config(c)) == c.
[[nodiscard]] std::string serialize_config(const RunConfig& cfg);
// Hex SHA-256 of the serialized config.
[[nodiscard]] std::string config_digest(const RunConfig& cfg);

// Writes to a temporary sibling and renames it over the destination.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
[[nodiscard]] std::string read_file(const std::filesystem::path& path);

// <base>/<first 12 digest hex digits>-<UTC timestamp>, created if absent.
[[nodiscard]] std::filesystem::path make_run_directory(const std::filesystem::path& base, const RunConfig& cfg);

class CheckpointError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    QNetwork online;
    QNetwork target;
    AdamState optimizer;
    std::map<std::string, std::string> metadata;
};

// Layout: 8-byte magic, u32 version, u64 header length, JSON header (shape, tensor table, optimizer
// scalars, metadata), little-endian f64 payload (online, target, Adam m, Adam v), SHA-256 of all
// preceding bytes.
[[nodiscard]] std::string encode_checkpoint(const Checkpoint& ck);
[[nodiscard]] Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
// With expected_shape, a checkpoint of any other shape is refused.
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path,
                                         const std::optional<NetShape>& expected_shape = std::nullopt);

struct LayoutRecord {
    DBLayout layout;
    Digest digest{};
    long episode = -1;
    int step = -1;
    std::uint64_t seed = 0;
    std::vector<double> row_energies;

    friend bool operator==(const LayoutRecord&, const LayoutRecord&) = default;
};

[[nodiscard]] LayoutRecord make_layout_record(const SolutionRecord& s, std::uint64_t seed = 0);

enum class LayoutFormat { json, sqd };
[[nodiscard]] LayoutFormat layout_format_from_string(std::string_view s);

// Throws std::invalid_argument when the stored digest does not match the site list.
[[nodiscard]] std::string layout_to_json(const LayoutRecord& r);
[[nodiscard]] LayoutRecord layout_from_json(const std::string& text);
// Minimal SiQAD document: one lattice layer and one DB layer holding a dbdot per site.
[[nodiscard]] std::string layout_to_sqd(const LayoutRecord& r, const LatticeGeometry& geom = {});
[[nodiscard]] DBLayout layout_from_sqd(const std::string& text);
void export_layout(const LayoutRecord& r, LayoutFormat format, const std::filesystem::path& path);
// Dispatches on the file extension (.sqd, otherwise JSON).
[[nodiscard]] DBLayout import_layout(const std::filesystem::path& path);

// One JSON object per line.
[[nodiscard]] std::string registry_line(const LayoutRecord& r);
void append_registry(const std::filesystem::path& path, const LayoutRecord& r);
[[nodiscard]] std::vector<LayoutRecord> read_registry(const std::filesystem::path& path);

[[nodiscard]] std::string episode_line(const EpisodeLog& log);
[[nodiscard]] std::vector<EpisodeLog> read_episodes(const std::filesystem::path& path);

}  // namespace sidb
