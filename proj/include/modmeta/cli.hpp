#pragma once

// Command implementations behind the `modmeta` tool. The run_* functions
// throw ConfigError / DataError / NumericError; run_cli maps them to exit
// codes 1 / 2 / 3.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "modmeta/config.hpp"
#include "modmeta/meta_search.hpp"
#include "modmeta/nn_io.hpp"
#include "modmeta/taskbench.hpp"

namespace modmeta {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

inline constexpr int kCheckpointVersion = 1;
inline constexpr int kSummaryVersion = 1;

// Model family and the settings that fix the graph for each task.
struct ModelSetup {
    ModelKind kind = ModelKind::Wheel;
    int wheel_nodes = 8;
    int mp_steps = kDefaultSteps;
    GridSpec grid;

    LibrarySpec library_spec(const RunConfig& cfg) const;
    // GEN structures are fixed by the task's materials; wheel structures are
    // left empty for the search to fill.
    std::pair<GraphTopology, std::optional<Structure>> task_graph(const TaskDataset& task) const;
};

ModelSetup model_setup(const RunConfig& cfg);
Json to_json(const ModelSetup& m);
ModelSetup model_setup_from_json(const Json& j);

struct Checkpoint {
    ModelSetup model;
    NormalizationStats stats;
    std::vector<std::string> train_task_ids;
    Json trainer;  // BounceGrad::state_to_json
    ModuleLibrary library;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Deterministic stream derived from the run seed; `stream` separates uses.
Rng derived_rng(std::uint64_t seed, std::uint64_t stream);

void run_generate(const RunConfig& cfg, std::ostream& log);
void run_train(const RunConfig& cfg, std::ostream& log);
// `task` is a task id from the configured metaset or a path to a task CSV.
void run_adapt(const RunConfig& cfg, const std::string& task, std::ostream& log);
void run_eval(const RunConfig& cfg, std::ostream& log);
void run_report(const std::filesystem::path& in, const std::filesystem::path& out, std::ostream& log);

struct ReportRow {
    std::string source;
    std::string method;
    double normalized_mse = 0;
    double distance_mm = 0;
};

// Rows from every summary JSON in `dir`, files in name order.
std::vector<ReportRow> collect_report_rows(const std::filesystem::path& dir);
std::string format_report_csv(const std::vector<ReportRow>& rows);
std::string format_report_text(const std::vector<ReportRow>& rows);

// Full command line including argv[0].
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace modmeta
