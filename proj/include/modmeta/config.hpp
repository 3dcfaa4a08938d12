#pragma once

// Run configuration: a `key = value` text file, one entry per line, `#`
// starts a comment. Unknown and repeated keys are rejected.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "modmeta/geometry.hpp"
#include "modmeta/library.hpp"
#include "modmeta/taskbench.hpp"

namespace modmeta {

enum class Mode { Generate, Train, Adapt, Eval, Report };
enum class ModelKind { Wheel, Gen };

// Which samples of a meta-train task BounceGrad draws batches from.
enum class TrainPool { All, Train };

std::string to_string(Mode m);
std::string to_string(ModelKind m);
ModelKind parse_model(std::string_view s);

struct RunConfig {
    // paths
    std::filesystem::path metaset;
    std::filesystem::path checkpoint;
    std::filesystem::path output_dir;
    std::filesystem::path material_map;  // GEN generate: fixed map for every task

    // model
    ModelKind model = ModelKind::Wheel;
    int wheel_nodes = 8;
    int hidden_dim = 16;
    int mp_steps = kDefaultSteps;
    int node_modules = 4;
    int edge_modules = 4;
    std::vector<int> module_hidden{32};
    Activation activation = Activation::Tanh;
    double init_gain = 1.0;
    GridSpec grid;

    // training
    OptimizerConfig optimizer{OptimizerKind::Adam, 1e-3};
    std::int64_t train_steps = 2000;
    int batch_size = 16;
    double sa_t0 = 1.0;
    double sa_t_final = 0.01;
    TrainPool train_pool = TrainPool::All;

    // meta-test adaptation
    std::int64_t adapt_budget = 200;
    double adapt_t0 = 1.0;
    double adapt_t_final = 0.01;
    int adapt_train_points = 50;  // split used for task files given to `adapt`

    // pooled baseline (baseline_steps = 0 skips it)
    BaselineConfig baseline;

    // synthetic generation; the generator shares the learner's module shape
    // unless the generator_* sizes are given
    SyntheticSpec synthetic;
    std::optional<int> generator_hidden_dim;
    std::optional<std::vector<int>> generator_module_hidden;

    double calibration_mm = kNoMotionDistanceMm;
    std::uint64_t seed = 0;

    // Throws ConfigError when a field needed by `mode` is missing or invalid.
    void require(Mode mode) const;
};

// `source` names the input in error messages.
RunConfig parse_config(std::string_view text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

// Every recognised key, in documentation order.
const std::vector<std::string>& config_keys();

}  // namespace modmeta
