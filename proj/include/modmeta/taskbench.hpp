#pragma once

// Meta-datasets: synthetic compositional task generation, normalization,
// metrics, the pooled baseline and the on-disk metaset layout.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "modmeta/graph.hpp"
#include "modmeta/meta_search.hpp"

namespace modmeta {

struct Sample {
    Eigen::Vector3d x;  // pusher input (x, y, theta)
    Eigen::Vector3d y;  // object displacement (dx, dy, dtheta)

    bool operator==(const Sample&) const = default;
};

struct TaskDataset {
    std::string id;
    std::vector<Sample> samples;
    std::vector<int> train;  // indices into samples
    std::vector<int> test;
    std::optional<MaterialMap> materials;  // GEN tasks

    // First n_train samples train, the rest test.
    void split_front(int n_train);
    Batch train_batch() const { return gather(train); }
    Batch test_batch() const { return gather(test); }
    Batch all_batch() const;
    Batch gather(std::span<const int> idx) const;

    bool operator==(const TaskDataset&) const = default;
};

// Coordinate-wise multipliers into normalized space.
struct NormalizationStats {
    Eigen::Vector3d in_scale = Eigen::Vector3d::Ones();
    Eigen::Vector3d out_scale = Eigen::Vector3d::Ones();

    bool operator==(const NormalizationStats&) const = default;
};

struct Metaset {
    std::vector<TaskDataset> meta_train;
    std::vector<TaskDataset> meta_test;
    std::optional<NormalizationStats> stats;

    bool operator==(const Metaset&) const = default;
};

// Root-mean-square scales over every sample of every task (no centering), so
// the zero predictor scores exactly 1 per output coordinate afterwards.
// Throws DataError when a coordinate is identically zero.
NormalizationStats fit_normalization(std::span<const TaskDataset> meta_train);

TaskDataset apply_normalization(const NormalizationStats& stats, TaskDataset task);
Eigen::Matrix3Xd invert_normalization(const NormalizationStats& stats, const Eigen::Matrix3Xd& y);

// Mean over samples and coordinates of the squared error.
double normalized_mse(const Eigen::Matrix3Xd& preds, const Eigen::Matrix3Xd& targets);

// Millimetres of error equivalent to a normalized MSE for a surface whose
// no-motion baseline corresponds to `no_motion_mm`.
inline constexpr double kNoMotionDistanceMm = 21.6;
double mse_to_distance(double mse, double no_motion_mm = kNoMotionDistanceMm);

// ---------------------------------------------------------------------------
// Synthetic metasets

enum class GeneratorFamily { Wheel, Gen };

struct SyntheticSpec {
    int n_meta_train = 40;
    int n_meta_test = 10;
    int train_points = 50;
    int test_points = 200;
    GeneratorFamily family = GeneratorFamily::Wheel;
    int node_modules = 4;  // wheel only; GEN always uses one node module per material
    int edge_modules = 4;
    int wheel_nodes = 8;
    int hidden_dim = 16;
    std::vector<int> module_hidden{32};
    int mp_steps = kDefaultSteps;
    double weight_gain = 1.0;
    double noise_sigma = 0.05;
    GridSpec grid;  // GEN only
    std::optional<MaterialMap> fixed_materials;  // GEN: same map for every task instead of random maps
    std::uint64_t seed = 0;

    int points_per_task() const { return train_points + test_points; }
    void validate() const;
};

struct SyntheticMetaset {
    Metaset metaset;  // raw (unnormalized) samples, stats fitted on meta-train
    ModuleLibrary generator;
    GraphTopology topology;  // wheel topology, or the GEN lattice of the first task
    std::vector<Structure> structures;  // meta_train then meta_test
};

// Inputs uniform on [-1, 1]^3 (GEN: positions uniform over the grid region),
// outputs from the generator network plus Gaussian noise.
SyntheticMetaset generate_synthetic_metaset(const SyntheticSpec& spec);

// Fraction of random structure pairs whose mean output disagreement over
// `inputs` random inputs exceeds `threshold`.
double separation_audit(const GraphTopology& topology, const ModuleLibrary& generator, int pairs, int inputs,
                        double threshold, std::uint64_t seed, int mp_steps = kDefaultSteps);

// ---------------------------------------------------------------------------
// Pooled baseline: one MLP fitted to the union of all meta-train samples.

struct BaselineConfig {
    std::vector<int> hidden{64, 64};
    Activation activation = Activation::Tanh;
    OptimizerConfig optimizer{OptimizerKind::Adam, 3e-3};
    std::int64_t steps = 4000;
    int batch_size = 64;
    std::uint64_t seed = 0;
};

struct PooledBaseline {
    Mlp model;

    Eigen::Matrix3Xd predict(const Eigen::Matrix3Xd& x) const;
};

// Expects normalized tasks; trains on every sample of every task.
PooledBaseline pooled_baseline(std::span<const TaskDataset> meta_train, const BaselineConfig& config);

// ---------------------------------------------------------------------------
// Files: <dir>/manifest.json plus one CSV per task under <dir>/tasks/.

inline constexpr const char* kTaskCsvHeader = "x_px,x_py,x_pth,y_dx,y_dy,y_dth";

void save_metaset(const std::filesystem::path& dir, const Metaset& metaset);
Metaset load_metaset(const std::filesystem::path& dir);

// Raises DataError naming source:line for malformed rows.
std::vector<Sample> parse_task_csv(const std::string& text, const std::string& source);
std::string format_task_csv(std::span<const Sample> samples);
std::vector<Sample> load_task_csv(const std::filesystem::path& path);

// Ground-truth sidecar for synthetic metasets.
void save_ground_truth(const std::filesystem::path& dir, const SyntheticMetaset& synthetic);

Json to_json(const NormalizationStats& stats);
NormalizationStats normalization_from_json(const Json& j);

}  // namespace modmeta
