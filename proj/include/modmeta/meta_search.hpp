#pragma once

// Structure search and the alternating BounceGrad training loop.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "modmeta/graph.hpp"
#include "modmeta/library.hpp"

namespace modmeta {

using Rng = std::mt19937_64;

// Samples stored as columns.
struct Batch {
    Eigen::Matrix3Xd x;
    Eigen::Matrix3Xd y;

    Eigen::Index size() const { return x.cols(); }
};

// T(step) = t0 * gamma^step
struct AnnealingSchedule {
    double t0 = 1.0;
    double gamma = 0.995;

    double temperature(std::int64_t step) const { return t0 * std::pow(gamma, static_cast<double>(step)); }
    void validate() const;

    // Decay chosen so that T(steps) == t_final.
    static AnnealingSchedule geometric(double t0, double t_final, std::int64_t steps);

    bool operator==(const AnnealingSchedule&) const = default;
};

Structure initialize_structure(const GraphTopology& topology, ModuleCounts counts, Rng& rng);

// Resamples a single node slot or a single edge slot (fair coin between the
// two kinds). The new module may equal the old one.
Structure propose_structure(const Structure& s, const GraphTopology& topology, ModuleCounts counts, Rng& rng);

// Mean over samples of the squared error summed over the 3 outputs.
double evaluate(const GraphTopology& topology, const Structure& s, const ModuleLibrary& lib, const Batch& batch,
                int steps = kDefaultSteps);

// Metropolis acceptance. Draws from rng only when the proposal is worse.
bool sa_accept(double current_loss, double proposed_loss, double temperature, Rng& rng);

// Without replacement; the whole pool, in order, when batch_size >= pool size.
Batch sample_batch(const Batch& pool, int batch_size, Rng& rng);

struct BounceGradConfig {
    std::int64_t steps = 2000;
    int batch_size = 16;
    AnnealingSchedule schedule;
    OptimizerConfig optimizer;
    bool propose = true;
    bool update_library = true;  // false: structure search only, library frozen
    int mp_steps = kDefaultSteps;
    std::uint64_t seed = 0;
};

struct CurveRow {
    std::int64_t step = 0;
    int task = 0;
    double loss = 0;  // on the gradient batch before the update; frozen library: the chosen structure's search loss
    bool accepted = false;
    double temperature = 0;
};

// Resumable BounceGrad state: library, optimizer moments, per-task
// structures, step counter and RNG.
class BounceGrad {
public:
    // `topologies` holds either one topology shared by all tasks or one per
    // task (GEN tasks differ in their materials). Without initial structures
    // every task starts from initialize_structure.
    BounceGrad(std::vector<GraphTopology> topologies, ModuleLibrary library, std::vector<Batch> tasks,
               BounceGradConfig config, std::optional<std::vector<Structure>> structures = std::nullopt);

    CurveRow step();
    // Runs until step_count() == config().steps.
    std::vector<CurveRow> run();

    const ModuleLibrary& library() const { return library_; }
    const std::vector<Structure>& structures() const { return structures_; }
    const GraphTopology& topology(std::size_t task) const {
        return topologies_.size() == 1 ? topologies_.front() : topologies_.at(task);
    }
    const BounceGradConfig& config() const { return config_; }
    std::int64_t step_count() const { return step_; }
    double temperature() const { return config_.schedule.temperature(step_); }

    // Everything except the task data.
    Json state_to_json() const;
    static BounceGrad from_json(const Json& state, std::vector<GraphTopology> topologies, std::vector<Batch> tasks,
                                BounceGradConfig config);

private:
    std::vector<GraphTopology> topologies_;
    ModuleLibrary library_;
    std::vector<Batch> tasks_;
    BounceGradConfig config_;
    std::vector<Structure> structures_;
    LibraryOptimizer optimizer_;
    LibraryGradients grads_;
    Rng rng_;
    std::int64_t step_ = 0;
};

struct BounceGradResult {
    ModuleLibrary library;
    std::vector<Structure> structures;
    std::vector<CurveRow> curve;
};

BounceGradResult bouncegrad(const std::vector<Batch>& tasks, const GraphTopology& topology,
                            const ModuleLibrary& library, const BounceGradConfig& config,
                            std::optional<std::vector<Structure>> structures = std::nullopt);
BounceGradResult bouncegrad(const std::vector<Batch>& tasks, const std::vector<GraphTopology>& topologies,
                            const ModuleLibrary& library, const BounceGradConfig& config,
                            std::optional<std::vector<Structure>> structures = std::nullopt);

struct AdaptResult {
    Structure structure;
    double loss = 0;          // best train loss found
    double initial_loss = 0;  // train loss of the random starting structure
};

// Simulated annealing over structures with the library frozen; returns the
// best structure visited, scored on `train`. Exactly `budget` proposals.
AdaptResult adapt(const Batch& train, const GraphTopology& topology, const ModuleLibrary& frozen,
                  std::int64_t budget, const AnnealingSchedule& schedule, Rng& rng, int mp_steps = kDefaultSteps);

Json to_json(const Structure& s);
Structure structure_from_json(const Json& j);
Json to_json(const AnnealingSchedule& s);
AnnealingSchedule schedule_from_json(const Json& j);
std::string rng_state(const Rng& rng);
Rng rng_from_state(const std::string& state);

}  // namespace modmeta
