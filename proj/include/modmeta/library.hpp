#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modmeta/nn.hpp"
#include "modmeta/nn_io.hpp"

namespace modmeta {

using Mlp = MlpParams<double>;
using MlpGrad = MlpGradients<double>;

struct ModuleCounts {
    int node_modules = 1;
    int edge_modules = 1;
};

struct LibrarySpec {
    int hidden_dim = 16;
    int node_modules = 4;
    int edge_modules = 4;
    std::vector<int> module_hidden{32};
    Activation activation = Activation::Tanh;

    // Node and edge modules map 2d -> d, the pusher edge 2d -> d+1 (last
    // output is the attention logit) and the GEN readout d -> 3.
    MlpSpec node_spec() const { return {2 * hidden_dim, module_hidden, hidden_dim, activation}; }
    MlpSpec edge_spec() const { return node_spec(); }
    MlpSpec pusher_spec() const { return {2 * hidden_dim, module_hidden, hidden_dim + 1, activation}; }
    MlpSpec readout_spec() const { return {hidden_dim, module_hidden, 3, activation}; }
    void validate() const;

    bool operator==(const LibrarySpec&) const = default;
};

// The shared module sets plus the fixed pusher and readout networks.
struct ModuleLibrary {
    LibrarySpec spec;
    std::vector<Mlp> node_modules;
    std::vector<Mlp> edge_modules;
    Mlp pusher_edge;
    Mlp gen_readout;

    ModuleCounts counts() const {
        return {static_cast<int>(node_modules.size()), static_cast<int>(edge_modules.size())};
    }
    int hidden_dim() const { return spec.hidden_dim; }

    bool operator==(const ModuleLibrary& o) const;
};

// Each network gets its own seed derived from `seed`; `gain` scales the
// Glorot limit.
ModuleLibrary make_library(const LibrarySpec& spec, std::uint64_t seed, double gain = 1.0);
ModuleLibrary zero_library(const LibrarySpec& spec);

// Gradient accumulators for every network in a library, with flags for the
// networks that took part in the computation.
struct LibraryGradients {
    std::vector<MlpGrad> node;
    std::vector<MlpGrad> edge;
    MlpGrad pusher;
    MlpGrad readout;
    std::vector<char> node_used;
    std::vector<char> edge_used;
    bool pusher_used = false;
    bool readout_used = false;

    static LibraryGradients zeros_like(const ModuleLibrary& lib);
    void set_zero();
    bool all_finite() const;
};

// All parameters of a library in a fixed order: node modules, edge modules,
// pusher edge, readout.
std::vector<double> flatten(const ModuleLibrary& lib);
void unflatten(std::span<const double> flat, ModuleLibrary& lib);
std::vector<double> flatten(const LibraryGradients& g);

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    AdamHyper adam() const { return {lr, beta1, beta2, epsilon}; }
    bool operator==(const OptimizerConfig&) const = default;
};

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& name);

// Applies one optimizer step to every network flagged as used in the
// gradients; the others (and their Adam moments) are left untouched.
class LibraryOptimizer {
public:
    LibraryOptimizer() = default;
    LibraryOptimizer(OptimizerConfig config, const ModuleLibrary& lib);

    void apply(ModuleLibrary& lib, const LibraryGradients& grads);
    const OptimizerConfig& config() const { return config_; }

    Json to_json() const;
    static LibraryOptimizer from_json(const Json& j, OptimizerConfig config, const ModuleLibrary& lib);

    bool operator==(const LibraryOptimizer&) const = default;

private:
    void step(Mlp& p, const MlpGrad& g, AdamState<double>& s);

    OptimizerConfig config_;
    std::vector<AdamState<double>> node_;
    std::vector<AdamState<double>> edge_;
    AdamState<double> pusher_;
    AdamState<double> readout_;
};

Json to_json(const LibrarySpec& spec);
LibrarySpec library_spec_from_json(const Json& j);
Json to_json(const ModuleLibrary& lib);
ModuleLibrary library_from_json(const Json& j);

}  // namespace modmeta
