#include "modmeta/library.hpp"

#include <random>
#include <stdexcept>

namespace modmeta {

void LibrarySpec::validate() const {
    if (hidden_dim < 1) throw std::invalid_argument("hidden_dim must be >= 1");
    if (node_modules < 1 || edge_modules < 1) throw std::invalid_argument("module library cannot be empty");
    node_spec().validate();
}

bool ModuleLibrary::operator==(const ModuleLibrary& o) const {
    return spec == o.spec && node_modules == o.node_modules && edge_modules == o.edge_modules &&
           pusher_edge == o.pusher_edge && gen_readout == o.gen_readout;
}

ModuleLibrary make_library(const LibrarySpec& spec, std::uint64_t seed, double gain) {
    spec.validate();
    std::mt19937_64 seeder(seed);
    ModuleLibrary lib;
    lib.spec = spec;
    for (int i = 0; i < spec.node_modules; ++i) lib.node_modules.push_back(init_params<double>(spec.node_spec(), seeder(), gain));
    for (int i = 0; i < spec.edge_modules; ++i) lib.edge_modules.push_back(init_params<double>(spec.edge_spec(), seeder(), gain));
    lib.pusher_edge = init_params<double>(spec.pusher_spec(), seeder(), gain);
    lib.gen_readout = init_params<double>(spec.readout_spec(), seeder(), gain);
    return lib;
}

ModuleLibrary zero_library(const LibrarySpec& spec) {
    spec.validate();
    ModuleLibrary lib;
    lib.spec = spec;
    lib.node_modules.assign(spec.node_modules, zero_params<double>(spec.node_spec()));
    lib.edge_modules.assign(spec.edge_modules, zero_params<double>(spec.edge_spec()));
    lib.pusher_edge = zero_params<double>(spec.pusher_spec());
    lib.gen_readout = zero_params<double>(spec.readout_spec());
    return lib;
}

LibraryGradients LibraryGradients::zeros_like(const ModuleLibrary& lib) {
    LibraryGradients g;
    for (const auto& m : lib.node_modules) g.node.push_back(MlpGrad::zeros_like(m));
    for (const auto& m : lib.edge_modules) g.edge.push_back(MlpGrad::zeros_like(m));
    g.pusher = MlpGrad::zeros_like(lib.pusher_edge);
    g.readout = MlpGrad::zeros_like(lib.gen_readout);
    g.node_used.assign(g.node.size(), 0);
    g.edge_used.assign(g.edge.size(), 0);
    return g;
}

void LibraryGradients::set_zero() {
    for (auto& m : node) m.set_zero();
    for (auto& m : edge) m.set_zero();
    pusher.set_zero();
    readout.set_zero();
    std::fill(node_used.begin(), node_used.end(), 0);
    std::fill(edge_used.begin(), edge_used.end(), 0);
    pusher_used = readout_used = false;
}

bool LibraryGradients::all_finite() const {
    for (const auto& m : node)
        if (!m.all_finite()) return false;
    for (const auto& m : edge)
        if (!m.all_finite()) return false;
    return pusher.all_finite() && readout.all_finite();
}

namespace {

template <typename Stack>
void append(std::vector<double>& out, const Stack& s) {
    const auto f = flatten<double>(s);
    out.insert(out.end(), f.begin(), f.end());
}

}  // namespace

std::vector<double> flatten(const ModuleLibrary& lib) {
    std::vector<double> out;
    for (const auto& m : lib.node_modules) append(out, m);
    for (const auto& m : lib.edge_modules) append(out, m);
    append(out, lib.pusher_edge);
    append(out, lib.gen_readout);
    return out;
}

void unflatten(std::span<const double> flat, ModuleLibrary& lib) {
    std::size_t k = 0;
    auto take = [&](Mlp& m) {
        const auto n = static_cast<std::size_t>(m.size());
        if (k + n > flat.size()) throw std::invalid_argument("library unflatten: too few values");
        unflatten<double>(flat.subspan(k, n), m);
        k += n;
    };
    for (auto& m : lib.node_modules) take(m);
    for (auto& m : lib.edge_modules) take(m);
    take(lib.pusher_edge);
    take(lib.gen_readout);
    if (k != flat.size()) throw std::invalid_argument("library unflatten: too many values");
}

std::vector<double> flatten(const LibraryGradients& g) {
    std::vector<double> out;
    for (const auto& m : g.node) append(out, m);
    for (const auto& m : g.edge) append(out, m);
    append(out, g.pusher);
    append(out, g.readout);
    return out;
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "adam") return OptimizerKind::Adam;
    if (name == "sgd") return OptimizerKind::Sgd;
    throw std::invalid_argument("unknown optimizer '" + name + "'");
}

LibraryOptimizer::LibraryOptimizer(OptimizerConfig config, const ModuleLibrary& lib)
    : config_(config),
      node_(lib.node_modules.size()),
      edge_(lib.edge_modules.size()) {}

void LibraryOptimizer::step(Mlp& p, const MlpGrad& g, AdamState<double>& s) {
    if (config_.kind == OptimizerKind::Sgd)
        sgd_update(p, g, config_.lr);
    else
        adam_update(p, g, s, config_.adam());
}

void LibraryOptimizer::apply(ModuleLibrary& lib, const LibraryGradients& grads) {
    if (grads.node.size() != lib.node_modules.size() || grads.edge.size() != lib.edge_modules.size() ||
        node_.size() != lib.node_modules.size() || edge_.size() != lib.edge_modules.size())
        throw std::invalid_argument("optimizer: library and gradient sizes differ");
    // Validate everything first so a rejected step leaves the library intact.
    if (!grads.all_finite()) throw NumericError("optimizer: non-finite gradient entries, step rejected");
    for (std::size_t i = 0; i < lib.node_modules.size(); ++i)
        if (grads.node_used[i]) step(lib.node_modules[i], grads.node[i], node_[i]);
    for (std::size_t i = 0; i < lib.edge_modules.size(); ++i)
        if (grads.edge_used[i]) step(lib.edge_modules[i], grads.edge[i], edge_[i]);
    if (grads.pusher_used) step(lib.pusher_edge, grads.pusher, pusher_);
    if (grads.readout_used) step(lib.gen_readout, grads.readout, readout_);
}

Json LibraryOptimizer::to_json() const {
    Json nodes = Json::array(), edges = Json::array();
    for (const auto& s : node_) nodes.push_back(modmeta::to_json(s));
    for (const auto& s : edge_) edges.push_back(modmeta::to_json(s));
    return Json{{"kind", to_string(config_.kind)},
                {"lr", config_.lr},
                {"beta1", config_.beta1},
                {"beta2", config_.beta2},
                {"epsilon", config_.epsilon},
                {"node", nodes},
                {"edge", edges},
                {"pusher", modmeta::to_json(pusher_)},
                {"readout", modmeta::to_json(readout_)}};
}

LibraryOptimizer LibraryOptimizer::from_json(const Json& j, OptimizerConfig config, const ModuleLibrary& lib) {
    LibraryOptimizer opt(config, lib);
    const auto& nodes = j.at("node");
    const auto& edges = j.at("edge");
    if (nodes.size() != lib.node_modules.size() || edges.size() != lib.edge_modules.size())
        throw std::invalid_argument("optimizer state does not match library");
    for (std::size_t i = 0; i < nodes.size(); ++i) opt.node_[i] = adam_state_from_json(nodes[i], lib.node_modules[i]);
    for (std::size_t i = 0; i < edges.size(); ++i) opt.edge_[i] = adam_state_from_json(edges[i], lib.edge_modules[i]);
    opt.pusher_ = adam_state_from_json(j.at("pusher"), lib.pusher_edge);
    opt.readout_ = adam_state_from_json(j.at("readout"), lib.gen_readout);
    return opt;
}

Json to_json(const LibrarySpec& spec) {
    return Json{{"hidden_dim", spec.hidden_dim},
                {"node_modules", spec.node_modules},
                {"edge_modules", spec.edge_modules},
                {"module_hidden", spec.module_hidden},
                {"activation", to_string(spec.activation)}};
}

LibrarySpec library_spec_from_json(const Json& j) {
    LibrarySpec s;
    s.hidden_dim = j.at("hidden_dim").get<int>();
    s.node_modules = j.at("node_modules").get<int>();
    s.edge_modules = j.at("edge_modules").get<int>();
    s.module_hidden = j.at("module_hidden").get<std::vector<int>>();
    s.activation = parse_activation(j.at("activation").get<std::string>());
    s.validate();
    return s;
}

Json to_json(const ModuleLibrary& lib) {
    Json nodes = Json::array(), edges = Json::array();
    for (const auto& m : lib.node_modules) nodes.push_back(flatten<double>(m));
    for (const auto& m : lib.edge_modules) edges.push_back(flatten<double>(m));
    return Json{{"spec", to_json(lib.spec)},
                {"node_modules", nodes},
                {"edge_modules", edges},
                {"pusher_edge", flatten<double>(lib.pusher_edge)},
                {"gen_readout", flatten<double>(lib.gen_readout)}};
}

ModuleLibrary library_from_json(const Json& j) {
    ModuleLibrary lib = zero_library(library_spec_from_json(j.at("spec")));
    const auto& nodes = j.at("node_modules");
    const auto& edges = j.at("edge_modules");
    if (nodes.size() != lib.node_modules.size() || edges.size() != lib.edge_modules.size())
        throw std::invalid_argument("library module counts do not match its spec");
    for (std::size_t i = 0; i < nodes.size(); ++i)
        unflatten<double>(nodes[i].get<std::vector<double>>(), lib.node_modules[i]);
    for (std::size_t i = 0; i < edges.size(); ++i)
        unflatten<double>(edges[i].get<std::vector<double>>(), lib.edge_modules[i]);
    unflatten<double>(j.at("pusher_edge").get<std::vector<double>>(), lib.pusher_edge);
    unflatten<double>(j.at("gen_readout").get<std::vector<double>>(), lib.gen_readout);
    return lib;
}

}  // namespace modmeta
