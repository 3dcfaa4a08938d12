#include "modmeta/meta_search.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "modmeta/errors.hpp"

namespace modmeta {

void AnnealingSchedule::validate() const {
    if (!(t0 > 0)) throw std::invalid_argument("annealing t0 must be positive");
    if (!(gamma > 0 && gamma < 1)) throw std::invalid_argument("annealing gamma must lie in (0, 1)");
}

AnnealingSchedule AnnealingSchedule::geometric(double t0, double t_final, std::int64_t steps) {
    if (!(t0 > 0) || !(t_final > 0) || !(t_final < t0))
        throw std::invalid_argument("annealing needs 0 < t_final < t0");
    if (steps < 1) return {t0, t_final / t0};
    return {t0, std::pow(t_final / t0, 1.0 / static_cast<double>(steps))};
}

namespace {

int uniform_index(int n, Rng& rng) { return std::uniform_int_distribution<int>(0, n - 1)(rng); }

void check_counts(ModuleCounts counts) {
    if (counts.node_modules < 1 || counts.edge_modules < 1) throw std::invalid_argument("empty module library");
}

}  // namespace

Structure initialize_structure(const GraphTopology& topology, ModuleCounts counts, Rng& rng) {
    check_counts(counts);
    Structure s;
    s.node_assign.resize(topology.node_slots);
    s.edge_assign.resize(topology.edge_slots);
    for (auto& m : s.node_assign) m = uniform_index(counts.node_modules, rng);
    for (auto& m : s.edge_assign) m = uniform_index(counts.edge_modules, rng);
    return s;
}

Structure propose_structure(const Structure& s, const GraphTopology& topology, ModuleCounts counts, Rng& rng) {
    check_counts(counts);
    Structure p = s;
    const bool node = std::bernoulli_distribution(0.5)(rng);
    if (node && topology.node_slots > 0) {
        p.node_assign[uniform_index(topology.node_slots, rng)] = uniform_index(counts.node_modules, rng);
    } else if (!node && topology.edge_slots > 0) {
        p.edge_assign[uniform_index(topology.edge_slots, rng)] = uniform_index(counts.edge_modules, rng);
    }
    return p;
}

double evaluate(const GraphTopology& topology, const Structure& s, const ModuleLibrary& lib, const Batch& batch,
                int steps) {
    if (batch.size() == 0) throw std::invalid_argument("evaluate: empty batch");
    if (batch.y.cols() != batch.x.cols()) throw std::invalid_argument("evaluate: x and y sample counts differ");
    const Eigen::Matrix3Xd p = agn_apply(topology, s, lib, batch.x, steps);
    return (p - batch.y).colwise().squaredNorm().mean();
}

bool sa_accept(double current_loss, double proposed_loss, double temperature, Rng& rng) {
    if (!(temperature > 0)) throw std::invalid_argument("sa_accept: temperature must be positive");
    if (proposed_loss <= current_loss) return true;
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    return u < std::exp(-(proposed_loss - current_loss) / temperature);
}

Batch sample_batch(const Batch& pool, int batch_size, Rng& rng) {
    const int n = static_cast<int>(pool.size());
    if (n == 0) throw std::invalid_argument("sample_batch: empty pool");
    if (batch_size <= 0) throw std::invalid_argument("sample_batch: batch size must be positive");
    if (batch_size >= n) return pool;
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Batch b{Eigen::Matrix3Xd(3, batch_size), Eigen::Matrix3Xd(3, batch_size)};
    for (int i = 0; i < batch_size; ++i) {
        const int j = std::uniform_int_distribution<int>(i, n - 1)(rng);
        std::swap(idx[i], idx[j]);
        b.x.col(i) = pool.x.col(idx[i]);
        b.y.col(i) = pool.y.col(idx[i]);
    }
    return b;
}

// ---------------------------------------------------------------------------

BounceGrad::BounceGrad(std::vector<GraphTopology> topologies, ModuleLibrary library, std::vector<Batch> tasks,
                       BounceGradConfig config, std::optional<std::vector<Structure>> structures)
    : topologies_(std::move(topologies)),
      library_(std::move(library)),
      tasks_(std::move(tasks)),
      config_(config),
      optimizer_(config.optimizer, library_),
      grads_(LibraryGradients::zeros_like(library_)),
      rng_(config.seed) {
    if (tasks_.empty()) throw std::invalid_argument("bouncegrad: empty task set");
    if (topologies_.size() != 1 && topologies_.size() != tasks_.size())
        throw std::invalid_argument("bouncegrad: need one shared topology or one per task");
    for (const auto& t : tasks_)
        if (t.size() == 0) throw std::invalid_argument("bouncegrad: task without samples");
    config_.schedule.validate();
    if (config_.batch_size < 1) throw std::invalid_argument("bouncegrad: batch size must be positive");
    if (structures) {
        if (structures->size() != tasks_.size())
            throw std::invalid_argument("bouncegrad: one initial structure per task required");
        structures_ = std::move(*structures);
    } else {
        for (std::size_t l = 0; l < tasks_.size(); ++l)
            structures_.push_back(initialize_structure(topology(l), library_.counts(), rng_));
    }
    for (std::size_t l = 0; l < structures_.size(); ++l) validate(topology(l), structures_[l], library_);
}

CurveRow BounceGrad::step() {
    CurveRow row;
    row.step = step_;
    row.temperature = temperature();
    const int l = uniform_index(static_cast<int>(tasks_.size()), rng_);
    row.task = l;
    Structure& s = structures_[l];
    const GraphTopology& topo = topology(static_cast<std::size_t>(l));

    if (config_.propose) {
        const Structure p = propose_structure(s, topo, library_.counts(), rng_);
        const Batch train = sample_batch(tasks_[l], config_.batch_size, rng_);
        const double loss_s = evaluate(topo, s, library_, train, config_.mp_steps);
        const double loss_p = evaluate(topo, p, library_, train, config_.mp_steps);
        if (!std::isfinite(loss_s) || !std::isfinite(loss_p))
            throw NumericError("bouncegrad: non-finite structure loss at step " + std::to_string(step_) +
                               " (task " + std::to_string(l) + ")");
        row.accepted = sa_accept(loss_s, loss_p, row.temperature, rng_);
        if (row.accepted) s = p;
        if (!config_.update_library) {
            row.loss = row.accepted ? loss_p : loss_s;
            ++step_;
            return row;
        }
    }

    const Batch batch = sample_batch(tasks_[l], config_.batch_size, rng_);
    auto fwd = agn_forward(topo, s, library_, batch.x, config_.mp_steps);
    const Eigen::Matrix3Xd residual = fwd.y - batch.y;
    row.loss = residual.colwise().squaredNorm().mean();
    if (!std::isfinite(row.loss))
        throw NumericError("bouncegrad: non-finite training loss at step " + std::to_string(step_) + " (task " +
                           std::to_string(l) + ")");
    if (config_.update_library) {
        grads_.set_zero();
        agn_backward(fwd.tape, (2.0 / static_cast<double>(batch.size())) * residual, grads_);
        optimizer_.apply(library_, grads_);
    }
    ++step_;
    return row;
}

std::vector<CurveRow> BounceGrad::run() {
    std::vector<CurveRow> curve;
    while (step_ < config_.steps) curve.push_back(step());
    return curve;
}

Json BounceGrad::state_to_json() const {
    Json structures = Json::array();
    for (const auto& s : structures_) structures.push_back(to_json(s));
    return Json{{"step", step_},
                {"rng", rng_state(rng_)},
                {"schedule", to_json(config_.schedule)},
                {"library", to_json(library_)},
                {"optimizer", optimizer_.to_json()},
                {"structures", structures}};
}

BounceGrad BounceGrad::from_json(const Json& state, std::vector<GraphTopology> topologies,
                                 std::vector<Batch> tasks, BounceGradConfig config) {
    config.schedule = schedule_from_json(state.at("schedule"));
    std::vector<Structure> structures;
    for (const auto& s : state.at("structures")) structures.push_back(structure_from_json(s));
    BounceGrad bg(std::move(topologies), library_from_json(state.at("library")), std::move(tasks), config,
                  std::move(structures));
    bg.optimizer_ = LibraryOptimizer::from_json(state.at("optimizer"), config.optimizer, bg.library_);
    bg.rng_ = rng_from_state(state.at("rng").get<std::string>());
    bg.step_ = state.at("step").get<std::int64_t>();
    return bg;
}

BounceGradResult bouncegrad(const std::vector<Batch>& tasks, const GraphTopology& topology,
                            const ModuleLibrary& library, const BounceGradConfig& config,
                            std::optional<std::vector<Structure>> structures) {
    return bouncegrad(tasks, std::vector<GraphTopology>{topology}, library, config, std::move(structures));
}

BounceGradResult bouncegrad(const std::vector<Batch>& tasks, const std::vector<GraphTopology>& topologies,
                            const ModuleLibrary& library, const BounceGradConfig& config,
                            std::optional<std::vector<Structure>> structures) {
    BounceGrad bg(topologies, library, tasks, config, std::move(structures));
    auto curve = bg.run();
    return {bg.library(), bg.structures(), std::move(curve)};
}

AdaptResult adapt(const Batch& train, const GraphTopology& topology, const ModuleLibrary& frozen,
                  std::int64_t budget, const AnnealingSchedule& schedule, Rng& rng, int mp_steps) {
    schedule.validate();
    // The library and batch are fixed, so a structure's loss never changes;
    // revisits (frequent once the temperature is low) are looked up.
    std::map<std::pair<std::vector<int>, std::vector<int>>, double> seen;
    auto loss_of = [&](const Structure& s) {
        auto key = std::make_pair(s.node_assign, s.edge_assign);
        if (auto it = seen.find(key); it != seen.end()) return it->second;
        const double loss = evaluate(topology, s, frozen, train, mp_steps);
        if (!std::isfinite(loss)) throw NumericError("adapt: non-finite loss");
        seen.emplace(std::move(key), loss);
        return loss;
    };

    Structure current = initialize_structure(topology, frozen.counts(), rng);
    double current_loss = loss_of(current);
    AdaptResult best{current, current_loss, current_loss};
    for (std::int64_t k = 0; k < budget; ++k) {
        Structure p = propose_structure(current, topology, frozen.counts(), rng);
        const double loss = loss_of(p);
        if (sa_accept(current_loss, loss, schedule.temperature(k), rng)) {
            current = std::move(p);
            current_loss = loss;
            if (current_loss < best.loss) {
                best.structure = current;
                best.loss = current_loss;
            }
        }
    }
    return best;
}

Json to_json(const Structure& s) { return Json{{"node_assign", s.node_assign}, {"edge_assign", s.edge_assign}}; }

Structure structure_from_json(const Json& j) {
    return Structure{j.at("node_assign").get<std::vector<int>>(), j.at("edge_assign").get<std::vector<int>>()};
}

Json to_json(const AnnealingSchedule& s) { return Json{{"t0", s.t0}, {"gamma", s.gamma}}; }

AnnealingSchedule schedule_from_json(const Json& j) {
    AnnealingSchedule s{j.at("t0").get<double>(), j.at("gamma").get<double>()};
    s.validate();
    return s;
}

std::string rng_state(const Rng& rng) {
    std::ostringstream ss;
    ss << rng;
    return ss.str();
}

Rng rng_from_state(const std::string& state) {
    Rng rng;
    std::istringstream ss(state);
    ss >> rng;
    if (!ss) throw std::invalid_argument("corrupt RNG state");
    return rng;
}

}  // namespace modmeta
