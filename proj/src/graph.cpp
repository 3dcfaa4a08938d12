#include "modmeta/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace modmeta {

using Eigen::Matrix3Xd;
using Eigen::MatrixXd;

std::vector<Point2> GraphTopology::positions() const {
    std::vector<Point2> out;
    out.reserve(nodes.size());
    for (const auto& n : nodes) out.push_back(n.kind.position);
    return out;
}

int hamming_distance(const Structure& a, const Structure& b) {
    if (a.node_assign.size() != b.node_assign.size() || a.edge_assign.size() != b.edge_assign.size())
        throw std::invalid_argument("hamming_distance: structures have different slot counts");
    int d = 0;
    for (std::size_t i = 0; i < a.node_assign.size(); ++i) d += a.node_assign[i] != b.node_assign[i];
    for (std::size_t i = 0; i < a.edge_assign.size(); ++i) d += a.edge_assign[i] != b.edge_assign[i];
    return d;
}

void validate(const GraphTopology& topology, const Structure& s, const ModuleLibrary& lib) {
    if (static_cast<int>(s.node_assign.size()) != topology.node_slots ||
        static_cast<int>(s.edge_assign.size()) != topology.edge_slots)
        throw std::invalid_argument("structure has " + std::to_string(s.node_assign.size()) + "/" +
                                    std::to_string(s.edge_assign.size()) + " node/edge slots, topology needs " +
                                    std::to_string(topology.node_slots) + "/" + std::to_string(topology.edge_slots));
    const auto counts = lib.counts();
    for (std::size_t i = 0; i < s.node_assign.size(); ++i)
        if (s.node_assign[i] < 0 || s.node_assign[i] >= counts.node_modules)
            throw std::invalid_argument("node slot " + std::to_string(i) + " is unassigned or out of range");
    for (std::size_t i = 0; i < s.edge_assign.size(); ++i)
        if (s.edge_assign[i] < 0 || s.edge_assign[i] >= counts.edge_modules)
            throw std::invalid_argument("edge slot " + std::to_string(i) + " is unassigned or out of range");
    const int d = lib.hidden_dim();
    if (topology.family == TopologyFamily::Wheel && d < kMinWheelHidden)
        throw std::invalid_argument("wheel networks need hidden_dim >= 13");
    if (topology.family == TopologyFamily::Gen && d < kGenCodeLen + 3)
        throw std::invalid_argument("GEN networks need hidden_dim >= 7");
}

// ---------------------------------------------------------------------------
// Wheel

double wheel_angle(int i, int n) { return 2.0 * std::numbers::pi * i / n; }

GraphTopology wheel_topology(int n) {
    if (n < 2) throw std::invalid_argument("wheel_topology: need at least 2 exterior nodes");
    GraphTopology t;
    t.family = TopologyFamily::Wheel;
    t.exterior_count = n;
    const int center = n;
    t.pusher = n + 1;
    for (int i = 0; i < n; ++i) {
        NodeKind k{NodeRole::Exterior, i, Point2(std::cos(wheel_angle(i, n)), std::sin(wheel_angle(i, n)))};
        t.nodes.push_back({k, i});
    }
    t.nodes.push_back({NodeKind{NodeRole::Center}, center});
    t.nodes.push_back({NodeKind{NodeRole::Pusher}, -1});
    t.node_slots = n + 1;

    int slot = 0;
    for (int i = 0; i < n; ++i) t.edges.push_back({i, (i + 1) % n, EdgeKind::Cw, slot++});
    for (int i = 0; i < n; ++i) t.edges.push_back({(i + 1) % n, i, EdgeKind::Ccw, slot++});
    for (int i = 0; i < n; ++i) t.edges.push_back({i, center, EdgeKind::ToCenter, slot++});
    for (int i = 0; i < n; ++i) t.edges.push_back({center, i, EdgeKind::FromCenter, slot++});
    t.edge_slots = slot;
    for (int v = 0; v <= center; ++v) t.edges.push_back({t.pusher, v, EdgeKind::PusherOut, -1});
    return t;
}

HiddenStates wheel_encode(const Matrix3Xd& x, int n, int d) {
    if (n < 2) throw std::invalid_argument("wheel_encode: need at least 2 exterior nodes");
    if (d < kMinWheelHidden)
        throw std::invalid_argument("wheel_encode: hidden dim " + std::to_string(d) + " < 13");
    const Eigen::Index b = x.cols();
    HiddenStates h;
    h.code_len = kWheelCodeLen;
    h.nodes.assign(n + 2, MatrixXd::Zero(d, b));
    h.codes.assign(n + 2, MatrixXd::Zero(kWheelCodeLen, b));
    for (int i = 0; i < n; ++i) {
        h.codes[i].row(0).setConstant(std::cos(wheel_angle(i, n)));
        h.codes[i].row(1).setConstant(std::sin(wheel_angle(i, n)));
    }
    h.codes[n].row(2).setOnes();
    h.codes[n + 1].row(3).setOnes();
    h.codes[n + 1].bottomRows(3) = x;
    for (int v = 0; v < n + 2; ++v) h.nodes[v].topRows(kWheelCodeLen) = h.codes[v];
    return h;
}

HiddenStates wheel_encode(const Eigen::Vector3d& x, int n, int d) { return wheel_encode(Matrix3Xd(x), n, d); }

Matrix3Xd wheel_decode(const HiddenStates& states, const GraphTopology& topology) {
    if (topology.family != TopologyFamily::Wheel) throw std::invalid_argument("wheel_decode: not a wheel topology");
    const int n = topology.exterior_count;
    const int d = states.dim();
    if (d < kMinWheelHidden || static_cast<int>(states.nodes.size()) != n + 2)
        throw std::invalid_argument("wheel_decode: states do not match the wheel");
    Matrix3Xd y = Matrix3Xd::Zero(3, states.batch());
    for (int i = 0; i < n; ++i) {
        const double a = wheel_angle(i, n);
        y += std::cos(a) * states.nodes[i].middleRows(d - 3, 3) + std::sin(a) * states.nodes[i].middleRows(d - 6, 3);
    }
    return y / n;
}

// ---------------------------------------------------------------------------
// Graph element networks

namespace {

std::pair<GraphTopology, Structure> gen_from_edges(std::span<const Point2> points, std::span<const Material> materials,
                                                   const std::vector<UndirectedEdge>& undirected) {
    GraphTopology t;
    t.family = TopologyFamily::Gen;
    Structure s;
    for (std::size_t v = 0; v < points.size(); ++v) {
        NodeKind k{NodeRole::GenCell, -1, points[v], materials[v]};
        t.nodes.push_back({k, static_cast<int>(v)});
        s.node_assign.push_back(static_cast<int>(materials[v]));
    }
    t.node_slots = static_cast<int>(points.size());
    int slot = 0;
    for (auto [a, b] : undirected) {
        t.edges.push_back({a, b, EdgeKind::Grid, slot++});
        t.edges.push_back({b, a, EdgeKind::Grid, slot++});
    }
    t.edge_slots = slot;
    s.edge_assign.assign(slot, 0);
    return {std::move(t), std::move(s)};
}

}  // namespace

std::pair<GraphTopology, Structure> gen_topology(const GridSpec& grid, const MaterialMap& materials) {
    grid.validate();
    if (materials.rows != grid.rows || materials.cols != grid.cols)
        throw std::invalid_argument("gen_topology: material map is " + std::to_string(materials.rows) + "x" +
                                    std::to_string(materials.cols) + ", grid is " + std::to_string(grid.rows) + "x" +
                                    std::to_string(grid.cols));
    const GridLattice lattice = grid_topology(grid);
    return gen_from_edges(lattice.points, materials.cells, lattice.edges);
}

std::pair<GraphTopology, Structure> gen_delaunay_topology(std::span<const Point2> points,
                                                          std::span<const Material> materials) {
    if (points.size() != materials.size())
        throw std::invalid_argument("gen_delaunay_topology: one material per point required");
    const Triangulation tri = delaunay(points);
    return gen_from_edges(points, materials, tri.edges);
}

HiddenStates gen_encode(const Matrix3Xd& x, const GraphTopology& topology, int d) {
    if (topology.family != TopologyFamily::Gen) throw std::invalid_argument("gen_encode: not a GEN topology");
    if (d < kGenCodeLen + 3) throw std::invalid_argument("gen_encode: hidden dim must be >= 7");
    const Eigen::Index b = x.cols();
    const std::size_t n = topology.nodes.size();
    HiddenStates h;
    h.code_len = kGenCodeLen;
    h.nodes.assign(n, MatrixXd::Zero(d, b));
    h.codes.assign(n, MatrixXd::Zero(kGenCodeLen, b));
    for (std::size_t v = 0; v < n; ++v) {
        h.codes[v].row(static_cast<int>(topology.nodes[v].kind.material)).setOnes();
        h.nodes[v].topRows(kGenCodeLen) = h.codes[v];
    }
    const auto positions = topology.positions();
    for (Eigen::Index c = 0; c < b; ++c) {
        const std::size_t v = nearest_node(positions, Point2(x(0, c), x(1, c)));
        h.nodes[v].block(kGenCodeLen, c, 3, 1) = x.col(c);
    }
    return h;
}

Matrix3Xd gen_decode(const HiddenStates& states, const ModuleLibrary& lib, std::vector<MlpTape<double>>* tapes) {
    if (states.nodes.empty()) throw std::invalid_argument("gen_decode: no nodes");
    Matrix3Xd y = Matrix3Xd::Zero(3, states.batch());
    if (tapes) tapes->clear();
    for (const auto& h : states.nodes) {
        if (tapes) {
            auto f = mlp_forward(lib.gen_readout, h);
            y += f.y;
            tapes->push_back(std::move(f.tape));
        } else {
            y += mlp_apply(lib.gen_readout, h);
        }
    }
    return y / static_cast<double>(states.nodes.size());
}

// ---------------------------------------------------------------------------
// Message passing

namespace {

MatrixXd stack(const MatrixXd& top, const MatrixXd& bottom) {
    MatrixXd out(top.rows() + bottom.rows(), top.cols());
    out << top, bottom;
    return out;
}

std::vector<int> pusher_edges(const GraphTopology& t) {
    std::vector<int> out;
    for (std::size_t e = 0; e < t.edges.size(); ++e)
        if (t.edges[e].kind == EdgeKind::PusherOut) out.push_back(static_cast<int>(e));
    return out;
}

// Column-wise softmax.
MatrixXd softmax(const MatrixXd& logits) {
    MatrixXd w = logits;
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
        w.col(c).array() -= w.col(c).maxCoeff();
        w.col(c) = w.col(c).array().exp().matrix();
        w.col(c) /= w.col(c).sum();
    }
    return w;
}

void check_states(const GraphTopology& t, const HiddenStates& h, const ModuleLibrary& lib) {
    if (h.nodes.size() != t.nodes.size() || h.codes.size() != t.nodes.size())
        throw std::invalid_argument("hidden states do not match topology node count");
    if (h.dim() != lib.hidden_dim()) throw std::invalid_argument("hidden states do not match library hidden dim");
}

}  // namespace

HiddenStates message_passing_step(const GraphTopology& topology, const Structure& s, const ModuleLibrary& lib,
                                  const HiddenStates& states, StepTape* tape) {
    validate(topology, s, lib);
    check_states(topology, states, lib);
    const int d = lib.hidden_dim();
    const Eigen::Index b = states.batch();
    const std::size_t n = topology.nodes.size();

    std::vector<MatrixXd> incoming(n, MatrixXd::Zero(d, b));
    if (tape) {
        tape->edge.assign(topology.edges.size(), {});
        tape->node.assign(n, {});
        tape->pusher_raw.clear();
    }

    const std::vector<int> pusher = pusher_edges(topology);
    MatrixXd logits(static_cast<Eigen::Index>(pusher.size()), b);
    std::vector<MatrixXd> raw(pusher.size());

    for (std::size_t e = 0; e < topology.edges.size(); ++e) {
        const GraphEdge& edge = topology.edges[e];
        const MatrixXd in = stack(states.nodes[edge.src], states.nodes[edge.dst]);
        const Mlp& module = edge.kind == EdgeKind::PusherOut ? lib.pusher_edge : lib.edge_modules[s.edge_assign[edge.slot]];
        MatrixXd out;
        if (tape) {
            auto f = mlp_forward(module, in);
            out = std::move(f.y);
            tape->edge[e] = std::move(f.tape);
        } else {
            out = mlp_apply(module, in);
        }
        if (edge.kind == EdgeKind::PusherOut) {
            const auto k = static_cast<std::size_t>(std::find(pusher.begin(), pusher.end(), static_cast<int>(e)) -
                                                    pusher.begin());
            logits.row(static_cast<Eigen::Index>(k)) = out.row(d);
            raw[k] = std::move(out);
        } else {
            incoming[edge.dst] += out;
        }
    }

    if (!pusher.empty()) {
        const MatrixXd weights = softmax(logits);
        for (std::size_t k = 0; k < pusher.size(); ++k) {
            const auto row = weights.row(static_cast<Eigen::Index>(k)).array();
            incoming[topology.edges[pusher[k]].dst].array() += raw[k].topRows(d).array().rowwise() * row;
        }
        if (tape) {
            tape->attention = weights;
            tape->pusher_raw = std::move(raw);
        }
    }

    HiddenStates next;
    next.code_len = states.code_len;
    next.codes = states.codes;
    next.nodes.resize(n);
    for (std::size_t v = 0; v < n; ++v) {
        const GraphNode& node = topology.nodes[v];
        if (node.slot < 0) {
            next.nodes[v] = states.nodes[v];
            continue;
        }
        const Mlp& module = lib.node_modules[s.node_assign[node.slot]];
        const MatrixXd in = stack(states.nodes[v], incoming[v]);
        if (tape) {
            auto f = mlp_forward(module, in);
            next.nodes[v] = std::move(f.y);
            tape->node[v] = std::move(f.tape);
        } else {
            next.nodes[v] = mlp_apply(module, in);
        }
        next.nodes[v].topRows(states.code_len) = states.codes[v];
    }
    return next;
}

namespace {

HiddenStates encode(const GraphTopology& topology, const ModuleLibrary& lib, const Matrix3Xd& x) {
    if (topology.family == TopologyFamily::Wheel) return wheel_encode(x, topology.exterior_count, lib.hidden_dim());
    return gen_encode(x, topology, lib.hidden_dim());
}

// Reverse of one message-passing step: consumes d(loss)/d(next states) and
// returns d(loss)/d(previous states).
std::vector<MatrixXd> step_backward(const GraphTopology& topology, const Structure& s, const StepTape& tape,
                                    const std::vector<MatrixXd>& d_next, int code_len, int d, Eigen::Index b,
                                    LibraryGradients& grads) {
    const std::size_t n = topology.nodes.size();
    std::vector<MatrixXd> d_prev(n, MatrixXd::Zero(d, b));
    std::vector<MatrixXd> d_incoming(n, MatrixXd::Zero(d, b));

    for (std::size_t v = 0; v < n; ++v) {
        const GraphNode& node = topology.nodes[v];
        if (node.slot < 0) {
            d_prev[v] += d_next[v];
            continue;
        }
        MatrixXd d_out = d_next[v];
        d_out.topRows(code_len).setZero();
        const int m = s.node_assign[node.slot];
        const MatrixXd d_in = mlp_backward_into(tape.node[v], d_out, grads.node[m]);
        grads.node_used[m] = 1;
        d_prev[v] += d_in.topRows(d);
        d_incoming[v] = d_in.bottomRows(d);
    }

    std::size_t k = 0;
    Eigen::RowVectorXd weighted_sum = Eigen::RowVectorXd::Zero(b);
    std::vector<Eigen::RowVectorXd> d_weight;
    for (const auto& edge : topology.edges) {
        if (edge.kind != EdgeKind::PusherOut) continue;
        // Message = w_k * m_k, so dL/dw_k = <dL/dmessage, m_k> per column.
        const Eigen::RowVectorXd dw =
            (d_incoming[edge.dst].array() * tape.pusher_raw[k].topRows(d).array()).colwise().sum().matrix();
        weighted_sum += (dw.array() * tape.attention.row(static_cast<Eigen::Index>(k)).array()).matrix();
        d_weight.push_back(dw);
        ++k;
    }

    k = 0;
    for (std::size_t e = 0; e < topology.edges.size(); ++e) {
        const GraphEdge& edge = topology.edges[e];
        MatrixXd d_in;
        if (edge.kind == EdgeKind::PusherOut) {
            const auto w = tape.attention.row(static_cast<Eigen::Index>(k)).array();
            MatrixXd d_out(d + 1, b);
            d_out.topRows(d) = (d_incoming[edge.dst].array().rowwise() * w).matrix();
            d_out.row(d) = (w * (d_weight[k].array() - weighted_sum.array())).matrix();
            d_in = mlp_backward_into(tape.edge[e], d_out, grads.pusher);
            grads.pusher_used = true;
            ++k;
        } else {
            const int m = s.edge_assign[edge.slot];
            d_in = mlp_backward_into(tape.edge[e], d_incoming[edge.dst], grads.edge[m]);
            grads.edge_used[m] = 1;
        }
        d_prev[edge.src] += d_in.topRows(d);
        d_prev[edge.dst] += d_in.bottomRows(d);
    }
    return d_prev;
}

}  // namespace

Matrix3Xd agn_apply(const GraphTopology& topology, const Structure& s, const ModuleLibrary& lib, const Matrix3Xd& x,
                    int steps) {
    if (steps < 0) throw std::invalid_argument("message passing steps must be >= 0");
    validate(topology, s, lib);
    HiddenStates h = encode(topology, lib, x);
    for (int t = 0; t < steps; ++t) h = message_passing_step(topology, s, lib, h);
    if (topology.family == TopologyFamily::Wheel) return wheel_decode(h, topology);
    return gen_decode(h, lib);
}

NetworkForward agn_forward(const GraphTopology& topology, const Structure& s, const ModuleLibrary& lib,
                           const Matrix3Xd& x, int steps) {
    if (steps < 0) throw std::invalid_argument("message passing steps must be >= 0");
    validate(topology, s, lib);
    NetworkForward out;
    out.tape.topology = &topology;
    out.tape.structure = &s;
    out.tape.library = &lib;
    out.tape.states.reserve(steps + 1);
    out.tape.states.push_back(encode(topology, lib, x));
    out.tape.steps.resize(steps);
    for (int t = 0; t < steps; ++t)
        out.tape.states.push_back(message_passing_step(topology, s, lib, out.tape.states.back(), &out.tape.steps[t]));
    if (topology.family == TopologyFamily::Wheel)
        out.y = wheel_decode(out.tape.states.back(), topology);
    else
        out.y = gen_decode(out.tape.states.back(), lib, &out.tape.readout);
    return out;
}

void agn_backward(const NetworkTape& tape, const Matrix3Xd& dy, LibraryGradients& grads) {
    if (!tape.topology || !tape.structure || !tape.library || tape.states.empty())
        throw std::logic_error("agn_backward: stale or empty tape");
    const GraphTopology& topology = *tape.topology;
    const ModuleLibrary& lib = *tape.library;
    const HiddenStates& last = tape.states.back();
    const int d = last.dim();
    const Eigen::Index b = last.batch();
    if (dy.cols() != b) throw std::invalid_argument("agn_backward: dy batch does not match tape");
    if (grads.node.size() != lib.node_modules.size() || grads.edge.size() != lib.edge_modules.size())
        throw std::invalid_argument("agn_backward: gradient set does not match library");

    std::vector<MatrixXd> d_states(topology.nodes.size(), MatrixXd::Zero(d, b));
    if (topology.family == TopologyFamily::Wheel) {
        const int n = topology.exterior_count;
        for (int i = 0; i < n; ++i) {
            const double a = wheel_angle(i, n);
            d_states[i].middleRows(d - 3, 3) += (std::cos(a) / n) * dy;
            d_states[i].middleRows(d - 6, 3) += (std::sin(a) / n) * dy;
        }
    } else {
        const MatrixXd d_out = dy / static_cast<double>(topology.nodes.size());
        for (std::size_t v = 0; v < topology.nodes.size(); ++v)
            d_states[v] += mlp_backward_into(tape.readout[v], d_out, grads.readout);
        grads.readout_used = true;
    }
    for (int t = static_cast<int>(tape.steps.size()) - 1; t >= 0; --t)
        d_states = step_backward(topology, *tape.structure, tape.steps[t], d_states, last.code_len, d, b, grads);
}

LibraryGradients agn_backward(const NetworkTape& tape, const Matrix3Xd& dy) {
    if (!tape.library) throw std::logic_error("agn_backward: stale or empty tape");
    LibraryGradients g = LibraryGradients::zeros_like(*tape.library);
    agn_backward(tape, dy, g);
    return g;
}

}  // namespace modmeta
