#pragma once

// Abstract graph networks: wheel and grid topologies, per-task module
// structures, message passing with pusher attention, encoders, decoders and
// exact reverse mode through the unrolled network.

#include <Eigen/Dense>

#include <utility>
#include <vector>

#include "modmeta/geometry.hpp"
#include "modmeta/library.hpp"
#include "modmeta/material.hpp"

namespace modmeta {

enum class NodeRole { Exterior, Center, Pusher, GenCell };
enum class EdgeKind { Cw, Ccw, ToCenter, FromCenter, PusherOut, Grid };
enum class TopologyFamily { Wheel, Gen };

struct NodeKind {
    NodeRole role = NodeRole::Exterior;
    int exterior_index = -1;  // Exterior only
    Point2 position = Point2::Zero();
    Material material = Material::Empty;
};

// slot indexes Structure::node_assign; -1 for the pusher, which is never updated.
struct GraphNode {
    NodeKind kind;
    int slot = -1;
};

// slot indexes Structure::edge_assign; -1 for PusherOut edges, which always
// use the library's pusher module.
struct GraphEdge {
    int src = 0;
    int dst = 0;
    EdgeKind kind = EdgeKind::Grid;
    int slot = -1;
};

struct GraphTopology {
    TopologyFamily family = TopologyFamily::Wheel;
    int exterior_count = 0;
    int pusher = -1;
    std::vector<GraphNode> nodes;
    std::vector<GraphEdge> edges;
    int node_slots = 0;
    int edge_slots = 0;

    std::vector<Point2> positions() const;
};

// One module index per node slot and per edge slot.
struct Structure {
    std::vector<int> node_assign;
    std::vector<int> edge_assign;

    bool operator==(const Structure&) const = default;
};

int hamming_distance(const Structure& a, const Structure& b);

// Throws std::invalid_argument for unassigned slots, out-of-range module
// indices, or a library whose hidden size does not fit the topology.
void validate(const GraphTopology& topology, const Structure& s, const ModuleLibrary& lib);

inline constexpr int kWheelCodeLen = 7;
inline constexpr int kGenCodeLen = 4;
inline constexpr int kMinWheelHidden = 13;
inline constexpr int kDefaultSteps = 5;

// Per node a d x batch matrix. The first code_len rows of every node are
// read-only and restored from `codes` after each step.
struct HiddenStates {
    std::vector<Eigen::MatrixXd> nodes;
    std::vector<Eigen::MatrixXd> codes;
    int code_len = 0;

    int dim() const { return nodes.empty() ? 0 : static_cast<int>(nodes.front().rows()); }
    Eigen::Index batch() const { return nodes.empty() ? 0 : nodes.front().cols(); }
};

// Wheel of n exterior nodes (ids 0..n-1), center (id n) and pusher (id n+1).
// Edges: n CW (i -> i+1), n CCW (i+1 -> i), n ToCenter, n FromCenter, then
// n+1 PusherOut. Throws for n < 2.
GraphTopology wheel_topology(int n);

// Exterior angle of node i: 2*pi*i/n.
double wheel_angle(int i, int n);

// x columns are (X_x, X_y, X_theta). Requires d >= 13.
HiddenStates wheel_encode(const Eigen::Matrix3Xd& x, int n, int d);
HiddenStates wheel_encode(const Eigen::Vector3d& x, int n, int d);

// (1/n) sum_i cos(a_i) h_i[d-3, d) + sin(a_i) h_i[d-6, d-3) over exterior nodes.
Eigen::Matrix3Xd wheel_decode(const HiddenStates& states, const GraphTopology& topology);

// GEN with one node per lattice point (node slot = node id, module = material
// index) and both directions of every lattice edge (edge module 0).
std::pair<GraphTopology, Structure> gen_topology(const GridSpec& grid, const MaterialMap& materials);

// GEN over arbitrary node positions connected by their Delaunay edges.
std::pair<GraphTopology, Structure> gen_delaunay_topology(std::span<const Point2> points,
                                                          std::span<const Material> materials);

// One-hot material code in rows 0..3 of every node; the node nearest to
// (X_x, X_y), in grid coordinates, gets x in rows 4..6.
HiddenStates gen_encode(const Eigen::Matrix3Xd& x, const GraphTopology& topology, int d);

struct StepTape {
    std::vector<MlpTape<double>> edge;     // per edge
    std::vector<MlpTape<double>> node;     // per node; empty for the pusher
    std::vector<Eigen::MatrixXd> pusher_raw;  // per PusherOut edge, (d+1) x batch
    Eigen::MatrixXd attention;                // PusherOut edges x batch
};

HiddenStates message_passing_step(const GraphTopology& topology, const Structure& s, const ModuleLibrary& lib,
                                  const HiddenStates& states, StepTape* tape = nullptr);

// Average of the readout over all nodes.
Eigen::Matrix3Xd gen_decode(const HiddenStates& states, const ModuleLibrary& lib,
                            std::vector<MlpTape<double>>* tapes = nullptr);

// Full unrolled record. Holds pointers to the topology, structure and
// library passed to agn_forward; they must outlive the tape.
struct NetworkTape {
    const GraphTopology* topology = nullptr;
    const Structure* structure = nullptr;
    const ModuleLibrary* library = nullptr;
    std::vector<HiddenStates> states;  // steps + 1 entries
    std::vector<StepTape> steps;
    std::vector<MlpTape<double>> readout;  // GEN only
};

struct NetworkForward {
    Eigen::Matrix3Xd y;
    NetworkTape tape;
};

Eigen::Matrix3Xd agn_apply(const GraphTopology& topology, const Structure& s, const ModuleLibrary& lib,
                           const Eigen::Matrix3Xd& x, int steps = kDefaultSteps);

NetworkForward agn_forward(const GraphTopology& topology, const Structure& s, const ModuleLibrary& lib,
                           const Eigen::Matrix3Xd& x, int steps = kDefaultSteps);

// Accumulates d(sum(y .* dy))/dtheta into grads. Modules used in several
// slots receive the sum of their per-slot gradients.
void agn_backward(const NetworkTape& tape, const Eigen::Matrix3Xd& dy, LibraryGradients& grads);
LibraryGradients agn_backward(const NetworkTape& tape, const Eigen::Matrix3Xd& dy);

}  // namespace modmeta
