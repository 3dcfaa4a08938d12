// Acceptance criteria. Each criterion prints one PASS/FAIL line; pass
// criterion names (c1 .. c9) to run a subset. Exit status is nonzero when any
// selected criterion fails.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "geometry_oracles.hpp"
#include "meta_oracles.hpp"
#include "modmeta/cli.hpp"
#include "modmeta/config.hpp"
#include "modmeta/geometry.hpp"
#include "modmeta/graph.hpp"
#include "modmeta/meta_search.hpp"
#include "modmeta/taskbench.hpp"
#include "support.hpp"

using namespace modmeta;
using Eigen::Matrix3Xd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// 1. Analytic gradients of the unrolled wheel network against central
// differences.
Outcome gradient_exactness() {
    LibrarySpec spec;
    spec.hidden_dim = 13;
    spec.node_modules = 2;
    spec.edge_modules = 2;
    spec.module_hidden = {32};
    const auto lib = make_library(spec, 101);
    const auto topo = wheel_topology(4);
    std::mt19937_64 rng(102);
    const Structure s = initialize_structure(topo, lib.counts(), rng);
    const Matrix3Xd x = testing::random_matrix(3, 4, rng);
    const Matrix3Xd dy = testing::random_matrix(3, 4, rng);
    const int steps = 2;

    auto f = agn_forward(topo, s, lib, x, steps);
    const auto analytic = flatten(agn_backward(f.tape, dy));
    ModuleLibrary work = lib;
    const auto numeric = testing::central_differences(
        flatten(lib),
        [&](const std::vector<double>& theta) {
            unflatten(theta, work);
            return agn_apply(topo, s, work, x, steps).cwiseProduct(dy).sum();
        },
        1e-6);
    const double err = testing::max_rel_error(analytic, numeric);
    return {err < 1e-4, std::to_string(analytic.size()) + " partials, max relative error " + fmt("%.2e", err) +
                            " (limit 1e-4)"};
}

// 2. Identical exterior states decode to zero.
Outcome decoder_nullspace() {
    std::mt19937_64 rng(201);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst = 0;
    for (int n = 2; n <= 12; ++n) {
        const auto topo = wheel_topology(n);
        for (int trial = 0; trial < 100; ++trial) {
            auto h = wheel_encode(Eigen::Vector3d(u(rng), u(rng), u(rng)), n, 16);
            Eigen::VectorXd v(16);
            for (int i = 0; i < 16; ++i) v(i) = u(rng);
            for (int i = 0; i < n; ++i) h.nodes[i].col(0) = v;
            worst = std::max(worst, wheel_decode(h, topo).norm());
        }
    }
    return {worst < 1e-12, "max |decode| " + fmt("%.2e", worst) + " over N = 2..12 (limit 1e-12)"};
}

// 3. The zero predictor scores 1 on normalized meta-train data.
Outcome normalization_identity() {
    double worst = 0;
    int sets = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed)
        for (auto family : {GeneratorFamily::Wheel, GeneratorFamily::Gen}) {
            SyntheticSpec spec;
            spec.family = family;
            spec.n_meta_train = 8;
            spec.n_meta_test = 2;
            spec.train_points = 20;
            spec.test_points = 20;
            spec.wheel_nodes = 3 + static_cast<int>(seed);
            spec.noise_sigma = 0.01 * static_cast<double>(seed);
            spec.grid.rows = spec.grid.cols = 3;
            spec.module_hidden = {8};
            spec.seed = 300 + seed;
            const auto syn = generate_synthetic_metaset(spec);
            const auto stats = fit_normalization(syn.metaset.meta_train);
            Matrix3Xd y(3, 0);
            for (const auto& t : syn.metaset.meta_train) {
                const Batch b = apply_normalization(stats, t).all_batch();
                y.conservativeResize(3, y.cols() + b.size());
                y.rightCols(b.size()) = b.y;
            }
            worst = std::max(worst, std::abs(normalized_mse(Matrix3Xd::Zero(3, y.cols()), y) - 1.0));
            ++sets;
        }
    return {worst <= 1e-9, std::to_string(sets) + " metasets, max |mse - 1| " + fmt("%.2e", worst) + " (limit 1e-9)"};
}

// 4. Table pairs of normalized MSE and millimetres.
Outcome distance_calibration() {
    const std::vector<std::pair<double, double>> table{{1.00, 21.6}, {0.04, 4.3}, {0.14, 8.1}, {0.08, 6.1},
                                                       {0.06, 5.3},  {0.05, 4.7}, {0.51, 15.4}, {0.34, 12.5},
                                                       {0.29, 11.6}, {0.25, 10.8}, {0.21, 9.8}, {0.09, 6.6}};
    std::string misses;
    int bad = 0;
    for (auto [mse, mm] : table) {
        const double d = mse_to_distance(mse);
        if (std::abs(d - mm) > 0.05) {
            ++bad;
            misses += " " + fmt("%.2f", mse) + "->" + fmt("%.2f", d) + "(" + fmt("%.1f", mm) + ")";
        }
    }
    return {bad == 0, std::to_string(table.size() - bad) + "/" + std::to_string(table.size()) +
                          " pairs within 0.05 mm" + (bad ? "; off:" + misses : "")};
}

// 5. Annealing with a frozen generator finds the exhaustive optimum.
Outcome sa_oracle_recovery() {
    const auto syn = generate_synthetic_metaset(testing::recovery_spec(100, 2, 1, 0));
    int hits = 0;
    for (std::size_t k = 0; k < 100; ++k) hits += testing::adapt_matches_optimum(syn, k, k, 200, 0.01);
    return {hits >= 90, std::to_string(hits) + "/100 runs within 1% of the optimum (need 90)"};
}

void write_text(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << text;
}

// 6. Modular meta-learning against the pooled baseline through the CLI
// pipeline.
Outcome meta_beats_pooling() {
    const auto dir = testing::scratch_dir("acceptance_c6");
    const std::string cfg = "metaset = " + (dir / "metaset").string() + "\n" +
                            "checkpoint = " + (dir / "ckpt.json").string() + "\n" +
                            "output_dir = " + (dir / "out").string() + "\n" +
                            "n_meta_train = 40\n"
                            "n_meta_test = 10\n"
                            "train_points = 50\n"
                            "test_points = 200\n"
                            "noise_sigma = 0.05\n"
                            "wheel_nodes = 4\n"
                            "node_modules = 4\n"
                            "edge_modules = 4\n"
                            "generator_node_modules = 4\n"
                            "generator_edge_modules = 4\n"
                            "seed = 6\n";
    write_text(dir / "run.cfg", cfg);
    const RunConfig rc = load_config(dir / "run.cfg");
    std::ostringstream log;
    run_generate(rc, log);
    run_train(rc, log);
    const Json s = Json::parse(slurp(dir / "out" / "summary.json"));
    double meta = -1, pooled = -1;
    for (const auto& m : s.at("methods")) {
        if (m.at("name") == "modular meta-learning") meta = m.at("normalized_mse");
        if (m.at("name") == "pooled baseline") pooled = m.at("normalized_mse");
    }
    return {meta >= 0 && pooled > 0 && meta <= 0.7 * pooled,
            "meta-test mse " + fmt("%.4f", meta) + " vs pooled " + fmt("%.4f", pooled) + " (ratio " +
                fmt("%.3f", meta / pooled) + ", limit 0.7)"};
}

// 7. Delaunay edges against brute-force circumcircles and Voronoi adjacency.
Outcome delaunay_duality() {
    std::mt19937_64 rng(701);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> size(3, 50);
    int ok = 0;
    double worst_circle = -1e300;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Point2> pts;
        const int n = size(rng);
        for (int i = 0; i < n; ++i) pts.emplace_back(u(rng), u(rng));
        const auto t = delaunay(pts);
        const double circle = testing::worst_incircle(t);
        worst_circle = std::max(worst_circle, circle);
        const auto oracle = testing::voronoi_adjacency(pts);
        bool sampled_ok = true;
        for (const auto& e : testing::sampled_pairs(pts, 200)) sampled_ok = sampled_ok && oracle.count(e) == 1;
        const std::set<UndirectedEdge> edges(t.edges.begin(), t.edges.end());
        ok += circle <= 1e-12 && edges == oracle && sampled_ok;
    }
    return {ok == 100, std::to_string(ok) + "/100 point sets match; worst in-circle value " +
                           fmt("%.2e", worst_circle)};
}

// Reference sampler: same draws as sample_batch, written out independently.
Batch reference_batch(const Batch& pool, int size, Rng& rng) {
    const int n = static_cast<int>(pool.size());
    if (size >= n) return pool;
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    Batch b{Matrix3Xd(3, size), Matrix3Xd(3, size)};
    for (int i = 0; i < size; ++i) {
        std::swap(idx[i], idx[std::uniform_int_distribution<int>(i, n - 1)(rng)]);
        b.x.col(i) = pool.x.col(idx[i]);
        b.y.col(i) = pool.y.col(idx[i]);
    }
    return b;
}

// 8. GEN with material-fixed structures is multitask gradient descent.
Outcome gen_multitask_equality() {
    SyntheticSpec spec;
    spec.family = GeneratorFamily::Gen;
    spec.n_meta_train = 5;
    spec.n_meta_test = 1;
    spec.train_points = 30;
    spec.test_points = 10;
    spec.seed = 801;
    const auto syn = generate_synthetic_metaset(spec);

    std::vector<GraphTopology> topologies;
    std::vector<Structure> structures;
    std::vector<Batch> tasks;
    for (const auto& t : syn.metaset.meta_train) {
        auto [topo, s] = gen_topology(spec.grid, *t.materials);
        topologies.push_back(std::move(topo));
        structures.push_back(std::move(s));
        tasks.push_back(apply_normalization(*syn.metaset.stats, t).all_batch());
    }
    LibrarySpec ls;
    ls.node_modules = kMaterialCount;
    ls.edge_modules = 1;
    const ModuleLibrary init = make_library(ls, 802);

    BounceGradConfig cfg;
    cfg.steps = 500;
    cfg.batch_size = 16;
    cfg.propose = false;
    cfg.seed = 803;
    BounceGrad bg(topologies, init, tasks, cfg, structures);

    // Reference: pick a task, draw a batch, one Adam step on every module the
    // task's network uses.
    ModuleLibrary ref = init;
    std::vector<AdamState<double>> node_state(ref.node_modules.size()), edge_state(ref.edge_modules.size());
    AdamState<double> pusher_state, readout_state;
    const AdamHyper hyper = cfg.optimizer.adam();
    Rng rng(cfg.seed);
    int first_diff = -1;
    for (int step = 0; step < cfg.steps; ++step) {
        const int l = std::uniform_int_distribution<int>(0, static_cast<int>(tasks.size()) - 1)(rng);
        const Batch b = reference_batch(tasks[l], cfg.batch_size, rng);
        auto f = agn_forward(topologies[l], structures[l], ref, b.x, cfg.mp_steps);
        const Matrix3Xd dy = (2.0 / static_cast<double>(b.size())) * (f.y - b.y);
        const auto g = agn_backward(f.tape, dy);
        for (std::size_t i = 0; i < ref.node_modules.size(); ++i)
            if (g.node_used[i]) adam_update(ref.node_modules[i], g.node[i], node_state[i], hyper);
        for (std::size_t i = 0; i < ref.edge_modules.size(); ++i)
            if (g.edge_used[i]) adam_update(ref.edge_modules[i], g.edge[i], edge_state[i], hyper);
        if (g.pusher_used) adam_update(ref.pusher_edge, g.pusher, pusher_state, hyper);
        if (g.readout_used) adam_update(ref.gen_readout, g.readout, readout_state, hyper);

        bg.step();
        if (first_diff < 0 && flatten(bg.library()) != flatten(ref)) first_diff = step;
    }
    const bool moved = flatten(ref) != flatten(init);
    return {first_diff < 0 && moved && bg.structures() == structures,
            first_diff < 0 ? "parameters bit-identical after each of 500 steps"
                           : "parameters diverge at step " + std::to_string(first_diff)};
}

// 9. Two identical train runs write identical files.
Outcome train_determinism() {
    const auto dir = testing::scratch_dir("acceptance_c9");
    auto cfg = [&](const std::string& out) {
        return "metaset = " + (dir / "metaset").string() + "\n" + "checkpoint = " + (dir / (out + ".json")).string() +
               "\n" + "output_dir = " + (dir / out).string() + "\n" +
               "n_meta_train = 10\n"
               "n_meta_test = 3\n"
               "train_points = 30\n"
               "test_points = 30\n"
               "wheel_nodes = 4\n"
               "train_steps = 200\n"
               "baseline_steps = 200\n"
               "adapt_budget = 50\n"
               "seed = 9\n";
    };
    write_text(dir / "a.cfg", cfg("a"));
    write_text(dir / "b.cfg", cfg("b"));
    std::ostringstream log;
    run_generate(load_config(dir / "a.cfg"), log);
    run_train(load_config(dir / "a.cfg"), log);
    run_train(load_config(dir / "b.cfg"), log);
    const bool summary = slurp(dir / "a" / "summary.json") == slurp(dir / "b" / "summary.json");
    const bool ckpt = slurp(dir / "a.json") == slurp(dir / "b.json");
    return {summary && ckpt, std::string("summary ") + (summary ? "identical" : "differs") + ", checkpoint " +
                                 (ckpt ? "identical" : "differs")};
}

struct Criterion {
    std::string id;
    std::string name;
    double time_limit_s;  // 0: none
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {"c1", "gradient exactness", 10, gradient_exactness},
        {"c2", "decoder nullspace", 0, decoder_nullspace},
        {"c3", "normalization identity", 0, normalization_identity},
        {"c4", "distance calibration", 0, distance_calibration},
        {"c5", "SA oracle recovery", 60, sa_oracle_recovery},
        {"c6", "meta-learning beats pooling", 1800, meta_beats_pooling},
        {"c7", "Delaunay/Voronoi duality", 0, delaunay_duality},
        {"c8", "GEN multitask equality", 0, gen_multitask_equality},
        {"c9", "train determinism", 0, train_determinism},
    };
    std::set<std::string> wanted(argv + 1, argv + argc);
    for (const auto& w : wanted)
        if (std::none_of(all.begin(), all.end(), [&](const Criterion& c) { return c.id == w; })) {
            std::cerr << "unknown criterion " << w << "\n";
            return 2;
        }

    int failed = 0;
    for (const auto& c : all) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::string timing = fmt("%.1f s", secs);
        if (c.time_limit_s > 0) {
            timing += fmt(", limit %.0f s", c.time_limit_s);
            if (secs >= c.time_limit_s) {
                o.pass = false;
                o.detail += "; over time";
            }
        }
        std::cout << (o.pass ? "PASS " : "FAIL ") << c.id << " " << c.name << ": " << o.detail << " [" << timing
                  << "]" << std::endl;
        failed += !o.pass;
    }
    return failed ? 1 : 0;
}
