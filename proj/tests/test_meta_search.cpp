#include <doctest.h>

#include <array>
#include <cmath>
#include <set>

#include "meta_oracles.hpp"
#include "modmeta/errors.hpp"
#include "modmeta/meta_search.hpp"
#include "modmeta/taskbench.hpp"
#include "support.hpp"

using namespace modmeta;
using Eigen::Matrix3Xd;

namespace {

ModuleLibrary wheel_library(int nodes, int edges, std::uint64_t seed, int d = 13) {
    LibrarySpec s;
    s.hidden_dim = d;
    s.node_modules = nodes;
    s.edge_modules = edges;
    s.module_hidden = {8};
    return make_library(s, seed);
}

Batch random_batch(int n, std::mt19937_64& rng) {
    return {testing::random_matrix(3, n, rng), testing::random_matrix(3, n, rng)};
}

}  // namespace

TEST_CASE("initialize_structure") {
    const auto topo = wheel_topology(3);
    Rng rng(1);
    const auto one = initialize_structure(topo, {1, 1}, rng);
    CHECK(one == Structure{std::vector<int>(4, 0), std::vector<int>(12, 0)});
    CHECK_THROWS_AS(initialize_structure(topo, {0, 1}, rng), std::invalid_argument);

    Rng a(5), b(5);
    CHECK(initialize_structure(topo, {4, 4}, a) == initialize_structure(topo, {4, 4}, b));

    std::array<int, 4> freq{};
    for (int i = 0; i < 10000; ++i) ++freq[initialize_structure(topo, {4, 4}, rng).node_assign[0]];
    for (int f : freq) CHECK(std::abs(f / 1e4 - 0.25) < 0.02);
}

TEST_CASE("propose_structure") {
    const auto topo = wheel_topology(4);
    Rng rng(2);
    const Structure single{std::vector<int>(5, 0), std::vector<int>(16, 0)};
    for (int i = 0; i < 100; ++i) CHECK(propose_structure(single, topo, {1, 1}, rng) == single);

    Structure s = initialize_structure(topo, {4, 4}, rng);
    int node_changes = 0, edge_changes = 0;
    for (int i = 0; i < 10000; ++i) {
        const Structure p = propose_structure(s, topo, {4, 4}, rng);
        const int h = hamming_distance(s, p);
        REQUIRE(h <= 1);
        if (h == 1) (p.node_assign != s.node_assign ? node_changes : edge_changes)++;
        s = p;
    }
    // Both kinds change with probability 1/2 * 3/4.
    CHECK(std::abs(node_changes / 1e4 - 0.375) < 0.02);
    CHECK(std::abs(double(node_changes) / (node_changes + edge_changes) - 0.5) < 0.02);
}

TEST_CASE("evaluate") {
    const auto topo = wheel_topology(3);
    const auto lib = wheel_library(2, 2, 3);
    Rng rng(3);
    const Structure s = initialize_structure(topo, lib.counts(), rng);
    Batch b = random_batch(6, rng);
    b.y = agn_apply(topo, s, lib, b.x);
    CHECK(evaluate(topo, s, lib, b) == 0.0);

    LibrarySpec spec = lib.spec;
    const auto zero = zero_library(spec);
    Batch one{Matrix3Xd::Zero(3, 1), Matrix3Xd::Zero(3, 1)};
    one.y(0, 0) = 1;
    CHECK(evaluate(topo, s, zero, one) == 1.0);

    // Zero predictor on RMS-normalized targets: three unit MSEs.
    SyntheticSpec syn = testing::recovery_spec(3, 2, 2, 4);
    syn.wheel_nodes = 3;
    const auto data = generate_synthetic_metaset(syn);
    std::vector<TaskDataset> tasks;
    Batch pooled{Matrix3Xd(3, 0), Matrix3Xd(3, 0)};
    for (const auto& t : data.metaset.meta_train) {
        const Batch tb = apply_normalization(*data.metaset.stats, t).all_batch();
        pooled.x.conservativeResize(3, pooled.size() + tb.size());
        pooled.y.conservativeResize(3, pooled.x.cols());
        pooled.x.rightCols(tb.size()) = tb.x;
        pooled.y.rightCols(tb.size()) = tb.y;
    }
    CHECK(evaluate(topo, s, zero, pooled) == doctest::Approx(3.0).epsilon(1e-9));

    CHECK_THROWS_AS(evaluate(topo, s, lib, Batch{Matrix3Xd(3, 0), Matrix3Xd(3, 0)}), std::invalid_argument);
    CHECK_THROWS_AS(evaluate(topo, s, lib, Batch{Matrix3Xd::Zero(3, 2), Matrix3Xd::Zero(3, 3)}),
                    std::invalid_argument);
}

TEST_CASE("Metropolis acceptance") {
    Rng rng(4);
    for (int i = 0; i < 1000; ++i) CHECK(sa_accept(1.0, 0.5, 0.01, rng));
    int tiny = 0;
    for (int i = 0; i < 1000; ++i) tiny += sa_accept(1.0, 1.5, 1e-12, rng);
    CHECK(tiny == 0);
    int accepted = 0;
    for (int i = 0; i < 10000; ++i) accepted += sa_accept(1.0, 1.5, 0.5, rng);
    CHECK(std::abs(accepted / 1e4 - std::exp(-1.0)) < 0.02);
    CHECK_THROWS_AS(sa_accept(1.0, 1.5, 0.0, rng), std::invalid_argument);

    // Improvements consume no randomness.
    Rng a(9), b(9);
    sa_accept(2.0, 1.0, 1.0, a);
    CHECK(a == b);
}

TEST_CASE("annealing schedule") {
    const AnnealingSchedule s{2.0, 0.9};
    CHECK(s.temperature(0) == 2.0);
    CHECK(s.temperature(3) == doctest::Approx(2.0 * 0.729).epsilon(1e-15));
    const auto g = AnnealingSchedule::geometric(1.0, 0.01, 200);
    CHECK(g.temperature(200) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK_THROWS_AS(AnnealingSchedule::geometric(1.0, 2.0, 10), std::invalid_argument);
    CHECK_THROWS_AS((AnnealingSchedule{1.0, 1.0}.validate()), std::invalid_argument);
}

TEST_CASE("sample_batch") {
    Rng rng(6);
    const Batch pool = random_batch(10, rng);
    const Batch all = sample_batch(pool, 10, rng);
    CHECK(all.x == pool.x);
    const Batch part = sample_batch(pool, 4, rng);
    REQUIRE(part.size() == 4);
    std::set<int> seen;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 10; ++j)
            if (part.x.col(i) == pool.x.col(j)) {
                CHECK(part.y.col(i) == pool.y.col(j));
                seen.insert(j);
            }
    CHECK(seen.size() == 4);
}

TEST_CASE("degenerate BounceGrad is plain gradient training") {
    // One task, one module of each kind, noiseless linear targets, full batch.
    const auto topo = wheel_topology(2);
    const auto lib = wheel_library(1, 1, 7);
    Rng rng(8);
    Batch task = random_batch(32, rng);
    Eigen::Matrix3d a;
    a << 0.3, -0.2, 0.1, 0.0, 0.4, -0.3, 0.2, 0.1, 0.5;
    task.y = a * task.x;

    BounceGradConfig cfg;
    cfg.steps = 100;
    cfg.batch_size = 32;
    cfg.mp_steps = 2;
    // Adam's momentum overshoots here; plain gradient descent is monotone.
    cfg.optimizer = {OptimizerKind::Sgd, 0.03};
    const auto r = bouncegrad({task}, topo, lib, cfg);
    REQUIRE(r.curve.size() == 100);
    for (std::size_t i = 1; i < r.curve.size(); ++i) CHECK(r.curve[i].loss < r.curve[i - 1].loss);
    for (const auto& row : r.curve) {
        CHECK(row.task == 0);
        CHECK(row.accepted);  // P == S always
        CHECK(row.temperature == cfg.schedule.temperature(row.step));
    }
}

TEST_CASE("BounceGrad validation and errors") {
    const auto topo = wheel_topology(2);
    const auto lib = wheel_library(2, 2, 1);
    BounceGradConfig cfg;
    CHECK_THROWS_AS(BounceGrad({topo}, lib, {}, cfg), std::invalid_argument);
    Rng rng(1);
    const Batch b = random_batch(4, rng);
    CHECK_THROWS_AS(BounceGrad({topo, topo}, lib, {b, b, b}, cfg), std::invalid_argument);

    Batch bad = b;
    bad.y(0, 0) = std::nan("");
    BounceGrad bg({topo}, lib, {bad}, cfg);
    CHECK_THROWS_AS(bg.step(), NumericError);
}

TEST_CASE("BounceGrad resumes bit-exactly") {
    const auto topo = wheel_topology(3);
    const auto lib = wheel_library(3, 3, 11);
    Rng rng(12);
    std::vector<Batch> tasks;
    for (int i = 0; i < 4; ++i) tasks.push_back(random_batch(20, rng));
    BounceGradConfig cfg;
    cfg.steps = 40;
    cfg.batch_size = 8;
    cfg.mp_steps = 2;
    cfg.seed = 13;
    cfg.schedule = AnnealingSchedule::geometric(1.0, 0.01, cfg.steps);

    BounceGrad straight({topo}, lib, tasks, cfg);
    const auto full = straight.run();

    BounceGrad first({topo}, lib, tasks, cfg);
    for (int i = 0; i < 17; ++i) first.step();
    const std::string saved = first.state_to_json().dump();
    auto resumed = BounceGrad::from_json(Json::parse(saved), {topo}, tasks, cfg);
    CHECK(resumed.step_count() == 17);
    const auto rest = resumed.run();
    REQUIRE(rest.size() == 23);
    for (std::size_t i = 0; i < rest.size(); ++i) {
        CHECK(rest[i].loss == full[17 + i].loss);
        CHECK(rest[i].task == full[17 + i].task);
        CHECK(rest[i].accepted == full[17 + i].accepted);
    }
    CHECK(resumed.library() == straight.library());
    CHECK(resumed.structures() == straight.structures());
    CHECK(resumed.state_to_json() == straight.state_to_json());
}

TEST_CASE("only modules in the chosen structure are updated") {
    const auto topo = wheel_topology(2);
    const auto lib = wheel_library(3, 3, 2);
    Rng rng(3);
    const Batch b = random_batch(8, rng);
    BounceGradConfig cfg;
    cfg.steps = 1;
    cfg.propose = false;
    const Structure s{{0, 0, 0}, std::vector<int>(8, 1)};
    const auto r = bouncegrad({b}, topo, lib, cfg, std::vector<Structure>{s});
    CHECK_FALSE(r.library.node_modules[0] == lib.node_modules[0]);
    CHECK(r.library.node_modules[1] == lib.node_modules[1]);
    CHECK(r.library.node_modules[2] == lib.node_modules[2]);
    CHECK(r.library.edge_modules[0] == lib.edge_modules[0]);
    CHECK_FALSE(r.library.edge_modules[1] == lib.edge_modules[1]);
    CHECK(r.library.gen_readout == lib.gen_readout);
    CHECK_FALSE(r.library.pusher_edge == lib.pusher_edge);
}

TEST_CASE("adapt") {
    const auto syn = generate_synthetic_metaset(testing::recovery_spec(5, 2, 1, 21));
    const Batch train = syn.metaset.meta_train[0].train_batch();
    const auto sched = AnnealingSchedule::geometric(1.0, 0.01, 50);

    Rng a(4), b(4);
    const auto r0 = adapt(train, syn.topology, syn.generator, 0, sched, a);
    CHECK(r0.structure == initialize_structure(syn.topology, syn.generator.counts(), b));
    CHECK(r0.loss == r0.initial_loss);

    const ModuleLibrary before = syn.generator;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const auto r = adapt(train, syn.topology, syn.generator, 50, sched, rng);
        CHECK(r.loss <= r.initial_loss);
        CHECK(r.loss == evaluate(syn.topology, r.structure, syn.generator, train));
    }
    CHECK(syn.generator == before);

    // Enough proposals to walk all 8 structures: the optimum is always found.
    for (std::size_t k = 0; k < 5; ++k) CHECK(testing::adapt_matches_optimum(syn, k, 100 + k, 5000, 1e-12));
}

TEST_CASE("frozen BounceGrad recovers generator structures") {
    const auto syn = generate_synthetic_metaset(testing::recovery_spec(10, 2, 2, 31));
    std::vector<Batch> tasks;
    for (const auto& t : syn.metaset.meta_train) tasks.push_back(apply_normalization(*syn.metaset.stats, t).all_batch());
    BounceGradConfig cfg;
    cfg.steps = 10000;
    cfg.batch_size = 50;
    cfg.update_library = false;
    cfg.seed = 32;
    cfg.schedule = AnnealingSchedule::geometric(1.0, 0.01, cfg.steps);
    const auto r = bouncegrad(tasks, syn.topology, syn.generator, cfg);
    CHECK(r.library == syn.generator);

    int recovered = 0;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
        const double truth = evaluate(syn.topology, syn.structures[k], syn.generator, tasks[k]);
        const double found = evaluate(syn.topology, r.structures[k], syn.generator, tasks[k]);
        recovered += found <= 1.05 * truth;
    }
    CHECK(recovered >= 9);
}
