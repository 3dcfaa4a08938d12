#include "modmeta/taskbench.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "modmeta/errors.hpp"
#include "modmeta/nn_io.hpp"

namespace modmeta {

using Eigen::Matrix3Xd;

void TaskDataset::split_front(int n_train) {
    const int n = static_cast<int>(samples.size());
    if (n_train < 0 || n_train > n) throw std::invalid_argument("split_front: train size out of range");
    train.clear();
    test.clear();
    for (int i = 0; i < n; ++i) (i < n_train ? train : test).push_back(i);
}

Batch TaskDataset::gather(std::span<const int> idx) const {
    Batch b{Matrix3Xd(3, static_cast<Eigen::Index>(idx.size())), Matrix3Xd(3, static_cast<Eigen::Index>(idx.size()))};
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const Sample& s = samples.at(static_cast<std::size_t>(idx[k]));
        b.x.col(static_cast<Eigen::Index>(k)) = s.x;
        b.y.col(static_cast<Eigen::Index>(k)) = s.y;
    }
    return b;
}

Batch TaskDataset::all_batch() const {
    std::vector<int> idx(samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    return gather(idx);
}

NormalizationStats fit_normalization(std::span<const TaskDataset> meta_train) {
    Eigen::Vector3d sx = Eigen::Vector3d::Zero(), sy = Eigen::Vector3d::Zero();
    std::size_t count = 0;
    for (const auto& t : meta_train) {
        for (const auto& s : t.samples) {
            sx += s.x.cwiseAbs2();
            sy += s.y.cwiseAbs2();
            ++count;
        }
    }
    if (count == 0) throw DataError("fit_normalization: no meta-train samples");
    NormalizationStats stats;
    for (int c = 0; c < 3; ++c) {
        if (!(sx(c) > 0)) throw DataError("fit_normalization: input coordinate " + std::to_string(c) + " is identically zero");
        if (!(sy(c) > 0)) throw DataError("fit_normalization: output coordinate " + std::to_string(c) + " is identically zero");
        stats.in_scale(c) = 1.0 / std::sqrt(sx(c) / static_cast<double>(count));
        stats.out_scale(c) = 1.0 / std::sqrt(sy(c) / static_cast<double>(count));
    }
    return stats;
}

TaskDataset apply_normalization(const NormalizationStats& stats, TaskDataset task) {
    for (auto& s : task.samples) {
        s.x = s.x.cwiseProduct(stats.in_scale);
        s.y = s.y.cwiseProduct(stats.out_scale);
    }
    return task;
}

Matrix3Xd invert_normalization(const NormalizationStats& stats, const Matrix3Xd& y) {
    return y.array().colwise() / stats.out_scale.array();
}

double normalized_mse(const Matrix3Xd& preds, const Matrix3Xd& targets) {
    if (preds.cols() != targets.cols()) throw std::invalid_argument("normalized_mse: length mismatch");
    if (preds.cols() == 0) throw std::invalid_argument("normalized_mse: no samples");
    return (preds - targets).squaredNorm() / static_cast<double>(preds.size());
}

double mse_to_distance(double mse, double no_motion_mm) {
    if (mse < 0) throw std::invalid_argument("mse_to_distance: negative mse");
    return no_motion_mm * std::sqrt(mse);
}

// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
    if (n_meta_train < 1) throw std::invalid_argument("synthetic: need at least one meta-train task");
    if (n_meta_test < 0) throw std::invalid_argument("synthetic: negative meta-test task count");
    if (train_points < 1 || test_points < 0) throw std::invalid_argument("synthetic: bad point counts");
    if (noise_sigma < 0) throw std::invalid_argument("synthetic: noise_sigma must be >= 0");
    if (!(weight_gain > 0)) throw std::invalid_argument("synthetic: weight_gain must be positive");
    if (family == GeneratorFamily::Gen) grid.validate();
    if (fixed_materials && (fixed_materials->rows != grid.rows || fixed_materials->cols != grid.cols))
        throw std::invalid_argument("synthetic: material map size does not match the grid");
}

namespace {

MaterialMap random_materials(const GridSpec& grid, Rng& rng) {
    MaterialMap m = MaterialMap::uniform(grid.rows, grid.cols, Material::Empty);
    std::uniform_int_distribution<int> pick(0, kMaterialCount - 1);
    for (auto& c : m.cells) c = static_cast<Material>(pick(rng));
    return m;
}

Matrix3Xd random_inputs(const SyntheticSpec& spec, int n, Rng& rng) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Matrix3Xd x(3, n);
    for (int i = 0; i < n; ++i) {
        if (spec.family == GeneratorFamily::Wheel) {
            x.col(i) << unit(rng), unit(rng), unit(rng);
        } else {
            const double u = 0.5 * (unit(rng) + 1.0), v = 0.5 * (unit(rng) + 1.0);
            x.col(i) << spec.grid.x_min + u * (spec.grid.x_max - spec.grid.x_min),
                spec.grid.y_min + v * (spec.grid.y_max - spec.grid.y_min), unit(rng);
        }
    }
    return x;
}

}  // namespace

SyntheticMetaset generate_synthetic_metaset(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    SyntheticMetaset out;

    LibrarySpec lib_spec;
    lib_spec.hidden_dim = spec.hidden_dim;
    lib_spec.module_hidden = spec.module_hidden;
    lib_spec.node_modules = spec.family == GeneratorFamily::Wheel ? spec.node_modules : kMaterialCount;
    lib_spec.edge_modules = spec.family == GeneratorFamily::Wheel ? spec.edge_modules : 1;
    out.generator = make_library(lib_spec, rng(), spec.weight_gain);
    if (spec.family == GeneratorFamily::Wheel) out.topology = wheel_topology(spec.wheel_nodes);

    std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0 ? spec.noise_sigma : 1.0);
    const int total = spec.n_meta_train + spec.n_meta_test;
    for (int k = 0; k < total; ++k) {
        const bool is_train = k < spec.n_meta_train;
        TaskDataset task;
        char id[32];
        std::snprintf(id, sizeof id, "%s_%03d", is_train ? "train" : "test", is_train ? k : k - spec.n_meta_train);
        task.id = id;

        GraphTopology gen_topo;
        Structure s;
        if (spec.family == GeneratorFamily::Wheel) {
            s = initialize_structure(out.topology, out.generator.counts(), rng);
        } else {
            task.materials = spec.fixed_materials ? *spec.fixed_materials : random_materials(spec.grid, rng);
            std::tie(gen_topo, s) = gen_topology(spec.grid, *task.materials);
            if (k == 0) out.topology = gen_topo;
        }
        const GraphTopology& topo = spec.family == GeneratorFamily::Wheel ? out.topology : gen_topo;

        const Matrix3Xd x = random_inputs(spec, spec.points_per_task(), rng);
        const Matrix3Xd y = agn_apply(topo, s, out.generator, x, spec.mp_steps);
        for (int i = 0; i < spec.points_per_task(); ++i) {
            Sample smp{x.col(i), y.col(i)};
            if (spec.noise_sigma > 0)
                for (int c = 0; c < 3; ++c) smp.y(c) += noise(rng);
            task.samples.push_back(smp);
        }
        task.split_front(spec.train_points);
        out.structures.push_back(std::move(s));
        (is_train ? out.metaset.meta_train : out.metaset.meta_test).push_back(std::move(task));
    }
    out.metaset.stats = fit_normalization(out.metaset.meta_train);
    return out;
}

double separation_audit(const GraphTopology& topology, const ModuleLibrary& generator, int pairs, int inputs,
                        double threshold, std::uint64_t seed, int mp_steps) {
    if (pairs < 1 || inputs < 1) throw std::invalid_argument("separation_audit: need pairs and inputs");
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Matrix3Xd x(3, inputs);
    for (int i = 0; i < inputs; ++i) x.col(i) << unit(rng), unit(rng), unit(rng);
    int separated = 0;
    for (int p = 0; p < pairs; ++p) {
        const Structure a = initialize_structure(topology, generator.counts(), rng);
        const Structure b = initialize_structure(topology, generator.counts(), rng);
        const Matrix3Xd diff = agn_apply(topology, a, generator, x, mp_steps) - agn_apply(topology, b, generator, x, mp_steps);
        if (diff.colwise().norm().mean() > threshold) ++separated;
    }
    return static_cast<double>(separated) / pairs;
}

// ---------------------------------------------------------------------------

Matrix3Xd PooledBaseline::predict(const Matrix3Xd& x) const { return mlp_apply<double>(model, x); }

PooledBaseline pooled_baseline(std::span<const TaskDataset> meta_train, const BaselineConfig& config) {
    std::size_t n = 0;
    for (const auto& t : meta_train) n += t.samples.size();
    if (n == 0) throw DataError("pooled_baseline: no meta-train samples");
    Batch pool{Matrix3Xd(3, static_cast<Eigen::Index>(n)), Matrix3Xd(3, static_cast<Eigen::Index>(n))};
    Eigen::Index k = 0;
    for (const auto& t : meta_train)
        for (const auto& s : t.samples) {
            pool.x.col(k) = s.x;
            pool.y.col(k) = s.y;
            ++k;
        }

    Rng rng(config.seed);
    PooledBaseline b{init_params<double>(MlpSpec{3, config.hidden, 3, config.activation}, rng)};
    AdamState<double> adam;
    auto grads = MlpGrad::zeros_like(b.model);
    for (std::int64_t step = 0; step < config.steps; ++step) {
        const Batch batch = sample_batch(pool, config.batch_size, rng);
        auto f = mlp_forward<double>(b.model, Eigen::MatrixXd(batch.x));
        const Eigen::MatrixXd dy = (2.0 / static_cast<double>(batch.size())) * (f.y - batch.y);
        grads.set_zero();
        mlp_backward_into<double>(f.tape, dy, grads);
        if (config.optimizer.kind == OptimizerKind::Sgd)
            sgd_update(b.model, grads, config.optimizer.lr);
        else
            adam_update(b.model, grads, adam, config.optimizer.adam());
    }
    return b;
}

// ---------------------------------------------------------------------------
// Files

namespace {

constexpr int kMetasetVersion = 1;

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string format_task_csv(std::span<const Sample> samples) {
    std::string out = std::string(kTaskCsvHeader) + "\n";
    for (const auto& s : samples) {
        for (int c = 0; c < 3; ++c) out += format_double(s.x(c)) + ",";
        for (int c = 0; c < 3; ++c) out += format_double(s.y(c)) + (c < 2 ? "," : "\n");
    }
    return out;
}

std::vector<Sample> parse_task_csv(const std::string& text, const std::string& source) {
    std::vector<Sample> out;
    std::size_t pos = 0;
    int line_no = 0;
    bool header_seen = false;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string_view line(text.data() + pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        if (!header_seen) {
            if (line != kTaskCsvHeader)
                throw DataError(source + ":" + std::to_string(line_no) + ": expected header '" + kTaskCsvHeader + "'");
            header_seen = true;
            continue;
        }
        double v[6];
        int field = 0;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            const std::string_view tok = line.substr(start, comma == std::string_view::npos ? line.size() - start : comma - start);
            if (field >= 6)
                throw DataError(source + ":" + std::to_string(line_no) + ": row has more than 6 fields");
            const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v[field]);
            if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v[field]))
                throw DataError(source + ":" + std::to_string(line_no) + ":" + std::to_string(start + 1) +
                                ": bad number '" + std::string(tok) + "'");
            ++field;
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (field != 6)
            throw DataError(source + ":" + std::to_string(line_no) + ": row has " + std::to_string(field) +
                            " fields, expected 6");
        out.push_back(Sample{Eigen::Vector3d(v[0], v[1], v[2]), Eigen::Vector3d(v[3], v[4], v[5])});
    }
    if (!header_seen) throw DataError(source + ": empty task file");
    return out;
}

std::vector<Sample> load_task_csv(const std::filesystem::path& path) {
    return parse_task_csv(read_file(path), path.string());
}

Json to_json(const NormalizationStats& stats) {
    return Json{{"in_scale", {stats.in_scale(0), stats.in_scale(1), stats.in_scale(2)}},
                {"out_scale", {stats.out_scale(0), stats.out_scale(1), stats.out_scale(2)}}};
}

NormalizationStats normalization_from_json(const Json& j) {
    NormalizationStats s;
    const auto in = j.at("in_scale").get<std::vector<double>>();
    const auto out = j.at("out_scale").get<std::vector<double>>();
    if (in.size() != 3 || out.size() != 3) throw DataError("normalization stats need 3 scales each");
    for (int c = 0; c < 3; ++c) {
        if (!(in[c] > 0) || !(out[c] > 0)) throw DataError("normalization scales must be positive");
        s.in_scale(c) = in[c];
        s.out_scale(c) = out[c];
    }
    return s;
}

void save_metaset(const std::filesystem::path& dir, const Metaset& metaset) {
    Json tasks = Json::array();
    auto save_one = [&](const TaskDataset& t, const char* role) {
        std::vector<Sample> ordered;
        for (int i : t.train) ordered.push_back(t.samples.at(i));
        for (int i : t.test) ordered.push_back(t.samples.at(i));
        const std::string file = "tasks/" + t.id + ".csv";
        write_file_atomic(dir / file, format_task_csv(ordered));
        Json entry{{"id", t.id},
                   {"role", role},
                   {"file", file},
                   {"n_train", t.train.size()},
                   {"n_test", t.test.size()}};
        if (t.materials) {
            const std::string mfile = "tasks/" + t.id + ".materials";
            save_material_map(dir / mfile, *t.materials);
            entry["materials"] = mfile;
        }
        tasks.push_back(entry);
    };
    for (const auto& t : metaset.meta_train) save_one(t, "meta_train");
    for (const auto& t : metaset.meta_test) save_one(t, "meta_test");
    Json manifest{{"format", "modmeta-metaset"}, {"version", kMetasetVersion}, {"tasks", tasks}};
    if (metaset.stats) manifest["normalization"] = to_json(*metaset.stats);
    write_file_atomic(dir / "manifest.json", manifest.dump(1) + "\n");
}

Metaset load_metaset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path)) throw DataError("metaset manifest not found: " + manifest_path.string());
    Json manifest;
    try {
        manifest = Json::parse(read_file(manifest_path));
    } catch (const Json::parse_error& e) {
        throw DataError(manifest_path.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "modmeta-metaset" || manifest.value("version", 0) != kMetasetVersion)
        throw DataError(manifest_path.string() + ": not a version " + std::to_string(kMetasetVersion) + " metaset manifest");

    Metaset m;
    try {
        if (manifest.contains("normalization")) m.stats = normalization_from_json(manifest.at("normalization"));
        for (const auto& entry : manifest.at("tasks")) {
            TaskDataset t;
            t.id = entry.at("id").get<std::string>();
            const auto role = entry.at("role").get<std::string>();
            const auto n_train = entry.at("n_train").get<int>();
            const auto n_test = entry.at("n_test").get<int>();
            const auto file = dir / entry.at("file").get<std::string>();
            if (!std::filesystem::exists(file)) throw DataError("task file listed in manifest is missing: " + file.string());
            t.samples = load_task_csv(file);
            if (static_cast<int>(t.samples.size()) != n_train + n_test)
                throw DataError(file.string() + ": has " + std::to_string(t.samples.size()) + " rows, manifest says " +
                                std::to_string(n_train + n_test));
            t.split_front(n_train);
            if (entry.contains("materials")) t.materials = load_material_map(dir / entry.at("materials").get<std::string>());
            if (role == "meta_train")
                m.meta_train.push_back(std::move(t));
            else if (role == "meta_test")
                m.meta_test.push_back(std::move(t));
            else
                throw DataError(manifest_path.string() + ": task '" + t.id + "' has unknown role '" + role + "'");
        }
    } catch (const Json::exception& e) {
        throw DataError(manifest_path.string() + ": missing or malformed entry: " + e.what());
    }
    return m;
}

void save_ground_truth(const std::filesystem::path& dir, const SyntheticMetaset& synthetic) {
    Json structures = Json::object();
    std::size_t k = 0;
    for (const auto& t : synthetic.metaset.meta_train) structures[t.id] = to_json(synthetic.structures.at(k++));
    for (const auto& t : synthetic.metaset.meta_test) structures[t.id] = to_json(synthetic.structures.at(k++));
    Json j{{"format", "modmeta-ground-truth"},
           {"version", 1},
           {"family", synthetic.topology.family == TopologyFamily::Wheel ? "wheel" : "gen"},
           {"wheel_nodes", synthetic.topology.exterior_count},
           {"structures", structures},
           {"generator", to_json(synthetic.generator)}};
    write_file_atomic(dir / "ground_truth.json", j.dump(1) + "\n");
}

}  // namespace modmeta
