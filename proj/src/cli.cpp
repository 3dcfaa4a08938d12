#include "modmeta/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "modmeta/errors.hpp"

namespace modmeta {

namespace fs = std::filesystem;

namespace {

Json grid_to_json(const GridSpec& g) {
    return Json{{"x_min", g.x_min}, {"x_max", g.x_max}, {"y_min", g.y_min},
                {"y_max", g.y_max}, {"rows", g.rows},   {"cols", g.cols}};
}

GridSpec grid_from_json(const Json& j) {
    GridSpec g{j.at("x_min").get<double>(), j.at("x_max").get<double>(), j.at("y_min").get<double>(),
               j.at("y_max").get<double>(), j.at("rows").get<int>(),     j.at("cols").get<int>()};
    g.validate();
    return g;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Json parse_json_file(const fs::path& path) {
    try {
        return Json::parse(read_file(path));
    } catch (const Json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

Metaset load_metaset_checked(const fs::path& dir) {
    if (!fs::exists(dir)) throw DataError("metaset not found: " + dir.string());
    return load_metaset(dir);
}

std::vector<TaskDataset> normalized(const NormalizationStats& stats, const std::vector<TaskDataset>& tasks) {
    std::vector<TaskDataset> out;
    out.reserve(tasks.size());
    for (const auto& t : tasks) out.push_back(apply_normalization(stats, t));
    return out;
}

struct TaskResult {
    std::string id;
    Structure structure;
    double train_loss = 0;
    double initial_train_loss = 0;
    double test_mse = 0;  // normalized
};

// Structure for one (normalized) task: searched for wheel models, read from
// the materials for GEN models.
TaskResult adapt_task(const TaskDataset& task, const ModuleLibrary& lib, const ModelSetup& model,
                      const RunConfig& cfg, Rng& rng) {
    auto [topo, fixed] = model.task_graph(task);
    const Batch train = task.train_batch();
    const Batch test = task.test_batch();
    if (train.size() == 0) throw DataError("task " + task.id + " has no train samples");
    if (test.size() == 0) throw DataError("task " + task.id + " has no test samples");
    TaskResult r;
    r.id = task.id;
    if (fixed) {
        r.structure = *fixed;
        r.train_loss = r.initial_train_loss = evaluate(topo, r.structure, lib, train, model.mp_steps);
    } else {
        const auto schedule = AnnealingSchedule::geometric(cfg.adapt_t0, cfg.adapt_t_final, cfg.adapt_budget);
        AdaptResult a = adapt(train, topo, lib, cfg.adapt_budget, schedule, rng, model.mp_steps);
        r.structure = std::move(a.structure);
        r.train_loss = a.loss;
        r.initial_train_loss = a.initial_loss;
    }
    r.test_mse = normalized_mse(agn_apply(topo, r.structure, lib, test.x, model.mp_steps), test.y);
    if (!std::isfinite(r.test_mse)) throw NumericError("non-finite test error on task " + task.id);
    return r;
}

Json method_json(const std::string& name, double mse, double calibration_mm) {
    return Json{{"name", name}, {"normalized_mse", mse}, {"distance_mm", mse_to_distance(mse, calibration_mm)}};
}

// Meta-test evaluation shared by train and eval.
Json meta_test_summary(const Metaset& raw, const NormalizationStats& stats, const ModuleLibrary& lib,
                       const ModelSetup& model, const RunConfig& cfg, std::ostream& log) {
    const auto test_tasks = normalized(stats, raw.meta_test);
    if (test_tasks.empty()) throw DataError("metaset has no meta-test tasks");

    double no_motion = 0;
    for (const auto& t : test_tasks) {
        const Batch b = t.test_batch();
        no_motion += normalized_mse(Eigen::Matrix3Xd::Zero(3, b.size()), b.y);
    }
    no_motion /= static_cast<double>(test_tasks.size());

    Json methods = Json::array();
    methods.push_back(method_json("predict no movement", no_motion, cfg.calibration_mm));

    if (cfg.baseline.steps > 0) {
        BaselineConfig bc = cfg.baseline;
        bc.seed = derived_rng(cfg.seed, 3)();
        const auto train_tasks = normalized(stats, raw.meta_train);
        const PooledBaseline pooled = pooled_baseline(train_tasks, bc);
        double mse = 0;
        for (const auto& t : test_tasks) {
            const Batch b = t.test_batch();
            mse += normalized_mse(pooled.predict(b.x), b.y);
        }
        mse /= static_cast<double>(test_tasks.size());
        if (!std::isfinite(mse)) throw NumericError("pooled baseline produced a non-finite error");
        methods.push_back(method_json("pooled baseline", mse, cfg.calibration_mm));
    }

    Json per_task = Json::array();
    double meta = 0;
    for (std::size_t k = 0; k < test_tasks.size(); ++k) {
        Rng rng = derived_rng(cfg.seed, 100 + k);
        const TaskResult r = adapt_task(test_tasks[k], lib, model, cfg, rng);
        meta += r.test_mse;
        log << "  " << r.id << "  test mse " << fmt("%.4f", r.test_mse) << "\n";
        per_task.push_back(Json{{"id", r.id},
                                {"structure", to_json(r.structure)},
                                {"train_loss", r.train_loss},
                                {"test_normalized_mse", r.test_mse}});
    }
    meta /= static_cast<double>(test_tasks.size());
    methods.push_back(method_json("modular meta-learning", meta, cfg.calibration_mm));

    return Json{{"format", "modmeta-summary"},
                {"version", kSummaryVersion},
                {"model", to_string(model.kind)},
                {"calibration_mm", cfg.calibration_mm},
                {"adapt_budget", cfg.adapt_budget},
                {"methods", methods},
                {"meta_test", per_task}};
}

void write_json(const fs::path& path, const Json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

}  // namespace

// ---------------------------------------------------------------------------

LibrarySpec ModelSetup::library_spec(const RunConfig& cfg) const {
    LibrarySpec s;
    s.hidden_dim = cfg.hidden_dim;
    s.module_hidden = cfg.module_hidden;
    s.activation = cfg.activation;
    // GEN: one node module per material and a single shared edge module.
    s.node_modules = kind == ModelKind::Wheel ? cfg.node_modules : kMaterialCount;
    s.edge_modules = kind == ModelKind::Wheel ? cfg.edge_modules : 1;
    return s;
}

std::pair<GraphTopology, std::optional<Structure>> ModelSetup::task_graph(const TaskDataset& task) const {
    if (kind == ModelKind::Wheel) return {wheel_topology(wheel_nodes), std::nullopt};
    if (!task.materials) throw DataError("task " + task.id + " has no material map (required by the GEN model)");
    auto [topo, s] = gen_topology(grid, *task.materials);
    return {std::move(topo), std::move(s)};
}

ModelSetup model_setup(const RunConfig& cfg) { return {cfg.model, cfg.wheel_nodes, cfg.mp_steps, cfg.grid}; }

Json to_json(const ModelSetup& m) {
    return Json{{"kind", to_string(m.kind)},
                {"wheel_nodes", m.wheel_nodes},
                {"mp_steps", m.mp_steps},
                {"grid", grid_to_json(m.grid)}};
}

ModelSetup model_setup_from_json(const Json& j) {
    return {parse_model(j.at("kind").get<std::string>()), j.at("wheel_nodes").get<int>(), j.at("mp_steps").get<int>(),
            grid_from_json(j.at("grid"))};
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
    const Json j{{"format", "modmeta-checkpoint"},
                 {"version", kCheckpointVersion},
                 {"model", to_json(ckpt.model)},
                 {"normalization", to_json(ckpt.stats)},
                 {"train_tasks", ckpt.train_task_ids},
                 {"trainer", ckpt.trainer}};
    write_json(path, j);
}

Checkpoint load_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) throw DataError("checkpoint not found: " + path.string());
    const Json j = parse_json_file(path);
    if (j.value("format", "") != "modmeta-checkpoint" || j.value("version", 0) != kCheckpointVersion)
        throw DataError(path.string() + ": not a version " + std::to_string(kCheckpointVersion) + " checkpoint");
    try {
        Checkpoint c;
        c.model = model_setup_from_json(j.at("model"));
        c.stats = normalization_from_json(j.at("normalization"));
        c.train_task_ids = j.at("train_tasks").get<std::vector<std::string>>();
        c.trainer = j.at("trainer");
        c.library = library_from_json(c.trainer.at("library"));
        return c;
    } catch (const Json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

Rng derived_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return Rng(seq);
}

// ---------------------------------------------------------------------------

void run_generate(const RunConfig& cfg, std::ostream& log) {
    cfg.require(Mode::Generate);
    SyntheticSpec spec = cfg.synthetic;
    spec.family = cfg.model == ModelKind::Wheel ? GeneratorFamily::Wheel : GeneratorFamily::Gen;
    spec.wheel_nodes = cfg.wheel_nodes;
    spec.hidden_dim = cfg.generator_hidden_dim.value_or(cfg.hidden_dim);
    spec.module_hidden = cfg.generator_module_hidden.value_or(cfg.module_hidden);
    spec.mp_steps = cfg.mp_steps;
    spec.grid = cfg.grid;
    spec.seed = cfg.seed;
    if (!cfg.material_map.empty()) {
        if (cfg.model != ModelKind::Gen) throw ConfigError("'material_map' only applies to the gen model");
        if (!fs::exists(cfg.material_map)) throw DataError("material map not found: " + cfg.material_map.string());
        spec.fixed_materials = load_material_map(cfg.material_map);
    }
    try {
        spec.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    const SyntheticMetaset synthetic = generate_synthetic_metaset(spec);
    save_metaset(cfg.metaset, synthetic.metaset);
    save_ground_truth(cfg.metaset, synthetic);
    log << "generated " << synthetic.metaset.meta_train.size() << " meta-train and "
        << synthetic.metaset.meta_test.size() << " meta-test tasks in " << cfg.metaset.string() << "\n";
}

void run_train(const RunConfig& cfg, std::ostream& log) {
    cfg.require(Mode::Train);
    const Metaset raw = load_metaset_checked(cfg.metaset);
    if (raw.meta_train.empty()) throw DataError(cfg.metaset.string() + ": no meta-train tasks");
    const NormalizationStats stats = raw.stats ? *raw.stats : fit_normalization(raw.meta_train);
    const auto train_tasks = normalized(stats, raw.meta_train);
    const ModelSetup model = model_setup(cfg);

    std::vector<GraphTopology> topologies;
    std::vector<Structure> fixed;
    std::vector<Batch> batches;
    std::vector<std::string> ids;
    for (const auto& t : train_tasks) {
        auto [topo, s] = model.task_graph(t);
        if (s) fixed.push_back(std::move(*s));
        if (model.kind == ModelKind::Gen || topologies.empty()) topologies.push_back(std::move(topo));
        batches.push_back(cfg.train_pool == TrainPool::All ? t.all_batch() : t.train_batch());
        ids.push_back(t.id);
    }

    BounceGradConfig bc;
    bc.steps = cfg.train_steps;
    bc.batch_size = cfg.batch_size;
    bc.schedule = AnnealingSchedule::geometric(cfg.sa_t0, cfg.sa_t_final, cfg.train_steps);
    bc.optimizer = cfg.optimizer;
    bc.propose = model.kind == ModelKind::Wheel;
    bc.mp_steps = model.mp_steps;
    bc.seed = derived_rng(cfg.seed, 2)();

    ModuleLibrary lib;
    try {
        lib = make_library(model.library_spec(cfg), derived_rng(cfg.seed, 1)(), cfg.init_gain);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    BounceGrad trainer(std::move(topologies), std::move(lib), std::move(batches), bc,
                       fixed.empty() ? std::nullopt : std::optional(std::move(fixed)));

    std::string curve = "step,task,train_loss,accepted,temperature\n";
    double window = 0;
    while (trainer.step_count() < bc.steps) {
        const CurveRow row = trainer.step();
        char line[160];
        std::snprintf(line, sizeof line, "%lld,%s,%.17g,%d,%.17g\n", static_cast<long long>(row.step),
                      ids[static_cast<std::size_t>(row.task)].c_str(), row.loss, row.accepted ? 1 : 0,
                      row.temperature);
        curve += line;
        window += row.loss;
        if ((row.step + 1) % 500 == 0) {
            log << "step " << row.step + 1 << "  mean loss " << fmt("%.4f", window / 500) << "  T "
                << fmt("%.4g", row.temperature) << "\n";
            window = 0;
        }
    }

    fs::create_directories(cfg.output_dir);
    write_file_atomic(cfg.output_dir / "curve.csv", curve);
    Checkpoint ckpt{model, stats, ids, trainer.state_to_json(), trainer.library()};
    save_checkpoint(cfg.checkpoint, ckpt);

    Json summary = meta_test_summary(raw, stats, trainer.library(), model, cfg, log);
    Json structures = Json::array();
    for (std::size_t l = 0; l < ids.size(); ++l)
        structures.push_back(Json{{"id", ids[l]}, {"structure", to_json(trainer.structures()[l])}});
    summary["meta_train"] = structures;
    summary["train_steps"] = cfg.train_steps;
    write_json(cfg.output_dir / "summary.json", summary);
    for (const auto& m : summary.at("methods"))
        log << m.at("name").get<std::string>() << ": mse "
            << fmt("%.4f", m.at("normalized_mse").get<double>()) << " ("
            << fmt("%.1f", m.at("distance_mm").get<double>()) << " mm)\n";
}

void run_eval(const RunConfig& cfg, std::ostream& log) {
    cfg.require(Mode::Eval);
    const Checkpoint ckpt = load_checkpoint(cfg.checkpoint);
    const Metaset raw = load_metaset_checked(cfg.metaset);
    const Json summary = meta_test_summary(raw, ckpt.stats, ckpt.library, ckpt.model, cfg, log);
    fs::create_directories(cfg.output_dir);
    write_json(cfg.output_dir / "eval_summary.json", summary);
    for (const auto& m : summary.at("methods"))
        log << m.at("name").get<std::string>() << ": mse " << fmt("%.4f", m.at("normalized_mse").get<double>())
            << " (" << fmt("%.1f", m.at("distance_mm").get<double>()) << " mm)\n";
}

void run_adapt(const RunConfig& cfg, const std::string& task_ref, std::ostream& log) {
    cfg.require(Mode::Adapt);
    if (task_ref.empty()) throw ConfigError("adapt needs --task");
    const Checkpoint ckpt = load_checkpoint(cfg.checkpoint);

    TaskDataset task;
    bool found = false;
    if (!cfg.metaset.empty() && fs::exists(cfg.metaset / "manifest.json")) {
        const Metaset raw = load_metaset(cfg.metaset);
        for (const auto* set : {&raw.meta_test, &raw.meta_train})
            for (const auto& t : *set)
                if (!found && t.id == task_ref) {
                    task = t;
                    found = true;
                }
    }
    if (!found) {
        const fs::path file(task_ref);
        if (!fs::exists(file)) throw DataError("task not found: " + task_ref);
        task.id = file.stem().string();
        task.samples = load_task_csv(file);
        if (static_cast<int>(task.samples.size()) <= cfg.adapt_train_points)
            throw DataError(file.string() + ": needs more than adapt_train_points = " +
                            std::to_string(cfg.adapt_train_points) + " rows");
        task.split_front(cfg.adapt_train_points);
        if (ckpt.model.kind == ModelKind::Gen) {
            if (cfg.material_map.empty()) throw ConfigError("GEN adapt on a CSV task needs 'material_map'");
            task.materials = load_material_map(cfg.material_map);
        }
    }

    const TaskDataset norm = apply_normalization(ckpt.stats, task);
    Rng rng = derived_rng(cfg.seed, 4);
    const TaskResult r = adapt_task(norm, ckpt.library, ckpt.model, cfg, rng);
    const auto [topo, unused] = ckpt.model.task_graph(norm);
    const double test_loss = evaluate(topo, r.structure, ckpt.library, norm.test_batch(), ckpt.model.mp_steps);

    const Json out{{"format", "modmeta-adapt"},
                   {"version", kSummaryVersion},
                   {"task", task.id},
                   {"model", to_string(ckpt.model.kind)},
                   {"budget", ckpt.model.kind == ModelKind::Wheel ? cfg.adapt_budget : 0},
                   {"structure", to_json(r.structure)},
                   {"initial_train_loss", r.initial_train_loss},
                   {"train_loss", r.train_loss},
                   {"test_loss", test_loss},
                   {"test_normalized_mse", r.test_mse},
                   {"distance_mm", mse_to_distance(r.test_mse, cfg.calibration_mm)}};
    fs::create_directories(cfg.output_dir);
    const fs::path path = cfg.output_dir / ("adapt_" + task.id + ".json");
    write_json(path, out);
    log << task.id << ": test mse " << fmt("%.4f", r.test_mse) << " ("
        << fmt("%.1f", mse_to_distance(r.test_mse, cfg.calibration_mm)) << " mm), wrote " << path.string() << "\n";
}

// ---------------------------------------------------------------------------

std::vector<ReportRow> collect_report_rows(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw ConfigError("report input is not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());

    std::vector<ReportRow> rows;
    for (const auto& f : files) {
        const Json j = parse_json_file(f);
        if (!j.is_object() || j.value("format", "") != "modmeta-summary") continue;
        try {
            const double calibration = j.value("calibration_mm", kNoMotionDistanceMm);
            for (const auto& m : j.at("methods")) {
                const double mse = m.at("normalized_mse").get<double>();
                rows.push_back({f.stem().string(), m.at("name").get<std::string>(), mse,
                                mse_to_distance(mse, calibration)});
            }
        } catch (const Json::exception& e) {
            throw DataError(f.string() + ": malformed summary: " + e.what());
        } catch (const std::invalid_argument& e) {
            throw DataError(f.string() + ": malformed summary: " + e.what());
        }
    }
    return rows;
}

namespace {

struct FormattedRow {
    std::string source, method, mse, mm;
};

std::vector<FormattedRow> format_rows(const std::vector<ReportRow>& rows) {
    std::vector<FormattedRow> out;
    for (const auto& r : rows) out.push_back({r.source, r.method, fmt("%.2f", r.normalized_mse), fmt("%.1f", r.distance_mm)});
    return out;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

}  // namespace

std::string format_report_csv(const std::vector<ReportRow>& rows) {
    std::string out = "source,method,normalized_mse,distance_mm\n";
    for (const auto& r : format_rows(rows))
        out += csv_field(r.source) + "," + csv_field(r.method) + "," + r.mse + "," + r.mm + "\n";
    return out;
}

std::string format_report_text(const std::vector<ReportRow>& rows) {
    const auto fr = format_rows(rows);
    std::size_t ws = 6, wm = 6, wx = 14, wd = 19;
    for (const auto& r : fr) {
        ws = std::max(ws, r.source.size());
        wm = std::max(wm, r.method.size());
        wx = std::max(wx, r.mse.size());
        wd = std::max(wd, r.mm.size() + 3);
    }
    std::ostringstream ss;
    ss << std::left << std::setw(static_cast<int>(ws)) << "source" << "  " << std::setw(static_cast<int>(wm))
       << "method" << "  " << std::right << std::setw(static_cast<int>(wx)) << "normalized MSE" << "  "
       << std::setw(static_cast<int>(wd)) << "distance equivalent" << "\n";
    for (const auto& r : fr)
        ss << std::left << std::setw(static_cast<int>(ws)) << r.source << "  " << std::setw(static_cast<int>(wm))
           << r.method << "  " << std::right << std::setw(static_cast<int>(wx)) << r.mse << "  "
           << std::setw(static_cast<int>(wd)) << (r.mm + " mm") << "\n";
    return ss.str();
}

void run_report(const fs::path& in, const fs::path& out, std::ostream& log) {
    if (in.empty() || out.empty()) throw ConfigError("report needs --in and --out");
    const auto rows = collect_report_rows(in);
    if (rows.empty()) throw ConfigError("no summary JSON files in " + in.string());
    fs::create_directories(out);
    const std::string text = format_report_text(rows);
    write_file_atomic(out / "results.csv", format_report_csv(rows));
    write_file_atomic(out / "results.txt", text);
    log << text;
}

// ---------------------------------------------------------------------------

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Modular meta-learning with abstract graph networks"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand
    std::optional<std::uint64_t> seed;
    bool verbose = false;
    app.add_option("--seed", seed, "override the configured seed");
    app.add_flag("-v,--verbose", verbose, "progress output");

    std::string config_path, task, in_dir, out_dir;
    auto add_config = [&](CLI::App* sub) { sub->add_option("--config", config_path, "config file")->required(); };
    CLI::App* generate = app.add_subcommand("generate", "write a synthetic metaset");
    add_config(generate);
    CLI::App* train = app.add_subcommand("train", "meta-train a module library with BounceGrad");
    add_config(train);
    CLI::App* adapt_cmd = app.add_subcommand("adapt", "search a structure for one task with the library frozen");
    add_config(adapt_cmd);
    adapt_cmd->add_option("--task", task, "task id in the metaset, or a task CSV")->required();
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the meta-test tasks");
    add_config(eval);
    CLI::App* report = app.add_subcommand("report", "tabulate summary JSON files");
    report->add_option("--in", in_dir, "directory of summary JSON files")->required();
    report->add_option("--out", out_dir, "output directory")->required();

    std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    std::ostringstream sink;
    std::ostream& log = verbose ? out : static_cast<std::ostream&>(sink);
    try {
        if (report->parsed()) {
            run_report(in_dir, out_dir, out);
            return kExitOk;
        }
        RunConfig cfg = load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (generate->parsed()) run_generate(cfg, out);
        else if (train->parsed()) run_train(cfg, log);
        else if (adapt_cmd->parsed()) run_adapt(cfg, task, out);
        else if (eval->parsed()) run_eval(cfg, log);
        if (!verbose && (train->parsed() || eval->parsed())) {
            // Method lines are always shown; per-step progress only with --verbose.
            std::istringstream lines(sink.str());
            for (std::string line; std::getline(lines, line);)
                if (line.find(": mse ") != std::string::npos) out << line << "\n";
        }
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const fs::filesystem_error& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    }
}

}  // namespace modmeta
