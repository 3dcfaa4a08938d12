#include "modmeta/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>

#include "modmeta/errors.hpp"
#include "modmeta/nn_io.hpp"

namespace modmeta {

std::string to_string(Mode m) {
    switch (m) {
        case Mode::Generate: return "generate";
        case Mode::Train: return "train";
        case Mode::Adapt: return "adapt";
        case Mode::Eval: return "eval";
        case Mode::Report: return "report";
    }
    return "?";
}

std::string to_string(ModelKind m) { return m == ModelKind::Wheel ? "wheel" : "gen"; }

ModelKind parse_model(std::string_view s) {
    if (s == "wheel") return ModelKind::Wheel;
    if (s == "gen") return ModelKind::Gen;
    throw ConfigError("unknown model '" + std::string(s) + "' (expected wheel or gen)");
}

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(std::string_view v) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw std::invalid_argument("expected a number, got '" + std::string(v) + "'");
    return out;
}

int parse_int(std::string_view v) { return parse_number<int>(v); }
std::int64_t parse_i64(std::string_view v) { return parse_number<std::int64_t>(v); }
double parse_double(std::string_view v) { return parse_number<double>(v); }

std::vector<int> parse_int_list(std::string_view v) {
    std::vector<int> out;
    if (trim(v).empty()) return out;
    while (true) {
        const auto comma = v.find(',');
        out.push_back(parse_int(trim(v.substr(0, comma))));
        if (comma == std::string_view::npos) break;
        v.remove_prefix(comma + 1);
    }
    return out;
}

using Setter = std::function<void(RunConfig&, std::string_view)>;

// Ordered as documented in the README.
const std::vector<std::pair<std::string, Setter>>& setters() {
    static const std::vector<std::pair<std::string, Setter>> table = {
        {"metaset", [](RunConfig& c, std::string_view v) { c.metaset = std::string(v); }},
        {"checkpoint", [](RunConfig& c, std::string_view v) { c.checkpoint = std::string(v); }},
        {"output_dir", [](RunConfig& c, std::string_view v) { c.output_dir = std::string(v); }},
        {"material_map", [](RunConfig& c, std::string_view v) { c.material_map = std::string(v); }},
        {"model", [](RunConfig& c, std::string_view v) { c.model = parse_model(v); }},
        {"wheel_nodes", [](RunConfig& c, std::string_view v) { c.wheel_nodes = parse_int(v); }},
        {"hidden_dim", [](RunConfig& c, std::string_view v) { c.hidden_dim = parse_int(v); }},
        {"mp_steps", [](RunConfig& c, std::string_view v) { c.mp_steps = parse_int(v); }},
        {"node_modules", [](RunConfig& c, std::string_view v) { c.node_modules = parse_int(v); }},
        {"edge_modules", [](RunConfig& c, std::string_view v) { c.edge_modules = parse_int(v); }},
        {"module_hidden", [](RunConfig& c, std::string_view v) { c.module_hidden = parse_int_list(v); }},
        {"activation", [](RunConfig& c, std::string_view v) { c.activation = parse_activation(std::string(v)); }},
        {"init_gain", [](RunConfig& c, std::string_view v) { c.init_gain = parse_double(v); }},
        {"grid_x_min", [](RunConfig& c, std::string_view v) { c.grid.x_min = parse_double(v); }},
        {"grid_x_max", [](RunConfig& c, std::string_view v) { c.grid.x_max = parse_double(v); }},
        {"grid_y_min", [](RunConfig& c, std::string_view v) { c.grid.y_min = parse_double(v); }},
        {"grid_y_max", [](RunConfig& c, std::string_view v) { c.grid.y_max = parse_double(v); }},
        {"grid_rows", [](RunConfig& c, std::string_view v) { c.grid.rows = parse_int(v); }},
        {"grid_cols", [](RunConfig& c, std::string_view v) { c.grid.cols = parse_int(v); }},
        {"optimizer", [](RunConfig& c, std::string_view v) { c.optimizer.kind = parse_optimizer(std::string(v)); }},
        {"lr", [](RunConfig& c, std::string_view v) { c.optimizer.lr = parse_double(v); }},
        {"train_steps", [](RunConfig& c, std::string_view v) { c.train_steps = parse_i64(v); }},
        {"batch_size", [](RunConfig& c, std::string_view v) { c.batch_size = parse_int(v); }},
        {"sa_t0", [](RunConfig& c, std::string_view v) { c.sa_t0 = parse_double(v); }},
        {"sa_t_final", [](RunConfig& c, std::string_view v) { c.sa_t_final = parse_double(v); }},
        {"train_pool",
         [](RunConfig& c, std::string_view v) {
             if (v == "all") c.train_pool = TrainPool::All;
             else if (v == "train") c.train_pool = TrainPool::Train;
             else throw std::invalid_argument("expected all or train");
         }},
        {"adapt_budget", [](RunConfig& c, std::string_view v) { c.adapt_budget = parse_i64(v); }},
        {"adapt_t0", [](RunConfig& c, std::string_view v) { c.adapt_t0 = parse_double(v); }},
        {"adapt_t_final", [](RunConfig& c, std::string_view v) { c.adapt_t_final = parse_double(v); }},
        {"adapt_train_points", [](RunConfig& c, std::string_view v) { c.adapt_train_points = parse_int(v); }},
        {"baseline_hidden", [](RunConfig& c, std::string_view v) { c.baseline.hidden = parse_int_list(v); }},
        {"baseline_lr", [](RunConfig& c, std::string_view v) { c.baseline.optimizer.lr = parse_double(v); }},
        {"baseline_steps", [](RunConfig& c, std::string_view v) { c.baseline.steps = parse_i64(v); }},
        {"baseline_batch_size", [](RunConfig& c, std::string_view v) { c.baseline.batch_size = parse_int(v); }},
        {"n_meta_train", [](RunConfig& c, std::string_view v) { c.synthetic.n_meta_train = parse_int(v); }},
        {"n_meta_test", [](RunConfig& c, std::string_view v) { c.synthetic.n_meta_test = parse_int(v); }},
        {"train_points", [](RunConfig& c, std::string_view v) { c.synthetic.train_points = parse_int(v); }},
        {"test_points", [](RunConfig& c, std::string_view v) { c.synthetic.test_points = parse_int(v); }},
        {"noise_sigma", [](RunConfig& c, std::string_view v) { c.synthetic.noise_sigma = parse_double(v); }},
        {"generator_node_modules", [](RunConfig& c, std::string_view v) { c.synthetic.node_modules = parse_int(v); }},
        {"generator_edge_modules", [](RunConfig& c, std::string_view v) { c.synthetic.edge_modules = parse_int(v); }},
        {"generator_hidden_dim", [](RunConfig& c, std::string_view v) { c.generator_hidden_dim = parse_int(v); }},
        {"generator_module_hidden",
         [](RunConfig& c, std::string_view v) { c.generator_module_hidden = parse_int_list(v); }},
        {"generator_weight_gain", [](RunConfig& c, std::string_view v) { c.synthetic.weight_gain = parse_double(v); }},
        {"calibration_mm", [](RunConfig& c, std::string_view v) { c.calibration_mm = parse_double(v); }},
        {"seed", [](RunConfig& c, std::string_view v) { c.seed = parse_number<std::uint64_t>(v); }},
    };
    return table;
}

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, _] : setters()) k.push_back(name);
        return k;
    }();
    return keys;
}

RunConfig parse_config(std::string_view text, const std::string& source) {
    static const std::map<std::string, Setter, std::less<>> lookup(setters().begin(), setters().end());
    RunConfig cfg;
    std::set<std::string, std::less<>> seen;
    int line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = source + ":" + std::to_string(line_no);
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
        const std::string_view key = trim(line.substr(0, eq));
        const std::string_view value = trim(line.substr(eq + 1));
        const auto it = lookup.find(key);
        if (it == lookup.end()) throw ConfigError(where + ": unknown key '" + std::string(key) + "'");
        if (!seen.insert(std::string(key)).second)
            throw ConfigError(where + ": key '" + std::string(key) + "' given twice");
        try {
            it->second(cfg, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": " + e.what());
        } catch (const std::exception& e) {
            throw ConfigError(where + ": bad value for '" + std::string(key) + "': " + e.what());
        }
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const DataError& e) {
        throw ConfigError(std::string("cannot read config: ") + e.what());
    }
    return parse_config(text, path.string());
}

void RunConfig::require(Mode mode) const {
    auto need = [&](const std::filesystem::path& p, const char* key) {
        if (p.empty()) throw ConfigError(std::string("'") + key + "' is required for " + to_string(mode));
    };
    auto positive = [](double v, const char* key) {
        if (!(v > 0)) throw ConfigError(std::string("'") + key + "' must be positive");
    };
    switch (mode) {
        case Mode::Generate: need(metaset, "metaset"); break;
        case Mode::Train:
            need(metaset, "metaset");
            need(checkpoint, "checkpoint");
            need(output_dir, "output_dir");
            break;
        case Mode::Adapt: need(checkpoint, "checkpoint"); need(output_dir, "output_dir"); break;
        case Mode::Eval:
            need(metaset, "metaset");
            need(checkpoint, "checkpoint");
            need(output_dir, "output_dir");
            break;
        case Mode::Report: break;
    }
    if (wheel_nodes < 2) throw ConfigError("'wheel_nodes' must be at least 2");
    if (hidden_dim < 1 || mp_steps < 0 || node_modules < 1 || edge_modules < 1)
        throw ConfigError("model sizes must be positive");
    for (int h : module_hidden)
        if (h < 1) throw ConfigError("'module_hidden' entries must be positive");
    positive(init_gain, "init_gain");
    positive(optimizer.lr, "lr");
    positive(calibration_mm, "calibration_mm");
    if (train_steps < 0) throw ConfigError("'train_steps' must be non-negative");
    if (batch_size < 1) throw ConfigError("'batch_size' must be positive");
    if (adapt_budget < 0) throw ConfigError("'adapt_budget' must be non-negative");
    if (adapt_train_points < 1) throw ConfigError("'adapt_train_points' must be positive");
    if (!(sa_t0 > sa_t_final && sa_t_final > 0)) throw ConfigError("need 0 < sa_t_final < sa_t0");
    if (!(adapt_t0 > adapt_t_final && adapt_t_final > 0)) throw ConfigError("need 0 < adapt_t_final < adapt_t0");
    if (baseline.steps < 0 || baseline.batch_size < 1) throw ConfigError("bad baseline settings");
    positive(baseline.optimizer.lr, "baseline_lr");
    try {
        grid.validate();
        if (mode == Mode::Generate) synthetic.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

}  // namespace modmeta
