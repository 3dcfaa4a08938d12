#include "modmeta/nn.hpp"

#include <fstream>
#include <sstream>

#include "modmeta/nn_io.hpp"

namespace modmeta {

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

Activation parse_activation(const std::string& name) {
    if (name == "tanh") return Activation::Tanh;
    if (name == "relu") return Activation::Relu;
    throw std::invalid_argument("unknown activation '" + name + "'");
}

void MlpSpec::validate() const {
    if (input_dim < 1 || output_dim < 1) throw std::invalid_argument("mlp dims must be >= 1");
    for (int h : hidden_dims)
        if (h < 1) throw std::invalid_argument("mlp hidden dims must be >= 1");
}

Json to_json(const MlpSpec& spec) {
    return Json{{"input_dim", spec.input_dim},
                {"hidden_dims", spec.hidden_dims},
                {"output_dim", spec.output_dim},
                {"activation", to_string(spec.activation)}};
}

MlpSpec mlp_spec_from_json(const Json& j) {
    MlpSpec spec;
    spec.input_dim = j.at("input_dim").get<int>();
    spec.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
    spec.output_dim = j.at("output_dim").get<int>();
    spec.activation = parse_activation(j.at("activation").get<std::string>());
    spec.validate();
    return spec;
}

Json to_json(const MlpParams<double>& p) {
    return Json{{"spec", to_json(p.spec)}, {"params", flatten(p)}};
}

MlpParams<double> mlp_params_from_json(const Json& j) {
    auto p = zero_params<double>(mlp_spec_from_json(j.at("spec")));
    const auto flat = j.at("params").get<std::vector<double>>();
    unflatten<double>(flat, p);
    return p;
}

Json to_json(const AdamState<double>& s) {
    Json j{{"step", s.step}};
    if (!s.fresh()) {
        j["m"] = flatten(s.m);
        j["v"] = flatten(s.v);
    }
    return j;
}

AdamState<double> adam_state_from_json(const Json& j, const MlpParams<double>& like) {
    AdamState<double> s;
    s.step = j.at("step").get<std::int64_t>();
    if (s.step > 0) {
        s.m = MlpGradients<double>::zeros_like(like);
        s.v = MlpGradients<double>::zeros_like(like);
        unflatten<double>(j.at("m").get<std::vector<double>>(), s.m);
        unflatten<double>(j.at("v").get<std::vector<double>>(), s.v);
    }
    return s;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out << contents;
        if (!out) throw DataError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void save_mlp_checkpoint(const std::filesystem::path& path, const MlpCheckpoint& ckpt) {
    Json j = to_json(ckpt.params);
    j["format"] = "modmeta-mlp";
    j["version"] = kMlpCheckpointVersion;
    j["seed"] = ckpt.seed;
    write_file_atomic(path, j.dump(1) + "\n");
}

MlpCheckpoint load_mlp_checkpoint(const std::filesystem::path& path) {
    Json j;
    try {
        j = Json::parse(read_file(path));
    } catch (const Json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    if (j.value("format", "") != "modmeta-mlp" || j.value("version", 0) != kMlpCheckpointVersion)
        throw DataError(path.string() + ": not a version " + std::to_string(kMlpCheckpointVersion) +
                        " mlp checkpoint");
    try {
        return MlpCheckpoint{mlp_params_from_json(j), j.at("seed").get<std::uint64_t>()};
    } catch (const std::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

}  // namespace modmeta
