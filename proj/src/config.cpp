#include "tilesemi/config.hpp"

#include <fstream>
#include <set>

using nlohmann::json;

namespace tilesemi {

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                         const std::string& where) {
    for (const auto& [key, value] : j.items())
        if (!known.count(key))
            throw std::invalid_argument("unknown key '" + key + "' in " + where);
}

}  // namespace

json to_json(const ModelSpec& spec) {
    return {{"backbone", to_string(spec.backbone)},
            {"architecture", to_string(spec.architecture)},
            {"num_classes", spec.num_classes},
            {"unsup_channels", spec.unsup_channels},
            {"input_channels", spec.input_channels},
            {"base_channels", spec.base_channels},
            {"unsup_activation",
             spec.unsup_activation == UnsupActivation::softmax ? "softmax" : "sigmoid"}};
}

ModelSpec model_spec_from_json(const json& j) {
    reject_unknown_keys(j,
                        {"backbone", "architecture", "num_classes", "unsup_channels",
                         "input_channels", "base_channels", "unsup_activation"},
                        "model spec");
    ModelSpec s;
    if (j.contains("backbone")) s.backbone = backbone_from_string(j["backbone"].get<std::string>());
    if (j.contains("architecture"))
        s.architecture = architecture_from_string(j["architecture"].get<std::string>());
    if (j.contains("num_classes")) s.num_classes = j["num_classes"].get<int>();
    if (j.contains("unsup_channels")) s.unsup_channels = j["unsup_channels"].get<int>();
    if (j.contains("input_channels")) s.input_channels = j["input_channels"].get<int>();
    if (j.contains("base_channels")) s.base_channels = j["base_channels"].get<int>();
    if (j.contains("unsup_activation")) {
        const auto v = j["unsup_activation"].get<std::string>();
        if (v == "softmax")
            s.unsup_activation = UnsupActivation::softmax;
        else if (v == "sigmoid")
            s.unsup_activation = UnsupActivation::sigmoid;
        else
            throw std::invalid_argument("unknown unsup_activation: " + v);
    }
    return s;
}

json to_json(const LossSpec& spec) {
    return {{"kind", to_string(spec.kind)},
            {"lambda", spec.effective_lambda()},
            {"alpha_rec", spec.alpha_rec},
            {"alpha_reg", spec.alpha_reg},
            {"K", spec.K},
            {"detach_centers", spec.detach_centers},
            {"normalize_regularizer", spec.normalize_regularizer}};
}

LossSpec loss_spec_from_json(const json& j) {
    reject_unknown_keys(
        j, {"kind", "lambda", "alpha_rec", "alpha_reg", "K", "detach_centers",
            "normalize_regularizer"},
        "loss spec");
    LossSpec s;
    if (j.contains("kind")) s.kind = loss_kind_from_string(j["kind"].get<std::string>());
    if (j.contains("lambda")) s.lambda = j["lambda"].get<double>();
    if (j.contains("alpha_rec")) s.alpha_rec = j["alpha_rec"].get<double>();
    if (j.contains("alpha_reg")) s.alpha_reg = j["alpha_reg"].get<double>();
    if (j.contains("K")) s.K = j["K"].get<int>();
    if (j.contains("detach_centers")) s.detach_centers = j["detach_centers"].get<bool>();
    if (j.contains("normalize_regularizer"))
        s.normalize_regularizer = j["normalize_regularizer"].get<bool>();
    return s;
}

json to_json(const TrainConfig& config) {
    return {{"learning_rate", config.learning_rate},
            {"pseudo_epochs", config.pseudo_epochs},
            {"labeled_samples_per_epoch", config.labeled_samples_per_epoch},
            {"unlabeled_samples_per_epoch", config.unlabeled_samples_per_epoch},
            {"patch_px", config.patch_px},
            {"batch_size", config.batch_size},
            {"seed", config.seed},
            {"apply_unsup_on_labeled", config.apply_unsup_on_labeled},
            {"validate_each_epoch", config.validate_each_epoch},
            {"workers", config.workers}};
}

TrainConfig train_config_from_json(const json& j) {
    reject_unknown_keys(j,
                        {"learning_rate", "pseudo_epochs", "labeled_samples_per_epoch",
                         "unlabeled_samples_per_epoch", "patch_px", "batch_size", "seed",
                         "apply_unsup_on_labeled", "validate_each_epoch", "workers"},
                        "train config");
    TrainConfig c;
    if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("pseudo_epochs")) c.pseudo_epochs = j["pseudo_epochs"].get<int>();
    if (j.contains("labeled_samples_per_epoch"))
        c.labeled_samples_per_epoch = j["labeled_samples_per_epoch"].get<int>();
    if (j.contains("unlabeled_samples_per_epoch"))
        c.unlabeled_samples_per_epoch = j["unlabeled_samples_per_epoch"].get<int>();
    if (j.contains("patch_px")) c.patch_px = j["patch_px"].get<int>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("apply_unsup_on_labeled"))
        c.apply_unsup_on_labeled = j["apply_unsup_on_labeled"].get<bool>();
    if (j.contains("validate_each_epoch"))
        c.validate_each_epoch = j["validate_each_epoch"].get<bool>();
    if (j.contains("workers")) c.workers = j["workers"].get<int>();
    return c;
}

json to_json(const AnalysisParams& p) {
    return {{"perplexity", p.perplexity},
            {"tsne_iterations", p.tsne_iterations},
            {"grid_resolution", p.grid_resolution},
            {"nu", p.nu},
            {"gamma", p.gamma},
            {"encoder_input_px", p.encoder_input_px},
            {"seed", p.seed}};
}

AnalysisParams analysis_params_from_json(const json& j) {
    reject_unknown_keys(j,
                        {"perplexity", "tsne_iterations", "grid_resolution", "nu", "gamma",
                         "encoder_input_px", "seed"},
                        "analysis params");
    AnalysisParams p;
    if (j.contains("perplexity")) p.perplexity = j["perplexity"].get<double>();
    if (j.contains("tsne_iterations")) p.tsne_iterations = j["tsne_iterations"].get<int>();
    if (j.contains("grid_resolution")) p.grid_resolution = j["grid_resolution"].get<int>();
    if (j.contains("nu")) p.nu = j["nu"].get<double>();
    if (j.contains("gamma")) p.gamma = j["gamma"].get<double>();
    if (j.contains("encoder_input_px")) p.encoder_input_px = j["encoder_input_px"].get<int>();
    if (j.contains("seed")) p.seed = j["seed"].get<std::uint64_t>();
    return p;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::invalid_argument("config parse error in " + path + ": " + e.what());
    }
    reject_unknown_keys(j, {"model", "loss", "train", "analysis"}, "run config");
    RunConfig c;
    if (j.contains("model")) c.train.model = model_spec_from_json(j["model"]);
    if (j.contains("loss")) c.train.loss = loss_spec_from_json(j["loss"]);
    if (j.contains("train")) {
        const TrainConfig t = train_config_from_json(j["train"]);
        const ModelSpec m = c.train.model;
        const LossSpec l = c.train.loss;
        c.train = t;
        c.train.model = m;
        c.train.loss = l;
    }
    if (j.contains("analysis")) c.analysis = analysis_params_from_json(j["analysis"]);
    c.train = c.train.normalized();
    return c;
}

void write_checkpoint_sidecar(const std::string& path, const ModelSpec& model,
                              const LossSpec& loss, std::uint64_t seed, int pseudo_epoch) {
    json j = {{"model_spec", to_json(model)},
              {"loss_spec", to_json(loss)},
              {"seed", seed},
              {"pseudo_epoch", pseudo_epoch}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint sidecar: " + path);
    out << j.dump(2) << '\n';
}

CheckpointInfo read_checkpoint_sidecar(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint sidecar: " + path);
    json j;
    in >> j;
    CheckpointInfo info;
    info.model = model_spec_from_json(j.at("model_spec"));
    info.loss = loss_spec_from_json(j.at("loss_spec"));
    info.seed = j.at("seed").get<std::uint64_t>();
    info.pseudo_epoch = j.at("pseudo_epoch").get<int>();
    return info;
}

}  // namespace tilesemi
