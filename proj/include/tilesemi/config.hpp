#pragma once

// JSON (de)serialization for the declarative run configuration and the
// checkpoint sidecars. Parsers reject unknown keys so typos fail loudly.

#include <json.hpp>

#include <string>

#include "tilesemi/losses.hpp"
#include "tilesemi/models.hpp"
#include "tilesemi/trainer.hpp"

namespace tilesemi {

nlohmann::json to_json(const ModelSpec& spec);
nlohmann::json to_json(const LossSpec& spec);
nlohmann::json to_json(const TrainConfig& config);

ModelSpec model_spec_from_json(const nlohmann::json& j);
LossSpec loss_spec_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct AnalysisParams {
    double perplexity = 30.0;
    int tsne_iterations = 1000;
    int grid_resolution = 512;
    double nu = 0.1;
    double gamma = 0.0;  // 0 = median-distance heuristic
    int encoder_input_px = 224;
    std::uint64_t seed = 0;
};

AnalysisParams analysis_params_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AnalysisParams& params);

// full run config file: {"model": ..., "loss": ..., "train": ..., "analysis": ...}
struct RunConfig {
    TrainConfig train;
    AnalysisParams analysis;
};

RunConfig load_run_config(const std::string& path);

// checkpoint sidecar: {model_spec, loss_spec, seed, pseudo_epoch}
void write_checkpoint_sidecar(const std::string& path, const ModelSpec& model,
                              const LossSpec& loss, std::uint64_t seed, int pseudo_epoch);

struct CheckpointInfo {
    ModelSpec model;
    LossSpec loss;
    std::uint64_t seed = 0;
    int pseudo_epoch = 0;
};

CheckpointInfo read_checkpoint_sidecar(const std::string& path);

}  // namespace tilesemi
