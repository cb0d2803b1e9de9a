#pragma once

// Pseudo-epoch semi-supervised training: a fixed budget of labeled and
// unlabeled random patches per epoch, interleaved one labeled batch then one
// unlabeled batch. Labeled batches optimize the supervised loss (plus the
// weighted unsupervised term when configured); unlabeled batches optimize the
// weighted unsupervised term alone, so only shared and unsupervised-branch
// parameters can move.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tilesemi/data.hpp"
#include "tilesemi/evaluation.hpp"
#include "tilesemi/losses.hpp"
#include "tilesemi/models.hpp"
#include "tilesemi/npz.hpp"

namespace tilesemi {

struct TrainConfig {
    ModelSpec model;
    LossSpec loss;
    double learning_rate = 1e-4;
    int pseudo_epochs = 150;
    int labeled_samples_per_epoch = 5000;
    int unlabeled_samples_per_epoch = 5000;
    int patch_px = 512;
    int batch_size = 4;
    std::uint64_t seed = 0;
    bool apply_unsup_on_labeled = true;  // literal combined-loss reading on labeled batches
    bool validate_each_epoch = false;    // track best checkpoint by test-split mIoU
    int workers = 1;

    // derives the unsupervised head layout from the loss and checks everything
    TrainConfig normalized() const;
    void validate() const;
};

class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // applies one update to every touched parameter; untouched parameters and
    // their moment estimates are left untouched bit for bit
    void step(const std::vector<nn::Parameter<float>*>& params);

    double learning_rate() const { return lr_; }

    void save(npz::Archive& archive, const std::string& prefix) const;
    void load(const npz::Archive& archive, const std::string& prefix);

private:
    struct Moments {
        Tensor<float> m, v;
        std::int64_t t = 0;
    };
    std::map<std::string, Moments> state_;
    double lr_, beta1_, beta2_, eps_;
};

struct StepRecord {
    std::int64_t step = 0;
    int pseudo_epoch = 0;
    std::string batch_kind;  // "labeled" | "unlabeled"
    std::optional<double> l_s;
    std::optional<double> l_u;
    double total = 0.0;
    double lr = 0.0;
};

class Trainer {
public:
    Trainer(const TrainConfig& config, const SplitManifest& manifest);

    MultiTaskModel& model() { return model_; }
    const TrainConfig& config() const { return config_; }
    std::int64_t step() const { return step_; }
    int pseudo_epoch() const { return pseudo_epoch_; }
    const std::vector<StepRecord>& history() const { return history_; }

    // one pseudo-epoch; returns the step records it produced
    std::vector<StepRecord> run_pseudo_epoch();

    // full run with per-epoch checkpoints and a JSON-lines metric log under
    // out_dir; picks up from the last saved state when one exists
    void train(const std::string& out_dir);

    EvalResult evaluate(MeanIouMode mode = MeanIouMode::present_classes);

    void save_state(const std::string& path);
    void load_state(const std::string& path);

private:
    struct Batch {
        Tensor<float> images;
        std::optional<Tensor<std::int32_t>> labels;
    };
    Batch make_batch(const std::vector<const TileRecord*>& tiles, std::vector<Rng>& streams,
                     std::int64_t& sample_counter, bool want_labels);
    StepRecord train_step(const Batch& batch, bool labeled);

    TrainConfig config_;
    SplitManifest manifest_;
    MultiTaskModel model_;
    Adam adam_;
    TileCache cache_;
    std::int64_t step_ = 0;
    int pseudo_epoch_ = 0;
    double best_miou_ = -1.0;
    std::vector<StepRecord> history_;
};

struct AblationRow {
    int labeled_tile_count = 0;
    double mean_oa = 0.0, std_oa = 0.0;
    double mean_miou = 0.0, std_miou = 0.0;
};

// Trains `repeats` models per labeled-tile count on seeded random subsets of
// the labeled split and reports mean and standard deviation of the test-split
// scores.
std::vector<AblationRow> ablation_run(const TrainConfig& config, const SplitManifest& manifest,
                                      const std::vector<int>& labeled_tile_counts, int repeats);

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

}  // namespace tilesemi
