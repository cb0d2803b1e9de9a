#pragma once

// Tile-stitched inference, confusion-matrix metrics and color-map rendering.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "tilesemi/data.hpp"
#include "tilesemi/models.hpp"
#include "tilesemi/tensor.hpp"

namespace tilesemi {

// rows = ground truth, columns = prediction; void ground-truth pixels are
// never counted. Accumulation is associative, so per-tile matrices may be
// merged in any order with identical results.
struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<std::int64_t> counts;  // C x C

    explicit ConfusionMatrix(int c = 0)
        : num_classes(c), counts(static_cast<std::size_t>(c) * c, 0) {}

    std::int64_t& at(int gt, int pred) {
        return counts[static_cast<std::size_t>(gt) * num_classes + pred];
    }
    std::int64_t at(int gt, int pred) const {
        return counts[static_cast<std::size_t>(gt) * num_classes + pred];
    }
    std::int64_t total() const;
    void merge(const ConfusionMatrix& other);
};

ConfusionMatrix accumulate_confusion(const Tensor<std::int32_t>& pred,
                                     const Tensor<std::int32_t>& gt, int num_classes,
                                     const std::set<int>& void_ids);

// trace / total; 0 with *undefined set when the matrix is empty
double overall_accuracy(const ConfusionMatrix& cm, bool* undefined = nullptr);

enum class MeanIouMode {
    present_classes,  // classes absent from both prediction and truth are skipped
    all_classes,      // absent classes count as IoU 0
};

// per-class IoU = TP / (TP + FP + FN), averaged over included non-void classes
double mean_iou(const ConfusionMatrix& cm, MeanIouMode mode = MeanIouMode::present_classes,
                const std::set<int>& void_ids = {});
std::vector<double> per_class_iou(const ConfusionMatrix& cm);

// Sliding-window inference over one tile. Overlapping logits are averaged
// before the per-pixel argmax; tiles smaller than the window are padded
// reflectively and cropped back. Runs the model in evaluation mode.
Tensor<std::int32_t> stitched_inference(MultiTaskModel& model, const TileRecord& tile,
                                        std::int64_t patch_px, std::int64_t overlap_px,
                                        TileCache* cache = nullptr);

// id -> color; void ids render black; ids outside the nomenclature raise
ImageU8 render_map(const Tensor<std::int32_t>& labels, const ClassNomenclature& nomenclature);

struct EvalResult {
    ConfusionMatrix confusion;
    double oa = 0.0;
    double miou = 0.0;
    std::vector<double> class_iou;
};

// stitched inference + confusion over every labeled tile of the given split
EvalResult evaluate_split(MultiTaskModel& model, const SplitManifest& manifest, Split split,
                          std::int64_t patch_px, std::int64_t overlap_px,
                          MeanIouMode mode = MeanIouMode::present_classes);

void write_metrics_json(const std::string& path, const EvalResult& result,
                        const ClassNomenclature& nomenclature);

}  // namespace tilesemi
