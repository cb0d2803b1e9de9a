#include "tilesemi/evaluation.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace tilesemi {

std::int64_t ConfusionMatrix::total() const {
    std::int64_t t = 0;
    for (const auto v : counts) t += v;
    return t;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.num_classes != num_classes)
        throw std::invalid_argument("confusion matrix size mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

ConfusionMatrix accumulate_confusion(const Tensor<std::int32_t>& pred,
                                     const Tensor<std::int32_t>& gt, int num_classes,
                                     const std::set<int>& void_ids) {
    if (pred.shape() != gt.shape())
        throw std::invalid_argument("accumulate_confusion: shape mismatch");
    ConfusionMatrix cm(num_classes);
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
        const int g = gt[i];
        if (void_ids.count(g)) continue;
        const int p = pred[i];
        if (g < 0 || g >= num_classes)
            throw std::invalid_argument("ground-truth id out of range: " + std::to_string(g));
        if (p < 0 || p >= num_classes)
            throw std::invalid_argument("prediction id out of range: " + std::to_string(p));
        ++cm.at(g, p);
    }
    return cm;
}

double overall_accuracy(const ConfusionMatrix& cm, bool* undefined) {
    const std::int64_t total = cm.total();
    if (undefined) *undefined = total == 0;
    if (total == 0) return 0.0;
    std::int64_t diag = 0;
    for (int c = 0; c < cm.num_classes; ++c) diag += cm.at(c, c);
    return static_cast<double>(diag) / static_cast<double>(total);
}

std::vector<double> per_class_iou(const ConfusionMatrix& cm) {
    const int c = cm.num_classes;
    std::vector<double> iou(static_cast<std::size_t>(c), std::nan(""));
    for (int k = 0; k < c; ++k) {
        std::int64_t tp = cm.at(k, k), row = 0, col = 0;
        for (int j = 0; j < c; ++j) {
            row += cm.at(k, j);
            col += cm.at(j, k);
        }
        const std::int64_t denom = row + col - tp;  // TP + FP + FN
        if (denom > 0) iou[static_cast<std::size_t>(k)] = static_cast<double>(tp) /
                                                          static_cast<double>(denom);
    }
    return iou;
}

double mean_iou(const ConfusionMatrix& cm, MeanIouMode mode, const std::set<int>& void_ids) {
    const auto iou = per_class_iou(cm);
    std::vector<double> included;
    int counted = 0;
    for (int k = 0; k < cm.num_classes; ++k) {
        if (void_ids.count(k)) continue;
        const double v = iou[static_cast<std::size_t>(k)];
        if (std::isnan(v)) {
            if (mode == MeanIouMode::all_classes) ++counted;  // absent class counts as 0
            continue;
        }
        included.push_back(v);
        ++counted;
    }
    if (counted == 0) return 0.0;
    // summing in sorted order keeps the mean bit-identical under class relabeling
    std::sort(included.begin(), included.end());
    double sum = 0.0;
    for (const double v : included) sum += v;
    return sum / counted;
}

namespace {

// reflect-pad an image tensor (C,H,W) to at least (min_h, min_w)
Tensor<float> reflect_pad(const Tensor<float>& img, std::int64_t min_h, std::int64_t min_w) {
    const std::int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    const std::int64_t oh = std::max(h, min_h), ow = std::max(w, min_w);
    Tensor<float> out({c, oh, ow});
    const auto reflect = [](std::int64_t i, std::int64_t n) {
        if (i < n) return i;
        const std::int64_t over = i - (n - 1);
        return std::max<std::int64_t>(0, n - 1 - over);
    };
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t r = 0; r < oh; ++r)
            for (std::int64_t cc = 0; cc < ow; ++cc)
                out[(ch * oh + r) * ow + cc] =
                    img[(ch * h + reflect(r, h)) * w + reflect(cc, w)];
    return out;
}

std::vector<std::int64_t> window_starts(std::int64_t extent, std::int64_t patch,
                                        std::int64_t stride) {
    std::vector<std::int64_t> starts;
    for (std::int64_t s = 0;; s += stride) {
        if (s + patch >= extent) {
            starts.push_back(extent - patch);
            break;
        }
        starts.push_back(s);
    }
    return starts;
}

}  // namespace

Tensor<std::int32_t> stitched_inference(MultiTaskModel& model, const TileRecord& tile,
                                        std::int64_t patch_px, std::int64_t overlap_px,
                                        TileCache* cache) {
    if (patch_px % MultiTaskModel::kDownsampleFactor)
        throw std::invalid_argument("patch_px must be divisible by 32");
    if (overlap_px < 0 || overlap_px >= patch_px)
        throw std::invalid_argument("overlap_px must lie in [0, patch_px)");

    const auto img_full = cache ? cache->image(tile.image_path)
                                : std::make_shared<ImageU8>(load_image_rgb(tile.image_path));
    ImageU8 window = tile.window ? img_full->crop(static_cast<int>(tile.window->row),
                                                  static_cast<int>(tile.window->col),
                                                  static_cast<int>(tile.window->height),
                                                  static_cast<int>(tile.window->width))
                                 : *img_full;
    const std::int64_t h = window.height, w = window.width;
    Tensor<float> chw = to_unit_chw(window);
    const bool padded = h < patch_px || w < patch_px;
    if (padded) chw = reflect_pad(chw, patch_px, patch_px);
    const std::int64_t ph = chw.dim(1), pw = chw.dim(2);

    const int c = model.spec().num_classes;
    Tensor<float> logit_sum({c, ph, pw});
    Tensor<float> hits({1, ph, pw});

    const std::int64_t stride = patch_px - overlap_px;
    for (const auto r0 : window_starts(ph, patch_px, stride)) {
        for (const auto c0 : window_starts(pw, patch_px, stride)) {
            Tensor<float> x({1, 3, patch_px, patch_px});
            for (std::int64_t ch = 0; ch < 3; ++ch)
                for (std::int64_t r = 0; r < patch_px; ++r)
                    std::copy(chw.data() + (ch * ph + r0 + r) * pw + c0,
                              chw.data() + (ch * ph + r0 + r) * pw + c0 + patch_px,
                              x.data() + (ch * patch_px + r) * patch_px);
            const auto logits = model.forward_supervised(x, /*train=*/false);
            for (std::int64_t ch = 0; ch < c; ++ch)
                for (std::int64_t r = 0; r < patch_px; ++r)
                    for (std::int64_t cc = 0; cc < patch_px; ++cc)
                        logit_sum[(ch * ph + r0 + r) * pw + c0 + cc] +=
                            logits[(ch * patch_px + r) * patch_px + cc];
            for (std::int64_t r = 0; r < patch_px; ++r)
                for (std::int64_t cc = 0; cc < patch_px; ++cc)
                    hits[(r0 + r) * pw + c0 + cc] += 1.0f;
        }
    }

    Tensor<std::int32_t> out({h, w});
    for (std::int64_t r = 0; r < h; ++r)
        for (std::int64_t cc = 0; cc < w; ++cc) {
            const float n = hits[r * pw + cc];
            int best = 0;
            float bv = logit_sum[r * pw + cc] / n;
            for (int ch = 1; ch < c; ++ch) {
                const float v = logit_sum[(ch * ph + r) * pw + cc] / n;
                if (v > bv) {
                    bv = v;
                    best = ch;
                }
            }
            out[r * w + cc] = best;
        }
    return out;
}

ImageU8 render_map(const Tensor<std::int32_t>& labels, const ClassNomenclature& nomenclature) {
    if (labels.ndim() != 2) throw std::invalid_argument("render_map: expected (H, W) labels");
    const int h = static_cast<int>(labels.dim(0)), w = static_cast<int>(labels.dim(1));
    ImageU8 out(h, w, 3);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const int id = labels[static_cast<std::int64_t>(r) * w + c];
            if (id < 0 || id >= nomenclature.size())
                throw std::invalid_argument("render_map: unknown class id " + std::to_string(id));
            if (nomenclature.is_void(id)) {
                out.at(r, c, 0) = out.at(r, c, 1) = out.at(r, c, 2) = 0;
            } else {
                const auto& col = nomenclature.entry(id).color;
                out.at(r, c, 0) = static_cast<std::uint8_t>(col[0]);
                out.at(r, c, 1) = static_cast<std::uint8_t>(col[1]);
                out.at(r, c, 2) = static_cast<std::uint8_t>(col[2]);
            }
        }
    return out;
}

EvalResult evaluate_split(MultiTaskModel& model, const SplitManifest& manifest, Split split,
                          std::int64_t patch_px, std::int64_t overlap_px, MeanIouMode mode) {
    const auto& nom = manifest.nomenclature;
    EvalResult result;
    result.confusion = ConfusionMatrix(nom.size());
    TileCache cache(8);
    bool any = false;
    for (const auto* tile : manifest.by_split(split)) {
        if (!tile->has_labels()) continue;
        any = true;
        const auto pred = stitched_inference(model, *tile, patch_px, overlap_px, &cache);
        const auto lab = cache.label(tile->label_path);
        const std::int64_t row0 = tile->window ? tile->window->row : 0;
        const std::int64_t col0 = tile->window ? tile->window->col : 0;
        Tensor<std::int32_t> gt({tile->eff_height(), tile->eff_width()});
        const int void_id = nom.void_ids.empty() ? nom.size() - 1 : *nom.void_ids.begin();
        for (std::int64_t r = 0; r < tile->eff_height(); ++r)
            for (std::int64_t c = 0; c < tile->eff_width(); ++c) {
                int v = lab->at(static_cast<int>(row0 + r), static_cast<int>(col0 + c));
                if (v >= nom.size()) v = void_id;
                gt[r * tile->eff_width() + c] = v;
            }
        result.confusion.merge(accumulate_confusion(pred, gt, nom.size(), nom.void_ids));
    }
    if (!any) throw std::invalid_argument("evaluate_split: no labeled tiles in split");
    result.oa = overall_accuracy(result.confusion);
    result.miou = mean_iou(result.confusion, mode, nom.void_ids);
    result.class_iou = per_class_iou(result.confusion);
    return result;
}

void write_metrics_json(const std::string& path, const EvalResult& result,
                        const ClassNomenclature& nomenclature) {
    nlohmann::json j;
    j["oa"] = result.oa;
    j["miou"] = result.miou;
    j["per_class_iou"] = nlohmann::json::object();
    j["pixel_counts"] = nlohmann::json::object();
    for (int c = 0; c < result.confusion.num_classes; ++c) {
        const auto& name = nomenclature.entry(c).name;
        const double v = result.class_iou[static_cast<std::size_t>(c)];
        if (!std::isnan(v)) j["per_class_iou"][name] = v;
        std::int64_t row = 0;
        for (int p = 0; p < result.confusion.num_classes; ++p) row += result.confusion.at(c, p);
        j["pixel_counts"][name] = row;
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write metrics file: " + path);
    out << j.dump(2) << '\n';
}

}  // namespace tilesemi
