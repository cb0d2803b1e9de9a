#pragma once

// Tile inventory, class nomenclature, patch sampling and the tiny-subset
// subsampling procedure.

#include <array>
#include <cstdint>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tilesemi/image.hpp"
#include "tilesemi/rng.hpp"
#include "tilesemi/tensor.hpp"

namespace tilesemi {

struct ClassEntry {
    int id = 0;
    std::string name;
    std::array<int, 3> color{0, 0, 0};
};

struct ClassNomenclature {
    std::vector<ClassEntry> entries;
    std::set<int> void_ids;

    int size() const { return static_cast<int>(entries.size()); }
    bool is_void(int id) const { return void_ids.count(id) > 0; }
    const ClassEntry& entry(int id) const;
    int id_from_color(const std::array<int, 3>& rgb) const;  // throws on unknown color

    // class_ids contiguous from 0, unique names, void_ids within range
    void validate() const;

    // the 15 land-use classes shipped as the default nomenclature
    static ClassNomenclature default_landuse();
    static ClassNomenclature load(const std::string& path);
    void save(const std::string& path) const;
};

enum class Split { labeled_train, unlabeled_train, test };

const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct CropWindow {
    std::int64_t row = 0, col = 0;
    std::int64_t height = 0, width = 0;
};

struct TileRecord {
    std::string tile_id;
    std::string image_path;
    std::string label_path;  // empty = no labels
    std::string region;
    Split split = Split::unlabeled_train;
    std::int64_t width_px = 0;
    std::int64_t height_px = 0;
    double resolution_cm_per_px = 0.0;
    // present on sub-tile records produced by a non-materializing subsample run
    std::optional<CropWindow> window;

    bool has_labels() const { return !label_path.empty(); }
    // effective pixel extent (window size when a window is annotated)
    std::int64_t eff_height() const { return window ? window->height : height_px; }
    std::int64_t eff_width() const { return window ? window->width : width_px; }
};

struct SplitManifest {
    std::vector<TileRecord> records;
    ClassNomenclature nomenclature;

    void validate() const;  // throws on any invariant violation
    std::vector<const TileRecord*> by_split(Split s) const;
    std::vector<std::string> regions() const;  // unique, in first-appearance order

    // CSV (quote-aware) or JSON-lines, chosen by extension. Relative raster
    // paths are resolved against the manifest's directory on load.
    static SplitManifest load(const std::string& path,
                              const ClassNomenclature& nomenclature = ClassNomenclature::default_landuse());
    void save(const std::string& path) const;
};

// An image window in [0,1]^3 with optional per-pixel labels; the training and
// inference unit.
struct Patch {
    Tensor<float> image;                         // (3, H, W), values in [0,1]
    std::optional<Tensor<std::int32_t>> labels;  // (H, W) class ids
    std::string source_tile;
    std::int64_t origin_row = 0;
    std::int64_t origin_col = 0;
};

// Decoded-raster LRU cache keyed by path, shared across sampling workers.
class TileCache {
public:
    explicit TileCache(std::size_t capacity = 64) : capacity_(capacity) {}
    std::shared_ptr<const ImageU8> image(const std::string& path);
    std::shared_ptr<const ImageU8> label(const std::string& path);

private:
    std::shared_ptr<const ImageU8> get(const std::string& key, bool is_label);
    std::size_t capacity_;
    std::mutex mutex_;
    std::list<std::string> order_;
    std::map<std::string, std::pair<std::list<std::string>::iterator,
                                    std::shared_ptr<const ImageU8>>> entries_;
};

// Uniformly random size_px x size_px window of the tile; image scaled to
// [0,1] by v/255, labels attached iff the record has a label raster (unknown
// label indices are remapped to the first void id with a warning).
Patch sample_patch(const TileRecord& tile, std::int64_t size_px, Rng& rng,
                   const ClassNomenclature& nomenclature, TileCache* cache = nullptr);

struct SubsampleOptions {
    std::string out_dir;       // required when materialize is true
    bool materialize = true;   // write cropped rasters (default) or annotate windows
};

// Random sub-tile selection: at least one sub-tile per original tile,
// per-region counts proportional to the original region tile counts
// (largest-remainder rounding), split assignments inherited.
SplitManifest subsample_tiny(const SplitManifest& manifest, std::int64_t target_count,
                             std::int64_t subtile_px, Rng& rng, const SubsampleOptions& options);

enum class GroupBy { region, split };

// Exact per-class pixel fractions, one row per group; fractions in each group
// sum to 1. Only records with labels are counted; a group without any labeled
// record is an error.
std::map<std::string, std::vector<double>> class_histogram(const SplitManifest& manifest,
                                                           GroupBy group_by,
                                                           TileCache* cache = nullptr);

}  // namespace tilesemi
