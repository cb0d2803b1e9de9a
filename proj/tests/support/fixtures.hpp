#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tilesemi/data.hpp"

namespace tilesemi::fixtures {

// unique scratch directory under the system temp dir
std::filesystem::path make_temp_dir(const std::string& prefix);

// 4-class nomenclature (3 payload classes + void) used by the synthetic world
ClassNomenclature synthetic_nomenclature();

// Writes one PNG tile (and optional label raster) and returns its record.
// The pixel generator receives (row, col) and fills an RGB triple in [0,255].
TileRecord write_tile(const std::filesystem::path& dir, const std::string& tile_id,
                      const std::string& region, Split split, int height, int width,
                      const std::function<void(int, int, std::uint8_t*)>& pixel_fn,
                      const std::function<std::uint8_t(int, int)>* label_fn = nullptr);

// Convenience: constant-color tile with a single constant label.
TileRecord write_constant_tile(const std::filesystem::path& dir, const std::string& tile_id,
                               const std::string& region, Split split, int height, int width,
                               std::array<std::uint8_t, 3> rgb, int label);

struct SyntheticDatasetSpec {
    int labeled_tiles = 10;      // region "r0" only
    int unlabeled_tiles = 200;   // all regions
    int test_tiles = 30;         // all regions, labels kept for evaluation
    int tile_px = 128;
    int regions = 6;
    double noise = 0.05;
    std::uint64_t seed = 0;
};

// Three-class world where class identity is carried by color and every region
// applies its own global color shift. Labeled data covers only region r0, so
// the appearance of the other regions is reachable only through the
// unlabeled split.
SplitManifest generate_synthetic_dataset(const std::filesystem::path& dir,
                                         const SyntheticDatasetSpec& spec);

}  // namespace tilesemi::fixtures
