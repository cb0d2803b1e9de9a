#include "support/fixtures.hpp"

#include <atomic>
#include <cmath>

#include "tilesemi/rng.hpp"

namespace fs = std::filesystem;

namespace tilesemi::fixtures {

fs::path make_temp_dir(const std::string& prefix) {
    static std::atomic<unsigned> counter{0};
    const auto dir = fs::temp_directory_path() /
                     (prefix + "_" + std::to_string(::getpid()) + "_" +
                      std::to_string(counter++));
    fs::create_directories(dir);
    return dir;
}

ClassNomenclature synthetic_nomenclature() {
    ClassNomenclature n;
    n.entries = {{0, "rock", {200, 60, 60}},
                 {1, "meadow", {60, 180, 80}},
                 {2, "lake", {70, 90, 200}},
                 {3, "no data", {0, 0, 0}}};
    n.void_ids = {3};
    n.validate();
    return n;
}

TileRecord write_tile(const fs::path& dir, const std::string& tile_id, const std::string& region,
                      Split split, int height, int width,
                      const std::function<void(int, int, std::uint8_t*)>& pixel_fn,
                      const std::function<std::uint8_t(int, int)>* label_fn) {
    ImageU8 img(height, width, 3);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) pixel_fn(r, c, &img.at(r, c, 0));
    const auto img_path = (dir / (tile_id + ".png")).string();
    save_image(img_path, img);

    TileRecord rec;
    rec.tile_id = tile_id;
    rec.image_path = img_path;
    rec.region = region;
    rec.split = split;
    rec.width_px = width;
    rec.height_px = height;
    rec.resolution_cm_per_px = 50.0;

    if (label_fn) {
        ImageU8 lab(height, width, 1);
        for (int r = 0; r < height; ++r)
            for (int c = 0; c < width; ++c) lab.at(r, c) = (*label_fn)(r, c);
        const auto lab_path = (dir / (tile_id + "_labels.png")).string();
        save_image(lab_path, lab);
        rec.label_path = lab_path;
    }
    return rec;
}

TileRecord write_constant_tile(const fs::path& dir, const std::string& tile_id,
                               const std::string& region, Split split, int height, int width,
                               std::array<std::uint8_t, 3> rgb, int label) {
    const auto pixel_fn = [rgb](int, int, std::uint8_t* px) {
        px[0] = rgb[0];
        px[1] = rgb[1];
        px[2] = rgb[2];
    };
    if (label < 0) return write_tile(dir, tile_id, region, split, height, width, pixel_fn);
    const std::function<std::uint8_t(int, int)> label_fn =
        [label](int, int) { return static_cast<std::uint8_t>(label); };
    return write_tile(dir, tile_id, region, split, height, width, pixel_fn, &label_fn);
}

namespace {

// class base colors in [0,1]
constexpr double kBase[3][3] = {
    {0.70, 0.25, 0.25},
    {0.25, 0.65, 0.30},
    {0.30, 0.35, 0.75},
};

// additive per-region appearance shifts; region 0 (the labeled one) is neutral
constexpr double kShift[6][3] = {
    {0.00, 0.00, 0.00},
    {0.15, 0.10, -0.05},
    {-0.12, 0.08, 0.12},
    {0.05, -0.12, 0.15},
    {-0.15, -0.05, -0.10},
    {0.12, 0.15, 0.10},
};

struct VoronoiLayout {
    std::vector<std::pair<double, double>> sites;
    std::vector<int> site_class;

    int class_at(int r, int c) const {
        double best = 1e300;
        int cls = 0;
        for (std::size_t i = 0; i < sites.size(); ++i) {
            const double dr = sites[i].first - r, dc = sites[i].second - c;
            const double d = dr * dr + dc * dc;
            if (d < best) {
                best = d;
                cls = site_class[i];
            }
        }
        return cls;
    }
};

VoronoiLayout random_layout(int tile_px, Rng& rng) {
    VoronoiLayout layout;
    const int n_sites = 5 + static_cast<int>(rng.uniform_index(5));
    for (int i = 0; i < n_sites; ++i) {
        layout.sites.push_back({rng.uniform(0, tile_px), rng.uniform(0, tile_px)});
        layout.site_class.push_back(static_cast<int>(rng.uniform_index(3)));
    }
    return layout;
}

TileRecord synthetic_tile(const fs::path& dir, const std::string& tile_id, int region,
                          Split split, int tile_px, double noise, bool with_labels, Rng& rng) {
    const auto layout = random_layout(tile_px, rng);
    // pre-draw the noise field so pixel generation is order-independent
    std::vector<double> noise_field(static_cast<std::size_t>(tile_px) * tile_px * 3);
    for (auto& v : noise_field) v = rng.uniform(-noise, noise);

    const auto pixel_fn = [&](int r, int c, std::uint8_t* px) {
        const int cls = layout.class_at(r, c);
        for (int ch = 0; ch < 3; ++ch) {
            double v = kBase[cls][ch] + kShift[region % 6][ch] +
                       noise_field[(static_cast<std::size_t>(r) * tile_px + c) * 3 + ch];
            v = std::min(1.0, std::max(0.0, v));
            px[ch] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    };
    const std::function<std::uint8_t(int, int)> label_fn = [&](int r, int c) {
        return static_cast<std::uint8_t>(layout.class_at(r, c));
    };
    return write_tile(dir, tile_id, "r" + std::to_string(region), split, tile_px, tile_px,
                      pixel_fn, with_labels ? &label_fn : nullptr);
}

}  // namespace

SplitManifest generate_synthetic_dataset(const fs::path& dir, const SyntheticDatasetSpec& spec) {
    Rng rng(mix_seed(spec.seed ^ 0x5eedULL));
    SplitManifest m;
    m.nomenclature = synthetic_nomenclature();

    for (int i = 0; i < spec.labeled_tiles; ++i)
        m.records.push_back(synthetic_tile(dir, "lab" + std::to_string(i), 0,
                                           Split::labeled_train, spec.tile_px, spec.noise,
                                           /*with_labels=*/true, rng));
    for (int i = 0; i < spec.unlabeled_tiles; ++i) {
        // regions 1..R-1 plus a share of region 0 appearances via region id R
        const int region = 1 + static_cast<int>(rng.uniform_index(
                                   static_cast<std::uint64_t>(spec.regions - 1)));
        m.records.push_back(synthetic_tile(dir, "unl" + std::to_string(i), region,
                                           Split::unlabeled_train, spec.tile_px, spec.noise,
                                           /*with_labels=*/false, rng));
    }
    for (int i = 0; i < spec.test_tiles; ++i) {
        const int region = static_cast<int>(rng.uniform_index(
            static_cast<std::uint64_t>(spec.regions)));
        // regions must be split-disjoint: test regions get their own names
        const auto layout_region = region;
        auto rec = synthetic_tile(dir, "tst" + std::to_string(i), layout_region, Split::test,
                                  spec.tile_px, spec.noise, /*with_labels=*/true, rng);
        rec.region = "t" + std::to_string(region);
        m.records.push_back(std::move(rec));
    }
    m.validate();
    return m;
}

}  // namespace tilesemi::fixtures
