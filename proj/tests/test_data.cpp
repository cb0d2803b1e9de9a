#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "support/fixtures.hpp"
#include "tilesemi/data.hpp"

namespace fs = std::filesystem;
using namespace tilesemi;
using namespace tilesemi::fixtures;

TEST_CASE("nomenclature: default table, color round trip, validation") {
    const auto nom = ClassNomenclature::default_landuse();
    CHECK(nom.size() == 15);
    CHECK(nom.entry(0).name == "urban fabric");
    CHECK(nom.entry(13).name == "water");
    CHECK(nom.void_ids == std::set<int>{14});
    for (const auto& e : nom.entries) CHECK(nom.id_from_color(e.color) == e.id);
    CHECK_THROWS_AS(nom.id_from_color({1, 2, 3}), std::invalid_argument);

    // save / load round trip
    const auto dir = make_temp_dir("nom");
    nom.save((dir / "classes.json").string());
    const auto loaded = ClassNomenclature::load((dir / "classes.json").string());
    CHECK(loaded.size() == nom.size());
    CHECK(loaded.entry(6).name == "pastures");
    CHECK(loaded.void_ids == nom.void_ids);

    ClassNomenclature bad = nom;
    bad.entries[3].id = 7;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("manifest: load, validation errors, round trip") {
    const auto dir = make_temp_dir("manifest");
    auto rec = write_constant_tile(dir, "t0", "Nice", Split::labeled_train, 32, 32,
                                   {10, 20, 30}, 2);

    SUBCASE("minimal valid manifest of one record") {
        SplitManifest m;
        m.nomenclature = ClassNomenclature::default_landuse();
        m.records = {rec};
        m.save((dir / "m.csv").string());
        const auto loaded = SplitManifest::load((dir / "m.csv").string());
        CHECK(loaded.records.size() == 1);
        CHECK(loaded.records[0].tile_id == "t0");
        CHECK(loaded.records[0].split == Split::labeled_train);
        CHECK(loaded.records[0].width_px == 32);
    }

    SUBCASE("jsonl round trip preserves records") {
        SplitManifest m;
        m.nomenclature = ClassNomenclature::default_landuse();
        m.records = {rec};
        m.save((dir / "m.jsonl").string());
        const auto loaded = SplitManifest::load((dir / "m.jsonl").string());
        CHECK(loaded.records.size() == 1);
        CHECK(loaded.records[0].label_path == rec.label_path);
    }

    SUBCASE("regions with commas survive the csv round trip") {
        auto r2 = rec;
        r2.tile_id = "t1";
        r2.region = "Nantes, Saint-Nazaire";
        SplitManifest m;
        m.nomenclature = ClassNomenclature::default_landuse();
        m.records = {r2};
        m.save((dir / "m2.csv").string());
        const auto loaded = SplitManifest::load((dir / "m2.csv").string());
        CHECK(loaded.records[0].region == "Nantes, Saint-Nazaire");
    }

    SUBCASE("labeled_train without label_path is rejected") {
        auto r2 = rec;
        r2.label_path.clear();
        SplitManifest m;
        m.nomenclature = ClassNomenclature::default_landuse();
        m.records = {r2};
        CHECK_THROWS_WITH_AS(m.validate(), doctest::Contains("without label_path"),
                             std::invalid_argument);
    }

    SUBCASE("duplicate tile ids are rejected") {
        SplitManifest m;
        m.nomenclature = ClassNomenclature::default_landuse();
        m.records = {rec, rec};
        CHECK_THROWS_WITH_AS(m.validate(), doctest::Contains("duplicate tile_id"),
                             std::invalid_argument);
    }

    SUBCASE("one region under two splits is rejected") {
        auto r2 = rec;
        r2.tile_id = "t1";
        r2.label_path.clear();
        r2.split = Split::test;  // same region "Nice"
        SplitManifest m;
        m.nomenclature = ClassNomenclature::default_landuse();
        m.records = {rec, r2};
        CHECK_THROWS_WITH_AS(m.validate(), doctest::Contains("two splits"),
                             std::invalid_argument);
    }

    SUBCASE("missing file and malformed rows") {
        CHECK_THROWS_AS(SplitManifest::load((dir / "missing.csv").string()), std::runtime_error);
        {
            std::ofstream out(dir / "bad.csv");
            out << "tile_id,image_path,label_path,region,split,width_px,height_px,resolution_cm_per_px\n";
            out << "x,img.png,,Nice,labeled_train,notanumber,10,50\n";
        }
        CHECK_THROWS_AS(SplitManifest::load((dir / "bad.csv").string()), std::invalid_argument);
        {
            std::ofstream out(dir / "bad2.csv");
            out << "tile_id,image_path\n";
        }
        CHECK_THROWS_WITH_AS(SplitManifest::load((dir / "bad2.csv").string()),
                             doctest::Contains("missing column"), std::invalid_argument);
    }
}

TEST_CASE("patch sampling: bounds, determinism, labels, normalization") {
    const auto dir = make_temp_dir("patch");
    const auto nom = ClassNomenclature::default_landuse();

    SUBCASE("origin uniform over valid positions and deterministic per seed") {
        auto rec = write_constant_tile(dir, "big", "A", Split::labeled_train, 600, 600,
                                       {100, 150, 200}, 4);
        Rng rng1(123), rng2(123);
        const auto p1 = sample_patch(rec, 512, rng1, nom);
        const auto p2 = sample_patch(rec, 512, rng2, nom);
        CHECK(p1.origin_row == p2.origin_row);
        CHECK(p1.origin_col == p2.origin_col);
        CHECK(p1.origin_row >= 0);
        CHECK(p1.origin_row <= 88);
        CHECK(p1.origin_col <= 88);
        CHECK(p1.image.shape() == std::vector<std::int64_t>{3, 512, 512});
        REQUIRE(p1.labels.has_value());
        CHECK((*p1.labels)[0] == 4);
        // v/255 normalization
        CHECK(p1.image[0] == doctest::Approx(100.0 / 255.0));

        // distinct seeds give distinct origins on this tile (chosen seed pair)
        Rng ra(1), rb(2);
        const auto pa = sample_patch(rec, 64, ra, nom);
        const auto pb = sample_patch(rec, 64, rb, nom);
        CHECK((pa.origin_row != pb.origin_row || pa.origin_col != pb.origin_col));
    }

    SUBCASE("tile exactly the patch size pins the origin to (0,0)") {
        auto rec = write_constant_tile(dir, "exact", "B", Split::unlabeled_train, 64, 64,
                                       {1, 2, 3}, -1);
        Rng rng(9);
        const auto p = sample_patch(rec, 64, rng, nom);
        CHECK(p.origin_row == 0);
        CHECK(p.origin_col == 0);
        CHECK_FALSE(p.labels.has_value());  // labels attached iff label raster present
    }

    SUBCASE("oversized patch and unreadable raster raise") {
        auto rec = write_constant_tile(dir, "small", "C", Split::unlabeled_train, 48, 48,
                                       {1, 2, 3}, -1);
        Rng rng(0);
        CHECK_THROWS_AS(sample_patch(rec, 64, rng, nom), std::invalid_argument);
        rec.image_path = (dir / "absent.png").string();
        CHECK_THROWS_AS(sample_patch(rec, 32, rng, nom), std::runtime_error);
    }

    SUBCASE("unknown label indices are remapped to void") {
        const std::function<std::uint8_t(int, int)> label_fn = [](int r, int) {
            return static_cast<std::uint8_t>(r == 0 ? 200 : 1);
        };
        auto rec = write_tile(dir, "weird", "D", Split::labeled_train, 32, 32,
                              [](int, int, std::uint8_t* px) { px[0] = px[1] = px[2] = 9; },
                              &label_fn);
        Rng rng(0);
        const auto p = sample_patch(rec, 32, rng, nom);
        CHECK((*p.labels)[0] == 14);
        CHECK((*p.labels)[32 * 31] == 1);
    }
}

TEST_CASE("8-bit raster round trip through [0,1] floats is exact") {
    const auto dir = make_temp_dir("roundtrip");
    Rng rng(77);
    ImageU8 src(21, 17, 3);
    for (auto& v : src.pixels) v = static_cast<std::uint8_t>(rng.uniform_index(256));
    save_image((dir / "t.png").string(), src);
    const auto loaded = load_image_rgb((dir / "t.png").string());
    CHECK(loaded.pixels == src.pixels);
    const auto rendered = from_unit_chw(to_unit_chw(loaded));
    CHECK(rendered.pixels == src.pixels);
}

TEST_CASE("subsample_tiny: quotas, coverage, determinism") {
    const auto dir = make_temp_dir("tiny");
    SplitManifest m;
    m.nomenclature = ClassNomenclature::default_landuse();
    // 3 regions with 2/3/5 tiles
    int idx = 0;
    for (const auto& [region, n, split] :
         std::vector<std::tuple<std::string, int, Split>>{{"A", 2, Split::labeled_train},
                                                          {"B", 3, Split::unlabeled_train},
                                                          {"C", 5, Split::test}}) {
        for (int i = 0; i < n; ++i) {
            m.records.push_back(write_constant_tile(
                dir, region + std::to_string(i), region, split, 40, 40,
                {static_cast<std::uint8_t>(10 * idx), 0, 0},
                split == Split::labeled_train || split == Split::test ? 1 : -1));
            ++idx;
        }
    }
    m.validate();

    SUBCASE("each tile contributes at least one sub-tile; totals match") {
        Rng rng(5);
        const auto out = subsample_tiny(m, 17, 16, rng, {(dir / "out").string(), true});
        CHECK(out.records.size() == 17);
        // per-region proportionality: 17 * (2,3,5)/10 = (3.4, 5.1, 8.5) -> 3/5/9 or within 1
        std::map<std::string, int> region_counts;
        std::set<std::string> prefixes;
        for (const auto& r : out.records) {
            ++region_counts[r.region];
            prefixes.insert(r.tile_id.substr(0, r.tile_id.find("_s")));
            CHECK(r.width_px == 16);
            CHECK(fs::exists(r.image_path));
        }
        CHECK(prefixes.size() == 10);  // every original tile represented
        CHECK(std::abs(region_counts["A"] - 3.4) <= 1.0);
        CHECK(std::abs(region_counts["B"] - 5.1) <= 1.0);
        CHECK(std::abs(region_counts["C"] - 8.5) <= 1.0);
        // split inheritance + labels only where the source had them
        for (const auto& r : out.records) {
            if (r.region == "A") CHECK(r.split == Split::labeled_train);
            if (r.region == "B") {
                CHECK(r.split == Split::unlabeled_train);
                CHECK_FALSE(r.has_labels());
            }
            if (r.region == "C") CHECK(r.has_labels());
        }
    }

    SUBCASE("same seed twice is byte-identical") {
        Rng r1(11), r2(11);
        const auto o1 = subsample_tiny(m, 14, 8, r1, {(dir / "d1").string(), true});
        const auto o2 = subsample_tiny(m, 14, 8, r2, {(dir / "d2").string(), true});
        REQUIRE(o1.records.size() == o2.records.size());
        for (std::size_t i = 0; i < o1.records.size(); ++i) {
            CHECK(o1.records[i].tile_id == o2.records[i].tile_id);
            std::ifstream f1(o1.records[i].image_path, std::ios::binary);
            std::ifstream f2(o2.records[i].image_path, std::ios::binary);
            const std::string b1((std::istreambuf_iterator<char>(f1)), {});
            const std::string b2((std::istreambuf_iterator<char>(f2)), {});
            CHECK(b1 == b2);
        }
    }

    SUBCASE("window-annotation mode records crop windows instead of files") {
        Rng rng(3);
        const auto out = subsample_tiny(m, 12, 8, rng, {"", false});
        CHECK(out.records.size() == 12);
        for (const auto& r : out.records) {
            REQUIRE(r.window.has_value());
            CHECK(r.window->height == 8);
            CHECK(r.image_path.substr(r.image_path.size() - 4) == ".png");
            CHECK(r.eff_width() == 8);
        }
        // windowed manifests survive the csv round trip
        out.save((dir / "win.csv").string());
        const auto loaded = SplitManifest::load((dir / "win.csv").string());
        CHECK(loaded.records[0].window->width == 8);
    }

    SUBCASE("preconditions") {
        Rng rng(0);
        CHECK_THROWS_AS(subsample_tiny(m, 9, 8, rng, {"", false}), std::invalid_argument);
        CHECK_THROWS_AS(subsample_tiny(m, 20, 64, rng, {"", false}), std::invalid_argument);
    }
}

TEST_CASE("class_histogram: exact fractions and grouping") {
    const auto dir = make_temp_dir("hist");
    SplitManifest m;
    m.nomenclature = ClassNomenclature::default_landuse();

    SUBCASE("single tile all one class") {
        m.records = {write_constant_tile(dir, "a", "X", Split::labeled_train, 16, 16, {5, 5, 5}, 3)};
        const auto h = class_histogram(m, GroupBy::region);
        CHECK(h.at("X")[3] == doctest::Approx(1.0));
        CHECK(h.at("X")[0] == doctest::Approx(0.0));
    }

    SUBCASE("half and half, sums to one, traversal-order invariant") {
        const std::function<std::uint8_t(int, int)> split_label = [](int r, int) {
            return static_cast<std::uint8_t>(r < 8 ? 0 : 1);
        };
        auto t1 = write_tile(dir, "h1", "Y", Split::labeled_train, 16, 16,
                             [](int, int, std::uint8_t* px) { px[0] = px[1] = px[2] = 0; },
                             &split_label);
        m.records = {t1};
        auto h = class_histogram(m, GroupBy::region);
        CHECK(h.at("Y")[0] == doctest::Approx(0.5));
        CHECK(h.at("Y")[1] == doctest::Approx(0.5));
        double total = 0;
        for (double f : h.at("Y")) total += f;
        CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

        // adding a second region and reversing record order must not change results
        auto t2 = write_constant_tile(dir, "h2", "Z", Split::test, 16, 16, {0, 0, 0}, 2);
        m.records = {t1, t2};
        const auto h1 = class_histogram(m, GroupBy::region);
        m.records = {t2, t1};
        const auto h2 = class_histogram(m, GroupBy::region);
        CHECK(h1.at("Y") == h2.at("Y"));
        CHECK(h1.at("Z") == h2.at("Z"));
        CHECK(h1.at("Z")[2] == doctest::Approx(1.0));
    }

    SUBCASE("group without labeled records raises") {
        m.records = {write_constant_tile(dir, "u", "W", Split::unlabeled_train, 8, 8, {1, 1, 1}, -1)};
        CHECK_THROWS_WITH_AS(class_histogram(m, GroupBy::region),
                             doctest::Contains("no labeled record"), std::invalid_argument);
    }

    SUBCASE("group by split") {
        m.records = {
            write_constant_tile(dir, "s1", "R1", Split::labeled_train, 8, 8, {1, 1, 1}, 0),
            write_constant_tile(dir, "s2", "R2", Split::test, 8, 8, {1, 1, 1}, 9)};
        const auto h = class_histogram(m, GroupBy::split);
        CHECK(h.at("labeled_train")[0] == doctest::Approx(1.0));
        CHECK(h.at("test")[9] == doctest::Approx(1.0));
    }
}

TEST_CASE("synthetic dataset generator invariants") {
    const auto dir = make_temp_dir("synth");
    SyntheticDatasetSpec spec;
    spec.labeled_tiles = 3;
    spec.unlabeled_tiles = 6;
    spec.test_tiles = 2;
    spec.tile_px = 48;
    const auto m = generate_synthetic_dataset(dir, spec);
    CHECK(m.records.size() == 11);
    CHECK(m.by_split(Split::labeled_train).size() == 3);
    CHECK(m.by_split(Split::unlabeled_train).size() == 6);
    CHECK(m.by_split(Split::test).size() == 2);
    for (const auto* r : m.by_split(Split::unlabeled_train)) CHECK_FALSE(r->has_labels());
    for (const auto* r : m.by_split(Split::test)) CHECK(r->has_labels());
    // deterministic generation
    const auto dir2 = make_temp_dir("synth2");
    const auto m2 = generate_synthetic_dataset(dir2, spec);
    Rng ra(4), rb(4);
    const auto nom = synthetic_nomenclature();
    const auto p1 = sample_patch(m.records[0], 32, ra, nom);
    const auto p2 = sample_patch(m2.records[0], 32, rb, nom);
    for (std::int64_t i = 0; i < p1.image.numel(); ++i) CHECK(p1.image[i] == p2.image[i]);
}
