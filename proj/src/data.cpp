#include "tilesemi/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace tilesemi {

// ---------------------------------------------------------------------------
// nomenclature
// ---------------------------------------------------------------------------

const ClassEntry& ClassNomenclature::entry(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("unknown class id " + std::to_string(id));
    return entries[static_cast<std::size_t>(id)];
}

int ClassNomenclature::id_from_color(const std::array<int, 3>& rgb) const {
    for (const auto& e : entries)
        if (e.color == rgb) return e.id;
    throw std::invalid_argument("no class with color (" + std::to_string(rgb[0]) + "," +
                                std::to_string(rgb[1]) + "," + std::to_string(rgb[2]) + ")");
}

void ClassNomenclature::validate() const {
    std::unordered_set<std::string> names;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].id != static_cast<int>(i))
            throw std::invalid_argument("class ids must be contiguous from 0");
        if (!names.insert(entries[i].name).second)
            throw std::invalid_argument("duplicate class name: " + entries[i].name);
        for (int c : entries[i].color)
            if (c < 0 || c > 255) throw std::invalid_argument("color component outside 0-255");
    }
    for (int v : void_ids)
        if (v < 0 || v >= size())
            throw std::invalid_argument("void id outside nomenclature: " + std::to_string(v));
}

ClassNomenclature ClassNomenclature::default_landuse() {
    ClassNomenclature n;
    const std::vector<std::pair<std::string, std::array<int, 3>>> defs = {
        {"urban fabric", {228, 26, 28}},
        {"industrial, commercial, public, military, private and transport units", {152, 78, 163}},
        {"mine, dump and construction sites", {166, 86, 40}},
        {"artificial non-agricultural vegetated areas", {247, 129, 191}},
        {"arable land (annual crops)", {255, 255, 51}},
        {"permanent crops", {255, 127, 0}},
        {"pastures", {166, 219, 160}},
        {"complex and mixed cultivation patterns", {255, 222, 173}},
        {"orchards at the fringe of urban classes", {210, 180, 140}},
        {"forests", {77, 175, 74}},
        {"herbaceous vegetation associations", {0, 168, 132}},
        {"open spaces with little or no vegetation", {110, 110, 30}},
        {"wetlands", {0, 204, 255}},
        {"water", {55, 126, 184}},
        {"clouds, shadows or no data", {0, 0, 0}},
    };
    for (std::size_t i = 0; i < defs.size(); ++i)
        n.entries.push_back({static_cast<int>(i), defs[i].first, defs[i].second});
    n.void_ids = {14};
    n.validate();
    return n;
}

ClassNomenclature ClassNomenclature::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open nomenclature file: " + path);
    json j;
    in >> j;
    ClassNomenclature n;
    for (const auto& e : j.at("classes")) {
        ClassEntry entry;
        entry.id = e.at("id").get<int>();
        entry.name = e.at("name").get<std::string>();
        const auto& col = e.at("color");
        entry.color = {col.at(0).get<int>(), col.at(1).get<int>(), col.at(2).get<int>()};
        n.entries.push_back(entry);
    }
    for (const auto& v : j.at("void_ids")) n.void_ids.insert(v.get<int>());
    n.validate();
    return n;
}

void ClassNomenclature::save(const std::string& path) const {
    json j;
    j["classes"] = json::array();
    for (const auto& e : entries)
        j["classes"].push_back({{"id", e.id}, {"name", e.name},
                                {"color", {e.color[0], e.color[1], e.color[2]}}});
    j["void_ids"] = json::array();
    for (int v : void_ids) j["void_ids"].push_back(v);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write nomenclature file: " + path);
    out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

const char* to_string(Split s) {
    switch (s) {
        case Split::labeled_train: return "labeled_train";
        case Split::unlabeled_train: return "unlabeled_train";
        case Split::test: return "test";
    }
    return "?";
}

Split split_from_string(const std::string& s) {
    if (s == "labeled_train") return Split::labeled_train;
    if (s == "unlabeled_train") return Split::unlabeled_train;
    if (s == "test") return Split::test;
    throw std::invalid_argument("unknown split: " + s);
}

void SplitManifest::validate() const {
    nomenclature.validate();
    std::unordered_set<std::string> ids;
    std::unordered_map<std::string, Split> region_split;
    for (const auto& r : records) {
        if (r.tile_id.empty()) throw std::invalid_argument("empty tile_id");
        if (!ids.insert(r.tile_id).second)
            throw std::invalid_argument("duplicate tile_id: " + r.tile_id);
        if (r.image_path.empty()) throw std::invalid_argument(r.tile_id + ": empty image_path");
        if (r.split == Split::labeled_train && !r.has_labels())
            throw std::invalid_argument(r.tile_id + ": labeled_train record without label_path");
        if (r.width_px <= 0 || r.height_px <= 0)
            throw std::invalid_argument(r.tile_id + ": non-positive pixel dimensions");
        if (r.resolution_cm_per_px <= 0)
            throw std::invalid_argument(r.tile_id + ": non-positive resolution");
        const auto it = region_split.find(r.region);
        if (it == region_split.end()) {
            region_split.emplace(r.region, r.split);
        } else if (it->second != r.split) {
            throw std::invalid_argument("region assigned to two splits: " + r.region);
        }
        if (r.window) {
            if (r.window->row < 0 || r.window->col < 0 ||
                r.window->row + r.window->height > r.height_px ||
                r.window->col + r.window->width > r.width_px)
                throw std::invalid_argument(r.tile_id + ": crop window out of tile bounds");
        }
    }
}

std::vector<const TileRecord*> SplitManifest::by_split(Split s) const {
    std::vector<const TileRecord*> out;
    for (const auto& r : records)
        if (r.split == s) out.push_back(&r);
    return out;
}

std::vector<std::string> SplitManifest::regions() const {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& r : records)
        if (seen.insert(r.region).second) out.push_back(r.region);
    return out;
}

namespace {

// minimal quote-aware CSV row parsing / writing
std::vector<std::string> parse_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

std::string csv_field(const std::string& v) {
    if (v.find_first_of(",\"\n") == std::string::npos) return v;
    std::string out = "\"";
    for (char c : v) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    return out + "\"";
}

const std::vector<std::string> kManifestColumns = {
    "tile_id", "image_path", "label_path", "region", "split",
    "width_px", "height_px", "resolution_cm_per_px"};

std::string resolve_path(const fs::path& base_dir, const std::string& p) {
    if (p.empty()) return p;
    fs::path path(p);
    if (path.is_absolute()) return p;
    return (base_dir / path).lexically_normal().string();
}

TileRecord record_from_fields(const std::unordered_map<std::string, std::string>& kv,
                              const fs::path& base_dir, const std::string& where) {
    TileRecord r;
    try {
        r.tile_id = kv.at("tile_id");
        r.image_path = resolve_path(base_dir, kv.at("image_path"));
        r.label_path = resolve_path(base_dir, kv.at("label_path"));
        r.region = kv.at("region");
        r.split = split_from_string(kv.at("split"));
        r.width_px = std::stoll(kv.at("width_px"));
        r.height_px = std::stoll(kv.at("height_px"));
        r.resolution_cm_per_px = std::stod(kv.at("resolution_cm_per_px"));
        const auto cr = kv.find("crop_row");
        const auto cc = kv.find("crop_col");
        const auto ch = kv.find("crop_height");
        const auto cw = kv.find("crop_width");
        if (cr != kv.end() && !cr->second.empty()) {
            CropWindow w;
            w.row = std::stoll(cr->second);
            w.col = std::stoll(cc->second);
            w.height = std::stoll(ch->second);
            w.width = std::stoll(cw->second);
            r.window = w;
        }
    } catch (const std::exception& e) {
        throw std::invalid_argument("malformed manifest row (" + where + "): " + e.what());
    }
    return r;
}

bool has_jsonl_extension(const fs::path& p) {
    const auto ext = p.extension().string();
    return ext == ".jsonl" || ext == ".ndjson" || ext == ".json";
}

}  // namespace

SplitManifest SplitManifest::load(const std::string& path, const ClassNomenclature& nomenclature) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    const fs::path base_dir = fs::path(path).parent_path();

    SplitManifest m;
    m.nomenclature = nomenclature;

    std::string line;
    if (has_jsonl_extension(path)) {
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const std::exception& e) {
                throw std::invalid_argument("malformed manifest row (line " +
                                            std::to_string(line_no) + "): " + e.what());
            }
            std::unordered_map<std::string, std::string> kv;
            for (const auto& [key, value] : j.items())
                kv[key] = value.is_string() ? value.get<std::string>() : value.dump();
            if (!kv.count("label_path")) kv["label_path"] = "";
            m.records.push_back(record_from_fields(kv, base_dir, "line " + std::to_string(line_no)));
        }
    } else {
        if (!std::getline(in, line)) throw std::invalid_argument("empty manifest: " + path);
        const auto header = parse_csv_row(line);
        for (const auto& col : kManifestColumns)
            if (std::find(header.begin(), header.end(), col) == header.end())
                throw std::invalid_argument("manifest missing column: " + col);
        std::size_t line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            const auto fields = parse_csv_row(line);
            if (fields.size() != header.size())
                throw std::invalid_argument("malformed manifest row (line " +
                                            std::to_string(line_no) + "): field count");
            std::unordered_map<std::string, std::string> kv;
            for (std::size_t i = 0; i < header.size(); ++i) kv[header[i]] = fields[i];
            m.records.push_back(record_from_fields(kv, base_dir, "line " + std::to_string(line_no)));
        }
    }
    m.validate();
    return m;
}

void SplitManifest::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    const bool any_window =
        std::any_of(records.begin(), records.end(), [](const auto& r) { return bool(r.window); });
    if (has_jsonl_extension(path)) {
        for (const auto& r : records) {
            json j = {{"tile_id", r.tile_id},
                      {"image_path", r.image_path},
                      {"label_path", r.label_path},
                      {"region", r.region},
                      {"split", to_string(r.split)},
                      {"width_px", r.width_px},
                      {"height_px", r.height_px},
                      {"resolution_cm_per_px", r.resolution_cm_per_px}};
            if (r.window) {
                j["crop_row"] = r.window->row;
                j["crop_col"] = r.window->col;
                j["crop_height"] = r.window->height;
                j["crop_width"] = r.window->width;
            }
            out << j.dump() << '\n';
        }
    } else {
        auto columns = kManifestColumns;
        if (any_window)
            for (const auto& c : {"crop_row", "crop_col", "crop_height", "crop_width"})
                columns.push_back(c);
        for (std::size_t i = 0; i < columns.size(); ++i)
            out << (i ? "," : "") << columns[i];
        out << '\n';
        for (const auto& r : records) {
            std::ostringstream row;
            row << csv_field(r.tile_id) << ',' << csv_field(r.image_path) << ','
                << csv_field(r.label_path) << ',' << csv_field(r.region) << ','
                << to_string(r.split) << ',' << r.width_px << ',' << r.height_px << ','
                << r.resolution_cm_per_px;
            if (any_window) {
                if (r.window)
                    row << ',' << r.window->row << ',' << r.window->col << ','
                        << r.window->height << ',' << r.window->width;
                else
                    row << ",,,,";
            }
            out << row.str() << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// tile cache
// ---------------------------------------------------------------------------

std::shared_ptr<const ImageU8> TileCache::get(const std::string& key, bool is_label) {
    const std::string cache_key = (is_label ? "L:" : "I:") + key;
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = entries_.find(cache_key);
    if (it != entries_.end()) {
        order_.erase(it->second.first);
        order_.push_front(cache_key);
        it->second.first = order_.begin();
        return it->second.second;
    }
    auto img = std::make_shared<ImageU8>(is_label ? load_label(key) : load_image_rgb(key));
    order_.push_front(cache_key);
    entries_[cache_key] = {order_.begin(), img};
    while (entries_.size() > capacity_) {
        entries_.erase(order_.back());
        order_.pop_back();
    }
    return img;
}

std::shared_ptr<const ImageU8> TileCache::image(const std::string& path) { return get(path, false); }
std::shared_ptr<const ImageU8> TileCache::label(const std::string& path) { return get(path, true); }

// ---------------------------------------------------------------------------
// patch sampling
// ---------------------------------------------------------------------------

namespace {

std::shared_ptr<const ImageU8> fetch(TileCache* cache, const std::string& path, bool is_label) {
    if (cache) return is_label ? cache->label(path) : cache->image(path);
    return std::make_shared<ImageU8>(is_label ? load_label(path) : load_image_rgb(path));
}

}  // namespace

Patch sample_patch(const TileRecord& tile, std::int64_t size_px, Rng& rng,
                   const ClassNomenclature& nomenclature, TileCache* cache) {
    const std::int64_t h = tile.eff_height(), w = tile.eff_width();
    if (size_px <= 0 || size_px > h || size_px > w)
        throw std::invalid_argument("patch size " + std::to_string(size_px) +
                                    " exceeds tile " + tile.tile_id);

    const std::int64_t row0 = tile.window ? tile.window->row : 0;
    const std::int64_t col0 = tile.window ? tile.window->col : 0;
    const std::int64_t row = row0 + static_cast<std::int64_t>(rng.uniform_index(
                                        static_cast<std::uint64_t>(h - size_px + 1)));
    const std::int64_t col = col0 + static_cast<std::int64_t>(rng.uniform_index(
                                        static_cast<std::uint64_t>(w - size_px + 1)));

    const auto img = fetch(cache, tile.image_path, false);
    if (img->height != tile.height_px || img->width != tile.width_px)
        throw std::runtime_error(tile.tile_id + ": raster dimensions disagree with manifest");
    const ImageU8 window = img->crop(static_cast<int>(row), static_cast<int>(col),
                                     static_cast<int>(size_px), static_cast<int>(size_px));

    Patch p;
    p.image = to_unit_chw(window);
    p.source_tile = tile.tile_id;
    p.origin_row = row;
    p.origin_col = col;

    if (tile.has_labels()) {
        const auto lab = fetch(cache, tile.label_path, true);
        if (lab->height != img->height || lab->width != img->width)
            throw std::runtime_error(tile.tile_id + ": image and label raster dimensions differ");
        Tensor<std::int32_t> labels({size_px, size_px});
        bool warned = false;
        const int void_id = nomenclature.void_ids.empty() ? 0 : *nomenclature.void_ids.begin();
        for (std::int64_t r = 0; r < size_px; ++r)
            for (std::int64_t c = 0; c < size_px; ++c) {
                int v = lab->at(static_cast<int>(row + r), static_cast<int>(col + c));
                if (v >= nomenclature.size()) {
                    if (!warned) {
                        std::cerr << "warning: tile " << tile.tile_id << " has label index " << v
                                  << " outside the nomenclature; remapping to void\n";
                        warned = true;
                    }
                    v = void_id;
                }
                labels[r * size_px + c] = v;
            }
        p.labels = std::move(labels);
    }
    return p;
}

// ---------------------------------------------------------------------------
// tiny subsampling
// ---------------------------------------------------------------------------

namespace {

// largest-remainder apportionment of `total` across weights
std::vector<std::int64_t> largest_remainder(const std::vector<std::int64_t>& weights,
                                            std::int64_t total) {
    const double sum = static_cast<double>(std::accumulate(weights.begin(), weights.end(),
                                                           std::int64_t(0)));
    std::vector<std::int64_t> out(weights.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::int64_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = static_cast<double>(total) * static_cast<double>(weights[i]) / sum;
        out[i] = static_cast<std::int64_t>(std::floor(exact));
        assigned += out[i];
        remainders.push_back({exact - std::floor(exact), i});
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::int64_t i = 0; i < total - assigned; ++i)
        ++out[remainders[static_cast<std::size_t>(i) % remainders.size()].second];
    return out;
}

}  // namespace

SplitManifest subsample_tiny(const SplitManifest& manifest, std::int64_t target_count,
                             std::int64_t subtile_px, Rng& rng, const SubsampleOptions& options) {
    manifest.validate();
    const auto n_tiles = static_cast<std::int64_t>(manifest.records.size());
    if (n_tiles == 0) throw std::invalid_argument("subsample_tiny: empty manifest");
    if (target_count < n_tiles)
        throw std::invalid_argument("subsample_tiny: target_count " + std::to_string(target_count) +
                                    " < tile count " + std::to_string(n_tiles));
    for (const auto& r : manifest.records)
        if (subtile_px > r.eff_height() || subtile_px > r.eff_width())
            throw std::invalid_argument("subsample_tiny: sub-tile size exceeds tile " + r.tile_id);
    if (options.materialize && options.out_dir.empty())
        throw std::invalid_argument("subsample_tiny: out_dir required to materialize sub-tiles");

    // group tiles per region, in manifest order
    const auto region_names = manifest.regions();
    std::map<std::string, std::vector<const TileRecord*>> by_region;
    for (const auto& r : manifest.records) by_region[r.region].push_back(&r);

    std::vector<std::int64_t> weights;
    for (const auto& name : region_names)
        weights.push_back(static_cast<std::int64_t>(by_region[name].size()));
    const auto quotas = largest_remainder(weights, target_count);

    if (options.materialize) fs::create_directories(options.out_dir);

    SplitManifest out;
    out.nomenclature = manifest.nomenclature;
    TileCache cache(8);

    for (std::size_t ri = 0; ri < region_names.size(); ++ri) {
        const auto& tiles = by_region[region_names[ri]];
        const auto n_region = static_cast<std::int64_t>(tiles.size());
        // one sub-tile per tile, the rest distributed uniformly within the region
        std::vector<std::int64_t> per_tile(tiles.size(), 1);
        for (std::int64_t extra = 0; extra < quotas[ri] - n_region; ++extra)
            ++per_tile[rng.uniform_index(static_cast<std::uint64_t>(n_region))];

        for (std::size_t ti = 0; ti < tiles.size(); ++ti) {
            const TileRecord& src = *tiles[ti];
            for (std::int64_t s = 0; s < per_tile[ti]; ++s) {
                const std::int64_t row0 = src.window ? src.window->row : 0;
                const std::int64_t col0 = src.window ? src.window->col : 0;
                const std::int64_t row = row0 + static_cast<std::int64_t>(rng.uniform_index(
                    static_cast<std::uint64_t>(src.eff_height() - subtile_px + 1)));
                const std::int64_t col = col0 + static_cast<std::int64_t>(rng.uniform_index(
                    static_cast<std::uint64_t>(src.eff_width() - subtile_px + 1)));

                TileRecord rec;
                rec.tile_id = src.tile_id + "_s" + std::to_string(s);
                rec.region = src.region;
                rec.split = src.split;
                rec.resolution_cm_per_px = src.resolution_cm_per_px;
                if (options.materialize) {
                    const auto img = cache.image(src.image_path);
                    const auto stem = rec.tile_id;
                    const auto img_path = (fs::path(options.out_dir) / (stem + ".png")).string();
                    save_image(img_path, img->crop(static_cast<int>(row), static_cast<int>(col),
                                                   static_cast<int>(subtile_px),
                                                   static_cast<int>(subtile_px)));
                    rec.image_path = img_path;
                    if (src.has_labels()) {
                        const auto lab = cache.label(src.label_path);
                        const auto lab_path =
                            (fs::path(options.out_dir) / (stem + "_labels.png")).string();
                        save_image(lab_path, lab->crop(static_cast<int>(row), static_cast<int>(col),
                                                       static_cast<int>(subtile_px),
                                                       static_cast<int>(subtile_px)));
                        rec.label_path = lab_path;
                    }
                    rec.width_px = subtile_px;
                    rec.height_px = subtile_px;
                } else {
                    rec.image_path = src.image_path;
                    rec.label_path = src.label_path;
                    rec.width_px = src.width_px;
                    rec.height_px = src.height_px;
                    rec.window = CropWindow{row, col, subtile_px, subtile_px};
                }
                out.records.push_back(std::move(rec));
            }
        }
    }
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------
// class histograms
// ---------------------------------------------------------------------------

std::map<std::string, std::vector<double>> class_histogram(const SplitManifest& manifest,
                                                           GroupBy group_by, TileCache* cache) {
    const int n_classes = manifest.nomenclature.size();
    std::map<std::string, std::vector<std::int64_t>> counts;
    std::map<std::string, bool> group_seen;

    for (const auto& r : manifest.records) {
        const std::string group = group_by == GroupBy::region ? r.region : to_string(r.split);
        group_seen.try_emplace(group, false);
        if (!r.has_labels()) continue;
        group_seen[group] = true;

        const auto lab = fetch(cache, r.label_path, true);
        auto& c = counts.try_emplace(group, std::vector<std::int64_t>(n_classes, 0)).first->second;
        const std::int64_t row0 = r.window ? r.window->row : 0;
        const std::int64_t col0 = r.window ? r.window->col : 0;
        for (std::int64_t rr = 0; rr < r.eff_height(); ++rr)
            for (std::int64_t cc = 0; cc < r.eff_width(); ++cc) {
                int v = lab->at(static_cast<int>(row0 + rr), static_cast<int>(col0 + cc));
                if (v >= n_classes) v = manifest.nomenclature.void_ids.empty()
                                            ? n_classes - 1
                                            : *manifest.nomenclature.void_ids.begin();
                ++c[static_cast<std::size_t>(v)];
            }
    }

    for (const auto& [group, seen] : group_seen)
        if (!seen)
            throw std::invalid_argument("class_histogram: group '" + group +
                                        "' contains no labeled record");

    std::map<std::string, std::vector<double>> out;
    for (const auto& [group, c] : counts) {
        const double total = static_cast<double>(std::accumulate(c.begin(), c.end(),
                                                                 std::int64_t(0)));
        std::vector<double> frac(c.size());
        for (std::size_t i = 0; i < c.size(); ++i) frac[i] = static_cast<double>(c[i]) / total;
        out[group] = std::move(frac);
    }
    return out;
}

}  // namespace tilesemi
