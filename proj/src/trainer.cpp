#include "tilesemi/trainer.hpp"

#include <json.hpp>

#include <cmath>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "tilesemi/config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tilesemi {

namespace {

constexpr std::uint64_t kPurposeSampling = 1;
constexpr std::uint64_t kPurposeAblationSubset = 2;
constexpr std::uint64_t kPurposeAblationRun = 3;

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

}  // namespace

TrainConfig TrainConfig::normalized() const {
    TrainConfig c = *this;
    if (c.loss.is_segmentation() && c.loss.K <= 0) c.loss.K = c.model.num_classes;
    c.model = ModelSpec::with_loss(c.model, c.loss);
    c.validate();
    return c;
}

void TrainConfig::validate() const {
    model.validate();
    loss.validate();
    if (learning_rate <= 0) throw std::invalid_argument("learning_rate must be > 0");
    if (pseudo_epochs <= 0) throw std::invalid_argument("pseudo_epochs must be > 0");
    if (labeled_samples_per_epoch <= 0)
        throw std::invalid_argument("labeled_samples_per_epoch must be > 0");
    if (unlabeled_samples_per_epoch < 0)
        throw std::invalid_argument("unlabeled_samples_per_epoch must be >= 0 (0 disables the stream)");
    if (batch_size <= 0) throw std::invalid_argument("batch_size must be > 0");
    if (workers <= 0) throw std::invalid_argument("workers must be > 0");
    if (patch_px <= 0 || patch_px % MultiTaskModel::kDownsampleFactor)
        throw std::invalid_argument("patch_px must be a positive multiple of 32");
    if (loss.kind != LossKind::none && !model.has_unsupervised_head())
        throw std::invalid_argument(
            "an unsupervised loss requires a multi-task architecture");
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void Adam::step(const std::vector<nn::Parameter<float>*>& params) {
    for (auto* p : params) {
        if (!p->touched) continue;
        auto& mom = state_[p->name];
        if (mom.m.numel() == 0) {
            mom.m = Tensor<float>(p->value.shape());
            mom.v = Tensor<float>(p->value.shape());
        }
        ++mom.t;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(mom.t));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(mom.t));
        for (std::int64_t i = 0; i < p->value.numel(); ++i) {
            const double g = static_cast<double>(p->grad[i]);
            const double m = beta1_ * static_cast<double>(mom.m[i]) + (1.0 - beta1_) * g;
            const double v = beta2_ * static_cast<double>(mom.v[i]) + (1.0 - beta2_) * g * g;
            mom.m[i] = static_cast<float>(m);
            mom.v[i] = static_cast<float>(v);
            const double update = lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_);
            p->value[i] = static_cast<float>(static_cast<double>(p->value[i]) - update);
        }
    }
}

void Adam::save(npz::Archive& archive, const std::string& prefix) const {
    for (const auto& [name, mom] : state_) {
        archive[prefix + name + "/m"] = npz::from_tensor(mom.m);
        archive[prefix + name + "/v"] = npz::from_tensor(mom.v);
        archive[prefix + name + "/t"] =
            npz::from_scalar_u64(static_cast<std::uint64_t>(mom.t));
    }
}

void Adam::load(const npz::Archive& archive, const std::string& prefix) {
    state_.clear();
    for (const auto& [key, array] : archive) {
        if (key.rfind(prefix, 0) != 0) continue;
        const auto rest = key.substr(prefix.size());
        const auto slash = rest.rfind('/');
        const auto name = rest.substr(0, slash);
        const auto field = rest.substr(slash + 1);
        auto& mom = state_[name];
        if (field == "m") mom.m = npz::to_tensor<float>(array);
        else if (field == "v") mom.v = npz::to_tensor<float>(array);
        else if (field == "t") mom.t = static_cast<std::int64_t>(npz::to_scalar_u64(array));
    }
}

// ---------------------------------------------------------------------------
// trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(const TrainConfig& config, const SplitManifest& manifest)
    : config_(config.normalized()),
      manifest_(manifest),
      model_(config_.model, config_.seed),
      adam_(config_.learning_rate),
      cache_(32) {
    manifest_.validate();
    if (manifest_.by_split(Split::labeled_train).empty())
        throw std::invalid_argument("training requires at least one labeled_train tile");
    if (config_.loss.kind != LossKind::none && config_.unlabeled_samples_per_epoch > 0 &&
        manifest_.by_split(Split::unlabeled_train).empty())
        throw std::invalid_argument(
            "semi-supervised training requires at least one unlabeled_train tile");
}

Trainer::Batch Trainer::make_batch(const std::vector<const TileRecord*>& tiles,
                                   std::vector<Rng>& streams, std::int64_t& sample_counter,
                                   bool want_labels) {
    const std::int64_t b = config_.batch_size, p = config_.patch_px;
    Batch batch;
    batch.images = Tensor<float>({b, 3, p, p});
    if (want_labels) batch.labels = Tensor<std::int32_t>({b, p, p});
    for (std::int64_t i = 0; i < b; ++i) {
        Rng& rng = streams[static_cast<std::size_t>(sample_counter % streams.size())];
        ++sample_counter;
        const auto* tile = tiles[rng.uniform_index(tiles.size())];
        const auto patch = sample_patch(*tile, p, rng, manifest_.nomenclature, &cache_);
        std::copy(patch.image.data(), patch.image.data() + patch.image.numel(),
                  batch.images.data() + i * 3 * p * p);
        if (want_labels) {
            if (!patch.labels)
                throw std::logic_error("labeled batch drew a tile without labels: " +
                                       tile->tile_id);
            std::copy(patch.labels->data(), patch.labels->data() + p * p,
                      batch.labels->data() + i * p * p);
        }
    }
    return batch;
}

StepRecord Trainer::train_step(const Batch& batch, bool labeled) {
    const bool use_unsup = config_.loss.kind != LossKind::none;
    const double lambda = config_.loss.effective_lambda();
    StepRecord rec;
    rec.step = step_;
    rec.pseudo_epoch = pseudo_epoch_;
    rec.batch_kind = labeled ? "labeled" : "unlabeled";
    rec.lr = adam_.learning_rate();

    model_.zero_grad();

    const auto unsup_value_grad = [&](const Tensor<float>& out, Tensor<float>* grad) {
        switch (config_.loss.kind) {
            case LossKind::l1: return l1_reconstruction(batch.images, out, grad);
            case LossKind::l2: return l2_reconstruction(batch.images, out, grad);
            case LossKind::relaxed_kmeans:
                return relaxed_kmeans_loss(batch.images, out, config_.loss, grad);
            case LossKind::mumford_shah:
                return mumford_shah_loss(batch.images, out, config_.loss, grad);
            case LossKind::none: break;
        }
        throw std::logic_error("no unsupervised loss configured");
    };

    if (labeled) {
        const bool also_unsup = use_unsup && config_.apply_unsup_on_labeled;
        Tensor<float> sup, unsup;
        if (also_unsup) {
            std::tie(sup, unsup) = model_.forward_both(batch.images, /*train=*/true);
        } else {
            sup = model_.forward_supervised(batch.images, /*train=*/true);
        }
        Tensor<float> dsup;
        const auto ce = cross_entropy(sup, *batch.labels, manifest_.nomenclature.void_ids, &dsup);
        rec.l_s = ce.value;
        double total = ce.value;
        Tensor<float> dunsup;
        if (also_unsup) {
            const double lu = unsup_value_grad(unsup, &dunsup);
            rec.l_u = lu;
            total = combined_loss(ce.value, lu, config_.loss);
            for (std::int64_t i = 0; i < dunsup.numel(); ++i)
                dunsup[i] = static_cast<float>(static_cast<double>(dunsup[i]) * lambda);
        }
        rec.total = total;
        model_.backward(&dsup, also_unsup ? &dunsup : nullptr);
    } else {
        auto unsup = model_.forward_unsupervised(batch.images, /*train=*/true);
        Tensor<float> dunsup;
        const double lu = unsup_value_grad(unsup, &dunsup);
        rec.l_u = lu;
        rec.total = combined_loss(std::nullopt, lu, config_.loss);
        for (std::int64_t i = 0; i < dunsup.numel(); ++i)
            dunsup[i] = static_cast<float>(static_cast<double>(dunsup[i]) * lambda);
        model_.backward(nullptr, &dunsup);
    }

    if (!std::isfinite(rec.total) || (rec.l_s && !std::isfinite(*rec.l_s)) ||
        (rec.l_u && !std::isfinite(*rec.l_u))) {
        throw std::runtime_error("non-finite loss at step " + std::to_string(step_) + " (" +
                                 rec.batch_kind + " batch, total=" + std::to_string(rec.total) +
                                 "); aborting");
    }

    adam_.step(model_.parameters());
    ++step_;
    return rec;
}

std::vector<StepRecord> Trainer::run_pseudo_epoch() {
    const auto labeled = manifest_.by_split(Split::labeled_train);
    const auto unlabeled = manifest_.by_split(Split::unlabeled_train);
    const bool use_unsup =
        config_.loss.kind != LossKind::none && config_.unlabeled_samples_per_epoch > 0;
    if (labeled.empty()) throw std::invalid_argument("no labeled_train tiles");
    if (use_unsup && unlabeled.empty()) throw std::invalid_argument("no unlabeled_train tiles");

    // one deterministic stream per worker per epoch
    std::vector<Rng> streams;
    for (int w = 0; w < config_.workers; ++w)
        streams.emplace_back(derive_seed(config_.seed, static_cast<std::uint64_t>(w),
                                         static_cast<std::uint64_t>(pseudo_epoch_),
                                         kPurposeSampling));
    std::int64_t sample_counter = 0;

    const std::int64_t n_lab = ceil_div(config_.labeled_samples_per_epoch, config_.batch_size);
    const std::int64_t n_unl =
        use_unsup ? ceil_div(config_.unlabeled_samples_per_epoch, config_.batch_size) : 0;

    std::vector<StepRecord> records;
    records.reserve(static_cast<std::size_t>(n_lab + n_unl));
    for (std::int64_t i = 0; i < std::max(n_lab, n_unl); ++i) {
        if (i < n_lab) {
            const auto batch = make_batch(labeled, streams, sample_counter, true);
            records.push_back(train_step(batch, true));
        }
        if (i < n_unl) {
            const auto batch = make_batch(unlabeled, streams, sample_counter, false);
            records.push_back(train_step(batch, false));
        }
    }
    ++pseudo_epoch_;
    history_.insert(history_.end(), records.begin(), records.end());
    return records;
}

EvalResult Trainer::evaluate(MeanIouMode mode) {
    return evaluate_split(model_, manifest_, Split::test, config_.patch_px, 0, mode);
}

void Trainer::save_state(const std::string& path) {
    npz::Archive archive;
    for (auto* p : model_.parameters()) archive["param/" + p->name] = npz::from_tensor(p->value);
    for (auto& [name, t] : model_.buffers())
        archive["buffer/" + name] = npz::from_tensor(*t);
    adam_.save(archive, "adam/");
    archive["meta/step"] = npz::from_scalar_u64(static_cast<std::uint64_t>(step_));
    archive["meta/pseudo_epoch"] = npz::from_scalar_u64(static_cast<std::uint64_t>(pseudo_epoch_));
    Tensor<double> best({1});
    best[0] = best_miou_;
    archive["meta/best_miou"] = npz::from_tensor(best);
    const std::string tmp = path + ".tmp";
    npz::save(tmp, archive);
    fs::rename(tmp, path);
}

void Trainer::load_state(const std::string& path) {
    const auto archive = npz::load(path);
    for (auto* p : model_.parameters()) {
        const auto it = archive.find("param/" + p->name);
        if (it == archive.end()) throw std::runtime_error("state missing parameter " + p->name);
        p->value = npz::to_tensor<float>(it->second);
    }
    for (auto& [name, t] : model_.buffers()) {
        const auto it = archive.find("buffer/" + name);
        if (it == archive.end()) throw std::runtime_error("state missing buffer " + name);
        *t = npz::to_tensor<float>(it->second);
    }
    adam_.load(archive, "adam/");
    step_ = static_cast<std::int64_t>(npz::to_scalar_u64(archive.at("meta/step")));
    pseudo_epoch_ = static_cast<int>(npz::to_scalar_u64(archive.at("meta/pseudo_epoch")));
    best_miou_ = npz::to_tensor<double>(archive.at("meta/best_miou"))[0];
}

void Trainer::train(const std::string& out_dir) {
    fs::create_directories(out_dir);
    const auto state_path = (fs::path(out_dir) / "state_last.npz").string();
    const auto config_path = (fs::path(out_dir) / "config.json").string();

    if (fs::exists(state_path)) {
        // resuming: the stored config must match
        if (fs::exists(config_path)) {
            std::ifstream in(config_path);
            json stored;
            in >> stored;
            json current = {{"model", to_json(config_.model)},
                            {"loss", to_json(config_.loss)},
                            {"train", to_json(config_)}};
            // the epoch budget may legitimately be extended on resume
            stored["train"].erase("pseudo_epochs");
            current["train"].erase("pseudo_epochs");
            if (stored != current)
                throw std::runtime_error("output directory holds a run with a different config");
        }
        load_state(state_path);
        std::cerr << "resuming from pseudo-epoch " << pseudo_epoch_ << "\n";
    } else {
        json current = {{"model", to_json(config_.model)},
                        {"loss", to_json(config_.loss)},
                        {"train", to_json(config_)}};
        std::ofstream out(config_path);
        out << current.dump(2) << '\n';
    }

    std::ofstream metrics((fs::path(out_dir) / "metrics.jsonl").string(), std::ios::app);
    if (!metrics) throw std::runtime_error("cannot open metric log in " + out_dir);

    while (pseudo_epoch_ < config_.pseudo_epochs) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto records = run_pseudo_epoch();
        for (const auto& r : records) {
            json j = {{"step", r.step},
                      {"pseudo_epoch", r.pseudo_epoch},
                      {"batch_kind", r.batch_kind},
                      {"l_s", r.l_s ? json(*r.l_s) : json(nullptr)},
                      {"l_u", r.l_u ? json(*r.l_u) : json(nullptr)},
                      {"total", r.total},
                      {"lr", r.lr}};
            metrics << j.dump() << '\n';
        }
        metrics.flush();

        model_.save_weights((fs::path(out_dir) / "checkpoint_last.npz").string());
        write_checkpoint_sidecar((fs::path(out_dir) / "checkpoint_last.json").string(),
                                 config_.model, config_.loss, config_.seed, pseudo_epoch_);
        save_state(state_path);

        const auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0);
        std::cerr << "pseudo-epoch " << pseudo_epoch_ << "/" << config_.pseudo_epochs << " done in "
                  << dt.count() << "s\n";

        if (config_.validate_each_epoch) {
            const auto result = evaluate();
            json j = {{"pseudo_epoch", pseudo_epoch_},
                      {"val_oa", result.oa},
                      {"val_miou", result.miou}};
            metrics << j.dump() << '\n';
            metrics.flush();
            if (result.miou > best_miou_) {
                best_miou_ = result.miou;
                model_.save_weights((fs::path(out_dir) / "checkpoint_best.npz").string());
                write_checkpoint_sidecar((fs::path(out_dir) / "checkpoint_best.json").string(),
                                         config_.model, config_.loss, config_.seed, pseudo_epoch_);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// labeled-data ablation harness
// ---------------------------------------------------------------------------

std::vector<AblationRow> ablation_run(const TrainConfig& config, const SplitManifest& manifest,
                                      const std::vector<int>& labeled_tile_counts, int repeats) {
    if (repeats <= 0) throw std::invalid_argument("repeats must be positive");
    const auto labeled = manifest.by_split(Split::labeled_train);
    for (const int c : labeled_tile_counts)
        if (c <= 0 || static_cast<std::size_t>(c) > labeled.size())
            throw std::invalid_argument("labeled tile count " + std::to_string(c) +
                                        " exceeds available labeled tiles (" +
                                        std::to_string(labeled.size()) + ")");

    std::vector<AblationRow> rows;
    for (const int count : labeled_tile_counts) {
        std::vector<double> oas, mious;
        for (int rep = 0; rep < repeats; ++rep) {
            Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(count),
                                static_cast<std::uint64_t>(rep), kPurposeAblationSubset));
            std::vector<std::size_t> order(labeled.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            rng.shuffle(order.begin(), order.end());

            SplitManifest subset;
            subset.nomenclature = manifest.nomenclature;
            for (int i = 0; i < count; ++i)
                subset.records.push_back(*labeled[order[static_cast<std::size_t>(i)]]);
            for (const auto& r : manifest.records)
                if (r.split != Split::labeled_train) subset.records.push_back(r);

            TrainConfig run = config;
            run.seed = derive_seed(config.seed, static_cast<std::uint64_t>(count),
                                   static_cast<std::uint64_t>(rep), kPurposeAblationRun);
            Trainer trainer(run, subset);
            for (int e = 0; e < run.pseudo_epochs; ++e) trainer.run_pseudo_epoch();
            const auto result = trainer.evaluate();
            oas.push_back(result.oa);
            mious.push_back(result.miou);
        }
        const auto mean = [](const std::vector<double>& v) {
            double s = 0;
            for (double x : v) s += x;
            return s / static_cast<double>(v.size());
        };
        const auto stddev = [&](const std::vector<double>& v, double m) {
            double s = 0;
            for (double x : v) s += (x - m) * (x - m);
            return std::sqrt(s / static_cast<double>(v.size()));
        };
        AblationRow row;
        row.labeled_tile_count = count;
        row.mean_oa = mean(oas);
        row.std_oa = stddev(oas, row.mean_oa);
        row.mean_miou = mean(mious);
        row.std_miou = stddev(mious, row.mean_miou);
        rows.push_back(row);
    }
    return rows;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write ablation table: " + path);
    out << "labeled_tiles,mean_oa,std_oa,mean_miou,std_miou\n";
    for (const auto& r : rows)
        out << r.labeled_tile_count << ',' << r.mean_oa << ',' << r.std_oa << ',' << r.mean_miou
            << ',' << r.std_miou << '\n';
}

}  // namespace tilesemi
