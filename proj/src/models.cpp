#include "tilesemi/models.hpp"

#include <json.hpp>

#include <map>
#include <stdexcept>

#include "tilesemi/npz.hpp"

namespace tilesemi {

using T = float;
using nn::BatchNorm2d;
using nn::ConcatChannels;
using nn::Conv2d;
using nn::ConvTranspose2x2;
using nn::MaxPool2x2;
using nn::MaxUnpool2x2;
using nn::Parameter;
using nn::ReLU;
using nn::Sigmoid;
using nn::SoftmaxChannel;

const char* to_string(Backbone b) { return b == Backbone::segnet ? "segnet" : "unet"; }

const char* to_string(Architecture a) {
    switch (a) {
        case Architecture::supervised_only: return "supervised_only";
        case Architecture::berunda_early: return "berunda_early";
        case Architecture::berunda_late: return "berunda_late";
        case Architecture::wnet: return "wnet";
    }
    return "?";
}

Backbone backbone_from_string(const std::string& s) {
    if (s == "segnet") return Backbone::segnet;
    if (s == "unet") return Backbone::unet;
    throw std::invalid_argument("unknown backbone: " + s);
}

Architecture architecture_from_string(const std::string& s) {
    if (s == "supervised_only") return Architecture::supervised_only;
    if (s == "berunda_early") return Architecture::berunda_early;
    if (s == "berunda_late") return Architecture::berunda_late;
    if (s == "wnet") return Architecture::wnet;
    throw std::invalid_argument("unknown architecture: " + s);
}

void ModelSpec::validate() const {
    if (architecture == Architecture::wnet && backbone != Backbone::unet)
        throw std::invalid_argument("wnet requires the unet backbone");
    if (num_classes <= 0 || unsup_channels <= 0 || input_channels <= 0 || base_channels <= 0)
        throw std::invalid_argument("model spec fields must be positive");
}

ModelSpec ModelSpec::with_loss(ModelSpec base, const LossSpec& loss) {
    if (loss.is_segmentation()) {
        base.unsup_channels = loss.K > 0 ? loss.K : base.num_classes;
        base.unsup_activation = UnsupActivation::softmax;
    } else {
        base.unsup_channels = base.input_channels;
        base.unsup_activation = UnsupActivation::sigmoid;
    }
    return base;
}

namespace {

constexpr int kStages = 5;

struct ConvBlock {
    Conv2d<T> conv;
    std::optional<BatchNorm2d<T>> bn;
    ReLU<T> relu;

    ConvBlock(const std::string& name, int in, int out, bool with_bn, Rng& rng)
        : conv(name, in, out, 3, rng) {
        if (with_bn) bn.emplace(name + ".bn", out);
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) {
        auto t = conv.forward(x);
        if (bn) t = bn->forward(t, train);
        return relu.forward(t);
    }
    Tensor<T> backward(const Tensor<T>& dy) {
        auto d = relu.backward(dy);
        if (bn) d = bn->backward(d);
        return conv.backward(d);
    }
    void collect(std::vector<Parameter<T>*>& p) {
        conv.collect(p);
        if (bn) bn->collect(p);
    }
    void collect_buffers(std::vector<std::pair<std::string, Tensor<T>*>>& b) {
        if (bn) bn->collect_buffers(b);
    }
};

// ---------------------------------------------------------------------------
// U-Net (5 pooling stages, widths capped at 16x base, skip concatenation)
// ---------------------------------------------------------------------------

int unet_width(int base, int level) { return base * std::min(16, 1 << level); }

struct UNetEncoder {
    struct Stage {
        ConvBlock a, b;
        MaxPool2x2<T> pool;
    };
    std::vector<Stage> stages;
    std::unique_ptr<ConvBlock> bott_a, bott_b;

    UNetEncoder(const std::string& prefix, int in_ch, int base, Rng& rng) {
        stages.reserve(kStages);
        int prev = in_ch;
        for (int i = 0; i < kStages; ++i) {
            const int w = unet_width(base, i);
            const auto sp = prefix + ".stage" + std::to_string(i);
            stages.push_back(Stage{ConvBlock(sp + ".conv0", prev, w, false, rng),
                                   ConvBlock(sp + ".conv1", w, w, false, rng), MaxPool2x2<T>{}});
            prev = w;
        }
        const int bw = unet_width(base, kStages - 1);
        bott_a = std::make_unique<ConvBlock>(prefix + ".bottleneck.conv0", prev, bw, false, rng);
        bott_b = std::make_unique<ConvBlock>(prefix + ".bottleneck.conv1", bw, bw, false, rng);
    }

    struct Out {
        Tensor<T> bottleneck;
        std::vector<Tensor<T>> skips;
    };

    Out forward(const Tensor<T>& x, bool train) {
        Out out;
        out.skips.reserve(kStages);
        Tensor<T> cur = x;
        for (auto& s : stages) {
            auto t = s.a.forward(cur, train);
            t = s.b.forward(t, train);
            out.skips.push_back(t);
            cur = s.pool.forward(t);
        }
        cur = bott_a->forward(cur, train);
        out.bottleneck = bott_b->forward(cur, train);
        return out;
    }

    Tensor<T> backward(const Tensor<T>& dbottleneck, const std::vector<Tensor<T>>& dskips) {
        auto d = bott_b->backward(dbottleneck);
        d = bott_a->backward(d);
        for (int i = kStages - 1; i >= 0; --i) {
            auto dt = stages[static_cast<std::size_t>(i)].pool.backward(d);
            const auto& ds = dskips[static_cast<std::size_t>(i)];
            for (std::int64_t j = 0; j < dt.numel(); ++j) dt[j] += ds[j];
            dt = stages[static_cast<std::size_t>(i)].b.backward(dt);
            d = stages[static_cast<std::size_t>(i)].a.backward(dt);
        }
        return d;
    }

    void collect(std::vector<Parameter<T>*>& p) {
        for (auto& s : stages) {
            s.a.collect(p);
            s.b.collect(p);
        }
        bott_a->collect(p);
        bott_b->collect(p);
    }
    void collect_buffers(std::vector<std::pair<std::string, Tensor<T>*>>&) {}
};

struct UNetDecoder {
    struct Stage {
        ConvTranspose2x2<T> up;
        ConcatChannels<T> cat;
        ConvBlock a, b;
    };
    std::vector<Stage> stages;  // deepest (level 4) first

    UNetDecoder(const std::string& prefix, int base, Rng& rng) {
        stages.reserve(kStages);
        int prev = unet_width(base, kStages - 1);  // bottleneck width
        for (int level = kStages - 1; level >= 0; --level) {
            const int w = unet_width(base, level);
            const auto sp = prefix + ".stage" + std::to_string(level);
            stages.push_back(Stage{ConvTranspose2x2<T>(sp + ".up", prev, w, rng),
                                   ConcatChannels<T>{},
                                   ConvBlock(sp + ".conv0", 2 * w, w, false, rng),
                                   ConvBlock(sp + ".conv1", w, w, false, rng)});
            prev = w;
        }
    }

    Tensor<T> forward(const UNetEncoder::Out& enc, bool train) {
        Tensor<T> cur = enc.bottleneck;
        for (int j = 0; j < kStages; ++j) {
            const int level = kStages - 1 - j;
            auto& s = stages[static_cast<std::size_t>(j)];
            cur = s.up.forward(cur);
            cur = s.cat.forward(cur, enc.skips[static_cast<std::size_t>(level)]);
            cur = s.a.forward(cur, train);
            cur = s.b.forward(cur, train);
        }
        return cur;
    }

    // returns (d bottleneck, d skips by level)
    std::pair<Tensor<T>, std::vector<Tensor<T>>> backward(const Tensor<T>& dfeatures) {
        std::vector<Tensor<T>> dskips(kStages);
        Tensor<T> d = dfeatures;
        for (int j = kStages - 1; j >= 0; --j) {
            const int level = kStages - 1 - j;
            auto& s = stages[static_cast<std::size_t>(j)];
            d = s.b.backward(d);
            d = s.a.backward(d);
            auto [dup, dskip] = s.cat.backward(d);
            dskips[static_cast<std::size_t>(level)] = std::move(dskip);
            d = s.up.backward(dup);
        }
        return {std::move(d), std::move(dskips)};
    }

    void collect(std::vector<Parameter<T>*>& p) {
        for (auto& s : stages) {
            s.up.collect(p);
            s.a.collect(p);
            s.b.collect(p);
        }
    }
    void collect_buffers(std::vector<std::pair<std::string, Tensor<T>*>>&) {}
};

// ---------------------------------------------------------------------------
// SegNet (VGG16 stages with batch norm, pooling indices reused for unpooling)
// ---------------------------------------------------------------------------

const int kSegDepth[kStages] = {2, 2, 3, 3, 3};

int segnet_width(int base, int level) { return base * std::min(8, 1 << level); }

struct SegNetEncoder {
    struct Stage {
        std::vector<ConvBlock> convs;
        MaxPool2x2<T> pool;
    };
    std::vector<Stage> stages;

    SegNetEncoder(const std::string& prefix, int in_ch, int base, Rng& rng) {
        stages.reserve(kStages);
        int prev = in_ch;
        for (int i = 0; i < kStages; ++i) {
            const int w = segnet_width(base, i);
            Stage st;
            st.convs.reserve(static_cast<std::size_t>(kSegDepth[i]));
            for (int d = 0; d < kSegDepth[i]; ++d) {
                st.convs.emplace_back(prefix + ".stage" + std::to_string(i) + ".conv" +
                                          std::to_string(d),
                                      d == 0 ? prev : w, w, true, rng);
            }
            stages.push_back(std::move(st));
            prev = w;
        }
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) {
        Tensor<T> cur = x;
        for (auto& s : stages) {
            for (auto& c : s.convs) cur = c.forward(cur, train);
            cur = s.pool.forward(cur);
        }
        return cur;
    }

    Tensor<T> backward(const Tensor<T>& dfeatures) {
        Tensor<T> d = dfeatures;
        for (int i = kStages - 1; i >= 0; --i) {
            auto& s = stages[static_cast<std::size_t>(i)];
            d = s.pool.backward(d);
            for (int c = kSegDepth[i] - 1; c >= 0; --c)
                d = s.convs[static_cast<std::size_t>(c)].backward(d);
        }
        return d;
    }

    void collect(std::vector<Parameter<T>*>& p) {
        for (auto& s : stages)
            for (auto& c : s.convs) c.collect(p);
    }
    void collect_buffers(std::vector<std::pair<std::string, Tensor<T>*>>& b) {
        for (auto& s : stages)
            for (auto& c : s.convs) c.collect_buffers(b);
    }
};

struct SegNetDecoder {
    struct Stage {
        MaxUnpool2x2<T> unpool;
        std::vector<ConvBlock> convs;
    };
    std::vector<Stage> stages;  // deepest first

    SegNetDecoder(const std::string& prefix, int base, Rng& rng) {
        stages.reserve(kStages);
        for (int level = kStages - 1; level >= 0; --level) {
            const int w = segnet_width(base, level);
            const int w_next = level > 0 ? segnet_width(base, level - 1) : base;
            Stage st;
            st.convs.reserve(static_cast<std::size_t>(kSegDepth[level]));
            for (int d = 0; d < kSegDepth[level]; ++d) {
                const bool last = d == kSegDepth[level] - 1;
                const int out = last ? w_next : w;
                st.convs.emplace_back(prefix + ".stage" + std::to_string(level) + ".conv" +
                                          std::to_string(d),
                                      w, out, true, rng);
            }
            stages.push_back(std::move(st));
        }
    }

    Tensor<T> forward(const Tensor<T>& features, SegNetEncoder& enc, bool train) {
        Tensor<T> cur = features;
        for (int j = 0; j < kStages; ++j) {
            const int level = kStages - 1 - j;
            auto& epool = enc.stages[static_cast<std::size_t>(level)].pool;
            auto& s = stages[static_cast<std::size_t>(j)];
            cur = s.unpool.forward(cur, epool.indices(), epool.in_h(), epool.in_w());
            for (auto& c : s.convs) cur = c.forward(cur, train);
        }
        return cur;
    }

    Tensor<T> backward(const Tensor<T>& dfeatures) {
        Tensor<T> d = dfeatures;
        for (int j = kStages - 1; j >= 0; --j) {
            auto& s = stages[static_cast<std::size_t>(j)];
            for (int c = static_cast<int>(s.convs.size()) - 1; c >= 0; --c)
                d = s.convs[static_cast<std::size_t>(c)].backward(d);
            d = s.unpool.backward(d);
        }
        return d;
    }

    void collect(std::vector<Parameter<T>*>& p) {
        for (auto& s : stages)
            for (auto& c : s.convs) c.collect(p);
    }
    void collect_buffers(std::vector<std::pair<std::string, Tensor<T>*>>& b) {
        for (auto& s : stages)
            for (auto& c : s.convs) c.collect_buffers(b);
    }
};

void accumulate(Tensor<T>& into, const Tensor<T>& from) {
    for (std::int64_t i = 0; i < into.numel(); ++i) into[i] += from[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// multi-task wiring
// ---------------------------------------------------------------------------

struct MultiTaskModel::Impl {
    ModelSpec spec;
    std::uint64_t seed = 0;

    std::unique_ptr<UNetEncoder> uenc, uenc2;
    std::unique_ptr<UNetDecoder> udec_s, udec_u, udec2;
    std::unique_ptr<SegNetEncoder> senc;
    std::unique_ptr<SegNetDecoder> sdec_s, sdec_u;
    std::unique_ptr<Conv2d<T>> head_s, head_u;
    SoftmaxChannel<T> class_softmax;  // between the two sequential blocks
    std::unique_ptr<SoftmaxChannel<T>> unsup_softmax;
    std::unique_ptr<Sigmoid<T>> unsup_sigmoid;

    // state of the most recent forward
    std::optional<UNetEncoder::Out> uenc_out, uenc2_out;
    Tensor<T> senc_features;
    Tensor<T> trunk_features;  // late split / supervised decoder output
    bool sup_ran = false, unsup_ran = false, train_mode = false;

    Impl(const ModelSpec& s, std::uint64_t sd) : spec(s), seed(sd) {
        spec.validate();
        Rng rng(mix_seed(sd ^ 0x6d6f64656cULL));
        const int base = spec.base_channels;
        const bool unet = spec.backbone == Backbone::unet;

        if (unet) {
            uenc = std::make_unique<UNetEncoder>("encoder", spec.input_channels, base, rng);
            udec_s = std::make_unique<UNetDecoder>("decoder_s", base, rng);
        } else {
            senc = std::make_unique<SegNetEncoder>("encoder", spec.input_channels, base, rng);
            sdec_s = std::make_unique<SegNetDecoder>("decoder_s", base, rng);
        }
        head_s = std::make_unique<Conv2d<T>>("head_s", base, spec.num_classes, 1, rng);

        if (spec.architecture == Architecture::berunda_early) {
            if (unet)
                udec_u = std::make_unique<UNetDecoder>("decoder_u", base, rng);
            else
                sdec_u = std::make_unique<SegNetDecoder>("decoder_u", base, rng);
        }
        if (spec.architecture == Architecture::wnet) {
            uenc2 = std::make_unique<UNetEncoder>("encoder_u", spec.num_classes, base, rng);
            udec2 = std::make_unique<UNetDecoder>("decoder_u", base, rng);
        }
        if (spec.has_unsupervised_head()) {
            head_u = std::make_unique<Conv2d<T>>("head_u", base, spec.unsup_channels, 1, rng);
            if (spec.unsup_activation == UnsupActivation::softmax)
                unsup_softmax = std::make_unique<SoftmaxChannel<T>>();
            else
                unsup_sigmoid = std::make_unique<Sigmoid<T>>();
        }
    }

    void check_input(const Tensor<T>& x) const {
        if (x.ndim() != 4 || x.dim(1) != spec.input_channels)
            throw std::invalid_argument("model input must be (N, " +
                                        std::to_string(spec.input_channels) + ", H, W)");
        if (x.dim(2) % kDownsampleFactor || x.dim(3) % kDownsampleFactor)
            throw std::invalid_argument("input spatial size " + std::to_string(x.dim(2)) + "x" +
                                        std::to_string(x.dim(3)) + " not divisible by " +
                                        std::to_string(kDownsampleFactor));
    }

    Tensor<T> unsup_activation_forward(const Tensor<T>& t) {
        return unsup_softmax ? unsup_softmax->forward(t) : unsup_sigmoid->forward(t);
    }
    Tensor<T> unsup_activation_backward(const Tensor<T>& d) {
        return unsup_softmax ? unsup_softmax->backward(d) : unsup_sigmoid->backward(d);
    }

    std::pair<Tensor<T>, Tensor<T>> run(const Tensor<T>& x, bool train, bool want_sup,
                                        bool want_unsup) {
        check_input(x);
        if (want_unsup && !spec.has_unsupervised_head())
            throw std::logic_error("model has no unsupervised head");
        train_mode = train;
        sup_ran = false;
        unsup_ran = false;
        Tensor<T> sup_out, unsup_out;
        const bool unet = spec.backbone == Backbone::unet;

        if (spec.architecture == Architecture::wnet) {
            uenc_out = uenc->forward(x, train);
            trunk_features = udec_s->forward(*uenc_out, train);
            sup_out = head_s->forward(trunk_features);
            sup_ran = true;
            if (want_unsup) {
                const auto sm = class_softmax.forward(sup_out);
                uenc2_out = uenc2->forward(sm, train);
                const auto feat2 = udec2->forward(*uenc2_out, train);
                unsup_out = unsup_activation_forward(head_u->forward(feat2));
                unsup_ran = true;
            }
            return {std::move(sup_out), std::move(unsup_out)};
        }

        // parallel-stream variants share one encoder pass
        if (unet)
            uenc_out = uenc->forward(x, train);
        else
            senc_features = senc->forward(x, train);

        if (spec.architecture == Architecture::berunda_late ||
            spec.architecture == Architecture::supervised_only) {
            trunk_features = unet ? udec_s->forward(*uenc_out, train)
                                  : sdec_s->forward(senc_features, *senc, train);
            if (want_sup) {
                sup_out = head_s->forward(trunk_features);
                sup_ran = true;
            }
            if (want_unsup) {
                unsup_out = unsup_activation_forward(head_u->forward(trunk_features));
                unsup_ran = true;
            }
        } else {  // berunda_early
            if (want_sup) {
                const auto feat = unet ? udec_s->forward(*uenc_out, train)
                                       : sdec_s->forward(senc_features, *senc, train);
                sup_out = head_s->forward(feat);
                sup_ran = true;
            }
            if (want_unsup) {
                const auto feat = unet ? udec_u->forward(*uenc_out, train)
                                       : sdec_u->forward(senc_features, *senc, train);
                unsup_out = unsup_activation_forward(head_u->forward(feat));
                unsup_ran = true;
            }
        }
        return {std::move(sup_out), std::move(unsup_out)};
    }

    void backward(const Tensor<T>* dsup, const Tensor<T>* dunsup) {
        if (!train_mode) throw std::logic_error("backward requires a train-mode forward");
        if (dsup && !sup_ran) throw std::logic_error("no supervised forward to backpropagate");
        if (dunsup && !unsup_ran) throw std::logic_error("no unsupervised forward to backpropagate");
        if (!dsup && !dunsup) return;
        const bool unet = spec.backbone == Backbone::unet;

        if (spec.architecture == Architecture::wnet) {
            Tensor<T> dlogits;
            if (dunsup) {
                auto d = unsup_activation_backward(*dunsup);
                d = head_u->backward(d);
                auto [dbott2, dskips2] = udec2->backward(d);
                const auto dsm = uenc2->backward(dbott2, dskips2);
                dlogits = class_softmax.backward(dsm);
            }
            if (dsup) {
                if (dlogits.empty())
                    dlogits = *dsup;
                else
                    accumulate(dlogits, *dsup);
            }
            auto d = head_s->backward(dlogits);
            auto [dbott, dskips] = udec_s->backward(d);
            uenc->backward(dbott, dskips);
            return;
        }

        if (spec.architecture == Architecture::berunda_late ||
            spec.architecture == Architecture::supervised_only) {
            Tensor<T> dtrunk(trunk_features.shape());
            if (dsup) accumulate(dtrunk, head_s->backward(*dsup));
            if (dunsup) accumulate(dtrunk, head_u->backward(unsup_activation_backward(*dunsup)));
            if (unet) {
                auto [dbott, dskips] = udec_s->backward(dtrunk);
                uenc->backward(dbott, dskips);
            } else {
                senc->backward(sdec_s->backward(dtrunk));
            }
            return;
        }

        // berunda_early: decoders may contribute independently; the encoder
        // sees the sum of both streams
        if (unet) {
            Tensor<T> dbott;
            std::vector<Tensor<T>> dskips;
            if (dsup) {
                auto d = head_s->backward(*dsup);
                std::tie(dbott, dskips) = udec_s->backward(d);
            }
            if (dunsup) {
                auto d = head_u->backward(unsup_activation_backward(*dunsup));
                auto [dbott_u, dskips_u] = udec_u->backward(d);
                if (dbott.empty()) {
                    dbott = std::move(dbott_u);
                    dskips = std::move(dskips_u);
                } else {
                    accumulate(dbott, dbott_u);
                    for (std::size_t i = 0; i < dskips.size(); ++i)
                        accumulate(dskips[i], dskips_u[i]);
                }
            }
            uenc->backward(dbott, dskips);
        } else {
            Tensor<T> dfeat;
            if (dsup) dfeat = sdec_s->backward(head_s->backward(*dsup));
            if (dunsup) {
                auto d = sdec_u->backward(head_u->backward(unsup_activation_backward(*dunsup)));
                if (dfeat.empty())
                    dfeat = std::move(d);
                else
                    accumulate(dfeat, d);
            }
            senc->backward(dfeat);
        }
    }

    // parameters reachable by the supervised objective
    void collect_sup_path(std::vector<Parameter<T>*>& p) {
        if (uenc) uenc->collect(p);
        if (senc) senc->collect(p);
        if (udec_s) udec_s->collect(p);
        if (sdec_s) sdec_s->collect(p);
        head_s->collect(p);
    }

    // parameters reachable by the unsupervised objective
    void collect_unsup_path(std::vector<Parameter<T>*>& p) {
        if (!spec.has_unsupervised_head()) return;
        switch (spec.architecture) {
            case Architecture::berunda_early:
                if (uenc) uenc->collect(p);
                if (senc) senc->collect(p);
                if (udec_u) udec_u->collect(p);
                if (sdec_u) sdec_u->collect(p);
                break;
            case Architecture::berunda_late:
                if (uenc) uenc->collect(p);
                if (senc) senc->collect(p);
                if (udec_s) udec_s->collect(p);
                if (sdec_s) sdec_s->collect(p);
                break;
            case Architecture::wnet:
                uenc->collect(p);
                udec_s->collect(p);
                head_s->collect(p);
                uenc2->collect(p);
                udec2->collect(p);
                break;
            default: break;
        }
        head_u->collect(p);
    }

    void collect_all(std::vector<Parameter<T>*>& p) {
        if (uenc) uenc->collect(p);
        if (senc) senc->collect(p);
        if (udec_s) udec_s->collect(p);
        if (sdec_s) sdec_s->collect(p);
        if (udec_u) udec_u->collect(p);
        if (sdec_u) sdec_u->collect(p);
        if (uenc2) uenc2->collect(p);
        if (udec2) udec2->collect(p);
        head_s->collect(p);
        if (head_u) head_u->collect(p);
    }

    void collect_all_buffers(std::vector<std::pair<std::string, Tensor<T>*>>& b) {
        if (senc) senc->collect_buffers(b);
        if (sdec_s) sdec_s->collect_buffers(b);
        if (sdec_u) sdec_u->collect_buffers(b);
    }
};

MultiTaskModel::MultiTaskModel(const ModelSpec& spec, std::uint64_t seed)
    : impl_(std::make_unique<Impl>(spec, seed)) {}
MultiTaskModel::~MultiTaskModel() = default;
MultiTaskModel::MultiTaskModel(MultiTaskModel&&) noexcept = default;
MultiTaskModel& MultiTaskModel::operator=(MultiTaskModel&&) noexcept = default;

const ModelSpec& MultiTaskModel::spec() const { return impl_->spec; }
std::uint64_t MultiTaskModel::seed() const { return impl_->seed; }

Tensor<float> MultiTaskModel::forward_supervised(const Tensor<float>& x, bool train) {
    return impl_->run(x, train, true, false).first;
}

Tensor<float> MultiTaskModel::forward_unsupervised(const Tensor<float>& x, bool train) {
    return impl_->run(x, train, false, true).second;
}

std::pair<Tensor<float>, Tensor<float>> MultiTaskModel::forward_both(const Tensor<float>& x,
                                                                     bool train) {
    return impl_->run(x, train, true, true);
}

void MultiTaskModel::backward(const Tensor<float>* dsup, const Tensor<float>* dunsup) {
    impl_->backward(dsup, dunsup);
}

void MultiTaskModel::zero_grad() {
    for (auto* p : parameters()) p->reset_grad();
}

std::vector<Parameter<float>*> MultiTaskModel::parameters() {
    std::vector<Parameter<float>*> p;
    impl_->collect_all(p);
    return p;
}

std::vector<std::pair<std::string, Tensor<float>*>> MultiTaskModel::buffers() {
    std::vector<std::pair<std::string, Tensor<float>*>> b;
    impl_->collect_all_buffers(b);
    return b;
}

std::int64_t MultiTaskModel::parameter_count() {
    std::int64_t n = 0;
    for (auto* p : parameters()) n += p->value.numel();
    return n;
}

ParameterPartition MultiTaskModel::parameter_partition() {
    std::vector<Parameter<T>*> sup, unsup;
    impl_->collect_sup_path(sup);
    impl_->collect_unsup_path(unsup);
    std::set<std::string> sup_names, unsup_names;
    for (auto* p : sup) sup_names.insert(p->name);
    for (auto* p : unsup) unsup_names.insert(p->name);

    ParameterPartition part;
    for (const auto& n : sup_names) {
        if (unsup_names.count(n))
            part.shared.insert(n);
        else
            part.supervised_only.insert(n);
    }
    for (const auto& n : unsup_names)
        if (!sup_names.count(n)) part.unsupervised_only.insert(n);
    return part;
}

MultiTaskModel MultiTaskModel::strip_unsupervised() const {
    ModelSpec stripped = impl_->spec;
    stripped.architecture = Architecture::supervised_only;
    MultiTaskModel out(stripped, impl_->seed);

    std::vector<Parameter<T>*> src_params;
    impl_->collect_all(src_params);
    std::map<std::string, Parameter<T>*> by_name;
    for (auto* p : src_params) by_name[p->name] = p;
    for (auto* p : out.parameters()) {
        const auto it = by_name.find(p->name);
        if (it == by_name.end())
            throw std::logic_error("strip: missing source parameter " + p->name);
        p->value = it->second->value;
    }

    std::vector<std::pair<std::string, Tensor<T>*>> src_bufs;
    impl_->collect_all_buffers(src_bufs);
    std::map<std::string, Tensor<T>*> buf_by_name;
    for (auto& [name, t] : src_bufs) buf_by_name[name] = t;
    for (auto& [name, t] : out.buffers()) {
        const auto it = buf_by_name.find(name);
        if (it == buf_by_name.end()) throw std::logic_error("strip: missing source buffer " + name);
        *t = *it->second;
    }
    return out;
}

void MultiTaskModel::save_weights(const std::string& npz_path) const {
    npz::Archive archive;
    std::vector<Parameter<T>*> params;
    impl_->collect_all(params);
    for (auto* p : params) archive["param/" + p->name] = npz::from_tensor(p->value);
    std::vector<std::pair<std::string, Tensor<T>*>> bufs;
    impl_->collect_all_buffers(bufs);
    for (auto& [name, t] : bufs) archive["buffer/" + name] = npz::from_tensor(*t);
    npz::save(npz_path, archive);
}

void MultiTaskModel::load_weights(const std::string& npz_path) {
    const auto archive = npz::load(npz_path);
    std::vector<Parameter<T>*> params;
    impl_->collect_all(params);
    for (auto* p : params) {
        const auto it = archive.find("param/" + p->name);
        if (it == archive.end())
            throw std::runtime_error("checkpoint missing parameter " + p->name);
        auto t = npz::to_tensor<T>(it->second);
        if (!t.same_shape(p->value))
            throw std::runtime_error("checkpoint shape mismatch for " + p->name);
        p->value = std::move(t);
    }
    std::vector<std::pair<std::string, Tensor<T>*>> bufs;
    impl_->collect_all_buffers(bufs);
    for (auto& [name, t] : bufs) {
        const auto it = archive.find("buffer/" + name);
        if (it == archive.end()) throw std::runtime_error("checkpoint missing buffer " + name);
        *t = npz::to_tensor<T>(it->second);
    }
}

}  // namespace tilesemi
