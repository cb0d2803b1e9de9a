#pragma once

// Encoder-decoder backbones and the multi-task wirings: a single supervised
// net, the two-headed parallel variants (early split after the encoder, late
// split after a shared decoder trunk) and the sequential two-block variant
// where the second block consumes the normalized class map of the first.

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tilesemi/losses.hpp"
#include "tilesemi/nn.hpp"
#include "tilesemi/tensor.hpp"

namespace tilesemi {

enum class Backbone { segnet, unet };
enum class Architecture { supervised_only, berunda_early, berunda_late, wnet };
enum class UnsupActivation { sigmoid, softmax };

const char* to_string(Backbone b);
const char* to_string(Architecture a);
Backbone backbone_from_string(const std::string& s);
Architecture architecture_from_string(const std::string& s);

struct ModelSpec {
    Backbone backbone = Backbone::unet;
    Architecture architecture = Architecture::supervised_only;
    int num_classes = 15;
    int unsup_channels = 3;   // 3 for reconstruction objectives, K for segmentation ones
    int input_channels = 3;
    int base_channels = 64;   // width of the first stage; 64 matches the original backbones
    UnsupActivation unsup_activation = UnsupActivation::sigmoid;

    bool has_unsupervised_head() const { return architecture != Architecture::supervised_only; }
    void validate() const;

    // unsup head channel count / activation implied by a loss spec
    static ModelSpec with_loss(ModelSpec base, const LossSpec& loss);
};

struct ParameterPartition {
    std::set<std::string> shared;
    std::set<std::string> supervised_only;
    std::set<std::string> unsupervised_only;
};

class MultiTaskModel {
public:
    static constexpr std::int64_t kDownsampleFactor = 32;

    MultiTaskModel(const ModelSpec& spec, std::uint64_t seed);
    ~MultiTaskModel();
    MultiTaskModel(MultiTaskModel&&) noexcept;
    MultiTaskModel& operator=(MultiTaskModel&&) noexcept;

    const ModelSpec& spec() const;
    std::uint64_t seed() const;

    // class score maps, same spatial size as the input
    Tensor<float> forward_supervised(const Tensor<float>& x, bool train = false);
    // reconstruction in [0,1] or membership map, depending on the head
    Tensor<float> forward_unsupervised(const Tensor<float>& x, bool train = false);
    // both heads off one shared trunk pass
    std::pair<Tensor<float>, Tensor<float>> forward_both(const Tensor<float>& x, bool train);

    // Backpropagates the head gradients from the most recent forward call.
    // Pass nullptr for a head that should not contribute; only layers on the
    // traversed paths accumulate gradients and are marked touched.
    void backward(const Tensor<float>* dsupervised, const Tensor<float>* dunsupervised);

    void zero_grad();
    std::vector<nn::Parameter<float>*> parameters();
    std::vector<std::pair<std::string, Tensor<float>*>> buffers();
    std::int64_t parameter_count();
    ParameterPartition parameter_partition();

    // supervised-only clone with identical weights on the supervised path
    MultiTaskModel strip_unsupervised() const;

    void save_weights(const std::string& npz_path) const;
    void load_weights(const std::string& npz_path);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace tilesemi
