#ifndef HIERSEG_MODEL_HPP
#define HIERSEG_MODEL_HPP

#include <memory>
#include <string>
#include <vector>

#include "hierseg/composition.hpp"
#include "hierseg/hierarchy.hpp"
#include "hierseg/nn.hpp"

namespace hierseg {

struct BackboneCache {
    virtual ~BackboneCache() = default;
};

/// Forward contract of a donor trunk: (C_in x H x W planes) -> (F x H x W
/// features), spatial size preserved. The same trunk instance is re-run at
/// every hierarchy level, so its parameters are shared storage.
class Backbone {
public:
    virtual ~Backbone() = default;
    virtual int input_channels() const = 0;
    virtual int feature_channels() const = 0;
    virtual std::unique_ptr<BackboneCache> make_cache() const = 0;
    virtual Tensor forward(const Tensor& x, BackboneCache& cache) = 0;
    virtual Tensor backward(const Tensor& dfeat, BackboneCache& cache) = 0;
    virtual std::vector<Param*> params() = 0;
    virtual void init(std::mt19937_64& rng) = 0;
};

/// Small encoder-decoder with skip connections (~68k parameters), the
/// desk-scale reference trunk. Input must be divisible by 4.
class TinyUNet : public Backbone {
public:
    TinyUNet();
    int input_channels() const override { return 8; }
    int feature_channels() const override { return 8; }
    std::unique_ptr<BackboneCache> make_cache() const override;
    Tensor forward(const Tensor& x, BackboneCache& cache) override;
    Tensor backward(const Tensor& dfeat, BackboneCache& cache) override;
    std::vector<Param*> params() override;
    void init(std::mt19937_64& rng) override;

private:
    Conv2d enc1_, enc2_, bott_, dec2_, dec1_;
};

std::unique_ptr<Backbone> make_backbone(const std::string& id);

struct ModelConfig {
    std::string backbone = "tiny";
    double restrict_threshold = 0.5;
    double composition_eps = kCompositionEps;
    SoftmaxScope softmax_scope = SoftmaxScope::ParentGroup;
    uint64_t seed = 0;
};

/// Per-level record of everything the backward pass needs.
struct LevelTrace {
    Tensor adapter_in;
    Conv2d::Cache adapter_cache;
    std::unique_ptr<BackboneCache> backbone_cache;
    Tensor features;       // trunk output (pre-FiLM)
    Tensor features_film;  // post-FiLM (levels > 0; aliases features at level 0)
    Conv2d::Cache head_cache;
    Tensor logits;        // raw pre-activation Z
    Tensor q;             // conditional distribution (levels > 0)
    Tensor probs;         // absolute P: sigmoid at level 0, composed deeper
    Tensor logits_restricted;
    Tensor probs_restricted;
    // FiLM internals (levels > 0)
    std::vector<float> film_summary, film_hidden, film_out, film_gamma, film_beta;
};

struct ForwardTrace {
    std::vector<LevelTrace> levels;
};

struct ParameterReport {
    int64_t trunk = 0, adapters = 0, heads = 0, film = 0;
    int64_t total() const { return trunk + adapters + heads + film; }
    /// Parameters the hierarchical wrapper adds beyond a single-pass model
    /// (level-0 adapter and head count as baseline equipment).
    int64_t hierarchical_overhead = 0;
};

/// The hierarchical wrapper: per-level input adapters, restricted output
/// heads, FiLM conditioning, recurrent level-wise forward (shared trunk).
class HierModel {
public:
    HierModel(const ClassTree& tree, const ModelConfig& config);

    /// Level-wise recurrent forward. Level 0 sees the image alone; level l
    /// sees the image concatenated with level l-1's (restriction-filtered)
    /// logits, trunk features FiLM-conditioned on parent probabilities.
    ForwardTrace forward(const Tensor& image);

    /// Accumulates parameter gradients given dL/dP per level (with respect
    /// to the unrestricted absolute probabilities).
    void backward(const ForwardTrace& trace, std::vector<Tensor>& dprobs);

    std::vector<Param*> params();
    ParameterReport parameter_report() const;
    const ClassTree& tree() const { return tree_; }
    const ModelConfig& config() const { return config_; }
    Backbone& backbone() { return *backbone_; }

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

private:
    ClassTree tree_;
    ModelConfig config_;
    std::unique_ptr<Backbone> backbone_;
    std::vector<Conv2d> adapters_; // per level, 1x1
    std::vector<Conv2d> heads_;    // per level, 1x1
    std::vector<Linear> film_in_, film_out_; // per level > 0 (index level-1)
    // per level > 0: child class -> parent plane index at the previous level
    std::vector<std::vector<int>> parent_of_;
    // per level > 0: parent groups as (parent index, child indices)
    std::vector<std::vector<std::pair<int, std::vector<int>>>> groups_;

    void film_apply(int level, LevelTrace& lt);
};

/// Single-pass baseline: one adapter, one flat head, softmax over the leaf
/// class set.
class BaselineModel {
public:
    BaselineModel(const ClassTree& tree, const ModelConfig& config);

    struct Trace {
        Tensor adapter_in;
        Conv2d::Cache adapter_cache;
        std::unique_ptr<BackboneCache> backbone_cache;
        Tensor features;
        Conv2d::Cache head_cache;
        Tensor logits;
        Tensor probs; // softmax over leaf classes
    };

    Trace forward(const Tensor& image);
    void backward(const Trace& trace, const Tensor& dprobs);

    std::vector<Param*> params();
    ParameterReport parameter_report() const;
    int num_classes() const { return static_cast<int>(leaf_classes_.size()); }
    const std::vector<std::string>& leaf_classes() const { return leaf_classes_; }
    const ClassTree& tree() const { return tree_; }

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

private:
    ClassTree tree_;
    ModelConfig config_;
    std::unique_ptr<Backbone> backbone_;
    Conv2d adapter_, head_;
    std::vector<std::string> leaf_classes_;
};

/// Checkpoint header probe: returns the stored tree fingerprint and variant
/// tag without loading parameters.
struct CheckpointInfo {
    uint64_t tree_fingerprint = 0;
    std::string variant; // "hierarchical" | "baseline"
    std::string backbone;
};
CheckpointInfo read_checkpoint_info(const std::string& path);

} // namespace hierseg

#endif
