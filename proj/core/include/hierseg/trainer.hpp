#ifndef HIERSEG_TRAINER_HPP
#define HIERSEG_TRAINER_HPP

#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "hierseg/dataprep.hpp"
#include "hierseg/hierarchy.hpp"
#include "hierseg/losses.hpp"
#include "hierseg/metrics.hpp"
#include "hierseg/model.hpp"

namespace hierseg {

/// Plateau schedule state: the rate halves after `patience` consecutive
/// non-improving epochs, floored at `min_rate`.
struct ScheduleState {
    double rate = 0.0;
    int stall = 0;
    double factor = 0.5;
    int patience = 3;
    double min_rate = 0.001;
};

/// One schedule transition. Pure state machine: the caller decides what
/// "improved" means.
double lr_step(ScheduleState& state, bool improved);

struct TrainConfig {
    std::string variant = "hierarchical"; // "hierarchical" | "baseline"
    std::string backbone = "tiny";
    double learning_rate = 0.022;
    double schedule_factor = 0.5;
    int schedule_patience = 3;
    double schedule_min_lr = 0.001;
    // Plateau improvement test: training epoch loss by default, absolute
    // tolerance below; switchable to validation loss.
    double schedule_tolerance = 1e-5;
    bool schedule_on_validation = false;
    int epochs = 80;
    int batch_size = 4;
    int image_size = 640;
    double weight_decay = 0.01;
    uint64_t seed = 0;
    bool deterministic = true;
    int folds = 5;
    std::optional<int> max_steps; // optional hard cap on optimizer steps

    AugmentConfig augment;

    // Loss and composition knobs (paper-default values)
    double dice_eps = 1e-6;
    double ce_delta = 1e-7;
    // Mean-normalized cross-entropy keeps the loss terms at comparable
    // magnitudes regardless of image size; disable for the literal pixel sum.
    bool ce_mean = true;
    bool root_binary_ce = false;
    double restrict_threshold = 0.5;
    double composition_eps = 1e-6;
    bool level_softmax = false;
    bool consistency_on_restricted = true;

    std::string to_json() const;
    static TrainConfig from_json(const std::string& text); // rejects unknown keys
    ModelConfig model_config() const;
};

struct Sample {
    std::string id;
    cv::Mat image; // CV_32F single channel, [0,1]
    SemanticMask mask;
};

struct Dataset {
    ClassTree tree;
    std::vector<Sample> samples;
    FoldSplit folds;

    const Sample& by_id(const std::string& id) const;
    std::vector<std::string> all_class_names() const;
};

/// Load a prepared dataset directory: class_map.csv, class_tree.json,
/// folds.csv, images/*.png, masks/*.png.
Dataset load_dataset(const std::string& dir);

struct EpochRecord {
    int epoch = 0;
    double lr = 0;
    double train_total = 0, train_dice = 0, train_ce = 0, train_consistency = 0;
    double val_mean_iou = 0;
};

struct RunRecord {
    std::vector<EpochRecord> epochs;
    std::vector<double> step_losses; // per optimizer step, for monotonicity checks
    int best_epoch = -1;
    double best_val_iou = -1.0;
    std::string checkpoint_path;
};

/// Per-sample forward + loss + gradient for the hierarchical variant.
/// Returns the loss breakdown; accumulates parameter gradients when
/// `learn` is set.
LossBreakdown hier_sample_pass(HierModel& model, const Tensor& image,
                               const HierTargetStack& targets,
                               const LossWeights& weights, const TrainConfig& config,
                               bool learn, double grad_scale = 1.0);

LossBreakdown baseline_sample_pass(BaselineModel& model, const Tensor& image,
                                   const SemanticMask& mask,
                                   const std::vector<double>& weights,
                                   const TrainConfig& config, bool learn,
                                   double grad_scale = 1.0);

/// Per-class binary predictions (all tree classes) for one image.
std::map<std::string, std::vector<uint8_t>> predict_masks(HierModel& model,
                                                          const Tensor& image,
                                                          double threshold);
std::map<std::string, std::vector<uint8_t>> predict_masks(BaselineModel& model,
                                                          const Tensor& image,
                                                          double threshold);

/// Evaluate a set of images into per-image records tagged with `fold`.
std::vector<ImageRecord> evaluate_split(HierModel& model, const Dataset& data,
                                        const std::vector<std::string>& ids, int fold,
                                        const MetricsOptions& opts);
std::vector<ImageRecord> evaluate_split(BaselineModel& model, const Dataset& data,
                                        const std::vector<std::string>& ids, int fold,
                                        const MetricsOptions& opts);

/// Train one fold; writes per-epoch log and the best-IoU checkpoint under
/// `run_dir` and returns the record. Aborts with NumericError on a
/// non-finite loss, naming the offending batch.
RunRecord train_fold(const Dataset& data, int fold, const TrainConfig& config,
                     const std::string& run_dir);

struct CvResult {
    std::vector<RunRecord> folds;
    MetricsReport validation;
    MetricsReport test;
};

/// Full k-fold harness: trains each fold (resuming past completed folds),
/// evaluates best checkpoints on validation and test splits, aggregates.
CvResult run_cv(const Dataset& data, const TrainConfig& config, const std::string& run_dir);

Tensor image_to_tensor(const cv::Mat& image);

} // namespace hierseg

#endif
