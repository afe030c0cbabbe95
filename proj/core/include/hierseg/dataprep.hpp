#ifndef HIERSEG_DATAPREP_HPP
#define HIERSEG_DATAPREP_HPP

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "hierseg/hierarchy.hpp"

namespace hierseg {

struct PolygonInstance {
    std::string class_name;
    std::vector<cv::Point2f> vertices; // >= 3, pixel coordinates
    std::string image_id;
};

/// Integer-labeled H x W mask; values index leaf classes per the class map.
struct SemanticMask {
    int width = 0;
    int height = 0;
    std::vector<int32_t> data; // row-major, height*width

    int32_t at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
    int32_t& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
};

/// Per-level target planes with values in {0, 1, -1}; -1 marks pixels
/// outside the class's direct parent.
struct HierTargetStack {
    int width = 0;
    int height = 0;
    // planes[level][class_index_in_level * H*W + pixel]
    std::vector<std::vector<int8_t>> planes;

    int level_classes(int level) const {
        return static_cast<int>(planes[level].size() / (static_cast<size_t>(width) * height));
    }
};

struct LossWeights {
    std::vector<std::vector<double>> per_level; // [level][class index in level]
};

struct FoldSplit {
    std::vector<std::string> test_ids;
    std::vector<std::vector<std::string>> val_ids;   // one per fold
    std::vector<std::vector<std::string>> train_ids; // one per fold
};

struct AugmentConfig {
    bool enabled = true;
    int blur_kernel = 25;
    double blur_sigma_min = 0.001, blur_sigma_max = 0.2;
    double brightness = 0.4, contrast = 0.5, saturation = 0.25, hue = 0.01;
    double hflip_prob = 0.5;
    double rot_min = -50.0, rot_max = 50.0;
    double trans_min = -20.0, trans_max = 20.0;
    double scale_min = 0.85, scale_max = 1.15;
    double shear_min = -5.0, shear_max = 5.0;
};

/// Rasterize instances into a multiclass mask. Overlaps resolve to the
/// higher-priority class; after overlap resolution, connected remnants of
/// 50 pixels or fewer are dropped (8-connectivity). `priority` lists class
/// names high to low; classes not listed trail in class-map order.
SemanticMask polygons_to_mask(const std::vector<PolygonInstance>& instances,
                              int width, int height, const ClassTree& tree,
                              const std::vector<std::string>& priority = {});

/// Synthesize the per-level {0,1,-1} target stack. Parent planes are the
/// union of their descendants; child planes are -1 outside the direct parent.
HierTargetStack mask_to_hier_targets(const SemanticMask& mask, const ClassTree& tree);

/// Inverse-median-frequency weights per level, counted over pixels whose
/// target is not -1. Zero-frequency classes borrow the smallest nonzero
/// frequency in their level.
LossWeights compute_class_weights(const std::vector<HierTargetStack>& targets,
                                  const ClassTree& tree);

/// Flat-variant weights over the leaf output set (index = position in
/// leaf_classes order), counted over full images.
std::vector<double> compute_flat_class_weights(const std::vector<SemanticMask>& masks,
                                               const ClassTree& tree);

/// Deterministic holdout + k-fold split of image ids.
FoldSplit make_folds(std::vector<std::string> image_ids, int k,
                     double holdout_fraction, uint64_t seed);

std::string fold_manifest_csv(const FoldSplit& split);
FoldSplit parse_fold_manifest(const std::string& csv_text);

/// Photometric + geometric augmentation. The same geometric transform is
/// applied to the image (bilinear) and every target plane (nearest).
/// Affine-exposed regions fill with 0 / Background / -1 per plane kind.
void augment(cv::Mat& image, HierTargetStack& targets, const ClassTree& tree,
             const AugmentConfig& config, std::mt19937_64& rng);

/// Flat-mask variant used by the baseline pipeline: same transform contract,
/// exposed regions fill with Background.
void augment(cv::Mat& image, SemanticMask& mask, const AugmentConfig& config,
             std::mt19937_64& rng);

// Single-channel PNG mask I/O (uncompressed on write).
void write_mask_png(const std::string& path, const SemanticMask& mask);
SemanticMask read_mask_png(const std::string& path, const ClassTree& tree);

/// Parse VGG-style polygon annotations (region lists of x/y vertex arrays).
std::vector<PolygonInstance> parse_vgg_annotations(const std::string& json_text,
                                                   const std::string& image_id);

} // namespace hierseg

#endif
