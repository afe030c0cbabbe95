#ifndef HIERSEG_SYNTHETIC_HPP
#define HIERSEG_SYNTHETIC_HPP

#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "hierseg/dataprep.hpp"
#include "hierseg/hierarchy.hpp"

namespace hierseg {

/// Two-level toy dataset: one parent "Blob" rectangle per image whose child
/// strips exactly partition it, each with a distinct intensity band. Trivial
/// for a small backbone, which is the point: it makes end-to-end hierarchy
/// claims testable at desk scale.
struct SyntheticSpec {
    int image_size = 64;
    int n_images = 20;
    int n_children = 4; // 2..4
    double noise = 0.02;
    uint64_t seed = 0;
};

struct SyntheticDataset {
    ClassTree tree;
    std::vector<std::string> ids;
    std::vector<cv::Mat> images; // CV_32F, [0,1]
    std::vector<SemanticMask> masks;
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

/// Write the dataset in the dataprep on-disk layout (images/, masks/,
/// class_map.csv, class_tree.json, folds.csv) so the full pipeline runs
/// unchanged. Deterministic per seed.
void write_synthetic(const SyntheticSpec& spec, const std::string& out_dir,
                     int folds = 5, double holdout_fraction = 0.1);

} // namespace hierseg

#endif
