#ifndef HIERSEG_METRICS_HPP
#define HIERSEG_METRICS_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hierseg/dataprep.hpp"
#include "hierseg/hierarchy.hpp"
#include "hierseg/nn.hpp"

namespace hierseg {

struct ConfusionCounts {
    int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    int64_t total() const { return tp + fp + fn + tn; }
};

struct MetricValues {
    double iou = 0, dice = 0, precision = 0, recall = 0;
};

struct MetricsOptions {
    double threshold = 0.5;
    // Undefined 0/0 metrics (class absent from both prediction and target):
    // score 1 by default, or skip that image for the class.
    bool skip_empty = false;
};

/// Per-image, per-class metric record.
struct ImageRecord {
    std::string image_id;
    int fold = 0;
    std::map<std::string, MetricValues> per_class;
    std::map<std::string, bool> defined; // false when 0/0 and skip_empty
};

struct MetricsReport {
    std::vector<std::string> class_names; // report row order, Average last
    // [class][metric] -> mean and population std across fold means
    std::map<std::string, MetricValues> mean;
    std::map<std::string, MetricValues> stddev;
    std::vector<ImageRecord> per_image;
};

/// Threshold the absolute probabilities of one level into binary masks.
std::vector<std::vector<uint8_t>> binarize_level(const Tensor& probs, double threshold);

/// Confusion counts for every class in the tree, over the full image.
/// Target -1 pixels count as negatives. `pred` maps class name -> binary
/// mask (H*W). Parent predictions for baseline outputs should be the union
/// of their children (see `child_union`).
std::map<std::string, ConfusionCounts> evaluate_image(
    const std::map<std::string, std::vector<uint8_t>>& pred,
    const HierTargetStack& target, const ClassTree& tree);

/// Build parent masks as the union of their (already predicted) children.
void add_parent_unions(std::map<std::string, std::vector<uint8_t>>& pred,
                       const ClassTree& tree);

MetricValues metrics_from_counts(const ConfusionCounts& c);

/// Whether the 0/0 case applies (class absent from prediction and target).
bool counts_empty(const ConfusionCounts& c);

/// Fold-wise aggregation: per-fold means first, then mean and population
/// std across fold means. The "Average" row is the unweighted mean over
/// classes (Background included).
MetricsReport aggregate(const std::vector<ImageRecord>& records,
                        const std::vector<std::string>& class_names);

std::string report_to_csv(const MetricsReport& report);
std::string per_image_csv(const MetricsReport& report);
std::string format_report_table(const MetricsReport& report, const std::string& title);

} // namespace hierseg

#endif
