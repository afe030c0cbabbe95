#include "hierseg/metrics.hpp"
#include "hierseg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

namespace hierseg {

std::vector<std::vector<uint8_t>> binarize_level(const Tensor& probs, double threshold) {
    const size_t n = probs.plane();
    std::vector<std::vector<uint8_t>> out(probs.c, std::vector<uint8_t>(n, 0));
    for (int c = 0; c < probs.c; ++c)
        for (size_t i = 0; i < n; ++i)
            out[c][i] = probs.v[c * n + i] >= threshold ? 1 : 0;
    return out;
}

std::map<std::string, ConfusionCounts> evaluate_image(
    const std::map<std::string, std::vector<uint8_t>>& pred,
    const HierTargetStack& target, const ClassTree& tree) {
    const size_t n = static_cast<size_t>(target.width) * target.height;
    std::map<std::string, ConfusionCounts> out;
    for (const auto& node : tree.nodes) {
        auto it = pred.find(node.name);
        if (it == pred.end())
            throw DataError("evaluate_image: no prediction for class " + node.name);
        const auto& mask = it->second;
        if (mask.size() != n)
            throw DataError("evaluate_image: prediction size mismatch for " + node.name);
        const auto& plane = target.planes[node.level];
        const size_t off = static_cast<size_t>(tree.index_in_level(node.name)) * n;
        ConfusionCounts c;
        for (size_t i = 0; i < n; ++i) {
            // -1 target pixels count as 0 for full-image evaluation.
            int t = plane[off + i] == 1 ? 1 : 0;
            int p = mask[i] ? 1 : 0;
            if (p && t)
                ++c.tp;
            else if (p && !t)
                ++c.fp;
            else if (!p && t)
                ++c.fn;
            else
                ++c.tn;
        }
        out[node.name] = c;
    }
    return out;
}

void add_parent_unions(std::map<std::string, std::vector<uint8_t>>& pred,
                       const ClassTree& tree) {
    // Deepest parents first so multi-level unions compose.
    for (int level = tree.num_levels() - 2; level >= 0; --level)
        for (const auto& name : tree.levels[level]) {
            const auto& node = tree.node(name);
            if (node.children.empty() || pred.count(name)) continue;
            std::vector<uint8_t> u;
            for (const auto& child : node.children) {
                const auto& cm = pred.at(child);
                if (u.empty()) u.assign(cm.size(), 0);
                for (size_t i = 0; i < cm.size(); ++i) u[i] |= cm[i];
            }
            pred[name] = std::move(u);
        }
}

MetricValues metrics_from_counts(const ConfusionCounts& c) {
    MetricValues m;
    const double tp = static_cast<double>(c.tp);
    m.iou = c.tp + c.fp + c.fn == 0 ? 1.0 : tp / static_cast<double>(c.tp + c.fp + c.fn);
    m.dice = 2 * c.tp + c.fp + c.fn == 0 ? 1.0 : 2 * tp / static_cast<double>(2 * c.tp + c.fp + c.fn);
    m.precision = c.tp + c.fp == 0 ? 1.0 : tp / static_cast<double>(c.tp + c.fp);
    m.recall = c.tp + c.fn == 0 ? 1.0 : tp / static_cast<double>(c.tp + c.fn);
    return m;
}

bool counts_empty(const ConfusionCounts& c) { return c.tp + c.fp + c.fn == 0; }

MetricsReport aggregate(const std::vector<ImageRecord>& records,
                        const std::vector<std::string>& class_names) {
    if (records.empty()) throw DataError("aggregate: no image records");
    std::set<int> folds;
    for (const auto& r : records) folds.insert(r.fold);
    for (int f : folds) {
        bool any = std::any_of(records.begin(), records.end(),
                               [&](const ImageRecord& r) { return r.fold == f; });
        if (!any) throw DataError("aggregate: empty fold " + std::to_string(f));
    }

    MetricsReport report;
    report.class_names = class_names;
    report.per_image = records;

    auto fold_means = [&](const std::string& cls) {
        std::vector<MetricValues> means;
        for (int f : folds) {
            MetricValues acc;
            int count = 0;
            for (const auto& r : records) {
                if (r.fold != f) continue;
                auto def = r.defined.find(cls);
                if (def != r.defined.end() && !def->second) continue;
                const auto& m = r.per_class.at(cls);
                acc.iou += m.iou;
                acc.dice += m.dice;
                acc.precision += m.precision;
                acc.recall += m.recall;
                ++count;
            }
            if (count == 0) continue;
            acc.iou /= count;
            acc.dice /= count;
            acc.precision /= count;
            acc.recall /= count;
            means.push_back(acc);
        }
        return means;
    };

    auto mean_std = [](const std::vector<double>& xs) {
        double mean = 0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        double var = 0;
        for (double x : xs) var += (x - mean) * (x - mean);
        var /= static_cast<double>(xs.size()); // population std over folds
        return std::pair<double, double>(mean, std::sqrt(var));
    };

    for (const auto& cls : class_names) {
        auto means = fold_means(cls);
        if (means.empty()) throw DataError("aggregate: no defined values for class " + cls);
        std::vector<double> iou, dice, prec, rec;
        for (const auto& m : means) {
            iou.push_back(m.iou);
            dice.push_back(m.dice);
            prec.push_back(m.precision);
            rec.push_back(m.recall);
        }
        auto [im, is] = mean_std(iou);
        auto [dm, ds] = mean_std(dice);
        auto [pm, ps] = mean_std(prec);
        auto [rm, rs] = mean_std(rec);
        report.mean[cls] = {im, dm, pm, rm};
        report.stddev[cls] = {is, ds, ps, rs};
    }

    // Unweighted mean over classes, Background included.
    MetricValues avg_m, avg_s;
    for (const auto& cls : class_names) {
        avg_m.iou += report.mean[cls].iou;
        avg_m.dice += report.mean[cls].dice;
        avg_m.precision += report.mean[cls].precision;
        avg_m.recall += report.mean[cls].recall;
        avg_s.iou += report.stddev[cls].iou;
        avg_s.dice += report.stddev[cls].dice;
        avg_s.precision += report.stddev[cls].precision;
        avg_s.recall += report.stddev[cls].recall;
    }
    const double nc = static_cast<double>(class_names.size());
    report.mean["Average"] = {avg_m.iou / nc, avg_m.dice / nc, avg_m.precision / nc,
                              avg_m.recall / nc};
    report.stddev["Average"] = {avg_s.iou / nc, avg_s.dice / nc, avg_s.precision / nc,
                                avg_s.recall / nc};
    report.class_names.push_back("Average");
    return report;
}

std::string report_to_csv(const MetricsReport& report) {
    std::ostringstream out;
    out << "class,iou_mean,iou_std,dice_mean,dice_std,precision_mean,precision_std,"
           "recall_mean,recall_std\n";
    out << std::fixed << std::setprecision(6);
    for (const auto& cls : report.class_names) {
        const auto& m = report.mean.at(cls);
        const auto& s = report.stddev.at(cls);
        out << cls << "," << m.iou << "," << s.iou << "," << m.dice << "," << s.dice << ","
            << m.precision << "," << s.precision << "," << m.recall << "," << s.recall << "\n";
    }
    return out.str();
}

std::string per_image_csv(const MetricsReport& report) {
    std::ostringstream out;
    out << "image_id,fold,class,iou,dice,precision,recall,defined\n";
    out << std::fixed << std::setprecision(6);
    for (const auto& r : report.per_image)
        for (const auto& [cls, m] : r.per_class) {
            auto def = r.defined.find(cls);
            bool d = def == r.defined.end() || def->second;
            out << r.image_id << "," << r.fold << "," << cls << "," << m.iou << "," << m.dice
                << "," << m.precision << "," << m.recall << "," << (d ? 1 : 0) << "\n";
        }
    return out.str();
}

std::string format_report_table(const MetricsReport& report, const std::string& title) {
    std::ostringstream out;
    out << title << "\n";
    out << std::left << std::setw(14) << "Class" << std::right << std::setw(16) << "IoU"
        << std::setw(16) << "Dice" << std::setw(16) << "Precision" << std::setw(16) << "Recall"
        << "\n";
    auto cell = [](double mean, double std) {
        std::ostringstream c;
        c << std::fixed << std::setprecision(3) << mean << " (" << std << ")";
        return c.str();
    };
    std::vector<std::string> rows = report.class_names;
    // Average first, matching the published row layout.
    std::stable_partition(rows.begin(), rows.end(),
                          [](const std::string& c) { return c == "Average"; });
    for (const auto& cls : rows) {
        const auto& m = report.mean.at(cls);
        const auto& s = report.stddev.at(cls);
        out << std::left << std::setw(14) << cls << std::right << std::setw(16)
            << cell(m.iou, s.iou) << std::setw(16) << cell(m.dice, s.dice) << std::setw(16)
            << cell(m.precision, s.precision) << std::setw(16) << cell(m.recall, s.recall)
            << "\n";
    }
    return out.str();
}

} // namespace hierseg
