#include "hierseg/dataprep.hpp"
#include "hierseg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace hierseg {

namespace {

// Even-odd scanline fill sampled at pixel centers. Vertices outside the
// canvas are effectively clipped by the per-row intersection test.
void rasterize_polygon(const std::vector<cv::Point2f>& poly, int width, int height,
                       std::vector<uint8_t>& out) {
    const size_t n = poly.size();
    std::vector<double> xs;
    for (int y = 0; y < height; ++y) {
        const double cy = y + 0.5;
        xs.clear();
        for (size_t i = 0; i < n; ++i) {
            const cv::Point2f& a = poly[i];
            const cv::Point2f& b = poly[(i + 1) % n];
            if ((a.y <= cy && b.y > cy) || (b.y <= cy && a.y > cy)) {
                double t = (cy - a.y) / static_cast<double>(b.y - a.y);
                xs.push_back(a.x + t * (b.x - a.x));
            }
        }
        std::sort(xs.begin(), xs.end());
        for (size_t i = 0; i + 1 < xs.size(); i += 2) {
            int x0 = static_cast<int>(std::ceil(xs[i] - 0.5));
            int x1 = static_cast<int>(std::floor(xs[i + 1] - 0.5));
            x0 = std::max(x0, 0);
            x1 = std::min(x1, width - 1);
            for (int x = x0; x <= x1; ++x)
                out[static_cast<size_t>(y) * width + x] = 1;
        }
    }
}

// Remove 8-connected components of `keep` with 50 pixels or fewer.
void drop_small_components(std::vector<uint8_t>& keep, int width, int height) {
    std::vector<int32_t> label(keep.size(), -1);
    std::deque<int> queue;
    for (size_t start = 0; start < keep.size(); ++start) {
        if (!keep[start] || label[start] >= 0) continue;
        std::vector<int> component;
        label[start] = 0;
        queue.push_back(static_cast<int>(start));
        while (!queue.empty()) {
            int idx = queue.front();
            queue.pop_front();
            component.push_back(idx);
            int y = idx / width, x = idx % width;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    int ny = y + dy, nx = x + dx;
                    if (ny < 0 || ny >= height || nx < 0 || nx >= width) continue;
                    int nidx = ny * width + nx;
                    if (keep[nidx] && label[nidx] < 0) {
                        label[nidx] = 0;
                        queue.push_back(nidx);
                    }
                }
        }
        if (component.size() <= 50)
            for (int idx : component) keep[idx] = 0;
    }
}

int background_index(const ClassTree& tree) {
    const auto& base = tree.levels.at(0);
    for (size_t i = 0; i < base.size(); ++i) {
        const auto& n = tree.node(base[i]);
        if (n.pixel_value && *n.pixel_value == 0) return static_cast<int>(i);
    }
    return 0;
}

} // namespace

SemanticMask polygons_to_mask(const std::vector<PolygonInstance>& instances,
                              int width, int height, const ClassTree& tree,
                              const std::vector<std::string>& priority) {
    for (const auto& inst : instances) {
        if (!tree.has_class(inst.class_name) || !tree.node(inst.class_name).children.empty())
            throw DataError("instance class is not a leaf class: " + inst.class_name);
        if (!tree.node(inst.class_name).pixel_value)
            throw DataError("instance class has no pixel value: " + inst.class_name);
        if (inst.vertices.size() < 3)
            throw DataError("polygon with fewer than 3 vertices for " + inst.class_name);
    }

    // Priority rank: explicit list first (high to low), remaining leaf
    // classes trail in class-map order. Without an explicit list the
    // restorative-material-first default applies: composite over enamel
    // over pulp over dentin, bone classes last.
    std::vector<std::string> effective = priority;
    if (effective.empty())
        for (const char* name : {"Composite", "Enamel", "Pulp", "Dentin"})
            if (tree.has_class(name)) effective.push_back(name);
    std::map<std::string, int> rank;
    int next = 0;
    for (const auto& name : effective)
        if (!rank.count(name)) rank[name] = next++;
    for (const auto& name : tree.leaf_classes())
        if (!rank.count(name)) rank[name] = next++;

    std::vector<size_t> order(instances.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return rank.at(instances[a].class_name) < rank.at(instances[b].class_name);
    });

    const size_t npx = static_cast<size_t>(width) * height;
    std::vector<uint8_t> claimed(npx, 0);
    std::vector<std::vector<uint8_t>> remnants(instances.size());

    // High-priority instances claim pixels first; each instance keeps only
    // its unclaimed remainder.
    for (size_t oi : order) {
        std::vector<uint8_t> raster(npx, 0);
        rasterize_polygon(instances[oi].vertices, width, height, raster);
        for (size_t i = 0; i < npx; ++i) {
            if (raster[i] && !claimed[i]) {
                claimed[i] = 1;
            } else {
                raster[i] = 0;
            }
        }
        remnants[oi] = std::move(raster);
    }

    SemanticMask mask;
    mask.width = width;
    mask.height = height;
    mask.data.assign(npx, 0);
    for (size_t oi = 0; oi < instances.size(); ++oi) {
        drop_small_components(remnants[oi], width, height);
        int value = *tree.node(instances[oi].class_name).pixel_value;
        for (size_t i = 0; i < npx; ++i)
            if (remnants[oi][i]) mask.data[i] = value;
    }
    return mask;
}

HierTargetStack mask_to_hier_targets(const SemanticMask& mask, const ClassTree& tree) {
    // Map pixel value -> owning leaf class; validate mask contents.
    std::map<int, std::string> leaf_by_value;
    for (const auto& name : tree.leaf_classes())
        leaf_by_value[*tree.node(name).pixel_value] = name;
    std::set<int32_t> present(mask.data.begin(), mask.data.end());
    for (int32_t v : present)
        if (!leaf_by_value.count(v))
            throw DataError("mask contains value " + std::to_string(v) +
                            " that is not a leaf class pixel value");

    const size_t npx = static_cast<size_t>(mask.width) * mask.height;
    HierTargetStack stack;
    stack.width = mask.width;
    stack.height = mask.height;
    stack.planes.resize(tree.num_levels());

    // Per-level lookup: pixel value -> positive class index at that level
    // (the ancestor of the leaf at that depth), or -1.
    for (int level = 0; level < tree.num_levels(); ++level) {
        const auto& classes = tree.levels[level];
        const int c_count = static_cast<int>(classes.size());
        std::map<int, int> value_to_class;
        for (int ci = 0; ci < c_count; ++ci)
            for (int v : tree.descendant_pixel_values(classes[ci]))
                value_to_class[v] = ci;

        // Positive class index of the direct parent at level-1, or -1 when
        // the pixel is outside every parent of this level.
        std::map<int, int> value_to_parent_class;
        if (level > 0) {
            const auto& parents = tree.levels[level - 1];
            for (size_t pi = 0; pi < parents.size(); ++pi)
                for (int v : tree.descendant_pixel_values(parents[pi]))
                    value_to_parent_class[v] = static_cast<int>(pi);
        }

        auto& plane = stack.planes[level];
        plane.assign(static_cast<size_t>(c_count) * npx, level == 0 ? 0 : -1);
        for (size_t i = 0; i < npx; ++i) {
            int v = mask.data[i];
            auto hit = value_to_class.find(v);
            if (level == 0) {
                if (hit != value_to_class.end()) plane[hit->second * npx + i] = 1;
            } else {
                // Inside some parent: siblings get 0, the owner gets 1.
                auto parent_hit = value_to_parent_class.find(v);
                if (parent_hit == value_to_parent_class.end()) continue;
                int parent_ci = parent_hit->second;
                const std::string& parent_name = tree.levels[level - 1][parent_ci];
                const auto& group_it = tree.parent_groups[level].find(parent_name);
                if (group_it == tree.parent_groups[level].end()) continue;
                for (const auto& child : group_it->second)
                    plane[tree.index_in_level(child) * npx + i] = 0;
                if (hit != value_to_class.end()) plane[hit->second * npx + i] = 1;
            }
        }
    }
    return stack;
}

LossWeights compute_class_weights(const std::vector<HierTargetStack>& targets,
                                  const ClassTree& tree) {
    if (targets.empty())
        throw DataError("class weights require a non-empty training split");

    LossWeights weights;
    weights.per_level.resize(tree.num_levels());
    for (int level = 0; level < tree.num_levels(); ++level) {
        const int c_count = static_cast<int>(tree.levels[level].size());
        std::vector<double> freq(c_count, 0.0);
        std::vector<int64_t> positive(c_count, 0), valid(c_count, 0);
        for (const auto& stack : targets) {
            const size_t npx = static_cast<size_t>(stack.width) * stack.height;
            const auto& plane = stack.planes.at(level);
            for (int ci = 0; ci < c_count; ++ci)
                for (size_t i = 0; i < npx; ++i) {
                    int8_t t = plane[ci * npx + i];
                    if (t >= 0) {
                        ++valid[ci];
                        if (t == 1) ++positive[ci];
                    }
                }
        }
        for (int ci = 0; ci < c_count; ++ci)
            freq[ci] = valid[ci] > 0 ? static_cast<double>(positive[ci]) / valid[ci] : 0.0;

        double smallest_nonzero = 0.0;
        for (double f : freq)
            if (f > 0.0 && (smallest_nonzero == 0.0 || f < smallest_nonzero))
                smallest_nonzero = f;
        if (smallest_nonzero == 0.0)
            throw DataError("no positive pixels at level " + std::to_string(level));
        for (int ci = 0; ci < c_count; ++ci)
            if (freq[ci] == 0.0) freq[ci] = smallest_nonzero; // warn-and-substitute

        std::vector<double> sorted = freq;
        std::sort(sorted.begin(), sorted.end());
        double median = sorted.size() % 2 == 1
                            ? sorted[sorted.size() / 2]
                            : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);

        auto& w = weights.per_level[level];
        w.resize(c_count);
        for (int ci = 0; ci < c_count; ++ci) w[ci] = median / freq[ci];
    }
    return weights;
}

std::vector<double> compute_flat_class_weights(const std::vector<SemanticMask>& masks,
                                               const ClassTree& tree) {
    if (masks.empty())
        throw DataError("class weights require a non-empty training split");
    auto leaves = tree.leaf_classes();
    std::vector<int64_t> counts(leaves.size(), 0);
    int64_t total = 0;
    std::map<int, int> value_to_index;
    for (size_t i = 0; i < leaves.size(); ++i)
        value_to_index[*tree.node(leaves[i]).pixel_value] = static_cast<int>(i);
    for (const auto& mask : masks) {
        total += static_cast<int64_t>(mask.data.size());
        for (int32_t v : mask.data) counts[value_to_index.at(v)]++;
    }
    std::vector<double> freq(leaves.size());
    for (size_t i = 0; i < leaves.size(); ++i)
        freq[i] = static_cast<double>(counts[i]) / total;
    double smallest = 0.0;
    for (double f : freq)
        if (f > 0.0 && (smallest == 0.0 || f < smallest)) smallest = f;
    if (smallest == 0.0) throw DataError("no positive pixels in any mask");
    for (double& f : freq)
        if (f == 0.0) f = smallest;
    std::vector<double> sorted = freq;
    std::sort(sorted.begin(), sorted.end());
    double median = sorted.size() % 2 == 1
                        ? sorted[sorted.size() / 2]
                        : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
    std::vector<double> w(freq.size());
    for (size_t i = 0; i < freq.size(); ++i) w[i] = median / freq[i];
    return w;
}

FoldSplit make_folds(std::vector<std::string> image_ids, int k,
                     double holdout_fraction, uint64_t seed) {
    std::sort(image_ids.begin(), image_ids.end());
    std::mt19937_64 rng(seed);
    std::shuffle(image_ids.begin(), image_ids.end(), rng);

    const int n = static_cast<int>(image_ids.size());
    const int n_test = static_cast<int>(std::lround(holdout_fraction * n));
    if (n - n_test < k)
        throw DataError("fewer images than folds after holdout");

    FoldSplit split;
    split.test_ids.assign(image_ids.begin(), image_ids.begin() + n_test);
    std::vector<std::string> rest(image_ids.begin() + n_test, image_ids.end());

    const int m = static_cast<int>(rest.size());
    split.val_ids.resize(k);
    split.train_ids.resize(k);
    // Contiguous chunks of the shuffled remainder; sizes differ by at most 1.
    int start = 0;
    for (int f = 0; f < k; ++f) {
        int size = m / k + (f < m % k ? 1 : 0);
        split.val_ids[f].assign(rest.begin() + start, rest.begin() + start + size);
        for (int i = 0; i < m; ++i)
            if (i < start || i >= start + size) split.train_ids[f].push_back(rest[i]);
        start += size;
    }
    return split;
}

std::string fold_manifest_csv(const FoldSplit& split) {
    std::ostringstream out;
    out << "image_id,assignment\n";
    for (const auto& id : split.test_ids) out << id << ",test\n";
    for (size_t f = 0; f < split.val_ids.size(); ++f)
        for (const auto& id : split.val_ids[f]) out << id << "," << f << "\n";
    return out.str();
}

FoldSplit parse_fold_manifest(const std::string& csv_text) {
    std::istringstream in(csv_text);
    std::string line;
    std::vector<std::pair<std::string, int>> rows; // fold index, -1 = test
    int max_fold = -1;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        if (header) {
            header = false;
            continue;
        }
        size_t comma = line.find(',');
        if (comma == std::string::npos)
            throw DataError("fold manifest: malformed row: " + line);
        std::string id = line.substr(0, comma);
        std::string tag = line.substr(comma + 1);
        while (!tag.empty() && (tag.back() == '\r' || tag.back() == '\n')) tag.pop_back();
        if (tag == "test") {
            rows.emplace_back(id, -1);
        } else {
            int f = std::stoi(tag);
            max_fold = std::max(max_fold, f);
            rows.emplace_back(id, f);
        }
    }
    FoldSplit split;
    split.val_ids.resize(max_fold + 1);
    split.train_ids.resize(max_fold + 1);
    for (const auto& [id, f] : rows) {
        if (f < 0)
            split.test_ids.push_back(id);
        else
            split.val_ids[f].push_back(id);
    }
    for (int f = 0; f <= max_fold; ++f)
        for (const auto& [id, g] : rows)
            if (g >= 0 && g != f) split.train_ids[f].push_back(id);
    return split;
}

namespace {

cv::Mat build_affine(double angle_deg, double tx, double ty, double scale,
                     double shear_deg, double cx, double cy) {
    const double a = angle_deg * CV_PI / 180.0;
    const double sh = std::tan(shear_deg * CV_PI / 180.0);
    // rotation * shear, uniformly scaled
    double m00 = scale * (std::cos(a) + std::sin(a) * 0.0);
    double m01 = scale * (std::cos(a) * sh - std::sin(a));
    double m10 = scale * (std::sin(a));
    double m11 = scale * (std::sin(a) * sh + std::cos(a));
    cv::Mat M(2, 3, CV_64F);
    M.at<double>(0, 0) = m00;
    M.at<double>(0, 1) = m01;
    M.at<double>(1, 0) = m10;
    M.at<double>(1, 1) = m11;
    M.at<double>(0, 2) = cx - m00 * cx - m01 * cy + tx;
    M.at<double>(1, 2) = cy - m10 * cx - m11 * cy + ty;
    return M;
}

struct AugmentDraws {
    double blur_sigma, brightness, contrast, saturation, hue;
    bool hflip;
    double angle, tx, ty, scale, shear;
};

AugmentDraws draw_params(const AugmentConfig& c, std::mt19937_64& rng) {
    auto uni = [&](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    AugmentDraws d;
    d.blur_sigma = uni(c.blur_sigma_min, c.blur_sigma_max);
    d.brightness = uni(std::max(0.0, 1.0 - c.brightness), 1.0 + c.brightness);
    d.contrast = uni(std::max(0.0, 1.0 - c.contrast), 1.0 + c.contrast);
    d.saturation = uni(std::max(0.0, 1.0 - c.saturation), 1.0 + c.saturation);
    d.hue = uni(-c.hue, c.hue);
    d.hflip = uni(0.0, 1.0) < c.hflip_prob;
    d.angle = uni(c.rot_min, c.rot_max);
    d.tx = uni(c.trans_min, c.trans_max);
    d.ty = uni(c.trans_min, c.trans_max);
    d.scale = uni(c.scale_min, c.scale_max);
    d.shear = uni(c.shear_min, c.shear_max);
    return d;
}

void apply_photometric(cv::Mat& image, const AugmentConfig& c, const AugmentDraws& d) {
    if (c.blur_kernel > 1)
        cv::GaussianBlur(image, image, cv::Size(c.blur_kernel, c.blur_kernel), d.blur_sigma);
    image *= d.brightness;
    cv::Scalar mean = cv::mean(image);
    image = mean[0] + (image - mean[0]) * d.contrast;
    // Saturation and hue jitter have no effect on single-channel images;
    // the draws above still consume rng values so streams stay aligned.
    cv::min(image, 1.0, image);
    cv::max(image, 0.0, image);
}

} // namespace

void augment(cv::Mat& image, HierTargetStack& targets, const ClassTree& tree,
             const AugmentConfig& config, std::mt19937_64& rng) {
    if (!config.enabled) return;
    const AugmentDraws d = draw_params(config, rng);
    const int width = targets.width, height = targets.height;
    const size_t npx = static_cast<size_t>(width) * height;

    apply_photometric(image, config, d);

    // Per-level label maps keep the target invariants intact under warping:
    // every pixel carries exactly one state per level.
    std::vector<cv::Mat> labels(targets.planes.size());
    const int bg = background_index(tree);
    for (size_t level = 0; level < targets.planes.size(); ++level) {
        const int c_count = targets.level_classes(static_cast<int>(level));
        cv::Mat lab(height, width, CV_16S, cv::Scalar(level == 0 ? bg : -1));
        for (int ci = 0; ci < c_count; ++ci)
            for (size_t i = 0; i < npx; ++i)
                if (targets.planes[level][ci * npx + i] == 1)
                    lab.at<int16_t>(static_cast<int>(i / width), static_cast<int>(i % width)) =
                        static_cast<int16_t>(ci);
        labels[level] = lab;
    }

    if (d.hflip) {
        cv::flip(image, image, 1);
        for (auto& lab : labels) cv::flip(lab, lab, 1);
    }
    cv::Mat M = build_affine(d.angle, d.tx, d.ty, d.scale, d.shear,
                             (width - 1) / 2.0, (height - 1) / 2.0);
    cv::warpAffine(image, image, M, image.size(), cv::INTER_LINEAR,
                   cv::BORDER_CONSTANT, cv::Scalar(0));
    for (size_t level = 0; level < labels.size(); ++level) {
        double fill = level == 0 ? bg : -1;
        cv::warpAffine(labels[level], labels[level], M, labels[level].size(),
                       cv::INTER_NEAREST, cv::BORDER_CONSTANT, cv::Scalar(fill));
    }

    // Rebuild the {0,1,-1} planes from the warped label maps.
    for (size_t level = 0; level < targets.planes.size(); ++level) {
        const int c_count = targets.level_classes(static_cast<int>(level));
        auto& plane = targets.planes[level];
        std::fill(plane.begin(), plane.end(), level == 0 ? 0 : -1);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                int16_t lab = labels[level].at<int16_t>(y, x);
                size_t i = static_cast<size_t>(y) * width + x;
                if (lab < 0) continue;
                if (level == 0) {
                    plane[static_cast<size_t>(lab) * npx + i] = 1;
                } else {
                    // Positive child implies siblings in the same parent group
                    // flip from -1 to 0.
                    const std::string& cls = tree.levels[level][lab];
                    const auto& parent = *tree.node(cls).parent;
                    for (const auto& sib : tree.parent_groups[level].at(parent))
                        plane[static_cast<size_t>(tree.index_in_level(sib)) * npx + i] = 0;
                    plane[static_cast<size_t>(lab) * npx + i] = 1;
                }
            }
    }
}

void augment(cv::Mat& image, SemanticMask& mask, const AugmentConfig& config,
             std::mt19937_64& rng) {
    if (!config.enabled) return;
    const AugmentDraws d = draw_params(config, rng);
    apply_photometric(image, config, d);

    cv::Mat lab(mask.height, mask.width, CV_32S);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) lab.at<int32_t>(y, x) = mask.at(y, x);

    if (d.hflip) {
        cv::flip(image, image, 1);
        cv::flip(lab, lab, 1);
    }
    cv::Mat M = build_affine(d.angle, d.tx, d.ty, d.scale, d.shear,
                             (mask.width - 1) / 2.0, (mask.height - 1) / 2.0);
    cv::warpAffine(image, image, M, image.size(), cv::INTER_LINEAR,
                   cv::BORDER_CONSTANT, cv::Scalar(0));
    cv::Mat labf;
    lab.convertTo(labf, CV_32F);
    cv::warpAffine(labf, labf, M, labf.size(), cv::INTER_NEAREST,
                   cv::BORDER_CONSTANT, cv::Scalar(0));
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            mask.at(y, x) = static_cast<int32_t>(labf.at<float>(y, x));
}

void write_mask_png(const std::string& path, const SemanticMask& mask) {
    cv::Mat m(mask.height, mask.width, CV_8U);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            int32_t v = mask.at(y, x);
            if (v < 0 || v > 255) throw DataError("mask value out of 8-bit range");
            m.at<uint8_t>(y, x) = static_cast<uint8_t>(v);
        }
    if (!cv::imwrite(path, m, {cv::IMWRITE_PNG_COMPRESSION, 0}))
        throw DataError("failed to write mask: " + path);
}

SemanticMask read_mask_png(const std::string& path, const ClassTree& tree) {
    cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw DataError("failed to read mask: " + path);
    SemanticMask mask;
    mask.width = m.cols;
    mask.height = m.rows;
    mask.data.resize(static_cast<size_t>(m.cols) * m.rows);
    std::set<int> leaf_values;
    for (const auto& name : tree.leaf_classes())
        leaf_values.insert(*tree.node(name).pixel_value);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) {
            int v = m.at<uint8_t>(y, x);
            if (!leaf_values.count(v))
                throw DataError(path + ": mask value " + std::to_string(v) +
                                " is not a leaf class pixel value");
            mask.at(y, x) = v;
        }
    return mask;
}

std::vector<PolygonInstance> parse_vgg_annotations(const std::string& json_text,
                                                   const std::string& image_id) {
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("annotations: invalid JSON: ") + e.what());
    }

    auto parse_record = [&](const nlohmann::json& record) {
        std::vector<PolygonInstance> out;
        if (!record.contains("regions")) return out;
        const auto& regions = record.at("regions");
        auto handle_region = [&](const nlohmann::json& region) {
            const auto& shape = region.at("shape_attributes");
            const auto& xs = shape.at("all_points_x");
            const auto& ys = shape.at("all_points_y");
            if (xs.size() != ys.size())
                throw DataError("annotations: x/y vertex arrays differ in length");
            PolygonInstance inst;
            inst.image_id = image_id;
            for (size_t i = 0; i < xs.size(); ++i)
                inst.vertices.emplace_back(xs[i].get<float>(), ys[i].get<float>());
            const auto& attrs = region.at("region_attributes");
            if (attrs.contains("class")) {
                inst.class_name = attrs.at("class").get<std::string>();
            } else {
                for (const auto& [key, value] : attrs.items())
                    if (value.is_string()) {
                        inst.class_name = value.get<std::string>();
                        break;
                    }
            }
            if (inst.class_name.empty())
                throw DataError("annotations: region without a class attribute");
            out.push_back(std::move(inst));
        };
        if (regions.is_array())
            for (const auto& r : regions) handle_region(r);
        else
            for (const auto& [key, r] : regions.items()) handle_region(r);
        return out;
    };

    if (root.contains("regions")) return parse_record(root);
    for (const auto& [key, record] : root.items()) {
        std::string filename =
            record.is_object() && record.contains("filename")
                ? record.at("filename").get<std::string>()
                : key;
        if (filename == image_id || key == image_id ||
            filename.rfind(image_id + ".", 0) == 0 || key.rfind(image_id + ".", 0) == 0)
            return parse_record(record);
    }
    throw DataError("annotations: no record for image " + image_id);
}

} // namespace hierseg
