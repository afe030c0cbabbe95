// Command-line driver for the hierarchical segmentation pipeline:
// prepare / synth / train / eval / overlay.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "hierseg/dataprep.hpp"
#include "hierseg/errors.hpp"
#include "hierseg/hierarchy.hpp"
#include "hierseg/metrics.hpp"
#include "hierseg/model.hpp"
#include "hierseg/synthetic.hpp"
#include "hierseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace hierseg;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Resolve a possibly-relative dataset path against $HIERSEG_DATA_ROOT.
std::string resolve_data(const std::string& path) {
    const char* root = std::getenv("HIERSEG_DATA_ROOT");
    if (root && !fs::path(path).is_absolute() && !fs::exists(path))
        return (fs::path(root) / path).string();
    return path;
}

int cmd_prepare(const std::string& annotations, const std::string& out,
                const std::string& map_path, const std::string& tree_path, int width,
                int height, int folds, double holdout, uint64_t seed,
                const std::vector<std::string>& priority) {
    ClassTree tree = parse_class_tree(slurp(tree_path), parse_class_map(slurp(map_path)));
    for (const auto& v : validate_hierarchy(tree)) {
        if (v.severity == HierarchyViolation::Severity::Error)
            throw DataError("hierarchy: " + v.class_name + ": " + v.message);
        std::cerr << "warning: " << v.class_name << ": " << v.message << "\n";
    }

    std::vector<std::pair<std::string, std::vector<PolygonInstance>>> per_image;
    for (const auto& entry : fs::directory_iterator(annotations)) {
        if (entry.path().extension() != ".json") continue;
        std::string id = entry.path().stem().string();
        per_image.emplace_back(id, parse_vgg_annotations(slurp(entry.path().string()), id));
    }
    if (per_image.empty()) throw DataError("no annotation files in " + annotations);
    std::sort(per_image.begin(), per_image.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    fs::create_directories(fs::path(out) / "masks");
    std::map<std::string, int64_t> pixel_counts;
    std::vector<std::string> ids;
    for (const auto& [id, instances] : per_image) {
        SemanticMask mask = polygons_to_mask(instances, width, height, tree, priority);
        write_mask_png((fs::path(out) / "masks" / (id + ".png")).string(), mask);
        ids.push_back(id);
        for (int32_t v : mask.data)
            for (const auto& leaf : tree.leaf_classes())
                if (*tree.node(leaf).pixel_value == v) ++pixel_counts[leaf];
    }
    std::ofstream(fs::path(out) / "class_map.csv") << tree.to_class_map_csv();
    std::ofstream(fs::path(out) / "class_tree.json") << tree.to_class_tree_json();
    std::ofstream(fs::path(out) / "folds.csv")
        << fold_manifest_csv(make_folds(ids, folds, holdout, seed));

    std::cout << "class statistics (" << per_image.size() << " images):\n";
    for (const auto& leaf : tree.leaf_classes())
        std::cout << "  " << leaf << "  value " << *tree.node(leaf).pixel_value
                  << "  pixels/img "
                  << pixel_counts[leaf] / static_cast<int64_t>(per_image.size()) << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& run_dir, TrainConfig config) {
    Dataset data = load_dataset(resolve_data(data_dir));
    CvResult result = run_cv(data, config, run_dir);
    std::cout << format_report_table(result.validation, "Validation (mean (std) across folds)");
    if (!result.test.class_names.empty())
        std::cout << format_report_table(result.test, "Test (mean (std) across folds)");
    return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& checkpoint,
             const std::string& split, int fold, const std::string& out,
             const MetricsOptions& mopts) {
    Dataset data = load_dataset(resolve_data(data_dir));
    CheckpointInfo info = read_checkpoint_info(checkpoint);
    if (info.tree_fingerprint != data.tree.fingerprint())
        throw DataError("checkpoint was trained against a different class hierarchy "
                        "(fingerprint mismatch); refusing to evaluate");

    const std::vector<std::string>& ids =
        split == "test" ? data.folds.test_ids : data.folds.val_ids.at(fold);

    ModelConfig mc;
    mc.backbone = info.backbone;
    mc.restrict_threshold = mopts.threshold;
    std::vector<ImageRecord> records;
    if (info.variant == "hierarchical") {
        HierModel model(data.tree, mc);
        model.load_checkpoint(checkpoint);
        records = evaluate_split(model, data, ids, fold, mopts);
    } else {
        BaselineModel model(data.tree, mc);
        model.load_checkpoint(checkpoint);
        records = evaluate_split(model, data, ids, fold, mopts);
    }
    MetricsReport report = aggregate(records, data.all_class_names());
    fs::create_directories(out);
    std::ofstream(fs::path(out) / (split + "_report.csv")) << report_to_csv(report);
    std::ofstream(fs::path(out) / (split + "_per_image.csv")) << per_image_csv(report);
    std::cout << format_report_table(report, "Split: " + split);
    return 0;
}

std::map<std::string, cv::Vec3b> default_palette() {
    // BGR; Background/parent rows intentionally absent (not painted).
    return {
        {"Upper", {0, 255, 255}},    // yellow
        {"Lower", {203, 192, 255}},  // pink
        {"Pulp", {139, 0, 0}},       // dark blue
        {"Dentin", {255, 255, 255}}, // white
        {"Enamel", {0, 0, 255}},     // red
        {"Composite", {0, 255, 0}},  // green
    };
}

std::map<std::string, cv::Vec3b> parse_palette(const std::string& path) {
    // CSV rows: class,r,g,b
    std::map<std::string, cv::Vec3b> out;
    std::istringstream in(slurp(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cls, r, g, b;
        if (!std::getline(row, cls, ',') || !std::getline(row, r, ',') ||
            !std::getline(row, g, ',') || !std::getline(row, b, ','))
            throw DataError("palette: bad row: " + line);
        out[cls] = cv::Vec3b(static_cast<uchar>(std::stoi(b)), static_cast<uchar>(std::stoi(g)),
                             static_cast<uchar>(std::stoi(r)));
    }
    return out;
}

int cmd_overlay(const std::string& data_dir, const std::string& checkpoint,
                const std::string& out, std::vector<std::string> ids,
                const std::string& palette_path, double threshold, double alpha) {
    Dataset data = load_dataset(resolve_data(data_dir));
    CheckpointInfo info = read_checkpoint_info(checkpoint);
    if (info.tree_fingerprint != data.tree.fingerprint())
        throw DataError("checkpoint hierarchy fingerprint does not match the dataset");
    auto palette = palette_path.empty() ? default_palette() : parse_palette(palette_path);

    if (ids.empty())
        for (const auto& s : data.samples) ids.push_back(s.id);

    ModelConfig mc;
    mc.backbone = info.backbone;
    mc.restrict_threshold = threshold;
    std::optional<HierModel> hmodel;
    std::optional<BaselineModel> bmodel;
    if (info.variant == "hierarchical") {
        hmodel.emplace(data.tree, mc);
        hmodel->load_checkpoint(checkpoint);
    } else {
        bmodel.emplace(data.tree, mc);
        bmodel->load_checkpoint(checkpoint);
    }

    // Multi-positive pixels resolve to the class earliest in this order.
    std::vector<std::string> order{"Composite", "Enamel", "Pulp", "Dentin", "Upper", "Lower"};
    for (const auto& n : data.tree.nodes)
        if (std::find(order.begin(), order.end(), n.name) == order.end()) order.push_back(n.name);

    fs::create_directories(out);
    for (const auto& id : ids) {
        const Sample& s = data.by_id(id);
        auto pred = hmodel ? predict_masks(*hmodel, image_to_tensor(s.image), threshold)
                           : predict_masks(*bmodel, image_to_tensor(s.image), threshold);
        cv::Mat gray8, bgr;
        s.image.convertTo(gray8, CV_8U, 255.0);
        cv::cvtColor(gray8, bgr, cv::COLOR_GRAY2BGR);
        for (int y = 0; y < bgr.rows; ++y)
            for (int x = 0; x < bgr.cols; ++x) {
                const size_t i = static_cast<size_t>(y) * bgr.cols + x;
                for (const auto& cls : order) {
                    auto color = palette.find(cls);
                    if (color == palette.end()) continue;
                    auto mask = pred.find(cls);
                    if (mask == pred.end() || !mask->second[i]) continue;
                    cv::Vec3b& px = bgr.at<cv::Vec3b>(y, x);
                    for (int ch = 0; ch < 3; ++ch)
                        px[ch] = cv::saturate_cast<uchar>((1.0 - alpha) * px[ch] +
                                                          alpha * color->second[ch]);
                    break;
                }
            }
        cv::imwrite((fs::path(out) / (id + "_overlay.png")).string(), bgr,
                    {cv::IMWRITE_PNG_COMPRESSION, 0});
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical semantic segmentation pipeline"};
    app.require_subcommand(1);

    // prepare
    auto* prep = app.add_subcommand("prepare", "Rasterize polygon annotations into masks, "
                                               "fold manifest and class statistics");
    std::string p_ann, p_out, p_map, p_tree;
    int p_w = 640, p_h = 640, p_folds = 5;
    double p_holdout = 0.10;
    uint64_t p_seed = 0;
    std::vector<std::string> p_priority;
    prep->add_option("--annotations", p_ann, "Directory of VGG-style polygon JSON files")
        ->required();
    prep->add_option("--out", p_out, "Output dataset directory")->required();
    prep->add_option("--class-map", p_map, "class_map.csv path")->required();
    prep->add_option("--class-tree", p_tree, "class_tree.json path")->required();
    prep->add_option("--width", p_w, "Mask width (default 640)");
    prep->add_option("--height", p_h, "Mask height (default 640)");
    prep->add_option("--folds", p_folds, "Cross-validation folds (default 5)");
    prep->add_option("--holdout", p_holdout, "Held-out test fraction (default 0.10)");
    prep->add_option("--seed", p_seed, "Split seed (default 0)");
    prep->add_option("--priority", p_priority,
                     "Overlap priority, high to low (default Composite Enamel Pulp Dentin)");

    // synth
    auto* synth = app.add_subcommand("synth", "Generate the two-level synthetic dataset");
    std::string s_out;
    SyntheticSpec s_spec;
    int s_folds = 5;
    double s_holdout = 0.1;
    synth->add_option("--out", s_out, "Output dataset directory")->required();
    synth->add_option("--images", s_spec.n_images, "Image count (default 20)");
    synth->add_option("--size", s_spec.image_size, "Image size (default 64)");
    synth->add_option("--children", s_spec.n_children, "Child classes, 2-4 (default 4)");
    synth->add_option("--noise", s_spec.noise, "Additive noise sigma (default 0.02)");
    synth->add_option("--seed", s_spec.seed, "Generator seed (default 0)");
    synth->add_option("--folds", s_folds, "Folds in the manifest (default 5)");
    synth->add_option("--holdout", s_holdout, "Test fraction (default 0.1)");

    // train
    auto* train = app.add_subcommand("train", "Train with k-fold cross-validation");
    std::string t_data, t_run, t_config;
    std::string t_variant, t_backbone;
    int t_epochs = -1, t_folds = -1, t_batch = -1, t_max_steps = -1;
    double t_lr = -1;
    int64_t t_seed = -1;
    bool t_no_aug = false;
    train->add_option("--data", t_data, "Prepared dataset directory")->required();
    train->add_option("--run", t_run, "Run output directory")->required();
    train->add_option("--config", t_config, "JSON config file (defaults: lr 0.022, "
                                            "factor 0.5, patience 3, floor 0.001, epochs 80, "
                                            "batch 4, 640x640, weight decay 0.01)");
    train->add_option("--variant", t_variant, "hierarchical | baseline (default hierarchical)");
    train->add_option("--backbone", t_backbone, "Backbone id (default tiny)");
    train->add_option("--epochs", t_epochs, "Override epochs (default 80)");
    train->add_option("--folds", t_folds, "Override fold count (default 5)");
    train->add_option("--batch-size", t_batch, "Override batch size (default 4)");
    train->add_option("--lr", t_lr, "Override starting learning rate (default 0.022)");
    train->add_option("--seed", t_seed, "Override seed (default 0)");
    train->add_option("--max-steps", t_max_steps, "Hard cap on optimizer steps");
    train->add_flag("--no-augment", t_no_aug, "Disable augmentation");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    std::string e_data, e_ckpt, e_split = "val", e_out = ".";
    int e_fold = 0;
    MetricsOptions e_mopts;
    eval->add_option("--data", e_data, "Prepared dataset directory")->required();
    eval->add_option("--checkpoint", e_ckpt, "Checkpoint file")->required();
    eval->add_option("--split", e_split, "val | test (default val)");
    eval->add_option("--fold", e_fold, "Fold index for the val split (default 0)");
    eval->add_option("--out", e_out, "Report output directory (default .)");
    eval->add_option("--threshold", e_mopts.threshold, "Binarization threshold (default 0.5)");
    eval->add_flag("--skip-empty", e_mopts.skip_empty,
                   "Skip 0/0 image-classes instead of scoring 1");

    // overlay
    auto* overlay = app.add_subcommand("overlay", "Render prediction overlays");
    std::string o_data, o_ckpt, o_out, o_palette;
    std::vector<std::string> o_ids;
    double o_threshold = 0.5, o_alpha = 0.5;
    overlay->add_option("--data", o_data, "Prepared dataset directory")->required();
    overlay->add_option("--checkpoint", o_ckpt, "Checkpoint file")->required();
    overlay->add_option("--out", o_out, "Overlay output directory")->required();
    overlay->add_option("--ids", o_ids, "Image ids (default: all)");
    overlay->add_option("--palette", o_palette, "CSV palette override (class,r,g,b)");
    overlay->add_option("--threshold", o_threshold, "Binarization threshold (default 0.5)");
    overlay->add_option("--alpha", o_alpha, "Overlay opacity (default 0.5)");

    try {
        app.parse(argc, argv);

        if (prep->parsed())
            return cmd_prepare(p_ann, p_out, p_map, p_tree, p_w, p_h, p_folds, p_holdout,
                               p_seed, p_priority);
        if (synth->parsed()) {
            write_synthetic(s_spec, s_out, s_folds, s_holdout);
            std::cout << "wrote " << s_spec.n_images << " images to " << s_out << "\n";
            return 0;
        }
        if (train->parsed()) {
            TrainConfig config =
                t_config.empty() ? TrainConfig{} : TrainConfig::from_json(slurp(t_config));
            if (!t_variant.empty()) config.variant = t_variant;
            if (!t_backbone.empty()) config.backbone = t_backbone;
            if (t_epochs >= 0) config.epochs = t_epochs;
            if (t_folds >= 0) config.folds = t_folds;
            if (t_batch >= 0) config.batch_size = t_batch;
            if (t_lr >= 0) config.learning_rate = t_lr;
            if (t_seed >= 0) config.seed = static_cast<uint64_t>(t_seed);
            if (t_max_steps >= 0) config.max_steps = t_max_steps;
            if (t_no_aug) config.augment.enabled = false;
            if (config.variant != "hierarchical" && config.variant != "baseline")
                throw ConfigError("variant must be hierarchical or baseline");
            return cmd_train(t_data, t_run, config);
        }
        if (eval->parsed()) {
            if (e_split != "val" && e_split != "test")
                throw ConfigError("split must be val or test");
            return cmd_eval(e_data, e_ckpt, e_split, e_fold, e_out, e_mopts);
        }
        if (overlay->parsed())
            return cmd_overlay(o_data, o_ckpt, o_out, o_ids, o_palette, o_threshold, o_alpha);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
