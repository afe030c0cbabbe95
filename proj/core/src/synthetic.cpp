#include "hierseg/synthetic.hpp"
#include "hierseg/errors.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

namespace hierseg {

namespace {

std::string part_name(int i) { return "Part" + std::to_string(i + 1); }

std::pair<std::string, std::string> tree_files(int n_children) {
    std::ostringstream map;
    map << "Background,0\n";
    for (int i = 0; i < n_children; ++i) map << part_name(i) << "," << i + 1 << "\n";
    std::ostringstream tree;
    tree << "{\"Background\": {}, \"Blob\": {";
    for (int i = 0; i < n_children; ++i)
        tree << (i ? ", " : "") << "\"" << part_name(i) << "\": {}";
    tree << "}}";
    return {map.str(), tree.str()};
}

} // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.n_children < 1 || spec.n_children > 4)
        throw ConfigError("synthetic: n_children must be in [1,4]");
    auto [map_csv, tree_json] = tree_files(spec.n_children);

    SyntheticDataset out;
    out.tree = parse_class_tree(tree_json, parse_class_map(map_csv));

    std::mt19937_64 rng(spec.seed);
    const int s = spec.image_size;
    auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    std::normal_distribution<double> noise(0.0, spec.noise);

    for (int img = 0; img < spec.n_images; ++img) {
        char id[16];
        std::snprintf(id, sizeof(id), "img%03d", img);
        out.ids.emplace_back(id);

        SemanticMask mask;
        mask.width = s;
        mask.height = s;
        mask.data.assign(static_cast<size_t>(s) * s, 0);

        // Parent rectangle covering 40-70% of each dimension.
        int bw = uni(s * 2 / 5, s * 7 / 10);
        int bh = uni(s * 2 / 5, s * 7 / 10);
        int bx = uni(1, s - bw - 1);
        int by = uni(1, s - bh - 1);
        // Children as vertical strips exactly partitioning the parent.
        std::vector<int> cuts{bx};
        for (int i = 1; i < spec.n_children; ++i)
            cuts.push_back(bx + i * bw / spec.n_children);
        cuts.push_back(bx + bw);

        cv::Mat image(s, s, CV_32F, cv::Scalar(0.10f));
        for (int c = 0; c < spec.n_children; ++c) {
            float intensity = spec.n_children == 1
                                  ? 0.65f
                                  : 0.35f + 0.6f * static_cast<float>(c) / (spec.n_children - 1);
            for (int y = by; y < by + bh; ++y)
                for (int x = cuts[c]; x < cuts[c + 1]; ++x) {
                    mask.at(y, x) = c + 1;
                    image.at<float>(y, x) = intensity;
                }
        }
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                float v = image.at<float>(y, x) + static_cast<float>(noise(rng));
                image.at<float>(y, x) = std::clamp(v, 0.f, 1.f);
            }
        out.images.push_back(image);
        out.masks.push_back(std::move(mask));
    }
    return out;
}

void write_synthetic(const SyntheticSpec& spec, const std::string& out_dir, int folds,
                     double holdout_fraction) {
    namespace fs = std::filesystem;
    SyntheticDataset data = generate_synthetic(spec);
    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "masks");

    auto [map_csv, tree_json] = tree_files(spec.n_children);
    std::ofstream((fs::path(out_dir) / "class_map.csv")) << map_csv;
    std::ofstream((fs::path(out_dir) / "class_tree.json")) << tree_json;

    for (size_t i = 0; i < data.ids.size(); ++i) {
        cv::Mat img8;
        data.images[i].convertTo(img8, CV_8U, 255.0);
        cv::imwrite((fs::path(out_dir) / "images" / (data.ids[i] + ".png")).string(), img8,
                    {cv::IMWRITE_PNG_COMPRESSION, 0});
        write_mask_png((fs::path(out_dir) / "masks" / (data.ids[i] + ".png")).string(),
                       data.masks[i]);
    }
    FoldSplit split = make_folds(data.ids, folds, holdout_fraction, spec.seed);
    std::ofstream((fs::path(out_dir) / "folds.csv")) << fold_manifest_csv(split);
}

} // namespace hierseg
