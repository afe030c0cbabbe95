#include "hierseg/trainer.hpp"
#include "hierseg/errors.hpp"
#include "hierseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>

namespace fs = std::filesystem;

namespace hierseg {

double lr_step(ScheduleState& state, bool improved) {
    if (improved) {
        state.stall = 0;
    } else if (++state.stall >= state.patience) {
        state.rate = std::max(state.rate * state.factor, state.min_rate);
        state.stall = 0;
    }
    return state.rate;
}

// ----------------------------------------------------------- TrainConfig

std::string TrainConfig::to_json() const {
    nlohmann::ordered_json j;
    j["variant"] = variant;
    j["backbone"] = backbone;
    j["learning_rate"] = learning_rate;
    j["schedule_factor"] = schedule_factor;
    j["schedule_patience"] = schedule_patience;
    j["schedule_min_lr"] = schedule_min_lr;
    j["schedule_tolerance"] = schedule_tolerance;
    j["schedule_on_validation"] = schedule_on_validation;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["image_size"] = image_size;
    j["weight_decay"] = weight_decay;
    j["seed"] = seed;
    j["deterministic"] = deterministic;
    j["folds"] = folds;
    if (max_steps) j["max_steps"] = *max_steps;
    j["augment_enabled"] = augment.enabled;
    j["dice_eps"] = dice_eps;
    j["ce_delta"] = ce_delta;
    j["ce_mean"] = ce_mean;
    j["root_binary_ce"] = root_binary_ce;
    j["restrict_threshold"] = restrict_threshold;
    j["composition_eps"] = composition_eps;
    j["level_softmax"] = level_softmax;
    j["consistency_on_restricted"] = consistency_on_restricted;
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    TrainConfig c;
    std::set<std::string> known{
        "variant", "backbone", "learning_rate", "schedule_factor", "schedule_patience",
        "schedule_min_lr", "schedule_tolerance", "schedule_on_validation", "epochs",
        "batch_size", "image_size", "weight_decay", "seed", "deterministic", "folds",
        "max_steps", "augment_enabled", "dice_eps", "ce_delta", "ce_mean", "root_binary_ce",
        "restrict_threshold", "composition_eps", "level_softmax", "consistency_on_restricted"};
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key)) throw ConfigError("config: unknown key: " + key);
    }
    auto get = [&](const char* key, auto& dst) {
        if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
    };
    get("variant", c.variant);
    get("backbone", c.backbone);
    get("learning_rate", c.learning_rate);
    get("schedule_factor", c.schedule_factor);
    get("schedule_patience", c.schedule_patience);
    get("schedule_min_lr", c.schedule_min_lr);
    get("schedule_tolerance", c.schedule_tolerance);
    get("schedule_on_validation", c.schedule_on_validation);
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("image_size", c.image_size);
    get("weight_decay", c.weight_decay);
    get("seed", c.seed);
    get("deterministic", c.deterministic);
    get("folds", c.folds);
    if (j.contains("max_steps")) c.max_steps = j.at("max_steps").get<int>();
    get("augment_enabled", c.augment.enabled);
    get("dice_eps", c.dice_eps);
    get("ce_delta", c.ce_delta);
    get("ce_mean", c.ce_mean);
    get("root_binary_ce", c.root_binary_ce);
    get("restrict_threshold", c.restrict_threshold);
    get("composition_eps", c.composition_eps);
    get("level_softmax", c.level_softmax);
    get("consistency_on_restricted", c.consistency_on_restricted);
    if (c.variant != "hierarchical" && c.variant != "baseline")
        throw ConfigError("config: variant must be hierarchical or baseline");
    if (c.epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (c.schedule_min_lr > c.learning_rate)
        throw ConfigError("config: schedule_min_lr exceeds the starting learning rate");
    return c;
}

ModelConfig TrainConfig::model_config() const {
    ModelConfig m;
    m.backbone = backbone;
    m.restrict_threshold = restrict_threshold;
    m.composition_eps = composition_eps;
    m.softmax_scope = level_softmax ? SoftmaxScope::Level : SoftmaxScope::ParentGroup;
    m.seed = seed;
    return m;
}

// --------------------------------------------------------------- Dataset

const Sample& Dataset::by_id(const std::string& id) const {
    for (const auto& s : samples)
        if (s.id == id) return s;
    throw DataError("no sample with id " + id);
}

std::vector<std::string> Dataset::all_class_names() const {
    std::vector<std::string> out;
    for (const auto& n : tree.nodes) out.push_back(n.name);
    return out;
}

namespace {
std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}
} // namespace

Dataset load_dataset(const std::string& dir) {
    Dataset data;
    data.tree = parse_class_tree(slurp(fs::path(dir) / "class_tree.json"),
                                 parse_class_map(slurp(fs::path(dir) / "class_map.csv")));
    data.folds = parse_fold_manifest(slurp(fs::path(dir) / "folds.csv"));

    std::vector<std::string> ids = data.folds.test_ids;
    for (const auto& fold : data.folds.val_ids) ids.insert(ids.end(), fold.begin(), fold.end());
    std::sort(ids.begin(), ids.end());

    for (const auto& id : ids) {
        Sample s;
        s.id = id;
        fs::path img_path = fs::path(dir) / "images" / (id + ".png");
        cv::Mat img = cv::imread(img_path.string(), cv::IMREAD_GRAYSCALE);
        if (img.empty()) throw DataError("cannot read image " + img_path.string());
        img.convertTo(s.image, CV_32F, 1.0 / 255.0);
        s.mask = read_mask_png((fs::path(dir) / "masks" / (id + ".png")).string(), data.tree);
        data.samples.push_back(std::move(s));
    }
    return data;
}

Tensor image_to_tensor(const cv::Mat& image) {
    Tensor t(1, image.rows, image.cols);
    for (int y = 0; y < image.rows; ++y)
        for (int x = 0; x < image.cols; ++x)
            t.v[static_cast<size_t>(y) * image.cols + x] = image.at<float>(y, x);
    return t;
}

// ------------------------------------------------------------ sample pass

LossBreakdown hier_sample_pass(HierModel& model, const Tensor& image,
                               const HierTargetStack& targets, const LossWeights& weights,
                               const TrainConfig& config, bool learn, double grad_scale) {
    ForwardTrace trace = model.forward(image);
    const ClassTree& tree = model.tree();
    const int levels = tree.num_levels();
    const size_t n = trace.levels[0].probs.plane();

    std::vector<const float*> p_levels;
    std::vector<const int8_t*> y_levels;
    std::vector<std::vector<float>> w_levels;
    std::vector<size_t> c_counts;
    std::vector<Tensor> dprobs;
    std::vector<float*> dp_ptrs;
    for (int l = 0; l < levels; ++l) {
        p_levels.push_back(trace.levels[l].probs.data());
        y_levels.push_back(targets.planes[l].data());
        std::vector<float> w(weights.per_level[l].begin(), weights.per_level[l].end());
        w_levels.push_back(std::move(w));
        c_counts.push_back(tree.levels[l].size());
        dprobs.emplace_back(trace.levels[l].probs.c, trace.levels[l].probs.h,
                            trace.levels[l].probs.w);
    }
    for (auto& d : dprobs) dp_ptrs.push_back(d.data());

    LossOptions<float> opts;
    opts.dice_eps = static_cast<float>(config.dice_eps);
    opts.ce_delta = static_cast<float>(config.ce_delta);
    opts.ce_mean = config.ce_mean;
    opts.root_binary_ce = config.root_binary_ce;

    LossBreakdown breakdown =
        whl<float>(p_levels, y_levels, w_levels, c_counts, n, opts, learn ? &dp_ptrs : nullptr);

    auto groups = parent_group_layout(tree);
    if (!groups.empty()) {
        if (config.consistency_on_restricted) {
            // Gradients land on restricted probabilities, then fold through
            // the restriction mask onto the raw ones.
            std::vector<const float*> pr;
            std::vector<Tensor> dr;
            std::vector<float*> dr_ptrs;
            for (int l = 0; l < levels; ++l) {
                pr.push_back(trace.levels[l].probs_restricted.data());
                dr.emplace_back(dprobs[l].c, dprobs[l].h, dprobs[l].w);
            }
            for (auto& d : dr) dr_ptrs.push_back(d.data());
            breakdown.consistency = static_cast<double>(
                consistency_loss<float>(pr, groups, n, learn ? &dr_ptrs : nullptr));
            if (learn) {
                const float thr = static_cast<float>(config.restrict_threshold);
                for (int l = 1; l < levels; ++l) {
                    const Tensor& pparent = trace.levels[l - 1].probs_restricted;
                    for (int c = 0; c < dr[l].c; ++c) {
                        const std::string& cls = tree.levels[l][c];
                        int pi = tree.index_in_level(*tree.node(cls).parent);
                        restrict_backward(pparent.data() + static_cast<size_t>(pi) * n, thr,
                                          dr[l].data() + static_cast<size_t>(c) * n, n);
                    }
                }
                for (int l = 0; l < levels; ++l)
                    for (size_t i = 0; i < dprobs[l].v.size(); ++i)
                        dprobs[l].v[i] += dr[l].v[i];
            }
        } else {
            breakdown.consistency = static_cast<double>(
                consistency_loss<float>(p_levels, groups, n, learn ? &dp_ptrs : nullptr));
        }
    }

    if (learn) {
        if (grad_scale != 1.0)
            for (auto& d : dprobs)
                for (auto& v : d.v) v *= static_cast<float>(grad_scale);
        model.backward(trace, dprobs);
    }
    return breakdown;
}

LossBreakdown baseline_sample_pass(BaselineModel& model, const Tensor& image,
                                   const SemanticMask& mask, const std::vector<double>& weights,
                                   const TrainConfig& config, bool learn, double grad_scale) {
    BaselineModel::Trace trace = model.forward(image);
    const auto& leaves = model.leaf_classes();
    const size_t n = trace.probs.plane();
    const int c_count = static_cast<int>(leaves.size());

    // Flat one-hot targets over the leaf output set.
    std::vector<int8_t> y(static_cast<size_t>(c_count) * n, 0);
    std::map<int, int> value_to_index;
    for (int c = 0; c < c_count; ++c)
        value_to_index[*model.tree().node(leaves[c]).pixel_value] = c;
    for (size_t i = 0; i < n; ++i)
        y[static_cast<size_t>(value_to_index.at(mask.data[i])) * n + i] = 1;

    std::vector<float> w(weights.begin(), weights.end());
    Tensor dprobs(c_count, trace.probs.h, trace.probs.w);
    float* dp = learn ? dprobs.data() : nullptr;

    LossBreakdown breakdown;
    breakdown.dice_per_level.push_back(static_cast<double>(
        hier_dice<float>(trace.probs.data(), y.data(), w.data(), c_count, n,
                         static_cast<float>(config.dice_eps), dp)));
    breakdown.ce_per_level.push_back(static_cast<double>(
        hier_ce<float>(trace.probs.data(), y.data(), w.data(), c_count, n,
                       static_cast<float>(config.ce_delta), config.ce_mean, false, dp)));
    if (learn) {
        if (grad_scale != 1.0)
            for (auto& v : dprobs.v) v *= static_cast<float>(grad_scale);
        model.backward(trace, dprobs);
    }
    return breakdown;
}

// ------------------------------------------------------------- prediction

std::map<std::string, std::vector<uint8_t>> predict_masks(HierModel& model, const Tensor& image,
                                                          double threshold) {
    ForwardTrace trace = model.forward(image);
    const ClassTree& tree = model.tree();
    std::map<std::string, std::vector<uint8_t>> out;
    for (int l = 0; l < tree.num_levels(); ++l) {
        auto masks = binarize_level(trace.levels[l].probs_restricted, threshold);
        for (size_t c = 0; c < masks.size(); ++c)
            out[tree.levels[l][c]] = std::move(masks[c]);
    }
    return out;
}

std::map<std::string, std::vector<uint8_t>> predict_masks(BaselineModel& model,
                                                          const Tensor& image,
                                                          double threshold) {
    BaselineModel::Trace trace = model.forward(image);
    std::map<std::string, std::vector<uint8_t>> out;
    auto masks = binarize_level(trace.probs, threshold);
    for (size_t c = 0; c < masks.size(); ++c)
        out[model.leaf_classes()[c]] = std::move(masks[c]);
    // Parent classes score as the union of their children.
    add_parent_unions(out, model.tree());
    return out;
}

namespace {
template <typename Model>
std::vector<ImageRecord> evaluate_split_impl(Model& model, const Dataset& data,
                                             const std::vector<std::string>& ids, int fold,
                                             const MetricsOptions& opts) {
    std::vector<ImageRecord> records;
    for (const auto& id : ids) {
        const Sample& s = data.by_id(id);
        auto pred = predict_masks(model, image_to_tensor(s.image), opts.threshold);
        HierTargetStack targets = mask_to_hier_targets(s.mask, data.tree);
        auto counts = evaluate_image(pred, targets, data.tree);
        ImageRecord rec;
        rec.image_id = id;
        rec.fold = fold;
        for (const auto& [cls, c] : counts) {
            rec.per_class[cls] = metrics_from_counts(c);
            rec.defined[cls] = !(opts.skip_empty && counts_empty(c));
        }
        records.push_back(std::move(rec));
    }
    return records;
}
} // namespace

std::vector<ImageRecord> evaluate_split(HierModel& model, const Dataset& data,
                                        const std::vector<std::string>& ids, int fold,
                                        const MetricsOptions& opts) {
    return evaluate_split_impl(model, data, ids, fold, opts);
}

std::vector<ImageRecord> evaluate_split(BaselineModel& model, const Dataset& data,
                                        const std::vector<std::string>& ids, int fold,
                                        const MetricsOptions& opts) {
    return evaluate_split_impl(model, data, ids, fold, opts);
}

// -------------------------------------------------------------- training

namespace {

double mean_iou_of(const std::vector<ImageRecord>& records) {
    double acc = 0;
    int count = 0;
    for (const auto& r : records)
        for (const auto& [cls, m] : r.per_class) {
            (void)cls;
            acc += m.iou;
            ++count;
        }
    return count ? acc / count : 0.0;
}

uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0) {
    uint64_t h = seed;
    h ^= (a + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2));
    h ^= (b + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2));
    return h;
}

} // namespace

RunRecord train_fold(const Dataset& data, int fold, const TrainConfig& config,
                     const std::string& run_dir) {
    if (fold < 0 || fold >= static_cast<int>(data.folds.val_ids.size()))
        throw ConfigError("fold index out of range");
    const auto& train_ids = data.folds.train_ids[fold];
    const auto& val_ids = data.folds.val_ids[fold];
    if (train_ids.empty() || val_ids.empty())
        throw DataError("fold " + std::to_string(fold) + " has an empty split");

    fs::path fold_dir = fs::path(run_dir) / ("fold_" + std::to_string(fold));
    fs::create_directories(fold_dir);

    // Class weights come from this fold's training split only.
    LossWeights weights;
    std::vector<double> flat_weights;
    const bool hier = config.variant == "hierarchical";
    if (hier) {
        std::vector<HierTargetStack> targets;
        for (const auto& id : train_ids)
            targets.push_back(mask_to_hier_targets(data.by_id(id).mask, data.tree));
        weights = compute_class_weights(targets, data.tree);
    } else {
        std::vector<SemanticMask> masks;
        for (const auto& id : train_ids) masks.push_back(data.by_id(id).mask);
        flat_weights = compute_flat_class_weights(masks, data.tree);
    }

    ModelConfig mc = config.model_config();
    mc.seed = mix_seed(config.seed, static_cast<uint64_t>(fold));
    std::optional<HierModel> hmodel;
    std::optional<BaselineModel> bmodel;
    std::vector<Param*> params;
    if (hier) {
        hmodel.emplace(data.tree, mc);
        params = hmodel->params();
    } else {
        bmodel.emplace(data.tree, mc);
        params = bmodel->params();
    }
    AdamW opt(params, config.learning_rate, config.weight_decay);
    ScheduleState sched{config.learning_rate, 0, config.schedule_factor,
                        config.schedule_patience, config.schedule_min_lr};
    double sched_best = std::numeric_limits<double>::infinity();

    RunRecord record;
    std::ofstream log(fold_dir / "log.csv");
    log << "epoch,lr,train_total,train_dice,train_ce,train_consistency,val_mean_iou\n";
    const std::string ckpt = (fold_dir / "best.ckpt").string();
    MetricsOptions mopts;
    mopts.threshold = config.restrict_threshold;

    int steps = 0;
    bool stop = false;
    for (int epoch = 0; epoch < config.epochs && !stop; ++epoch) {
        std::vector<std::string> order = train_ids;
        std::mt19937_64 shuffle_rng(mix_seed(config.seed, fold, 1000 + epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        std::mt19937_64 aug_rng(mix_seed(config.seed, fold, 2000000 + epoch));

        double e_total = 0, e_dice = 0, e_ce = 0, e_cons = 0;
        int e_samples = 0;
        for (size_t start = 0; start < order.size() && !stop; start += config.batch_size) {
            size_t end = std::min(order.size(), start + config.batch_size);
            opt.zero_grad();
            double b_total = 0;
            std::string batch_ids;
            for (size_t bi = start; bi < end; ++bi) {
                const Sample& s = data.by_id(order[bi]);
                batch_ids += (batch_ids.empty() ? "" : ",") + s.id;
                cv::Mat image = s.image.clone();
                LossBreakdown lb;
                const double scale = 1.0 / static_cast<double>(end - start);
                if (hier) {
                    HierTargetStack targets = mask_to_hier_targets(s.mask, data.tree);
                    augment(image, targets, data.tree, config.augment, aug_rng);
                    lb = hier_sample_pass(*hmodel, image_to_tensor(image), targets, weights,
                                          config, true, scale);
                } else {
                    SemanticMask mask = s.mask;
                    augment(image, mask, config.augment, aug_rng);
                    lb = baseline_sample_pass(*bmodel, image_to_tensor(image), mask,
                                              flat_weights, config, true, scale);
                }
                double total = lb.total();
                if (!std::isfinite(total))
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                                       " in batch [" + batch_ids + "]");
                b_total += total;
                e_total += total;
                for (double v : lb.dice_per_level) e_dice += v;
                for (double v : lb.ce_per_level) e_ce += v;
                e_cons += lb.consistency;
                ++e_samples;
            }
            opt.set_lr(sched.rate);
            opt.step();
            record.step_losses.push_back(b_total / static_cast<double>(end - start));
            if (config.max_steps && ++steps >= *config.max_steps) stop = true;
        }
        if (e_samples == 0) break;
        e_total /= e_samples;
        e_dice /= e_samples;
        e_ce /= e_samples;
        e_cons /= e_samples;

        double val_miou;
        if (hier)
            val_miou = mean_iou_of(evaluate_split(*hmodel, data, val_ids, fold, mopts));
        else
            val_miou = mean_iou_of(evaluate_split(*bmodel, data, val_ids, fold, mopts));

        if (val_miou > record.best_val_iou) {
            record.best_val_iou = val_miou;
            record.best_epoch = epoch;
            if (hier)
                hmodel->save_checkpoint(ckpt);
            else
                bmodel->save_checkpoint(ckpt);
            record.checkpoint_path = ckpt;
        }

        EpochRecord er{epoch, sched.rate, e_total, e_dice, e_ce, e_cons, val_miou};
        record.epochs.push_back(er);
        log << epoch << "," << sched.rate << "," << e_total << "," << e_dice << "," << e_ce
            << "," << e_cons << "," << val_miou << "\n";
        log.flush();

        const double sched_metric = config.schedule_on_validation ? -val_miou : e_total;
        const bool improved = sched_metric < sched_best - config.schedule_tolerance;
        if (improved) sched_best = sched_metric;
        lr_step(sched, improved);
    }

    std::ofstream(fold_dir / "done") << "ok\n";
    return record;
}

CvResult run_cv(const Dataset& data, const TrainConfig& config, const std::string& run_dir) {
    fs::create_directories(run_dir);
    std::ofstream(fs::path(run_dir) / "config.json") << config.to_json();
    std::ofstream(fs::path(run_dir) / "folds.csv") << fold_manifest_csv(data.folds);

    const int k = std::min<int>(config.folds, static_cast<int>(data.folds.val_ids.size()));
    CvResult result;
    const bool hier = config.variant == "hierarchical";
    MetricsOptions mopts;
    mopts.threshold = config.restrict_threshold;

    std::vector<ImageRecord> val_records, test_records;
    for (int fold = 0; fold < k; ++fold) {
        fs::path fold_dir = fs::path(run_dir) / ("fold_" + std::to_string(fold));
        RunRecord record;
        if (fs::exists(fold_dir / "done") && fs::exists(fold_dir / "best.ckpt")) {
            record.checkpoint_path = (fold_dir / "best.ckpt").string(); // resume
        } else {
            record = train_fold(data, fold, config, run_dir);
        }
        if (record.checkpoint_path.empty())
            throw DataError("missing fold checkpoint for fold " + std::to_string(fold));

        ModelConfig mc = config.model_config();
        mc.seed = mix_seed(config.seed, static_cast<uint64_t>(fold));
        if (hier) {
            HierModel model(data.tree, mc);
            model.load_checkpoint(record.checkpoint_path);
            auto v = evaluate_split(model, data, data.folds.val_ids[fold], fold, mopts);
            auto t = evaluate_split(model, data, data.folds.test_ids, fold, mopts);
            val_records.insert(val_records.end(), v.begin(), v.end());
            test_records.insert(test_records.end(), t.begin(), t.end());
        } else {
            BaselineModel model(data.tree, mc);
            model.load_checkpoint(record.checkpoint_path);
            auto v = evaluate_split(model, data, data.folds.val_ids[fold], fold, mopts);
            auto t = evaluate_split(model, data, data.folds.test_ids, fold, mopts);
            val_records.insert(val_records.end(), v.begin(), v.end());
            test_records.insert(test_records.end(), t.begin(), t.end());
        }
        result.folds.push_back(std::move(record));
    }

    auto classes = data.all_class_names();
    result.validation = aggregate(val_records, classes);
    if (!test_records.empty()) result.test = aggregate(test_records, classes);

    std::ofstream(fs::path(run_dir) / "validation_report.csv") << report_to_csv(result.validation);
    std::ofstream(fs::path(run_dir) / "validation_per_image.csv")
        << per_image_csv(result.validation);
    if (!test_records.empty()) {
        std::ofstream(fs::path(run_dir) / "test_report.csv") << report_to_csv(result.test);
        std::ofstream(fs::path(run_dir) / "test_per_image.csv") << per_image_csv(result.test);
    }
    return result;
}

} // namespace hierseg
