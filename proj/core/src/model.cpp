#include "hierseg/model.hpp"
#include "hierseg/errors.hpp"

#include <cstring>
#include <fstream>

namespace hierseg {

// ---------------------------------------------------------------- TinyUNet

namespace {
struct TinyCache : BackboneCache {
    Conv2d::Cache c1, c2, c3, c4, c5;
    PoolCache p1, p2;
    Tensor a1, a2, a3, d2, f;
    int h = 0, w = 0;
};
} // namespace

TinyUNet::TinyUNet()
    : enc1_(8, 24, 3, "trunk.enc1"), enc2_(24, 48, 3, "trunk.enc2"),
      bott_(48, 64, 3, "trunk.bott"), dec2_(112, 24, 3, "trunk.dec2"),
      dec1_(48, 8, 3, "trunk.dec1") {}

std::unique_ptr<BackboneCache> TinyUNet::make_cache() const {
    return std::make_unique<TinyCache>();
}

Tensor TinyUNet::forward(const Tensor& x, BackboneCache& cache) {
    auto& c = static_cast<TinyCache&>(cache);
    c.h = x.h;
    c.w = x.w;
    c.a1 = relu_forward(enc1_.forward(x, c.c1));
    Tensor p1 = maxpool2_forward(c.a1, c.p1);
    c.a2 = relu_forward(enc2_.forward(p1, c.c2));
    Tensor p2 = maxpool2_forward(c.a2, c.p2);
    c.a3 = relu_forward(bott_.forward(p2, c.c3));
    Tensor cat2 = concat_channels(upsample2_forward(c.a3), c.a2);
    c.d2 = relu_forward(dec2_.forward(cat2, c.c4));
    Tensor cat1 = concat_channels(upsample2_forward(c.d2), c.a1);
    c.f = relu_forward(dec1_.forward(cat1, c.c5));
    return c.f;
}

Tensor TinyUNet::backward(const Tensor& dfeat, BackboneCache& cache) {
    auto& c = static_cast<TinyCache&>(cache);
    Tensor df = relu_backward(c.f, dfeat);
    Tensor dcat1 = dec1_.backward(df, c.c5);
    Tensor du1(c.d2.c, c.h, c.w), da1(c.a1.c, c.h, c.w);
    split_channels(dcat1, du1, da1);
    Tensor dd2 = relu_backward(c.d2, upsample2_backward(du1));
    Tensor dcat2 = dec2_.backward(dd2, c.c4);
    Tensor du2(c.a3.c, c.h / 2, c.w / 2), da2(c.a2.c, c.h / 2, c.w / 2);
    split_channels(dcat2, du2, da2);
    Tensor da3 = relu_backward(c.a3, upsample2_backward(du2));
    Tensor dp2 = bott_.backward(da3, c.c3);
    Tensor da2_pool = maxpool2_backward(dp2, c.p2, c.h / 2, c.w / 2);
    for (size_t i = 0; i < da2.v.size(); ++i) da2.v[i] += da2_pool.v[i];
    Tensor dp1 = enc2_.backward(relu_backward(c.a2, da2), c.c2);
    Tensor da1_pool = maxpool2_backward(dp1, c.p1, c.h, c.w);
    for (size_t i = 0; i < da1.v.size(); ++i) da1.v[i] += da1_pool.v[i];
    return enc1_.backward(relu_backward(c.a1, da1), c.c1);
}

std::vector<Param*> TinyUNet::params() {
    return {&enc1_.weight, &enc1_.bias, &enc2_.weight, &enc2_.bias,
            &bott_.weight, &bott_.bias, &dec2_.weight, &dec2_.bias,
            &dec1_.weight, &dec1_.bias};
}

void TinyUNet::init(std::mt19937_64& rng) {
    enc1_.init_he(rng);
    enc2_.init_he(rng);
    bott_.init_he(rng);
    dec2_.init_he(rng);
    dec1_.init_he(rng);
}

std::unique_ptr<Backbone> make_backbone(const std::string& id) {
    if (id == "tiny") return std::make_unique<TinyUNet>();
    throw ConfigError("unknown backbone id: " + id +
                      " (donor trunks integrate behind the Backbone contract)");
}

// --------------------------------------------------------------- HierModel

HierModel::HierModel(const ClassTree& tree, const ModelConfig& config)
    : tree_(tree), config_(config), backbone_(make_backbone(config.backbone)) {
    const int levels = tree_.num_levels();
    if (levels == 0) throw DataError("hierarchical model needs at least one level");
    const int bb_in = backbone_->input_channels();
    const int feat = backbone_->feature_channels();

    for (int l = 0; l < levels; ++l) {
        const int c_count = static_cast<int>(tree_.levels[l].size());
        const int in_ch = l == 0 ? 1 : 1 + static_cast<int>(tree_.levels[l - 1].size());
        adapters_.emplace_back(in_ch, bb_in, 1, "adapter" + std::to_string(l));
        heads_.emplace_back(feat, c_count, 1, "head" + std::to_string(l));
        if (l > 0) {
            const int c_prev = static_cast<int>(tree_.levels[l - 1].size());
            film_in_.emplace_back(c_prev, feat, "film" + std::to_string(l) + ".in");
            film_out_.emplace_back(feat, 2 * feat, "film" + std::to_string(l) + ".out");
            std::vector<int> parent_of(c_count, -1);
            std::vector<std::pair<int, std::vector<int>>> groups;
            for (const auto& [parent, children] : tree_.parent_groups[l]) {
                std::pair<int, std::vector<int>> g{tree_.index_in_level(parent), {}};
                for (const auto& c : children) {
                    int ci = tree_.index_in_level(c);
                    g.second.push_back(ci);
                    parent_of[ci] = g.first;
                }
                groups.push_back(std::move(g));
            }
            for (int ci = 0; ci < c_count; ++ci)
                if (parent_of[ci] < 0)
                    throw DataError("class " + tree_.levels[l][ci] + " has no parent group");
            parent_of_.push_back(std::move(parent_of));
            groups_.push_back(std::move(groups));
        }
    }

    std::mt19937_64 rng(config_.seed);
    backbone_->init(rng);
    for (auto& a : adapters_) a.init_he(rng);
    for (auto& h : heads_) h.init_he(rng);
    for (auto& f : film_in_) f.init_he(rng);
    // film_out_ stays zero-initialized: gamma = 1 + 0, beta = 0 at the start,
    // so FiLM begins as the identity.
}

void HierModel::film_apply(int level, LevelTrace& lt) {
    const int feat = backbone_->feature_channels();
    const size_t n = lt.features.plane();
    Linear& fin = film_in_[level - 1];
    Linear& fout = film_out_[level - 1];

    lt.film_hidden = fin.forward(lt.film_summary);
    for (auto& v : lt.film_hidden) v = v > 0.f ? v : 0.f;
    lt.film_out = fout.forward(lt.film_hidden);
    lt.film_gamma.resize(feat);
    lt.film_beta.resize(feat);
    for (int f = 0; f < feat; ++f) {
        lt.film_gamma[f] = 1.f + lt.film_out[f];
        lt.film_beta[f] = lt.film_out[feat + f];
    }
    lt.features_film = Tensor(feat, lt.features.h, lt.features.w);
    for (int f = 0; f < feat; ++f)
        for (size_t i = 0; i < n; ++i)
            lt.features_film.v[f * n + i] =
                lt.film_gamma[f] * lt.features.v[f * n + i] + lt.film_beta[f];
}

ForwardTrace HierModel::forward(const Tensor& image) {
    const int levels = tree_.num_levels();
    ForwardTrace trace;
    trace.levels.resize(levels);
    const float thr = static_cast<float>(config_.restrict_threshold);
    const float eps = static_cast<float>(config_.composition_eps);

    for (int l = 0; l < levels; ++l) {
        LevelTrace& lt = trace.levels[l];
        if (l == 0) {
            lt.adapter_in = image;
        } else {
            // Recurrent feedback: original image + previous level's
            // (restriction-filtered) pre-activation logits.
            lt.adapter_in = concat_channels(image, trace.levels[l - 1].logits_restricted);
        }
        Tensor x = adapters_[l].forward(lt.adapter_in, lt.adapter_cache);
        lt.backbone_cache = backbone_->make_cache();
        lt.features = backbone_->forward(x, *lt.backbone_cache);

        const size_t n = lt.features.plane();
        if (l > 0) {
            // Conditioning summary: spatial mean of each parent-probability
            // plane from the previous level's (restricted) output.
            const Tensor& pprev = trace.levels[l - 1].probs_restricted;
            lt.film_summary.assign(pprev.c, 0.f);
            for (int c = 0; c < pprev.c; ++c) {
                double acc = 0.0;
                for (size_t i = 0; i < n; ++i) acc += pprev.v[c * n + i];
                lt.film_summary[c] = static_cast<float>(acc / static_cast<double>(n));
            }
            film_apply(l, lt);
        } else {
            lt.features_film = lt.features;
        }

        lt.logits = heads_[l].forward(lt.features_film, lt.head_cache);
        const int c_count = lt.logits.c;
        lt.probs = Tensor(c_count, lt.logits.h, lt.logits.w);
        if (l == 0) {
            sigmoid_forward(lt.logits.data(), lt.probs.data(), lt.logits.size());
        } else {
            const Tensor& pparent = trace.levels[l - 1].probs_restricted;
            lt.q = Tensor(c_count, lt.logits.h, lt.logits.w);
            if (config_.softmax_scope == SoftmaxScope::Level) {
                level_softmax(lt.logits.data(), pparent.data(), parent_of_[l - 1].data(),
                              lt.q.data(), c_count, n, eps);
            } else {
                for (const auto& [pi, children] : groups_[l - 1]) {
                    // gather group block, softmax, scatter
                    Tensor zg(static_cast<int>(children.size()), lt.logits.h, lt.logits.w);
                    for (size_t gi = 0; gi < children.size(); ++gi)
                        std::copy_n(lt.logits.data() + static_cast<size_t>(children[gi]) * n, n,
                                    zg.data() + gi * n);
                    Tensor qg(zg.c, zg.h, zg.w);
                    conditional_softmax(zg.data(), pparent.data() + static_cast<size_t>(pi) * n,
                                        qg.data(), children.size(), n, eps);
                    for (size_t gi = 0; gi < children.size(); ++gi)
                        std::copy_n(qg.data() + gi * n, n,
                                    lt.q.data() + static_cast<size_t>(children[gi]) * n);
                }
            }
            for (int c = 0; c < c_count; ++c) {
                const float* pp = pparent.data() + static_cast<size_t>(parent_of_[l - 1][c]) * n;
                for (size_t i = 0; i < n; ++i)
                    lt.probs.v[c * n + i] = pp[i] * lt.q.v[c * n + i];
            }
        }

        lt.logits_restricted = lt.logits;
        lt.probs_restricted = lt.probs;
        if (l > 0) {
            const Tensor& pparent = trace.levels[l - 1].probs_restricted;
            for (int c = 0; c < c_count; ++c) {
                const float* pp = pparent.data() + static_cast<size_t>(parent_of_[l - 1][c]) * n;
                restrict_channel(pp, thr, lt.probs_restricted.data() + c * n,
                                 lt.logits_restricted.data() + c * n, n);
            }
        }
    }
    return trace;
}

void HierModel::backward(const ForwardTrace& trace, std::vector<Tensor>& dprobs) {
    const int levels = tree_.num_levels();
    const float thr = static_cast<float>(config_.restrict_threshold);
    const float eps = static_cast<float>(config_.composition_eps);
    const int feat = backbone_->feature_channels();

    std::vector<Tensor> dz(levels);
    for (int l = 0; l < levels; ++l)
        dz[l] = Tensor(trace.levels[l].logits.c, trace.levels[l].logits.h,
                       trace.levels[l].logits.w);

    for (int l = levels - 1; l >= 1; --l) {
        const LevelTrace& lt = trace.levels[l];
        const Tensor& pparent = trace.levels[l - 1].probs_restricted;
        const size_t n = lt.probs.plane();
        const int c_count = lt.probs.c;

        // Gradient that lands on the restricted parent probabilities from
        // this level's composition and FiLM paths.
        Tensor dpparent(pparent.c, pparent.h, pparent.w);

        if (config_.softmax_scope == SoftmaxScope::Level) {
            Tensor dq(c_count, lt.probs.h, lt.probs.w);
            for (int c = 0; c < c_count; ++c) {
                const float* pp = pparent.data() + static_cast<size_t>(parent_of_[l - 1][c]) * n;
                float* dpp = dpparent.data() + static_cast<size_t>(parent_of_[l - 1][c]) * n;
                for (size_t i = 0; i < n; ++i) {
                    dq.v[c * n + i] += pp[i] * dprobs[l].v[c * n + i];
                    dpp[i] += lt.q.v[c * n + i] * dprobs[l].v[c * n + i];
                }
            }
            level_softmax_backward(lt.q.data(), dq.data(), pparent.data(),
                                   parent_of_[l - 1].data(), dz[l].data(), dpparent.data(),
                                   c_count, n, eps);
        } else {
            for (const auto& [pi, children] : groups_[l - 1]) {
                const size_t cg = children.size();
                std::vector<float> qg(cg * n), dpg(cg * n), dqg(cg * n, 0.f), dzg(cg * n, 0.f);
                for (size_t gi = 0; gi < cg; ++gi) {
                    std::copy_n(lt.q.data() + static_cast<size_t>(children[gi]) * n, n,
                                qg.data() + gi * n);
                    std::copy_n(dprobs[l].data() + static_cast<size_t>(children[gi]) * n, n,
                                dpg.data() + gi * n);
                }
                compose_backward(qg.data(), pparent.data() + static_cast<size_t>(pi) * n,
                                 dpg.data(), dqg.data(),
                                 dpparent.data() + static_cast<size_t>(pi) * n, cg, n);
                conditional_softmax_backward(qg.data(), dqg.data(), dzg.data(), cg, n);
                for (size_t gi = 0; gi < cg; ++gi)
                    for (size_t i = 0; i < n; ++i)
                        dz[l].v[static_cast<size_t>(children[gi]) * n + i] += dzg[gi * n + i];
            }
        }

        // Head
        Tensor dfeat_film = heads_[l].backward(dz[l], const_cast<Conv2d::Cache&>(lt.head_cache));

        // FiLM backward: channel-wise affine, then the generator MLP, then
        // the spatial-mean summary back onto the parent probabilities.
        Tensor dfeat(feat, lt.features.h, lt.features.w);
        std::vector<float> dout(2 * feat, 0.f);
        for (int f = 0; f < feat; ++f) {
            double dgamma = 0.0, dbeta = 0.0;
            for (size_t i = 0; i < n; ++i) {
                float g = dfeat_film.v[f * n + i];
                dgamma += static_cast<double>(g) * lt.features.v[f * n + i];
                dbeta += g;
                dfeat.v[f * n + i] = lt.film_gamma[f] * g;
            }
            dout[f] = static_cast<float>(dgamma);
            dout[feat + f] = static_cast<float>(dbeta);
        }
        std::vector<float> dhidden =
            film_out_[l - 1].backward(lt.film_hidden, dout);
        for (size_t i = 0; i < dhidden.size(); ++i)
            if (lt.film_hidden[i] <= 0.f) dhidden[i] = 0.f;
        std::vector<float> dsummary = film_in_[l - 1].backward(lt.film_summary, dhidden);
        for (int c = 0; c < pparent.c; ++c) {
            const float g = dsummary[c] / static_cast<float>(n);
            float* dpp = dpparent.data() + static_cast<size_t>(c) * n;
            for (size_t i = 0; i < n; ++i) dpp[i] += g;
        }

        // Trunk and adapter for this level's pass.
        Tensor dx = backbone_->backward(dfeat, *lt.backbone_cache);
        Tensor dcat = adapters_[l].backward(dx, const_cast<Conv2d::Cache&>(lt.adapter_cache));
        Tensor dimage(1, dcat.h, dcat.w);
        Tensor dzfb(dcat.c - 1, dcat.h, dcat.w);
        split_channels(dcat, dimage, dzfb);
        // Feedback logits: raw at level 0, sentinel-filled deeper. Sentinels
        // are constants, so their gradient is masked away.
        if (l - 1 > 0) {
            const Tensor& grandparent = trace.levels[l - 2].probs_restricted;
            for (int c = 0; c < dzfb.c; ++c)
                restrict_backward(grandparent.data() +
                                      static_cast<size_t>(parent_of_[l - 2][c]) * n,
                                  thr, dzfb.data() + static_cast<size_t>(c) * n, n);
        }
        for (size_t i = 0; i < dzfb.v.size(); ++i) dz[l - 1].v[i] += dzfb.v[i];

        // Fold the restricted-parent gradient back into the parent's
        // unrestricted probabilities (masked where restriction zeroed them).
        if (l - 1 > 0) {
            const Tensor& grandparent = trace.levels[l - 2].probs_restricted;
            for (int c = 0; c < dpparent.c; ++c)
                restrict_backward(grandparent.data() +
                                      static_cast<size_t>(parent_of_[l - 2][c]) * n,
                                  thr, dpparent.data() + static_cast<size_t>(c) * n, n);
        }
        for (size_t i = 0; i < dpparent.v.size(); ++i)
            dprobs[l - 1].v[i] += dpparent.v[i];
    }

    // Level 0: sigmoid head, no FiLM, no composition.
    const LevelTrace& l0 = trace.levels[0];
    sigmoid_backward(l0.probs.data(), dprobs[0].data(), dz[0].data(), l0.probs.size());
    Tensor dfeat0 = heads_[0].backward(dz[0], const_cast<Conv2d::Cache&>(l0.head_cache));
    Tensor dx0 = backbone_->backward(dfeat0, *l0.backbone_cache);
    adapters_[0].backward(dx0, const_cast<Conv2d::Cache&>(l0.adapter_cache));
}

std::vector<Param*> HierModel::params() {
    std::vector<Param*> out = backbone_->params();
    for (auto& a : adapters_) {
        out.push_back(&a.weight);
        out.push_back(&a.bias);
    }
    for (auto& h : heads_) {
        out.push_back(&h.weight);
        out.push_back(&h.bias);
    }
    for (auto& f : film_in_) {
        out.push_back(&f.weight);
        out.push_back(&f.bias);
    }
    for (auto& f : film_out_) {
        out.push_back(&f.weight);
        out.push_back(&f.bias);
    }
    return out;
}

ParameterReport HierModel::parameter_report() const {
    ParameterReport r;
    for (const Param* p : const_cast<HierModel*>(this)->backbone_->params())
        r.trunk += static_cast<int64_t>(p->w.size());
    auto count = [](const Conv2d& c) {
        return static_cast<int64_t>(c.weight.w.size() + c.bias.w.size());
    };
    for (size_t i = 0; i < adapters_.size(); ++i) {
        r.adapters += count(adapters_[i]);
        r.heads += count(heads_[i]);
        if (i > 0) r.hierarchical_overhead += count(adapters_[i]) + count(heads_[i]);
    }
    for (size_t i = 0; i < film_in_.size(); ++i) {
        int64_t f = static_cast<int64_t>(film_in_[i].weight.w.size() + film_in_[i].bias.w.size() +
                                         film_out_[i].weight.w.size() + film_out_[i].bias.w.size());
        r.film += f;
        r.hierarchical_overhead += f;
    }
    return r;
}

// ------------------------------------------------------------ checkpoints

namespace {

constexpr char kMagic[8] = {'H', 'S', 'E', 'G', 'C', 'K', 'P', '1'};

void write_string(std::ostream& out, const std::string& s) {
    uint32_t len = static_cast<uint32_t>(s.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(s.data(), len);
}

std::string read_string(std::istream& in) {
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string s(len, '\0');
    in.read(s.data(), len);
    return s;
}

void save_params(const std::string& path, uint64_t fingerprint, const std::string& variant,
                 const std::string& backbone, const std::vector<Param*>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&fingerprint), sizeof(fingerprint));
    write_string(out, variant);
    write_string(out, backbone);
    uint32_t n = static_cast<uint32_t>(params.size());
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    for (const Param* p : params) {
        write_string(out, p->name);
        uint64_t count = p->w.size();
        out.write(reinterpret_cast<const char*>(&count), sizeof(count));
        out.write(reinterpret_cast<const char*>(p->w.data()),
                  static_cast<std::streamsize>(count * sizeof(float)));
    }
    if (!out) throw DataError("short write on checkpoint: " + path);
}

void load_params(const std::string& path, uint64_t expect_fingerprint,
                 const std::string& expect_variant, const std::vector<Param*>& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("not a checkpoint file: " + path);
    uint64_t fingerprint = 0;
    in.read(reinterpret_cast<char*>(&fingerprint), sizeof(fingerprint));
    if (fingerprint != expect_fingerprint)
        throw DataError("checkpoint tree fingerprint mismatch: " + path +
                        " was trained against a different class hierarchy");
    std::string variant = read_string(in);
    if (variant != expect_variant)
        throw DataError("checkpoint variant mismatch: expected " + expect_variant + ", found " +
                        variant);
    read_string(in); // backbone id, informational
    uint32_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    if (n != params.size())
        throw DataError("checkpoint parameter blob count mismatch in " + path);
    for (Param* p : params) {
        std::string name = read_string(in);
        uint64_t count = 0;
        in.read(reinterpret_cast<char*>(&count), sizeof(count));
        if (name != p->name || count != p->w.size())
            throw DataError("checkpoint blob mismatch: expected " + p->name + ", found " + name);
        in.read(reinterpret_cast<char*>(p->w.data()),
                static_cast<std::streamsize>(count * sizeof(float)));
    }
    if (!in) throw DataError("truncated checkpoint: " + path);
}

} // namespace

void HierModel::save_checkpoint(const std::string& path) const {
    save_params(path, tree_.fingerprint(), "hierarchical", config_.backbone,
                const_cast<HierModel*>(this)->params());
}

void HierModel::load_checkpoint(const std::string& path) {
    load_params(path, tree_.fingerprint(), "hierarchical", params());
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("not a checkpoint file: " + path);
    CheckpointInfo info;
    in.read(reinterpret_cast<char*>(&info.tree_fingerprint), sizeof(info.tree_fingerprint));
    info.variant = read_string(in);
    info.backbone = read_string(in);
    if (!in) throw DataError("truncated checkpoint: " + path);
    return info;
}

// ----------------------------------------------------------- BaselineModel

BaselineModel::BaselineModel(const ClassTree& tree, const ModelConfig& config)
    : tree_(tree), config_(config), backbone_(make_backbone(config.backbone)),
      leaf_classes_(tree.leaf_classes()) {
    adapter_ = Conv2d(1, backbone_->input_channels(), 1, "adapter0");
    head_ = Conv2d(backbone_->feature_channels(), static_cast<int>(leaf_classes_.size()), 1,
                   "flat_head");
    std::mt19937_64 rng(config_.seed);
    backbone_->init(rng);
    adapter_.init_he(rng);
    head_.init_he(rng);
}

BaselineModel::Trace BaselineModel::forward(const Tensor& image) {
    Trace t;
    t.adapter_in = image;
    Tensor x = adapter_.forward(image, t.adapter_cache);
    t.backbone_cache = backbone_->make_cache();
    t.features = backbone_->forward(x, *t.backbone_cache);
    t.logits = head_.forward(t.features, t.head_cache);
    const size_t n = t.logits.plane();
    const int c_count = t.logits.c;
    t.probs = Tensor(c_count, t.logits.h, t.logits.w);
    for (size_t i = 0; i < n; ++i) {
        float max_z = t.logits.v[i];
        for (int c = 1; c < c_count; ++c) max_z = std::max(max_z, t.logits.v[c * n + i]);
        float denom = 0.f;
        for (int c = 0; c < c_count; ++c) {
            float e = std::exp(t.logits.v[c * n + i] - max_z);
            t.probs.v[c * n + i] = e;
            denom += e;
        }
        for (int c = 0; c < c_count; ++c) t.probs.v[c * n + i] /= denom;
    }
    return t;
}

void BaselineModel::backward(const Trace& t, const Tensor& dprobs) {
    const size_t n = t.probs.plane();
    const int c_count = t.probs.c;
    Tensor dz(c_count, t.probs.h, t.probs.w);
    for (size_t i = 0; i < n; ++i) {
        float dot = 0.f;
        for (int c = 0; c < c_count; ++c) dot += t.probs.v[c * n + i] * dprobs.v[c * n + i];
        for (int c = 0; c < c_count; ++c)
            dz.v[c * n + i] = t.probs.v[c * n + i] * (dprobs.v[c * n + i] - dot);
    }
    Tensor dfeat = head_.backward(dz, const_cast<Conv2d::Cache&>(t.head_cache));
    Tensor dx = backbone_->backward(dfeat, *t.backbone_cache);
    adapter_.backward(dx, const_cast<Conv2d::Cache&>(t.adapter_cache));
}

std::vector<Param*> BaselineModel::params() {
    std::vector<Param*> out = backbone_->params();
    out.push_back(&adapter_.weight);
    out.push_back(&adapter_.bias);
    out.push_back(&head_.weight);
    out.push_back(&head_.bias);
    return out;
}

ParameterReport BaselineModel::parameter_report() const {
    ParameterReport r;
    for (const Param* p : const_cast<BaselineModel*>(this)->backbone_->params())
        r.trunk += static_cast<int64_t>(p->w.size());
    r.adapters = static_cast<int64_t>(adapter_.weight.w.size() + adapter_.bias.w.size());
    r.heads = static_cast<int64_t>(head_.weight.w.size() + head_.bias.w.size());
    return r;
}

void BaselineModel::save_checkpoint(const std::string& path) const {
    save_params(path, tree_.fingerprint(), "baseline", config_.backbone,
                const_cast<BaselineModel*>(this)->params());
}

void BaselineModel::load_checkpoint(const std::string& path) {
    load_params(path, tree_.fingerprint(), "baseline", params());
}

} // namespace hierseg
