#ifndef HIERSEG_LOSSES_HPP
#define HIERSEG_LOSSES_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "hierseg/errors.hpp"
#include "hierseg/hierarchy.hpp"

namespace hierseg {

template <typename T>
struct LossOptions {
    T dice_eps = T(1e-6);
    T ce_delta = T(1e-7); // probability clamp inside log
    bool ce_mean = false; // divide the per-class pixel sum by n
    // Use 1 - P terms for negative targets at the sigmoid root level
    // (opt-in; the literal equation has no negative term).
    bool root_binary_ce = false;
};

struct LossBreakdown {
    std::vector<double> dice_per_level;
    std::vector<double> ce_per_level;
    double consistency = 0.0;
    double total() const {
        double t = consistency;
        for (double v : dice_per_level) t += v;
        for (double v : ce_per_level) t += v;
        return t;
    }
};

// Targets y are int8 planes in {0, 1, -1}; the parent visibility map m is
// implied: m = 0 exactly where y = -1 (and y counts as 0 there).

template <typename T>
T hier_dice(const T* p, const int8_t* y, const T* w, size_t c_count, size_t n,
            T eps, T* dp = nullptr, T upstream = T(1)) {
    T loss = T(1);
    for (size_t c = 0; c < c_count; ++c) {
        T num = T(0), den = T(0);
        const T wc = w[c];
        for (size_t i = 0; i < n; ++i) {
            int8_t t = y[c * n + i];
            if (t < 0) continue; // m = 0
            T pv = p[c * n + i];
            num += wc * T(t) * pv;
            den += wc * (T(t) + pv);
        }
        T dice = (T(2) * num + eps) / (den + eps);
        loss -= dice / T(c_count);
        if (dp) {
            // d(-dice/C)/dP = -(2 m w y (den+eps) - (2 num+eps) m w) / (den+eps)^2 / C
            const T denom2 = (den + eps) * (den + eps);
            for (size_t i = 0; i < n; ++i) {
                int8_t t = y[c * n + i];
                if (t < 0) continue;
                T g = -(T(2) * wc * T(t) * (den + eps) - (T(2) * num + eps) * wc) /
                      denom2 / T(c_count);
                dp[c * n + i] += upstream * g;
            }
        }
    }
    return loss;
}

template <typename T>
T hier_ce(const T* p, const int8_t* y, const T* w, size_t c_count, size_t n,
          T delta, bool mean_reduce, bool binary, T* dp = nullptr,
          T upstream = T(1)) {
    const T norm = mean_reduce ? T(1) / (T(c_count) * T(n)) : T(1) / T(c_count);
    T loss = T(0);
    for (size_t c = 0; c < c_count; ++c) {
        const T wc = w[c];
        for (size_t i = 0; i < n; ++i) {
            int8_t t = y[c * n + i];
            if (t < 0) continue;
            T pv = p[c * n + i];
            if (t == 1) {
                T pc = std::max(pv, delta);
                loss -= norm * wc * std::log(pc);
                if (dp && pv > delta) dp[c * n + i] -= upstream * norm * wc / pc;
            } else if (binary) {
                T pc = std::max(T(1) - pv, delta);
                loss -= norm * wc * std::log(pc);
                if (dp && T(1) - pv > delta) dp[c * n + i] += upstream * norm * wc / pc;
            }
        }
    }
    return loss;
}

/// One parent group flattened for the consistency loss: the parent's plane
/// offset at level-1 and its children's plane offsets at the level.
struct ParentGroupLayout {
    int level = 0; // level of the children
    int parent_index = 0;
    std::vector<int> child_indices;
};

inline std::vector<ParentGroupLayout> parent_group_layout(const ClassTree& tree) {
    std::vector<ParentGroupLayout> out;
    for (int level = 1; level < tree.num_levels(); ++level)
        for (const auto& [parent, children] : tree.parent_groups[level]) {
            ParentGroupLayout g;
            g.level = level;
            g.parent_index = tree.index_in_level(parent);
            for (const auto& c : children)
                g.child_indices.push_back(tree.index_in_level(c));
            out.push_back(std::move(g));
        }
    return out;
}

/// Hierarchy consistency loss: per parent set, the pixel-mean absolute gap
/// between the children's probability sum and the parent probability,
/// divided by the number of parent sets. `p_levels[l]` holds that level's
/// class planes (C_l * n scalars). Gradients accumulate into `dp_levels`
/// when given.
template <typename T>
T consistency_loss(const std::vector<const T*>& p_levels,
                   const std::vector<ParentGroupLayout>& groups, size_t n,
                   std::vector<T*>* dp_levels = nullptr, T upstream = T(1)) {
    if (groups.empty()) return T(0);
    const T np = T(groups.size());
    T loss = T(0);
    for (const auto& g : groups) {
        const T* parent = p_levels[g.level - 1] + static_cast<size_t>(g.parent_index) * n;
        const T* child = p_levels[g.level];
        T acc = T(0);
        for (size_t i = 0; i < n; ++i) {
            T sum = T(0);
            for (int ci : g.child_indices) sum += child[static_cast<size_t>(ci) * n + i];
            T d = sum - parent[i];
            acc += std::abs(d);
            if (dp_levels) {
                T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
                T g_px = upstream * s / (np * T(n));
                for (int ci : g.child_indices)
                    (*dp_levels)[g.level][static_cast<size_t>(ci) * n + i] += g_px;
                (*dp_levels)[g.level - 1][static_cast<size_t>(g.parent_index) * n + i] -= g_px;
            }
        }
        loss += acc / T(n);
    }
    return loss / np;
}

/// Per-level weighted Dice + CE summed over levels. The visibility masking
/// comes from the -1 entries of the target planes.
template <typename T>
LossBreakdown whl(const std::vector<const T*>& p_levels,
                  const std::vector<const int8_t*>& y_levels,
                  const std::vector<std::vector<T>>& weights,
                  const std::vector<size_t>& c_counts, size_t n,
                  const LossOptions<T>& opts,
                  std::vector<T*>* dp_levels = nullptr) {
    if (p_levels.size() != y_levels.size() || p_levels.size() != weights.size())
        throw DataError("whl: level count mismatch between pyramid and targets");
    LossBreakdown out;
    for (size_t level = 0; level < p_levels.size(); ++level) {
        T* dp = dp_levels ? (*dp_levels)[level] : nullptr;
        out.dice_per_level.push_back(static_cast<double>(
            hier_dice(p_levels[level], y_levels[level], weights[level].data(),
                      c_counts[level], n, opts.dice_eps, dp)));
        const bool binary = opts.root_binary_ce && level == 0;
        out.ce_per_level.push_back(static_cast<double>(
            hier_ce(p_levels[level], y_levels[level], weights[level].data(),
                    c_counts[level], n, opts.ce_delta, opts.ce_mean, binary, dp)));
    }
    return out;
}

inline double total_loss(double whl_value, double consistency_value) {
    return whl_value + consistency_value;
}

} // namespace hierseg

#endif
