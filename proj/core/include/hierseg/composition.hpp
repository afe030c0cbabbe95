#ifndef HIERSEG_COMPOSITION_HPP
#define HIERSEG_COMPOSITION_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace hierseg {

/// Sentinel written into logits removed by the restriction step. Finite so
/// downstream arithmetic stays stable.
inline constexpr double kRestrictedLogit = -1e4;

/// Default epsilon inside the conditional softmax's log-parent shift.
inline constexpr double kCompositionEps = 1e-6;

/// How the conditional softmax normalizes: per parent child-group (the
/// literal equation) or across the whole level (ablation option).
enum class SoftmaxScope { ParentGroup, Level };

// All functions below operate on contiguous planes: a group of C classes is
// C*n scalars, class-major (plane c occupies [c*n, (c+1)*n)).

template <typename T>
void sigmoid_forward(const T* z, T* p, size_t n) {
    for (size_t i = 0; i < n; ++i) p[i] = T(1) / (T(1) + std::exp(-z[i]));
}

/// dL/dz += p * (1 - p) * dL/dp
template <typename T>
void sigmoid_backward(const T* p, const T* dp, T* dz, size_t n) {
    for (size_t i = 0; i < n; ++i) dz[i] += p[i] * (T(1) - p[i]) * dp[i];
}

/// Spatially conditioned softmax over one parent group:
///   Q(c) = exp(Z(c) + log(P_parent + eps)) / sum_c' exp(Z(c') + log(P_parent + eps))
/// Computed with max-subtraction. Within a single group the log-parent shift
/// cancels algebraically, so Q is independent of P_parent and the parent
/// gradient flows only through the composition product.
template <typename T>
void conditional_softmax(const T* z, const T* p_parent, T* q,
                         size_t c_count, size_t n, T eps) {
    for (size_t i = 0; i < n; ++i) {
        const T shift = std::log(p_parent[i] + eps);
        T max_a = z[i] + shift;
        for (size_t c = 1; c < c_count; ++c)
            max_a = std::max(max_a, z[c * n + i] + shift);
        T denom = T(0);
        for (size_t c = 0; c < c_count; ++c) {
            T e = std::exp(z[c * n + i] + shift - max_a);
            q[c * n + i] = e;
            denom += e;
        }
        for (size_t c = 0; c < c_count; ++c) q[c * n + i] /= denom;
    }
}

/// Softmax Jacobian: dL/dz += Q .* (dL/dq - sum_c Q dL/dq). The parent
/// receives no gradient from this path (constant within-group shift).
template <typename T>
void conditional_softmax_backward(const T* q, const T* dq, T* dz,
                                  size_t c_count, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        T dot = T(0);
        for (size_t c = 0; c < c_count; ++c) dot += q[c * n + i] * dq[c * n + i];
        for (size_t c = 0; c < c_count; ++c)
            dz[c * n + i] += q[c * n + i] * (dq[c * n + i] - dot);
    }
}

/// Level-wide variant: normalizes across all classes of the level, in which
/// case the log-parent shifts no longer cancel. `parent_of[c]` maps each
/// class to its parent plane inside `p_parent` (C_prev * n scalars).
template <typename T>
void level_softmax(const T* z, const T* p_parent, const int* parent_of, T* q,
                   size_t c_count, size_t n, T eps) {
    for (size_t i = 0; i < n; ++i) {
        T max_a = z[i] + std::log(p_parent[parent_of[0] * n + i] + eps);
        for (size_t c = 1; c < c_count; ++c)
            max_a = std::max(max_a, z[c * n + i] +
                                        std::log(p_parent[parent_of[c] * n + i] + eps));
        T denom = T(0);
        for (size_t c = 0; c < c_count; ++c) {
            T a = z[c * n + i] + std::log(p_parent[parent_of[c] * n + i] + eps) - max_a;
            T e = std::exp(a);
            q[c * n + i] = e;
            denom += e;
        }
        for (size_t c = 0; c < c_count; ++c) q[c * n + i] /= denom;
    }
}

template <typename T>
void level_softmax_backward(const T* q, const T* dq, const T* p_parent,
                            const int* parent_of, T* dz, T* dp_parent,
                            size_t c_count, size_t n, T eps) {
    for (size_t i = 0; i < n; ++i) {
        T dot = T(0);
        for (size_t c = 0; c < c_count; ++c) dot += q[c * n + i] * dq[c * n + i];
        for (size_t c = 0; c < c_count; ++c) {
            T da = q[c * n + i] * (dq[c * n + i] - dot);
            dz[c * n + i] += da;
            dp_parent[parent_of[c] * n + i] +=
                da / (p_parent[parent_of[c] * n + i] + eps);
        }
    }
}

/// Eq-style composition: P_child = P_parent * Q, element-wise.
template <typename T>
void compose(const T* q, const T* p_parent, T* p_child, size_t c_count, size_t n) {
    for (size_t c = 0; c < c_count; ++c)
        for (size_t i = 0; i < n; ++i)
            p_child[c * n + i] = p_parent[i] * q[c * n + i];
}

template <typename T>
void compose_backward(const T* q, const T* p_parent, const T* dp_child,
                      T* dq, T* dp_parent, size_t c_count, size_t n) {
    for (size_t c = 0; c < c_count; ++c)
        for (size_t i = 0; i < n; ++i) {
            dq[c * n + i] += p_parent[i] * dp_child[c * n + i];
            dp_parent[i] += q[c * n + i] * dp_child[c * n + i];
        }
}

/// Remove child predictions where the parent is not positively predicted:
/// probabilities drop to 0, logits drop to the sentinel. Idempotent.
/// `p_parent_of_c` is the parent plane per child (C * n parent values may
/// repeat across siblings, so callers pass a per-child parent pointer).
template <typename T>
void restrict_channel(const T* p_parent, T threshold, T* p_child, T* z_child, size_t n) {
    for (size_t i = 0; i < n; ++i)
        if (p_parent[i] < threshold) {
            if (p_child) p_child[i] = T(0);
            if (z_child) z_child[i] = T(kRestrictedLogit);
        }
}

/// Mask the gradient the same way the forward restriction masked the value.
template <typename T>
void restrict_backward(const T* p_parent, T threshold, T* dp_child, size_t n) {
    for (size_t i = 0; i < n; ++i)
        if (p_parent[i] < threshold) dp_child[i] = T(0);
}

} // namespace hierseg

#endif
