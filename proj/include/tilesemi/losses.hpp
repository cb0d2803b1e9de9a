#pragma once

// Supervised and unsupervised training objectives, as pure functions of
// batched images and network outputs. Tensors follow the NCHW layout:
// images x are (N, C, H, W), membership maps y_hat are (N, K, H, W),
// cluster centers are (N, K, C). Loss values are scalars averaged over the
// batch; every loss can also return its analytic gradient with respect to
// the network output it consumes.

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>

#include "tilesemi/tensor.hpp"

namespace tilesemi {

enum class LossKind { none, l1, l2, relaxed_kmeans, mumford_shah };

inline const char* to_string(LossKind k) {
    switch (k) {
        case LossKind::none: return "none";
        case LossKind::l1: return "l1";
        case LossKind::l2: return "l2";
        case LossKind::relaxed_kmeans: return "relaxed_kmeans";
        case LossKind::mumford_shah: return "mumford_shah";
    }
    return "?";
}

inline LossKind loss_kind_from_string(const std::string& s) {
    if (s == "none") return LossKind::none;
    if (s == "l1") return LossKind::l1;
    if (s == "l2") return LossKind::l2;
    if (s == "relaxed_kmeans") return LossKind::relaxed_kmeans;
    if (s == "mumford_shah") return LossKind::mumford_shah;
    throw std::invalid_argument("unknown loss kind: " + s);
}

struct LossSpec {
    LossKind kind = LossKind::none;
    double lambda = -1.0;  // negative means "use the default for the kind"
    double alpha_rec = 1.0;
    double alpha_reg = 1.0;
    int K = 0;                          // cluster count, segmentation kinds only; 0 = use class count
    bool detach_centers = false;        // alternating-optimization reading of the k-means loss
    bool normalize_regularizer = false; // divide the membership regularizer by pixel count

    static double default_lambda(LossKind k) {
        switch (k) {
            case LossKind::l1:
            case LossKind::l2: return 2.0;
            case LossKind::relaxed_kmeans:
            case LossKind::mumford_shah: return 5.0;
            case LossKind::none: return 0.0;
        }
        return 0.0;
    }

    bool is_segmentation() const {
        return kind == LossKind::relaxed_kmeans || kind == LossKind::mumford_shah;
    }
    bool is_reconstruction() const { return kind == LossKind::l1 || kind == LossKind::l2; }

    double effective_lambda() const { return lambda < 0 ? default_lambda(kind) : lambda; }

    // channel count the unsupervised head must produce for this objective
    int unsup_channels(int image_channels) const {
        return is_segmentation() ? K : image_channels;
    }

    void validate() const {
        if (lambda >= 0 && !(lambda >= 0)) throw std::invalid_argument("lambda must be >= 0");
        if (alpha_rec < 0 || alpha_reg < 0)
            throw std::invalid_argument("alpha_rec/alpha_reg must be >= 0");
        if (is_segmentation() && K < 2)
            throw std::invalid_argument("segmentation losses require K >= 2");
    }
};

namespace detail {

template <class T>
inline double sign_of(T v) {
    return v > T(0) ? 1.0 : (v < T(0) ? -1.0 : 0.0);
}

template <class T>
inline void check_image(const Tensor<T>& x, const char* what) {
    if (x.ndim() != 4) throw std::invalid_argument(std::string(what) + ": expected NCHW tensor");
}

}  // namespace detail

// Checks the membership-map contract: values in [0,1] and per-pixel channel
// sums equal to 1 (a normalized-exponential head guarantees both). Tolerance
// scales with the storage precision.
template <class T>
void validate_membership(const Tensor<T>& y_hat) {
    detail::check_image(y_hat, "membership");
    const double tol = sizeof(T) == 4 ? 1e-4 : 1e-6;
    const std::int64_t n = y_hat.dim(0), k = y_hat.dim(1), hw = y_hat.dim(2) * y_hat.dim(3);
    for (std::int64_t b = 0; b < n; ++b) {
        const T* base = y_hat.data() + b * k * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
            double sum = 0.0;
            for (std::int64_t c = 0; c < k; ++c) {
                const double v = static_cast<double>(base[c * hw + i]);
                if (v < -tol || v > 1.0 + tol)
                    throw std::invalid_argument("membership value outside [0,1]: " + std::to_string(v));
                sum += v;
            }
            if (std::abs(sum - 1.0) > tol * static_cast<double>(k))
                throw std::invalid_argument("membership rows must sum to 1, got " + std::to_string(sum));
        }
    }
}

struct CrossEntropyResult {
    double value = 0.0;
    std::int64_t counted_pixels = 0;  // non-void pixels that entered the mean
    bool void_only() const { return counted_pixels == 0; }
};

// Mean negative log-likelihood over non-void pixels. logits: (N, C, H, W),
// labels: (N, H, W) of class ids. Void-only input yields value 0 and a flag.
template <class T>
CrossEntropyResult cross_entropy(const Tensor<T>& logits, const Tensor<std::int32_t>& labels,
                                 const std::set<int>& void_ids, Tensor<T>* grad_logits = nullptr) {
    detail::check_image(logits, "cross_entropy");
    const std::int64_t n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    if (labels.ndim() != 3 || labels.dim(0) != n || labels.dim(1) != h || labels.dim(2) != w)
        throw std::invalid_argument("cross_entropy: labels must be (N, H, W) matching logits");
    if (grad_logits) {
        *grad_logits = Tensor<T>(logits.shape());
    }

    const std::int64_t hw = h * w;
    // first pass: count contributing pixels so the gradient carries the final 1/M
    std::int64_t counted = 0;
    for (std::int64_t i = 0; i < labels.numel(); ++i) {
        const std::int32_t y = labels[i];
        if (y < 0 || y >= c) {
            if (void_ids.count(y)) continue;
            throw std::invalid_argument("cross_entropy: label id " + std::to_string(y) +
                                        " out of range for C=" + std::to_string(c));
        }
        if (!void_ids.count(y)) ++counted;
    }
    if (counted == 0) return {0.0, 0};

    double total = 0.0;
    std::vector<double> p(static_cast<std::size_t>(c));
    for (std::int64_t b = 0; b < n; ++b) {
        const T* lbase = logits.data() + b * c * hw;
        const std::int32_t* ybase = labels.data() + b * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
            const std::int32_t y = ybase[i];
            if (void_ids.count(y)) continue;
            double zmax = -1e300;
            for (std::int64_t ch = 0; ch < c; ++ch)
                zmax = std::max(zmax, static_cast<double>(lbase[ch * hw + i]));
            double denom = 0.0;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                p[static_cast<std::size_t>(ch)] = std::exp(static_cast<double>(lbase[ch * hw + i]) - zmax);
                denom += p[static_cast<std::size_t>(ch)];
            }
            total += -(std::log(p[static_cast<std::size_t>(y)]) - std::log(denom));
            if (grad_logits) {
                T* gbase = grad_logits->data() + b * c * hw;
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const double soft = p[static_cast<std::size_t>(ch)] / denom;
                    const double target = ch == y ? 1.0 : 0.0;
                    gbase[ch * hw + i] = static_cast<T>((soft - target) / static_cast<double>(counted));
                }
            }
        }
    }
    return {total / static_cast<double>(counted), counted};
}

// Mean absolute error over every element (pixels, channels and batch).
template <class T>
double l1_reconstruction(const Tensor<T>& x, const Tensor<T>& x_hat, Tensor<T>* grad_xhat = nullptr) {
    check_same_shape(x, x_hat, "l1_reconstruction");
    const std::int64_t n = x.numel();
    if (n == 0) throw std::invalid_argument("l1_reconstruction: empty input");
    if (grad_xhat) *grad_xhat = Tensor<T>(x.shape());
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(x_hat[i]) - static_cast<double>(x[i]);
        total += std::abs(d);
        if (grad_xhat) (*grad_xhat)[i] = static_cast<T>(detail::sign_of(d) / static_cast<double>(n));
    }
    return total / static_cast<double>(n);
}

// Mean squared error over every element.
template <class T>
double l2_reconstruction(const Tensor<T>& x, const Tensor<T>& x_hat, Tensor<T>* grad_xhat = nullptr) {
    check_same_shape(x, x_hat, "l2_reconstruction");
    const std::int64_t n = x.numel();
    if (n == 0) throw std::invalid_argument("l2_reconstruction: empty input");
    if (grad_xhat) *grad_xhat = Tensor<T>(x.shape());
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(x_hat[i]) - static_cast<double>(x[i]);
        total += d * d;
        if (grad_xhat) (*grad_xhat)[i] = static_cast<T>(2.0 * d / static_cast<double>(n));
    }
    return total / static_cast<double>(n);
}

inline constexpr double kClusterCenterEps = 1e-8;  // guards empty clusters

// Soft cluster centers: c[n,k,ch] = sum_i x[n,ch,i] yhat[n,k,i] / (sum_i yhat[n,k,i] + eps).
template <class T>
Tensor<T> cluster_centers(const Tensor<T>& x, const Tensor<T>& y_hat, double eps = kClusterCenterEps) {
    detail::check_image(x, "cluster_centers");
    detail::check_image(y_hat, "cluster_centers");
    if (x.dim(0) != y_hat.dim(0) || x.dim(2) != y_hat.dim(2) || x.dim(3) != y_hat.dim(3))
        throw std::invalid_argument("cluster_centers: spatial shapes must match");
    const std::int64_t n = x.dim(0), c = x.dim(1), k = y_hat.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> centers({n, k, c});
    for (std::int64_t b = 0; b < n; ++b) {
        const T* xb = x.data() + b * c * hw;
        const T* yb = y_hat.data() + b * k * hw;
        for (std::int64_t kk = 0; kk < k; ++kk) {
            double den = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) den += static_cast<double>(yb[kk * hw + i]);
            den += eps;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                double num = 0.0;
                for (std::int64_t i = 0; i < hw; ++i)
                    num += static_cast<double>(xb[ch * hw + i]) * static_cast<double>(yb[kk * hw + i]);
                centers[(b * k + kk) * c + ch] = static_cast<T>(num / den);
            }
        }
    }
    return centers;
}

// Per-pixel convex combination of centers: x_c[n,ch,i] = sum_k c[n,k,ch] yhat[n,k,i].
template <class T>
Tensor<T> quantized_image(const Tensor<T>& centers, const Tensor<T>& y_hat) {
    detail::check_image(y_hat, "quantized_image");
    if (centers.ndim() != 3 || centers.dim(0) != y_hat.dim(0) || centers.dim(1) != y_hat.dim(1))
        throw std::invalid_argument("quantized_image: centers must be (N, K, C) with K matching y_hat");
    const std::int64_t n = y_hat.dim(0), k = y_hat.dim(1), c = centers.dim(2),
                       hw = y_hat.dim(2) * y_hat.dim(3);
    Tensor<T> out({n, c, y_hat.dim(2), y_hat.dim(3)});
    for (std::int64_t b = 0; b < n; ++b) {
        const T* yb = y_hat.data() + b * k * hw;
        T* ob = out.data() + b * c * hw;
        for (std::int64_t ch = 0; ch < c; ++ch) {
            for (std::int64_t kk = 0; kk < k; ++kk) {
                const double ck = static_cast<double>(centers[(b * k + kk) * c + ch]);
                for (std::int64_t i = 0; i < hw; ++i)
                    ob[ch * hw + i] += static_cast<T>(ck * static_cast<double>(yb[kk * hw + i]));
            }
        }
    }
    return out;
}

// Relaxed K-means objective: alpha_rec * L1(x, x_c) + alpha_reg * sum_k sum_i y(1-y).
// The reconstruction part is the per-element mean like l1_reconstruction; the
// membership regularizer is an unnormalized double sum unless
// spec.normalize_regularizer divides it by the pixel count. Values and
// gradients are averaged over the batch dimension.
template <class T>
double relaxed_kmeans_loss(const Tensor<T>& x, const Tensor<T>& y_hat, const LossSpec& spec,
                           Tensor<T>* grad_yhat = nullptr) {
    validate_membership(y_hat);
    detail::check_image(x, "relaxed_kmeans_loss");
    if (x.dim(0) != y_hat.dim(0) || x.dim(2) != y_hat.dim(2) || x.dim(3) != y_hat.dim(3))
        throw std::invalid_argument("relaxed_kmeans_loss: spatial shapes must match");

    const std::int64_t n = x.dim(0), c = x.dim(1), k = y_hat.dim(1), hw = x.dim(2) * x.dim(3);
    const double reg_norm = spec.normalize_regularizer ? static_cast<double>(hw) : 1.0;
    if (grad_yhat) *grad_yhat = Tensor<T>(y_hat.shape());

    const Tensor<T> centers = cluster_centers(x, y_hat);
    const Tensor<T> xc = quantized_image(centers, y_hat);

    double total = 0.0;
    std::vector<double> den(static_cast<std::size_t>(k));
    std::vector<double> gsum(static_cast<std::size_t>(k * c));  // sum_i sign[ch,i] * yhat[k,i]
    for (std::int64_t b = 0; b < n; ++b) {
        const T* xb = x.data() + b * c * hw;
        const T* yb = y_hat.data() + b * k * hw;
        const T* xcb = xc.data() + b * c * hw;

        double rec = 0.0;
        for (std::int64_t i = 0; i < c * hw; ++i)
            rec += std::abs(static_cast<double>(xb[i]) - static_cast<double>(xcb[i]));
        rec /= static_cast<double>(c * hw);

        double reg = 0.0;
        for (std::int64_t i = 0; i < k * hw; ++i) {
            const double v = static_cast<double>(yb[i]);
            reg += v * (1.0 - v);
        }
        reg /= reg_norm;

        total += spec.alpha_rec * rec + spec.alpha_reg * reg;

        if (!grad_yhat) continue;

        for (std::int64_t kk = 0; kk < k; ++kk) {
            double d = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) d += static_cast<double>(yb[kk * hw + i]);
            den[static_cast<std::size_t>(kk)] = d + kClusterCenterEps;
        }
        if (!spec.detach_centers) {
            std::fill(gsum.begin(), gsum.end(), 0.0);
            for (std::int64_t kk = 0; kk < k; ++kk)
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < hw; ++i) {
                        const double s = detail::sign_of(static_cast<double>(xb[ch * hw + i]) -
                                                         static_cast<double>(xcb[ch * hw + i]));
                        acc += s * static_cast<double>(yb[kk * hw + i]);
                    }
                    gsum[static_cast<std::size_t>(kk * c + ch)] = acc;
                }
        }
        T* gb = grad_yhat->data() + b * k * hw;
        const double rec_scale = spec.alpha_rec / (static_cast<double>(c * hw) * static_cast<double>(n));
        const double reg_scale = spec.alpha_reg / (reg_norm * static_cast<double>(n));
        for (std::int64_t kk = 0; kk < k; ++kk) {
            for (std::int64_t i = 0; i < hw; ++i) {
                double g = 0.0;
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const double s = detail::sign_of(static_cast<double>(xb[ch * hw + i]) -
                                                     static_cast<double>(xcb[ch * hw + i]));
                    const double ck = static_cast<double>(centers[(b * k + kk) * c + ch]);
                    g -= s * ck;
                    if (!spec.detach_centers) {
                        const double xj = static_cast<double>(xb[ch * hw + i]);
                        g -= (xj - ck) * gsum[static_cast<std::size_t>(kk * c + ch)] /
                             den[static_cast<std::size_t>(kk)];
                    }
                }
                const double v = static_cast<double>(yb[kk * hw + i]);
                gb[kk * hw + i] = static_cast<T>(g * rec_scale + (1.0 - 2.0 * v) * reg_scale);
            }
        }
    }
    return total / static_cast<double>(n);
}

// Mumford-Shah objective: sum_k sum_i |x_i - c_k|^2 yhat_i^k  +  alpha_reg * TV(yhat),
// with |grad yhat| discretized as |forward row difference| + |forward column
// difference| and zero at the far borders. Batch mean, like the other losses.
template <class T>
double mumford_shah_loss(const Tensor<T>& x, const Tensor<T>& y_hat, const LossSpec& spec,
                         Tensor<T>* grad_yhat = nullptr) {
    validate_membership(y_hat);
    detail::check_image(x, "mumford_shah_loss");
    if (x.dim(0) != y_hat.dim(0) || x.dim(2) != y_hat.dim(2) || x.dim(3) != y_hat.dim(3))
        throw std::invalid_argument("mumford_shah_loss: spatial shapes must match");

    const std::int64_t n = x.dim(0), c = x.dim(1), k = y_hat.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t hw = h * w;
    if (grad_yhat) *grad_yhat = Tensor<T>(y_hat.shape());

    const Tensor<T> centers = cluster_centers(x, y_hat);

    double total = 0.0;
    std::vector<double> den(static_cast<std::size_t>(k));
    std::vector<double> esum(static_cast<std::size_t>(k * c));  // sum_i yhat[k,i] (x[ch,i]-c[k,ch])
    for (std::int64_t b = 0; b < n; ++b) {
        const T* xb = x.data() + b * c * hw;
        const T* yb = y_hat.data() + b * k * hw;
        const T* cb = centers.data() + b * k * c;

        double data = 0.0;
        for (std::int64_t kk = 0; kk < k; ++kk) {
            for (std::int64_t i = 0; i < hw; ++i) {
                double d2 = 0.0;
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const double d = static_cast<double>(xb[ch * hw + i]) -
                                     static_cast<double>(cb[kk * c + ch]);
                    d2 += d * d;
                }
                data += d2 * static_cast<double>(yb[kk * hw + i]);
            }
        }

        double tv = 0.0;
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const T* plane = yb + kk * hw;
            for (std::int64_t r = 0; r < h; ++r)
                for (std::int64_t cc = 0; cc < w; ++cc) {
                    const double v = static_cast<double>(plane[r * w + cc]);
                    if (r + 1 < h) tv += std::abs(static_cast<double>(plane[(r + 1) * w + cc]) - v);
                    if (cc + 1 < w) tv += std::abs(static_cast<double>(plane[r * w + cc + 1]) - v);
                }
        }

        total += data + spec.alpha_reg * tv;

        if (!grad_yhat) continue;

        for (std::int64_t kk = 0; kk < k; ++kk) {
            double d = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) d += static_cast<double>(yb[kk * hw + i]);
            den[static_cast<std::size_t>(kk)] = d + kClusterCenterEps;
        }
        if (!spec.detach_centers) {
            for (std::int64_t kk = 0; kk < k; ++kk)
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < hw; ++i)
                        acc += static_cast<double>(yb[kk * hw + i]) *
                               (static_cast<double>(xb[ch * hw + i]) -
                                static_cast<double>(cb[kk * c + ch]));
                    esum[static_cast<std::size_t>(kk * c + ch)] = acc;
                }
        }

        T* gb = grad_yhat->data() + b * k * hw;
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::int64_t kk = 0; kk < k; ++kk) {
            for (std::int64_t i = 0; i < hw; ++i) {
                double g = 0.0;
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const double d = static_cast<double>(xb[ch * hw + i]) -
                                     static_cast<double>(cb[kk * c + ch]);
                    g += d * d;
                    if (!spec.detach_centers)
                        g -= 2.0 * d * esum[static_cast<std::size_t>(kk * c + ch)] /
                             den[static_cast<std::size_t>(kk)];
                }
                gb[kk * hw + i] += static_cast<T>(g * inv_n);
            }
            // TV subgradient, forward differences
            const T* plane = yb + kk * hw;
            T* gplane = gb + kk * hw;
            const double reg_scale = spec.alpha_reg * inv_n;
            for (std::int64_t r = 0; r < h; ++r)
                for (std::int64_t cc = 0; cc < w; ++cc) {
                    const double v = static_cast<double>(plane[r * w + cc]);
                    if (r + 1 < h) {
                        const double s = detail::sign_of(static_cast<double>(plane[(r + 1) * w + cc]) - v);
                        gplane[(r + 1) * w + cc] += static_cast<T>(s * reg_scale);
                        gplane[r * w + cc] -= static_cast<T>(s * reg_scale);
                    }
                    if (cc + 1 < w) {
                        const double s = detail::sign_of(static_cast<double>(plane[r * w + cc + 1]) - v);
                        gplane[r * w + cc + 1] += static_cast<T>(s * reg_scale);
                        gplane[r * w + cc] -= static_cast<T>(s * reg_scale);
                    }
                }
        }
    }
    return total / static_cast<double>(n);
}

// Weighted sum of the per-task losses; the supervised term is absent for
// unlabeled batches.
inline double combined_loss(std::optional<double> l_s, double l_u, const LossSpec& spec) {
    const double weighted = spec.effective_lambda() * l_u;
    return l_s ? *l_s + weighted : weighted;
}

}  // namespace tilesemi
