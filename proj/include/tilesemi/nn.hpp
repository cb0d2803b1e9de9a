#pragma once

// Minimal layer zoo for the encoder-decoder backbones. Every layer implements
// an explicit forward/backward pair and caches exactly what its backward pass
// needs. Backward marks the layer's parameters as touched; the optimizer only
// steps touched parameters, which is what makes per-batch gradient routing
// exact. All loops are deterministic for a fixed input regardless of the
// OpenMP thread count: parallel regions write disjoint slices and every
// reduction runs in a fixed serial order.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tilesemi/rng.hpp"
#include "tilesemi/tensor.hpp"

namespace tilesemi::nn {

template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool touched = false;

    void reset_grad() {
        grad.zero();
        touched = false;
    }
};

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
void gemm(const T* a, std::int64_t m, std::int64_t k, const T* b, std::int64_t n, T* c,
          bool accumulate) {
    Eigen::Map<const RowMat<T>> A(a, m, k);
    Eigen::Map<const RowMat<T>> B(b, k, n);
    Eigen::Map<RowMat<T>> C(c, m, n);
    if (accumulate)
        C.noalias() += A * B;
    else
        C.noalias() = A * B;
}

// C (m x n) += or = A^T (m x k_rows^T) * B ... helpers for the transposed forms
template <class T>
void gemm_at_b(const T* a, std::int64_t k, std::int64_t m, const T* b, std::int64_t n, T* c,
               bool accumulate) {
    Eigen::Map<const RowMat<T>> A(a, k, m);
    Eigen::Map<const RowMat<T>> B(b, k, n);
    Eigen::Map<RowMat<T>> C(c, m, n);
    if (accumulate)
        C.noalias() += A.transpose() * B;
    else
        C.noalias() = A.transpose() * B;
}

template <class T>
void gemm_a_bt(const T* a, std::int64_t m, std::int64_t k, const T* b, std::int64_t n, T* c,
               bool accumulate) {
    Eigen::Map<const RowMat<T>> A(a, m, k);
    Eigen::Map<const RowMat<T>> B(b, n, k);
    Eigen::Map<RowMat<T>> C(c, m, n);
    if (accumulate)
        C.noalias() += A * B.transpose();
    else
        C.noalias() = A * B.transpose();
}

// ---------------------------------------------------------------------------
// convolution (stride 1, same padding, odd kernel)
// ---------------------------------------------------------------------------

template <class T>
class Conv2d {
public:
    Conv2d(std::string name, int in_channels, int out_channels, int kernel, Rng& rng)
        : in_(in_channels), out_(out_channels), k_(kernel) {
        weight_.name = name + ".weight";
        bias_.name = name + ".bias";
        const double stddev = std::sqrt(2.0 / (static_cast<double>(in_channels) * kernel * kernel));
        weight_.value = Tensor<T>::randn({out_channels, in_channels, kernel, kernel}, rng,
                                         static_cast<T>(stddev));
        weight_.grad = Tensor<T>(weight_.value.shape());
        bias_.value = Tensor<T>({out_channels});
        bias_.grad = Tensor<T>({out_channels});
    }

    Tensor<T> forward(const Tensor<T>& x) {
        input_ = x;
        const std::int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        Tensor<T> y({n, out_, h, w});
        const std::int64_t hw = h * w, ckk = static_cast<std::int64_t>(in_) * k_ * k_;
#pragma omp parallel for schedule(static)
        for (std::int64_t b = 0; b < n; ++b) {
            std::vector<T> cols;
            const T* colp = make_cols(x.data() + b * in_ * hw, h, w, cols);
            gemm(weight_.value.data(), out_, ckk, colp, hw, y.data() + b * out_ * hw, false);
            for (std::int64_t co = 0; co < out_; ++co) {
                T* row = y.data() + (b * out_ + co) * hw;
                const T bv = bias_.value[co];
                for (std::int64_t i = 0; i < hw; ++i) row[i] += bv;
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const Tensor<T>& x = input_;
        const std::int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::int64_t hw = h * w, ckk = static_cast<std::int64_t>(in_) * k_ * k_;
        Tensor<T> dx(x.shape());
        // per-sample weight-gradient buffers, reduced in fixed order afterwards
        std::vector<Tensor<T>> dw(static_cast<std::size_t>(n));
        std::vector<std::vector<T>> db(static_cast<std::size_t>(n),
                                       std::vector<T>(static_cast<std::size_t>(out_), T(0)));
#pragma omp parallel for schedule(static)
        for (std::int64_t b = 0; b < n; ++b) {
            std::vector<T> cols;
            const T* colp = make_cols(x.data() + b * in_ * hw, h, w, cols);
            dw[static_cast<std::size_t>(b)] = Tensor<T>(weight_.value.shape());
            gemm_a_bt(dy.data() + b * out_ * hw, out_, hw, colp, ckk,
                      dw[static_cast<std::size_t>(b)].data(), false);
            for (std::int64_t co = 0; co < out_; ++co) {
                const T* row = dy.data() + (b * out_ + co) * hw;
                T acc = T(0);
                for (std::int64_t i = 0; i < hw; ++i) acc += row[i];
                db[static_cast<std::size_t>(b)][static_cast<std::size_t>(co)] = acc;
            }
            // dcols = W^T * dy_b, then scatter back to dx
            std::vector<T> dcols(static_cast<std::size_t>(ckk * hw));
            gemm_at_b(weight_.value.data(), out_, ckk, dy.data() + b * out_ * hw, hw,
                      dcols.data(), false);
            scatter_cols(dcols.data(), h, w, dx.data() + b * in_ * hw);
        }
        for (std::int64_t b = 0; b < n; ++b) {
            for (std::int64_t i = 0; i < weight_.grad.numel(); ++i)
                weight_.grad[i] += dw[static_cast<std::size_t>(b)][i];
            for (std::int64_t co = 0; co < out_; ++co)
                bias_.grad[co] += db[static_cast<std::size_t>(b)][static_cast<std::size_t>(co)];
        }
        weight_.touched = true;
        bias_.touched = true;
        return dx;
    }

    void collect(std::vector<Parameter<T>*>& out) {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }

    int out_channels() const { return out_; }

private:
    // k==1 avoids the im2col copy entirely
    const T* make_cols(const T* x, std::int64_t h, std::int64_t w, std::vector<T>& cols) const {
        if (k_ == 1) return x;
        const std::int64_t hw = h * w, pad = k_ / 2;
        cols.assign(static_cast<std::size_t>(in_ * k_ * k_ * hw), T(0));
        for (std::int64_t ci = 0; ci < in_; ++ci)
            for (std::int64_t dr = 0; dr < k_; ++dr)
                for (std::int64_t dc = 0; dc < k_; ++dc) {
                    T* dst = cols.data() + ((ci * k_ + dr) * k_ + dc) * hw;
                    const std::int64_t r_lo = std::max<std::int64_t>(0, pad - dr);
                    const std::int64_t r_hi = std::min<std::int64_t>(h, h + pad - dr);
                    for (std::int64_t r = r_lo; r < r_hi; ++r) {
                        const std::int64_t src_r = r + dr - pad;
                        const std::int64_t c_lo = std::max<std::int64_t>(0, pad - dc);
                        const std::int64_t c_hi = std::min<std::int64_t>(w, w + pad - dc);
                        const T* src = x + ci * hw + src_r * w + dc - pad;
                        T* d = dst + r * w;
                        for (std::int64_t c = c_lo; c < c_hi; ++c) d[c] = src[c];
                    }
                }
        return cols.data();
    }

    void scatter_cols(const T* dcols, std::int64_t h, std::int64_t w, T* dx) const {
        const std::int64_t hw = h * w, pad = k_ / 2;
        if (k_ == 1) {
            for (std::int64_t i = 0; i < in_ * hw; ++i) dx[i] += dcols[i];
            return;
        }
        for (std::int64_t ci = 0; ci < in_; ++ci)
            for (std::int64_t dr = 0; dr < k_; ++dr)
                for (std::int64_t dc = 0; dc < k_; ++dc) {
                    const T* src = dcols + ((ci * k_ + dr) * k_ + dc) * hw;
                    const std::int64_t r_lo = std::max<std::int64_t>(0, pad - dr);
                    const std::int64_t r_hi = std::min<std::int64_t>(h, h + pad - dr);
                    for (std::int64_t r = r_lo; r < r_hi; ++r) {
                        const std::int64_t src_r = r + dr - pad;
                        const std::int64_t c_lo = std::max<std::int64_t>(0, pad - dc);
                        const std::int64_t c_hi = std::min<std::int64_t>(w, w + pad - dc);
                        T* d = dx + ci * hw + src_r * w + dc - pad;
                        const T* s = src + r * w;
                        for (std::int64_t c = c_lo; c < c_hi; ++c) d[c] += s[c];
                    }
                }
    }

    int in_, out_, k_;
    Parameter<T> weight_, bias_;
    Tensor<T> input_;
};

// ---------------------------------------------------------------------------
// transposed convolution, kernel 2, stride 2 (the U-Net "up-convolution")
// ---------------------------------------------------------------------------

template <class T>
class ConvTranspose2x2 {
public:
    ConvTranspose2x2(std::string name, int in_channels, int out_channels, Rng& rng)
        : in_(in_channels), out_(out_channels) {
        weight_.name = name + ".weight";
        bias_.name = name + ".bias";
        const double stddev = std::sqrt(2.0 / (static_cast<double>(in_channels) * 4.0));
        // stored pre-packed as (out*4, in) so forward is a single GEMM
        weight_.value = Tensor<T>::randn({out_channels * 4, in_channels}, rng,
                                         static_cast<T>(stddev));
        weight_.grad = Tensor<T>(weight_.value.shape());
        bias_.value = Tensor<T>({out_channels});
        bias_.grad = Tensor<T>({out_channels});
    }

    Tensor<T> forward(const Tensor<T>& x) {
        input_ = x;
        const std::int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::int64_t hw = h * w, oh = 2 * h, ow = 2 * w;
        Tensor<T> y({n, out_, oh, ow});
#pragma omp parallel for schedule(static)
        for (std::int64_t b = 0; b < n; ++b) {
            std::vector<T> tmp(static_cast<std::size_t>(out_ * 4 * hw));
            gemm(weight_.value.data(), out_ * 4, in_, x.data() + b * in_ * hw, hw, tmp.data(),
                 false);
            for (std::int64_t co = 0; co < out_; ++co) {
                const T bv = bias_.value[co];
                for (std::int64_t q = 0; q < 4; ++q) {
                    const std::int64_t a = q / 2, bb = q % 2;
                    const T* src = tmp.data() + (co * 4 + q) * hw;
                    T* dst = y.data() + (b * out_ + co) * oh * ow;
                    for (std::int64_t r = 0; r < h; ++r)
                        for (std::int64_t c = 0; c < w; ++c)
                            dst[(2 * r + a) * ow + 2 * c + bb] = src[r * w + c] + bv;
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const Tensor<T>& x = input_;
        const std::int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::int64_t hw = h * w, oh = 2 * h, ow = 2 * w;
        Tensor<T> dx(x.shape());
        std::vector<Tensor<T>> dw(static_cast<std::size_t>(n));
        std::vector<std::vector<T>> db(static_cast<std::size_t>(n),
                                       std::vector<T>(static_cast<std::size_t>(out_), T(0)));
#pragma omp parallel for schedule(static)
        for (std::int64_t b = 0; b < n; ++b) {
            // gather dy into the packed (out*4, hw) layout
            std::vector<T> g(static_cast<std::size_t>(out_ * 4 * hw));
            for (std::int64_t co = 0; co < out_; ++co) {
                const T* src = dy.data() + (b * out_ + co) * oh * ow;
                T acc = T(0);
                for (std::int64_t q = 0; q < 4; ++q) {
                    const std::int64_t a = q / 2, bb = q % 2;
                    T* dst = g.data() + (co * 4 + q) * hw;
                    for (std::int64_t r = 0; r < h; ++r)
                        for (std::int64_t c = 0; c < w; ++c)
                            dst[r * w + c] = src[(2 * r + a) * ow + 2 * c + bb];
                }
                for (std::int64_t i = 0; i < oh * ow; ++i) acc += src[i];
                db[static_cast<std::size_t>(b)][static_cast<std::size_t>(co)] = acc;
            }
            dw[static_cast<std::size_t>(b)] = Tensor<T>(weight_.value.shape());
            gemm_a_bt(g.data(), out_ * 4, hw, x.data() + b * in_ * hw, in_,
                      dw[static_cast<std::size_t>(b)].data(), false);
            gemm_at_b(weight_.value.data(), out_ * 4, in_, g.data(), hw,
                      dx.data() + b * in_ * hw, false);
        }
        for (std::int64_t b = 0; b < n; ++b) {
            for (std::int64_t i = 0; i < weight_.grad.numel(); ++i)
                weight_.grad[i] += dw[static_cast<std::size_t>(b)][i];
            for (std::int64_t co = 0; co < out_; ++co)
                bias_.grad[co] += db[static_cast<std::size_t>(b)][static_cast<std::size_t>(co)];
        }
        weight_.touched = true;
        bias_.touched = true;
        return dx;
    }

    void collect(std::vector<Parameter<T>*>& out) {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }

private:
    int in_, out_;
    Parameter<T> weight_, bias_;
    Tensor<T> input_;
};

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

template <class T>
class BatchNorm2d {
public:
    BatchNorm2d(std::string name, int channels, double momentum = 0.1, double eps = 1e-5)
        : c_(channels), momentum_(momentum), eps_(eps), prefix_(std::move(name)) {
        gamma_.name = prefix_ + ".gamma";
        beta_.name = prefix_ + ".beta";
        gamma_.value = Tensor<T>::full({channels}, T(1));
        gamma_.grad = Tensor<T>({channels});
        beta_.value = Tensor<T>({channels});
        beta_.grad = Tensor<T>({channels});
        running_mean_ = Tensor<T>({channels});
        running_var_ = Tensor<T>::full({channels}, T(1));
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) {
        const std::int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3), hw = h * w;
        const std::int64_t m = n * hw;
        Tensor<T> y(x.shape());
        train_mode_ = train;
        if (train) {
            xhat_ = Tensor<T>(x.shape());
            invstd_.assign(static_cast<std::size_t>(c_), 0.0);
            mean_.assign(static_cast<std::size_t>(c_), 0.0);
#pragma omp parallel for schedule(static)
            for (std::int64_t ch = 0; ch < c_; ++ch) {
                double sum = 0.0, sq = 0.0;
                for (std::int64_t b = 0; b < n; ++b) {
                    const T* src = x.data() + (b * c_ + ch) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) {
                        const double v = static_cast<double>(src[i]);
                        sum += v;
                        sq += v * v;
                    }
                }
                const double mean = sum / static_cast<double>(m);
                const double var = std::max(0.0, sq / static_cast<double>(m) - mean * mean);
                const double invstd = 1.0 / std::sqrt(var + eps_);
                mean_[static_cast<std::size_t>(ch)] = mean;
                invstd_[static_cast<std::size_t>(ch)] = invstd;
                const double g = static_cast<double>(gamma_.value[ch]);
                const double bt = static_cast<double>(beta_.value[ch]);
                for (std::int64_t b = 0; b < n; ++b) {
                    const T* src = x.data() + (b * c_ + ch) * hw;
                    T* xh = xhat_.data() + (b * c_ + ch) * hw;
                    T* dst = y.data() + (b * c_ + ch) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) {
                        const double norm = (static_cast<double>(src[i]) - mean) * invstd;
                        xh[i] = static_cast<T>(norm);
                        dst[i] = static_cast<T>(norm * g + bt);
                    }
                }
                // unbiased variance feeds the running estimate
                const double unbiased = m > 1 ? var * static_cast<double>(m) /
                                                    static_cast<double>(m - 1)
                                              : var;
                running_mean_[ch] = static_cast<T>((1.0 - momentum_) *
                                                   static_cast<double>(running_mean_[ch]) +
                                                   momentum_ * mean);
                running_var_[ch] = static_cast<T>((1.0 - momentum_) *
                                                  static_cast<double>(running_var_[ch]) +
                                                  momentum_ * unbiased);
            }
        } else {
#pragma omp parallel for schedule(static)
            for (std::int64_t ch = 0; ch < c_; ++ch) {
                const double invstd = 1.0 / std::sqrt(static_cast<double>(running_var_[ch]) + eps_);
                const double mean = static_cast<double>(running_mean_[ch]);
                const double g = static_cast<double>(gamma_.value[ch]);
                const double bt = static_cast<double>(beta_.value[ch]);
                for (std::int64_t b = 0; b < n; ++b) {
                    const T* src = x.data() + (b * c_ + ch) * hw;
                    T* dst = y.data() + (b * c_ + ch) * hw;
                    for (std::int64_t i = 0; i < hw; ++i)
                        dst[i] = static_cast<T>((static_cast<double>(src[i]) - mean) * invstd * g + bt);
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        if (!train_mode_) throw std::logic_error("BatchNorm2d: backward requires train mode");
        const std::int64_t n = dy.dim(0), h = dy.dim(2), w = dy.dim(3), hw = h * w;
        const std::int64_t m = n * hw;
        Tensor<T> dx(dy.shape());
#pragma omp parallel for schedule(static)
        for (std::int64_t ch = 0; ch < c_; ++ch) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::int64_t b = 0; b < n; ++b) {
                const T* dyp = dy.data() + (b * c_ + ch) * hw;
                const T* xh = xhat_.data() + (b * c_ + ch) * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                    sum_dy += static_cast<double>(dyp[i]);
                    sum_dy_xhat += static_cast<double>(dyp[i]) * static_cast<double>(xh[i]);
                }
            }
            gamma_.grad[ch] += static_cast<T>(sum_dy_xhat);
            beta_.grad[ch] += static_cast<T>(sum_dy);
            const double g = static_cast<double>(gamma_.value[ch]);
            const double invstd = invstd_[static_cast<std::size_t>(ch)];
            const double scale = g * invstd / static_cast<double>(m);
            for (std::int64_t b = 0; b < n; ++b) {
                const T* dyp = dy.data() + (b * c_ + ch) * hw;
                const T* xh = xhat_.data() + (b * c_ + ch) * hw;
                T* dxp = dx.data() + (b * c_ + ch) * hw;
                for (std::int64_t i = 0; i < hw; ++i)
                    dxp[i] = static_cast<T>(scale * (static_cast<double>(m) * static_cast<double>(dyp[i]) -
                                                     sum_dy -
                                                     static_cast<double>(xh[i]) * sum_dy_xhat));
            }
        }
        gamma_.touched = true;
        beta_.touched = true;
        return dx;
    }

    void collect(std::vector<Parameter<T>*>& out) {
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }

    void collect_buffers(std::vector<std::pair<std::string, Tensor<T>*>>& out) {
        out.push_back({prefix_ + ".running_mean", &running_mean_});
        out.push_back({prefix_ + ".running_var", &running_var_});
    }

private:
    int c_;
    double momentum_, eps_;
    std::string prefix_;
    Parameter<T> gamma_, beta_;
    Tensor<T> running_mean_, running_var_;
    Tensor<T> xhat_;
    std::vector<double> invstd_, mean_;
    bool train_mode_ = false;
};

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

template <class T>
class ReLU {
public:
    Tensor<T> forward(const Tensor<T>& x) {
        mask_.assign(static_cast<std::size_t>(x.numel()), 0);
        Tensor<T> y(x.shape());
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            if (x[i] > T(0)) {
                y[i] = x[i];
                mask_[static_cast<std::size_t>(i)] = 1;
            }
        }
        return y;
    }
    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx(dy.shape());
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < dy.numel(); ++i)
            dx[i] = mask_[static_cast<std::size_t>(i)] ? dy[i] : T(0);
        return dx;
    }

private:
    std::vector<std::uint8_t> mask_;
};

template <class T>
class Sigmoid {
public:
    Tensor<T> forward(const Tensor<T>& x) {
        y_ = Tensor<T>(x.shape());
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < x.numel(); ++i)
            y_[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x[i]))));
        return y_;
    }
    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx(dy.shape());
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < dy.numel(); ++i) {
            const double y = static_cast<double>(y_[i]);
            dx[i] = static_cast<T>(static_cast<double>(dy[i]) * y * (1.0 - y));
        }
        return dx;
    }

private:
    Tensor<T> y_;
};

// per-pixel normalized exponential over the channel dimension
template <class T>
class SoftmaxChannel {
public:
    Tensor<T> forward(const Tensor<T>& x) {
        y_ = Tensor<T>(x.shape());
        const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
#pragma omp parallel for schedule(static)
        for (std::int64_t b = 0; b < n; ++b) {
            const T* xb = x.data() + b * c * hw;
            T* yb = y_.data() + b * c * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
                double zmax = -1e300;
                for (std::int64_t ch = 0; ch < c; ++ch)
                    zmax = std::max(zmax, static_cast<double>(xb[ch * hw + i]));
                double den = 0.0;
                for (std::int64_t ch = 0; ch < c; ++ch)
                    den += std::exp(static_cast<double>(xb[ch * hw + i]) - zmax);
                for (std::int64_t ch = 0; ch < c; ++ch)
                    yb[ch * hw + i] = static_cast<T>(
                        std::exp(static_cast<double>(xb[ch * hw + i]) - zmax) / den);
            }
        }
        return y_;
    }
    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx(dy.shape());
        const std::int64_t n = dy.dim(0), c = dy.dim(1), hw = dy.dim(2) * dy.dim(3);
#pragma omp parallel for schedule(static)
        for (std::int64_t b = 0; b < n; ++b) {
            const T* dyb = dy.data() + b * c * hw;
            const T* yb = y_.data() + b * c * hw;
            T* dxb = dx.data() + b * c * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
                double dot = 0.0;
                for (std::int64_t ch = 0; ch < c; ++ch)
                    dot += static_cast<double>(dyb[ch * hw + i]) * static_cast<double>(yb[ch * hw + i]);
                for (std::int64_t ch = 0; ch < c; ++ch)
                    dxb[ch * hw + i] = static_cast<T>(static_cast<double>(yb[ch * hw + i]) *
                                                      (static_cast<double>(dyb[ch * hw + i]) - dot));
            }
        }
        return dx;
    }

private:
    Tensor<T> y_;
};

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

template <class T>
class MaxPool2x2 {
public:
    Tensor<T> forward(const Tensor<T>& x) {
        const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        if (h % 2 || w % 2) throw std::invalid_argument("MaxPool2x2: odd spatial size");
        const std::int64_t oh = h / 2, ow = w / 2;
        in_h_ = h;
        in_w_ = w;
        Tensor<T> y({n, c, oh, ow});
        indices_ = Tensor<std::int32_t>({n, c, oh, ow});
#pragma omp parallel for schedule(static)
        for (std::int64_t p = 0; p < n * c; ++p) {
            const T* src = x.data() + p * h * w;
            T* dst = y.data() + p * oh * ow;
            std::int32_t* idx = indices_.data() + p * oh * ow;
            for (std::int64_t r = 0; r < oh; ++r)
                for (std::int64_t cc = 0; cc < ow; ++cc) {
                    std::int64_t best = 2 * r * w + 2 * cc;
                    T bv = src[best];
                    const std::int64_t cands[3] = {2 * r * w + 2 * cc + 1,
                                                   (2 * r + 1) * w + 2 * cc,
                                                   (2 * r + 1) * w + 2 * cc + 1};
                    for (const auto cand : cands)
                        if (src[cand] > bv) {
                            bv = src[cand];
                            best = cand;
                        }
                    dst[r * ow + cc] = bv;
                    idx[r * ow + cc] = static_cast<std::int32_t>(best);
                }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const std::int64_t n = dy.dim(0), c = dy.dim(1), oh = dy.dim(2), ow = dy.dim(3);
        Tensor<T> dx({n, c, in_h_, in_w_});
#pragma omp parallel for schedule(static)
        for (std::int64_t p = 0; p < n * c; ++p) {
            const T* dyp = dy.data() + p * oh * ow;
            const std::int32_t* idx = indices_.data() + p * oh * ow;
            T* dxp = dx.data() + p * in_h_ * in_w_;
            for (std::int64_t i = 0; i < oh * ow; ++i) dxp[idx[i]] += dyp[i];
        }
        return dx;
    }

    const Tensor<std::int32_t>& indices() const { return indices_; }
    std::int64_t in_h() const { return in_h_; }
    std::int64_t in_w() const { return in_w_; }

private:
    Tensor<std::int32_t> indices_;
    std::int64_t in_h_ = 0, in_w_ = 0;
};

// places values at the argmax positions recorded by the matching pool
template <class T>
class MaxUnpool2x2 {
public:
    Tensor<T> forward(const Tensor<T>& x, const Tensor<std::int32_t>& indices,
                      std::int64_t out_h, std::int64_t out_w) {
        indices_ = &indices;
        const std::int64_t n = x.dim(0), c = x.dim(1), oh = x.dim(2), ow = x.dim(3);
        Tensor<T> y({n, c, out_h, out_w});
#pragma omp parallel for schedule(static)
        for (std::int64_t p = 0; p < n * c; ++p) {
            const T* src = x.data() + p * oh * ow;
            const std::int32_t* idx = indices.data() + p * oh * ow;
            T* dst = y.data() + p * out_h * out_w;
            for (std::int64_t i = 0; i < oh * ow; ++i) dst[idx[i]] = src[i];
        }
        small_h_ = oh;
        small_w_ = ow;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const std::int64_t n = dy.dim(0), c = dy.dim(1);
        Tensor<T> dx({n, c, small_h_, small_w_});
        const std::int64_t ohw = dy.dim(2) * dy.dim(3);
#pragma omp parallel for schedule(static)
        for (std::int64_t p = 0; p < n * c; ++p) {
            const T* dyp = dy.data() + p * ohw;
            const std::int32_t* idx = indices_->data() + p * small_h_ * small_w_;
            T* dxp = dx.data() + p * small_h_ * small_w_;
            for (std::int64_t i = 0; i < small_h_ * small_w_; ++i) dxp[i] = dyp[idx[i]];
        }
        return dx;
    }

private:
    const Tensor<std::int32_t>* indices_ = nullptr;
    std::int64_t small_h_ = 0, small_w_ = 0;
};

// channel concatenation of two activations with equal spatial extent
template <class T>
class ConcatChannels {
public:
    Tensor<T> forward(const Tensor<T>& a, const Tensor<T>& b) {
        const std::int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
        ca_ = ca;
        Tensor<T> y({n, ca + cb, a.dim(2), a.dim(3)});
#pragma omp parallel for schedule(static)
        for (std::int64_t bn = 0; bn < n; ++bn) {
            std::copy(a.data() + bn * ca * hw, a.data() + (bn + 1) * ca * hw,
                      y.data() + bn * (ca + cb) * hw);
            std::copy(b.data() + bn * cb * hw, b.data() + (bn + 1) * cb * hw,
                      y.data() + bn * (ca + cb) * hw + ca * hw);
        }
        return y;
    }

    std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& dy) {
        const std::int64_t n = dy.dim(0), c = dy.dim(1), hw = dy.dim(2) * dy.dim(3);
        const std::int64_t cb = c - ca_;
        Tensor<T> da({n, ca_, dy.dim(2), dy.dim(3)});
        Tensor<T> db({n, cb, dy.dim(2), dy.dim(3)});
#pragma omp parallel for schedule(static)
        for (std::int64_t bn = 0; bn < n; ++bn) {
            std::copy(dy.data() + bn * c * hw, dy.data() + bn * c * hw + ca_ * hw,
                      da.data() + bn * ca_ * hw);
            std::copy(dy.data() + bn * c * hw + ca_ * hw, dy.data() + (bn + 1) * c * hw,
                      db.data() + bn * cb * hw);
        }
        return {std::move(da), std::move(db)};
    }

private:
    std::int64_t ca_ = 0;
};

}  // namespace tilesemi::nn
