#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "semsec/common.hpp"

namespace semsec {

/// Dense row-major tensor. Rank is dynamic; everything in the library uses
/// rank 1 (vectors), 2 (batched vectors) or 4 (batched images, B x C x H x W).
template <class T>
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(count(shape_), T(0));
    }

    Tensor(std::vector<int> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::size_t>(count(shape_)) != data_.size())
            throw InvalidShape("tensor data does not match shape");
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static std::int64_t count(const std::vector<int>& shape) {
        std::int64_t n = 1;
        for (int d : shape) {
            if (d < 0) throw InvalidShape("negative dimension");
            n *= d;
        }
        return n;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    T operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    /// B x C x H x W indexing.
    T& at4(int b, int c, int h, int w) {
        return data_[static_cast<std::size_t>(((static_cast<std::int64_t>(b) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    T at4(int b, int c, int h, int w) const {
        return data_[static_cast<std::size_t>(((static_cast<std::int64_t>(b) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }

    Tensor reshaped(std::vector<int> shape) const {
        if (count(shape) != size()) throw InvalidShape("reshape changes element count");
        Tensor out = *this;
        out.shape_ = std::move(shape);
        return out;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

  private:
    std::vector<int> shape_;
    std::vector<T> data_;
};

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using EMap = Eigen::Map<EMat<T>>;
template <class T>
using ECMap = Eigen::Map<const EMat<T>>;

template <class T>
void fill_normal(Tensor<T>& t, Rng& rng, T stddev, T mean = T(0)) {
    std::normal_distribution<double> d(static_cast<double>(mean), static_cast<double>(stddev));
    for (auto& v : t.vec()) v = static_cast<T>(d(rng));
}

template <class T>
void fill_uniform(Tensor<T>& t, Rng& rng, T lo, T hi) {
    std::uniform_real_distribution<double> d(static_cast<double>(lo), static_cast<double>(hi));
    for (auto& v : t.vec()) v = static_cast<T>(d(rng));
}

// ---------------------------------------------------------------------------
// Raw kernels. The autodiff tape is a thin layer over these, so the exact same
// arithmetic runs on tape-built graphs and plain inference paths.
// ---------------------------------------------------------------------------

struct Conv2dShape {
    int batch, in_c, in_h, in_w;
    int out_c, k, stride, pad;
    int out_h() const { return (in_h + 2 * pad - k) / stride + 1; }
    int out_w() const { return (in_w + 2 * pad - k) / stride + 1; }
};

namespace detail {

/// im2col: (B*OH*OW) x (C*K*K), row-major.
template <class T>
void im2col(const Tensor<T>& x, const Conv2dShape& s, std::vector<T>& col) {
    const int oh = s.out_h(), ow = s.out_w();
    const std::int64_t cols = static_cast<std::int64_t>(s.in_c) * s.k * s.k;
    col.assign(static_cast<std::size_t>(static_cast<std::int64_t>(s.batch) * oh * ow * cols), T(0));
    const T* xp = x.data();
    for (int b = 0; b < s.batch; ++b) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                T* row = col.data() + ((static_cast<std::int64_t>(b) * oh + oy) * ow + ox) * cols;
                const int iy0 = oy * s.stride - s.pad;
                const int ix0 = ox * s.stride - s.pad;
                for (int c = 0; c < s.in_c; ++c) {
                    const T* plane = xp + (static_cast<std::int64_t>(b) * s.in_c + c) * s.in_h * s.in_w;
                    for (int ky = 0; ky < s.k; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= s.in_h) continue;
                        for (int kx = 0; kx < s.k; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= s.in_w) continue;
                            row[(static_cast<std::int64_t>(c) * s.k + ky) * s.k + kx] = plane[iy * s.in_w + ix];
                        }
                    }
                }
            }
        }
    }
}

/// Transposed scatter-add of im2col.
template <class T>
void col2im(const std::vector<T>& col, const Conv2dShape& s, Tensor<T>& dx) {
    const int oh = s.out_h(), ow = s.out_w();
    const std::int64_t cols = static_cast<std::int64_t>(s.in_c) * s.k * s.k;
    T* xp = dx.data();
    for (int b = 0; b < s.batch; ++b) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const T* row = col.data() + ((static_cast<std::int64_t>(b) * oh + oy) * ow + ox) * cols;
                const int iy0 = oy * s.stride - s.pad;
                const int ix0 = ox * s.stride - s.pad;
                for (int c = 0; c < s.in_c; ++c) {
                    T* plane = xp + (static_cast<std::int64_t>(b) * s.in_c + c) * s.in_h * s.in_w;
                    for (int ky = 0; ky < s.k; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= s.in_h) continue;
                        for (int kx = 0; kx < s.k; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= s.in_w) continue;
                            plane[iy * s.in_w + ix] += row[(static_cast<std::int64_t>(c) * s.k + ky) * s.k + kx];
                        }
                    }
                }
            }
        }
    }
}

} // namespace detail

/// y(B,OC,OH,OW) = conv2d(x(B,C,H,W), w(OC,C,K,K)) + b(OC).
/// If col_out is non-null, the im2col matrix is kept for the backward pass.
template <class T>
Tensor<T> conv2d_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b,
                     int stride, int pad, std::vector<T>* col_out = nullptr) {
    if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1))
        throw InvalidShape("conv2d: bad input/weight shapes");
    Conv2dShape s{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, pad};
    if (w.dim(2) != w.dim(3)) throw InvalidShape("conv2d: non-square kernel");
    const int oh = s.out_h(), ow = s.out_w();
    std::vector<T> local;
    std::vector<T>& col = col_out ? *col_out : local;
    detail::im2col(x, s, col);

    const std::int64_t rows = static_cast<std::int64_t>(s.batch) * oh * ow;
    const std::int64_t ck2 = static_cast<std::int64_t>(s.in_c) * s.k * s.k;
    ECMap<T> colm(col.data(), rows, ck2);
    ECMap<T> wm(w.data(), s.out_c, ck2);
    EMat<T> ym = colm * wm.transpose(); // rows x OC

    Tensor<T> y({s.batch, s.out_c, oh, ow});
    T* yp = y.data();
    for (int bi = 0; bi < s.batch; ++bi)
        for (int c = 0; c < s.out_c; ++c) {
            const T bias = b ? (*b)[c] : T(0);
            for (int p = 0; p < oh * ow; ++p)
                yp[((static_cast<std::int64_t>(bi) * s.out_c + c) * oh * ow) + p] =
                    ym(static_cast<std::int64_t>(bi) * oh * ow + p, c) + bias;
        }
    return y;
}

/// Gradients of conv2d. `col` must be the matrix cached by conv2d_fwd.
template <class T>
void conv2d_bwd(const Tensor<T>& dy, const Tensor<T>& w, const std::vector<T>& col,
                const Conv2dShape& s, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
    const int oh = s.out_h(), ow = s.out_w();
    const std::int64_t rows = static_cast<std::int64_t>(s.batch) * oh * ow;
    const std::int64_t ck2 = static_cast<std::int64_t>(s.in_c) * s.k * s.k;

    // dy reordered to rows x OC
    EMat<T> dym(rows, s.out_c);
    const T* dp = dy.data();
    for (int bi = 0; bi < s.batch; ++bi)
        for (int c = 0; c < s.out_c; ++c)
            for (int p = 0; p < oh * ow; ++p)
                dym(static_cast<std::int64_t>(bi) * oh * ow + p, c) =
                    dp[((static_cast<std::int64_t>(bi) * s.out_c + c) * oh * ow) + p];

    if (db) {
        for (int c = 0; c < s.out_c; ++c) (*db)[c] += dym.col(c).sum();
    }
    if (dw) {
        ECMap<T> colm(col.data(), rows, ck2);
        EMap<T> dwm(dw->data(), s.out_c, ck2);
        dwm.noalias() += dym.transpose() * colm;
    }
    if (dx) {
        ECMap<T> wm(w.data(), s.out_c, ck2);
        EMat<T> dcol = dym * wm; // rows x ck2
        std::vector<T> dcolv(dcol.data(), dcol.data() + rows * ck2);
        detail::col2im(dcolv, s, *dx);
    }
}

/// y(B,O) = x(B,I) * w(O,I)^T + b(O)
template <class T>
Tensor<T> dense_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
        throw InvalidShape("dense: bad shapes");
    const int B = x.dim(0), I = x.dim(1), O = w.dim(0);
    Tensor<T> y({B, O});
    ECMap<T> xm(x.data(), B, I);
    ECMap<T> wm(w.data(), O, I);
    EMap<T> ym(y.data(), B, O);
    ym.noalias() = xm * wm.transpose();
    if (b)
        for (int bi = 0; bi < B; ++bi)
            for (int o = 0; o < O; ++o) ym(bi, o) += (*b)[o];
    return y;
}

/// Nearest-neighbour 2x upsample of (B,C,H,W).
template <class T>
Tensor<T> upsample2_fwd(const Tensor<T>& x) {
    if (x.rank() != 4) throw InvalidShape("upsample2: rank-4 input required");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> y({B, C, H * 2, W * 2});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    const T v = x.at4(b, c, h, w);
                    y.at4(b, c, 2 * h, 2 * w) = v;
                    y.at4(b, c, 2 * h, 2 * w + 1) = v;
                    y.at4(b, c, 2 * h + 1, 2 * w) = v;
                    y.at4(b, c, 2 * h + 1, 2 * w + 1) = v;
                }
    return y;
}

template <class T>
void upsample2_bwd(const Tensor<T>& dy, Tensor<T>& dx) {
    const int B = dx.dim(0), C = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                    dx.at4(b, c, h, w) += dy.at4(b, c, 2 * h, 2 * w) + dy.at4(b, c, 2 * h, 2 * w + 1) +
                                          dy.at4(b, c, 2 * h + 1, 2 * w) + dy.at4(b, c, 2 * h + 1, 2 * w + 1);
}

} // namespace semsec
