#pragma once

// Independent MS-SSIM reference used as the oracle for the library
// implementation: direct 2D window loops, its own downsampler, no shared
// code with semsec::ms_ssim.

#include <cmath>
#include <vector>

#include "semsec/tensor.hpp"

namespace semsec_test {

namespace detail {

struct RefWindow {
    double w[11][11];
    RefWindow() {
        double s = 0;
        for (int i = 0; i < 11; ++i)
            for (int j = 0; j < 11; ++j) {
                const double di = i - 5, dj = j - 5;
                w[i][j] = std::exp(-(di * di + dj * dj) / (2 * 1.5 * 1.5));
                s += w[i][j];
            }
        for (auto& row : w)
            for (auto& v : row) v /= s;
    }
};

using Plane3 = std::vector<std::vector<std::vector<double>>>;

inline void ref_scale(const Plane3& x, const Plane3& y, double& l_out, double& cs_out) {
    static const RefWindow win;
    const double C1 = 1e-4, C2 = 9e-4;
    double lsum = 0, csum = 0;
    long count = 0;
    const int C = static_cast<int>(x.size());
    const int H = static_cast<int>(x[0].size());
    const int W = static_cast<int>(x[0][0].size());
    for (int c = 0; c < C; ++c)
        for (int y0 = 0; y0 + 11 <= H; ++y0)
            for (int x0 = 0; x0 + 11 <= W; ++x0) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int i = 0; i < 11; ++i)
                    for (int j = 0; j < 11; ++j) {
                        const double a = x[c][y0 + i][x0 + j];
                        const double b = y[c][y0 + i][x0 + j];
                        mx += win.w[i][j] * a;
                        my += win.w[i][j] * b;
                        sxx += win.w[i][j] * a * a;
                        syy += win.w[i][j] * b * b;
                        sxy += win.w[i][j] * a * b;
                    }
                const double vx = sxx - mx * mx, vy = syy - my * my, vxy = sxy - mx * my;
                lsum += (2 * mx * my + C1) / (mx * mx + my * my + C1);
                csum += (2 * vxy + C2) / (std::max(0.0, vx) + std::max(0.0, vy) + C2);
                ++count;
            }
    l_out = lsum / count;
    cs_out = csum / count;
}

inline Plane3 ref_downsample(const Plane3& x) {
    const int C = static_cast<int>(x.size());
    const int H = static_cast<int>(x[0].size()) / 2;
    const int W = static_cast<int>(x[0][0].size()) / 2;
    Plane3 o(static_cast<std::size_t>(C),
             std::vector<std::vector<double>>(static_cast<std::size_t>(H), std::vector<double>(static_cast<std::size_t>(W))));
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx)
                o[c][y][xx] = (x[c][2 * y][2 * xx] + x[c][2 * y][2 * xx + 1] + x[c][2 * y + 1][2 * xx] +
                               x[c][2 * y + 1][2 * xx + 1]) /
                              4.0;
    return o;
}

} // namespace detail

inline double msssim_reference(const semsec::Tensor<float>& xt, const semsec::Tensor<float>& yt) {
    const int C = xt.dim(0), H = xt.dim(1), W = xt.dim(2);
    detail::Plane3 x(static_cast<std::size_t>(C),
                     std::vector<std::vector<double>>(static_cast<std::size_t>(H), std::vector<double>(static_cast<std::size_t>(W))));
    auto y = x;
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                x[c][i][j] = xt[(static_cast<std::int64_t>(c) * H + i) * W + j];
                y[c][i][j] = yt[(static_cast<std::int64_t>(c) * H + i) * W + j];
            }
    int scales = 1;
    while (scales < 5 && (std::min(H, W) >> scales) >= 11) ++scales;
    const double canonical[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    double wsum = 0;
    for (int j = 0; j < scales; ++j) wsum += canonical[j];
    double value = 1;
    for (int j = 0; j < scales; ++j) {
        double l, cs;
        detail::ref_scale(x, y, l, cs);
        value *= std::pow(std::max(0.0, cs), canonical[j] / wsum);
        if (j == scales - 1) value *= std::pow(std::max(0.0, l), canonical[j] / wsum);
        if (j + 1 < scales) {
            x = detail::ref_downsample(x);
            y = detail::ref_downsample(y);
        }
    }
    return value;
}

} // namespace semsec_test
