#pragma once

#include <iostream>
#include <mutex>
#include <set>

#include <nlohmann/json.hpp>

#include "semsec/dataset.hpp"
#include "semsec/nn.hpp"

namespace semsec {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Pixel metrics
// ---------------------------------------------------------------------------

/// 10*log10(1 / MSE) for [0,1] images; capped at 100 dB when MSE == 0.
template <class T>
double psnr(const Tensor<T>& x, const Tensor<T>& y) {
    if (!x.same_shape(y)) throw InvalidShape("psnr: shape mismatch");
    double mse = 0;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(x.size());
    if (mse <= 0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

namespace detail {

// 11-tap Gaussian, sigma 1.5 (standard SSIM window)
inline const std::vector<double>& ssim_window() {
    static const std::vector<double> w = [] {
        std::vector<double> v(11);
        double s = 0;
        for (int i = 0; i < 11; ++i) {
            const double d = i - 5;
            v[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * 1.5 * 1.5));
            s += v[static_cast<std::size_t>(i)];
        }
        for (auto& x : v) x /= s;
        return v;
    }();
    return w;
}

/// Separable valid Gaussian filtering of an HxW plane.
inline std::vector<double> gauss_valid(const std::vector<double>& img, int H, int W, int& oh, int& ow) {
    const auto& win = ssim_window();
    const int K = 11;
    ow = W - K + 1;
    oh = H - K + 1;
    std::vector<double> tmp(static_cast<std::size_t>(H) * ow, 0.0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0;
            for (int k = 0; k < K; ++k) s += win[static_cast<std::size_t>(k)] * img[static_cast<std::size_t>(y) * W + x + k];
            tmp[static_cast<std::size_t>(y) * ow + x] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0;
            for (int k = 0; k < K; ++k) s += win[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>(y + k) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    return out;
}

struct ScaleStats {
    double luminance; // mean l map
    double contrast;  // mean cs map
};

/// Mean SSIM luminance and contrast-structure terms for one scale,
/// averaged over channels; K1=0.01, K2=0.03 on unit dynamic range.
template <class T>
ScaleStats ssim_scale(const Tensor<T>& x, const Tensor<T>& y) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    double lsum = 0, csum = 0;
    std::int64_t count = 0;
    for (int c = 0; c < C; ++c) {
        std::vector<double> xp(static_cast<std::size_t>(H) * W), yp(xp.size()), xx(xp.size()), yy(xp.size()), xy(xp.size());
        for (int i = 0; i < H * W; ++i) {
            const double a = x[static_cast<std::int64_t>(c) * H * W + i];
            const double b = y[static_cast<std::int64_t>(c) * H * W + i];
            xp[static_cast<std::size_t>(i)] = a;
            yp[static_cast<std::size_t>(i)] = b;
            xx[static_cast<std::size_t>(i)] = a * a;
            yy[static_cast<std::size_t>(i)] = b * b;
            xy[static_cast<std::size_t>(i)] = a * b;
        }
        int oh, ow;
        auto mx = gauss_valid(xp, H, W, oh, ow);
        auto my = gauss_valid(yp, H, W, oh, ow);
        auto mxx = gauss_valid(xx, H, W, oh, ow);
        auto myy = gauss_valid(yy, H, W, oh, ow);
        auto mxy = gauss_valid(xy, H, W, oh, ow);
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = std::max(0.0, mxx[i] - mx[i] * mx[i]);
            const double vy = std::max(0.0, myy[i] - my[i] * my[i]);
            const double vxy = mxy[i] - mx[i] * my[i];
            lsum += (2 * mx[i] * my[i] + C1) / (mx[i] * mx[i] + my[i] * my[i] + C1);
            csum += (2 * vxy + C2) / (vx + vy + C2);
            ++count;
        }
    }
    return {lsum / static_cast<double>(count), csum / static_cast<double>(count)};
}

template <class T>
Tensor<T> downsample2(const Tensor<T>& x) {
    const int C = x.dim(0), H = x.dim(1) / 2, W = x.dim(2) / 2;
    Tensor<T> out({C, H, W});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                const int H0 = x.dim(1), W0 = x.dim(2);
                const std::int64_t base = static_cast<std::int64_t>(c) * H0 * W0;
                out[(static_cast<std::int64_t>(c) * H + y) * W + xx] = static_cast<T>(
                    (x[base + (2 * y) * W0 + 2 * xx] + x[base + (2 * y) * W0 + 2 * xx + 1] +
                     x[base + (2 * y + 1) * W0 + 2 * xx] + x[base + (2 * y + 1) * W0 + 2 * xx + 1]) /
                    T(4));
            }
    return out;
}

inline void warn_scale_reduction(int H, int W, int scales) {
    static std::mutex mu;
    static std::set<std::pair<int, int>> seen;
    std::lock_guard<std::mutex> lk(mu);
    if (seen.insert({H, W}).second)
        std::cerr << "[semsec] ms_ssim: " << H << "x" << W << " image supports only " << scales
                  << " of 5 scales; weights renormalized\n";
}

} // namespace detail

/// Multi-scale SSIM (Wang et al. weights 0.0448/0.2856/0.3001/0.2363/0.1333,
/// 11-tap Gaussian window, luminance applied at the coarsest scale). Images
/// too small for 5 scales use the first supported weights, renormalized.
template <class T>
double ms_ssim(const Tensor<T>& x, const Tensor<T>& y) {
    if (!x.same_shape(y)) throw InvalidShape("ms_ssim: shape mismatch");
    if (x.rank() != 3) throw InvalidShape("ms_ssim: need CxHxW");
    const int H = x.dim(1), W = x.dim(2);
    if (std::min(H, W) < 11) throw InvalidShape("ms_ssim: image smaller than the 11x11 window");

    int scales = 1;
    while (scales < 5 && (std::min(H, W) >> scales) >= 11) ++scales;
    if (scales < 5) detail::warn_scale_reduction(H, W, scales);

    static constexpr double canonical[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    double wsum = 0;
    for (int j = 0; j < scales; ++j) wsum += canonical[j];

    Tensor<T> cx = x, cy = y;
    double value = 1.0;
    for (int j = 0; j < scales; ++j) {
        const auto st = detail::ssim_scale(cx, cy);
        const double w = canonical[j] / wsum;
        value *= std::pow(std::max(0.0, st.contrast), w);
        if (j == scales - 1) value *= std::pow(std::max(0.0, st.luminance), w);
        if (j + 1 < scales) {
            cx = detail::downsample2(cx);
            cy = detail::downsample2(cy);
        }
    }
    return value;
}

// ---------------------------------------------------------------------------
// Identity model: a small conv classifier whose backbone doubles as the
// perceptual feature extractor.
// ---------------------------------------------------------------------------

struct ConvSpec2 {
    int in_c, out_c, k, stride, pad;
};

struct IdentityArch {
    int channels = 3, height = 32, width = 32;
    int c1 = 16, c2 = 32, c3 = 64;
    int embed_dim = 64;
    int n_classes = 0;

    std::vector<ConvSpec2> convs() const {
        return {{channels, c1, 3, 2, 1}, {c1, c2, 3, 2, 1}, {c2, c3, 3, 2, 1}};
    }
    int flat_dim() const {
        int h = height, w = width;
        for (int i = 0; i < 3; ++i) {
            h = (h + 1) / 2;
            w = (w + 1) / 2;
        }
        return c3 * h * w;
    }
};

inline void to_json(json& j, const IdentityArch& a) {
    j = json{{"channels", a.channels}, {"height", a.height}, {"width", a.width}, {"c1", a.c1},
             {"c2", a.c2},           {"c3", a.c3},         {"embed_dim", a.embed_dim}, {"n_classes", a.n_classes}};
}
inline void from_json(const json& j, IdentityArch& a) {
    j.at("channels").get_to(a.channels);
    j.at("height").get_to(a.height);
    j.at("width").get_to(a.width);
    j.at("c1").get_to(a.c1);
    j.at("c2").get_to(a.c2);
    j.at("c3").get_to(a.c3);
    j.at("embed_dim").get_to(a.embed_dim);
    j.at("n_classes").get_to(a.n_classes);
}

enum class DecisionRule { nearest_class, cosine_threshold };

template <class T = float>
struct IdentityModel {
    IdentityArch arch;
    ParamStore<T> params;
    DecisionRule rule = DecisionRule::nearest_class;
    double tau = 0.5; // cosine threshold, calibrated to 95% TPR on clean pairs
    double holdout_accuracy = 0.0;
};

template <class T>
void init_identity_params(ParamStore<T>& p, const IdentityArch& a, Rng& rng) {
    int i = 0;
    for (const auto& c : a.convs()) {
        add_conv(p, "conv" + std::to_string(i++), c.in_c, c.out_c, c.k, rng);
    }
    add_dense(p, "embed", a.flat_dim(), a.embed_dim, rng);
    add_dense(p, "head", a.embed_dim, a.n_classes, rng);
}

/// Backbone activations (post-nonlinearity) plus embedding and logits.
template <class T>
struct IdentityGraph {
    std::vector<Var> features;
    Var embedding;
    Var logits;
};

template <class T>
IdentityGraph<T> identity_forward(Tape<T>& t, Var x, const IdentityArch& a, const BoundParams<T>& p) {
    IdentityGraph<T> g;
    Var h = x;
    int i = 0;
    for (const auto& c : a.convs()) {
        const std::string n = "conv" + std::to_string(i++);
        h = t.leaky_relu(t.conv2d(h, p[n + ".w"], p[n + ".b"], c.stride, c.pad), T(0.2));
        g.features.push_back(h);
    }
    const int B = t.val(x).dim(0);
    Var flat = t.reshape(h, {B, a.flat_dim()});
    g.embedding = t.dense(flat, p["embed.w"], p["embed.b"]);
    Var act = t.leaky_relu(g.embedding, T(0.2));
    g.logits = t.dense(act, p["head.w"], p["head.b"]);
    return g;
}

template <class T>
std::vector<int> identity_predict(const IdentityModel<T>& m, const Tensor<T>& batch) {
    Tape<T> t;
    BoundParams<T> p(t, m.params, false);
    auto g = identity_forward(t, t.constant(batch), m.arch, p);
    const Tensor<T>& logits = t.val(g.logits);
    std::vector<int> out(static_cast<std::size_t>(logits.dim(0)));
    for (int b = 0; b < logits.dim(0); ++b) {
        int best = 0;
        for (int k = 1; k < logits.dim(1); ++k)
            if (logits[static_cast<std::int64_t>(b) * logits.dim(1) + k] >
                logits[static_cast<std::int64_t>(b) * logits.dim(1) + best])
                best = k;
        out[static_cast<std::size_t>(b)] = best;
    }
    return out;
}

template <class T>
Tensor<T> identity_embed(const IdentityModel<T>& m, const Tensor<T>& batch) {
    Tape<T> t;
    BoundParams<T> p(t, m.params, false);
    auto g = identity_forward(t, t.constant(batch), m.arch, p);
    return t.val(g.embedding);
}

struct IdentityTrainConfig {
    int epochs = 30;
    int batch = 32;
    double lr = 1e-3;
    double gate = 0.9;       // minimum clean hold-out accuracy
    int embed_dim = 64;
    double aug_noise = 0.06; // augmentation keeps FPESR meaningful on noisy reconstructions
    bool verbose = false;
};

/// Trains the classifier and enforces the hold-out accuracy gate.
template <class T = float>
IdentityModel<T> train_identity_model(const Dataset<T>& train, const Dataset<T>& holdout,
                                      const IdentityTrainConfig& cfg, Rng& rng) {
    std::set<int> distinct(train.labels.begin(), train.labels.end());
    if (train.count() == 0) throw EmptyDataset("identity training set is empty");
    if (distinct.size() < 2) throw GateNotMet("identity model needs at least two identities", 0.0);

    IdentityModel<T> m;
    m.arch.channels = train.images.dim(1);
    m.arch.height = train.images.dim(2);
    m.arch.width = train.images.dim(3);
    m.arch.embed_dim = cfg.embed_dim;
    m.arch.n_classes = train.n_identities();
    init_identity_params(m.params, m.arch, rng);

    Adam<T> opt(static_cast<T>(cfg.lr));
    const int n = train.count();
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    const int C = m.arch.channels, H = m.arch.height, W = m.arch.width;
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0;
        int steps = 0;
        for (int s = 0; s + cfg.batch <= n; s += cfg.batch) {
            std::vector<int> idx(order.begin() + s, order.begin() + s + cfg.batch);
            Tensor<T> batch = gather_batch(train, idx);
            std::vector<int> labels(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train.labels[static_cast<std::size_t>(idx[i])];

            // augmentation: additive noise, brightness, 1px shift, box blur
            std::normal_distribution<double> g(0.0, cfg.aug_noise * u01(rng));
            const double bright = 0.1 * (u01(rng) - 0.5);
            const int sx = static_cast<int>(u01(rng) * 3) - 1, sy = static_cast<int>(u01(rng) * 3) - 1;
            const bool blur = u01(rng) < 0.3;
            Tensor<T> aug = batch;
            for (int b = 0; b < batch.dim(0); ++b)
                for (int c = 0; c < C; ++c)
                    for (int y = 0; y < H; ++y)
                        for (int x = 0; x < W; ++x) {
                            const int ys = std::clamp(y + sy, 0, H - 1), xs = std::clamp(x + sx, 0, W - 1);
                            double v = batch.at4(b, c, ys, xs);
                            if (blur) {
                                double acc = 0;
                                int cnt = 0;
                                for (int dy = -1; dy <= 1; ++dy)
                                    for (int dx = -1; dx <= 1; ++dx) {
                                        const int yy = std::clamp(ys + dy, 0, H - 1), xx = std::clamp(xs + dx, 0, W - 1);
                                        acc += batch.at4(b, c, yy, xx);
                                        ++cnt;
                                    }
                                v = acc / cnt;
                            }
                            aug.at4(b, c, y, x) = static_cast<T>(std::clamp(v + bright + g(rng), 0.0, 1.0));
                        }

            Tape<T> t;
            BoundParams<T> p(t, m.params, true);
            auto graph = identity_forward(t, t.constant(aug), m.arch, p);
            Var loss = t.softmax_ce(graph.logits, labels);
            const T lv = t.val(loss)[0];
            if (!std::isfinite(static_cast<double>(lv)))
                throw TrainingDiverged("identity model loss became non-finite", "");
            t.backward(loss);
            opt.step(m.params, p.grads());
            epoch_loss += static_cast<double>(lv);
            ++steps;
        }
        if (cfg.verbose)
            std::cerr << "[identity] epoch " << epoch << " loss " << epoch_loss / std::max(1, steps) << "\n";
    }

    // clean hold-out gate
    int hit = 0;
    auto preds = identity_predict(m, holdout.images);
    for (int i = 0; i < holdout.count(); ++i)
        if (preds[static_cast<std::size_t>(i)] == holdout.labels[static_cast<std::size_t>(i)]) ++hit;
    m.holdout_accuracy = holdout.count() ? static_cast<double>(hit) / holdout.count() : 0.0;
    if (m.holdout_accuracy < cfg.gate)
        throw GateNotMet("identity model accuracy below gate", m.holdout_accuracy);

    return m;
}

/// Calibrates the cosine threshold to a 95% true-positive rate on clean
/// same-identity pairs.
template <class T>
void calibrate_cosine_threshold(IdentityModel<T>& m, const Dataset<T>& clean) {
    auto emb = identity_embed(m, clean.images);
    const int D = emb.dim(1);
    auto cosine = [&](int i, int j) {
        double dot = 0, ni = 0, nj = 0;
        for (int d = 0; d < D; ++d) {
            const double a = emb[static_cast<std::int64_t>(i) * D + d];
            const double b = emb[static_cast<std::int64_t>(j) * D + d];
            dot += a * b;
            ni += a * a;
            nj += b * b;
        }
        return dot / (std::sqrt(ni) * std::sqrt(nj) + 1e-12);
    };
    std::vector<double> same;
    for (int i = 0; i < clean.count(); ++i)
        for (int j = i + 1; j < clean.count(); ++j)
            if (clean.labels[static_cast<std::size_t>(i)] == clean.labels[static_cast<std::size_t>(j)])
                same.push_back(cosine(i, j));
    if (same.empty()) throw GateNotMet("cosine calibration needs same-identity pairs", 0.0);
    std::sort(same.begin(), same.end());
    const std::size_t q = static_cast<std::size_t>(0.05 * static_cast<double>(same.size()));
    m.tau = same[q];
    m.rule = DecisionRule::cosine_threshold;
}

/// Fraction of reconstructions identified as the same identity as their
/// originals under the model's decision rule.
template <class T>
double fpesr(const Tensor<T>& recons, const Tensor<T>& originals, const IdentityModel<T>& m) {
    if (!recons.same_shape(originals)) throw InvalidShape("fpesr: batch shape mismatch");
    const int n = recons.dim(0);
    if (n == 0) throw EmptyDataset("fpesr: empty batch");
    int hits = 0;
    if (m.rule == DecisionRule::nearest_class) {
        auto pr = identity_predict(m, recons);
        auto po = identity_predict(m, originals);
        for (int i = 0; i < n; ++i)
            if (pr[static_cast<std::size_t>(i)] == po[static_cast<std::size_t>(i)]) ++hits;
    } else {
        auto er = identity_embed(m, recons);
        auto eo = identity_embed(m, originals);
        const int D = er.dim(1);
        for (int i = 0; i < n; ++i) {
            double dot = 0, a2 = 0, b2 = 0;
            for (int d = 0; d < D; ++d) {
                const double a = er[static_cast<std::int64_t>(i) * D + d];
                const double b = eo[static_cast<std::int64_t>(i) * D + d];
                dot += a * b;
                a2 += a * a;
                b2 += b * b;
            }
            if (dot / (std::sqrt(a2) * std::sqrt(b2) + 1e-12) >= m.tau) ++hits;
        }
    }
    return static_cast<double>(hits) / n;
}

// ---------------------------------------------------------------------------
// Perceptual distance: layer-weighted, channel-normalized feature MSE over
// a frozen conv backbone (the identity model's by default).
// ---------------------------------------------------------------------------

template <class T = float>
struct FeatureExtractor {
    std::vector<ConvSpec2> layers;
    ParamStore<T> params; // conv0.w/b, conv1.w/b, ...
    std::vector<double> layer_weights; // defaults to uniform 1/L

    /// Graph-building form so the perceptual term stays differentiable.
    std::vector<Var> build(Tape<T>& t, Var x) const {
        BoundParams<T> p(t, params, false);
        std::vector<Var> feats;
        Var h = x;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const std::string n = "conv" + std::to_string(i);
            h = t.leaky_relu(t.conv2d(h, p[n + ".w"], p[n + ".b"], layers[i].stride, layers[i].pad), T(0.2));
            feats.push_back(h);
        }
        return feats;
    }

    std::vector<double> weights() const {
        if (!layer_weights.empty()) return layer_weights;
        return std::vector<double>(layers.size(), 1.0 / static_cast<double>(layers.size()));
    }
};

/// Borrow the identity backbone as a frozen feature extractor.
template <class T>
FeatureExtractor<T> feature_extractor_from_identity(const IdentityModel<T>& m) {
    FeatureExtractor<T> f;
    f.layers = m.arch.convs();
    for (std::size_t i = 0; i < f.layers.size(); ++i) {
        const std::string n = "conv" + std::to_string(i);
        f.params.add(n + ".w", m.params.at(n + ".w"));
        f.params.add(n + ".b", m.params.at(n + ".b"));
    }
    return f;
}

namespace detail {
/// Unit-normalizes feature channels at each spatial position, then mean
/// squared difference over positions; plain-tensor path.
template <class T>
double normalized_feature_mse(const Tensor<T>& fa, const Tensor<T>& fb) {
    const int C = fa.dim(1), H = fa.dim(2), W = fa.dim(3);
    double acc = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double na = 0, nb = 0;
            for (int c = 0; c < C; ++c) {
                const double a = fa.at4(0, c, y, x), b = fb.at4(0, c, y, x);
                na += a * a;
                nb += b * b;
            }
            na = std::sqrt(na) + 1e-10;
            nb = std::sqrt(nb) + 1e-10;
            for (int c = 0; c < C; ++c) {
                const double d = fa.at4(0, c, y, x) / na - fb.at4(0, c, y, x) / nb;
                acc += d * d;
            }
        }
    return acc / (static_cast<double>(H) * W);
}
} // namespace detail

/// Perceptual distance between two CxHxW images; zero iff all backbone
/// features agree.
template <class T>
double perceptual_distance(const Tensor<T>& x, const Tensor<T>& y, const FeatureExtractor<T>& net) {
    if (!x.same_shape(y)) throw InvalidShape("perceptual_distance: shape mismatch");
    Tape<T> t;
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Var xa = t.constant(x.reshaped({1, C, H, W}));
    Var xb = t.constant(y.reshaped({1, C, H, W}));
    auto fa = net.build(t, xa);
    auto fb = net.build(t, xb);
    const auto w = net.weights();
    double acc = 0;
    for (std::size_t l = 0; l < fa.size(); ++l)
        acc += w[l] * detail::normalized_feature_mse(t.val(fa[l]), t.val(fb[l]));
    return acc;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct SampleMetrics {
    double psnr = 0, ms_ssim = 0, perceptual = 0;
    int fpesr_hit = -1; // -1 when identity scoring was not run
};

inline void to_json(json& j, const SampleMetrics& s) {
    j = json{{"psnr", s.psnr}, {"ms_ssim", s.ms_ssim}, {"perceptual", s.perceptual}, {"fpesr_hit", s.fpesr_hit}};
}
inline void from_json(const json& j, SampleMetrics& s) {
    j.at("psnr").get_to(s.psnr);
    j.at("ms_ssim").get_to(s.ms_ssim);
    j.at("perceptual").get_to(s.perceptual);
    j.at("fpesr_hit").get_to(s.fpesr_hit);
}

/// Per-sample rows plus recomputable aggregates.
struct MetricReport {
    std::vector<SampleMetrics> samples;

    int n_samples() const { return static_cast<int>(samples.size()); }

    double mean(double SampleMetrics::* field) const {
        double s = 0;
        for (const auto& r : samples) s += r.*field;
        return samples.empty() ? 0.0 : s / static_cast<double>(samples.size());
    }
    double stddev(double SampleMetrics::* field) const {
        if (samples.size() < 2) return 0.0;
        const double m = mean(field);
        double s = 0;
        for (const auto& r : samples) s += (r.*field - m) * (r.*field - m);
        return std::sqrt(s / static_cast<double>(samples.size() - 1));
    }
    double fpesr_rate() const {
        int n = 0, hit = 0;
        for (const auto& r : samples)
            if (r.fpesr_hit >= 0) {
                ++n;
                hit += r.fpesr_hit;
            }
        return n ? static_cast<double>(hit) / n : -1.0;
    }

    json to_json() const {
        json rows = json::array();
        for (const auto& s : samples) rows.push_back(s);
        return json{{"samples", rows},
                    {"aggregate",
                     {{"psnr_mean", mean(&SampleMetrics::psnr)},
                      {"psnr_std", stddev(&SampleMetrics::psnr)},
                      {"ms_ssim_mean", mean(&SampleMetrics::ms_ssim)},
                      {"ms_ssim_std", stddev(&SampleMetrics::ms_ssim)},
                      {"perceptual_mean", mean(&SampleMetrics::perceptual)},
                      {"perceptual_std", stddev(&SampleMetrics::perceptual)},
                      {"fpesr", fpesr_rate()},
                      {"n_samples", n_samples()}}}};
    }
};

} // namespace semsec
