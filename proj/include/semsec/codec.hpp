#pragma once

#include <functional>

#include "semsec/channel.hpp"
#include "semsec/metrics.hpp"
#include "semsec/serialize.hpp"

namespace semsec {

/// Strided conv encoder down to a (signal_ch, H/4, W/4) head that flattens to
/// 2k reals; the decoder mirrors it with nearest-neighbour upsampling.
/// The flattened head width fixes k, so bcr = k/N must be representable:
/// 2*N*bcr has to be a multiple of (H/4)*(W/4).
struct CodecArch {
    int channels = 3, height = 64, width = 64;
    int c1 = 32, c2 = 64, c3 = 64;
    int signal_ch = 8;

    int source_bandwidth() const { return channels * height * width; }
    int grid_h() const { return height / 4; }
    int grid_w() const { return width / 4; }
    int k() const { return signal_ch * grid_h() * grid_w() / 2; }
    double bcr() const { return static_cast<double>(k()) / source_bandwidth(); }

    void validate() const {
        if (height % 4 != 0 || width % 4 != 0) throw ConfigError("codec: image dims must be divisible by 4");
        if ((signal_ch * grid_h() * grid_w()) % 2 != 0) throw ConfigError("codec: odd real signal width");
        if (k() < 1) throw ConfigError("codec: k must be >= 1");
    }

    /// Chooses signal_ch for a requested bcr = num/den; throws if the grid
    /// cannot represent it exactly.
    static CodecArch for_bcr(int channels, int height, int width, int num, int den, int c1 = 32, int c2 = 64,
                             int c3 = 64) {
        CodecArch a;
        a.channels = channels;
        a.height = height;
        a.width = width;
        a.c1 = c1;
        a.c2 = c2;
        a.c3 = c3;
        const std::int64_t n = static_cast<std::int64_t>(channels) * height * width;
        const std::int64_t grid = static_cast<std::int64_t>(height / 4) * (width / 4);
        const std::int64_t twok = 2 * n * num;
        if (twok % (den * grid) != 0)
            throw ConfigError("codec: bcr " + std::to_string(num) + "/" + std::to_string(den) +
                              " is not representable on the conv grid");
        a.signal_ch = static_cast<int>(twok / (den * grid));
        a.validate();
        return a;
    }
};

inline void to_json(json& j, const CodecArch& a) {
    j = json{{"channels", a.channels}, {"height", a.height}, {"width", a.width},
             {"c1", a.c1},           {"c2", a.c2},         {"c3", a.c3},
             {"signal_ch", a.signal_ch}};
}
inline void from_json(const json& j, CodecArch& a) {
    j.at("channels").get_to(a.channels);
    j.at("height").get_to(a.height);
    j.at("width").get_to(a.width);
    j.at("c1").get_to(a.c1);
    j.at("c2").get_to(a.c2);
    j.at("c3").get_to(a.c3);
    j.at("signal_ch").get_to(a.signal_ch);
}

/// theta1 lives under "enc.*", theta2 under "dec.*".
template <class T = float>
struct CodecParams {
    CodecArch arch;
    ParamStore<T> params;
    double pbar = 1.0;
    std::vector<double> train_curve;

    int k() const { return arch.k(); }
    double bcr() const { return arch.bcr(); }
};

template <class T>
void init_codec_params(CodecParams<T>& c, Rng& rng) {
    const auto& a = c.arch;
    add_conv(c.params, "enc.conv0", a.channels, a.c1, 3, rng);
    add_conv(c.params, "enc.conv1", a.c1, a.c2, 3, rng);
    add_conv(c.params, "enc.conv2", a.c2, a.c3, 3, rng);
    add_conv(c.params, "enc.conv3", a.c3, a.signal_ch, 3, rng);
    add_conv(c.params, "dec.conv0", a.signal_ch, a.c3, 3, rng);
    add_conv(c.params, "dec.conv1", a.c3, a.c2, 3, rng);
    add_conv(c.params, "dec.conv2", a.c2, a.c1, 3, rng);
    add_conv(c.params, "dec.conv3", a.c1, a.channels, 3, rng);
}

template <class T>
CodecParams<T> make_codec(const CodecArch& arch, double pbar, Rng& rng) {
    CodecParams<T> c;
    c.arch = arch;
    c.arch.validate();
    c.pbar = pbar;
    init_codec_params(c, rng);
    return c;
}

/// Encoder graph: x(B,C,H,W) -> power-normalized (B, 2k).
template <class T>
Var encode_graph(Tape<T>& t, Var x, const CodecArch& a, const BoundParams<T>& p, T pbar) {
    const Tensor<T>& xv = t.val(x);
    if (xv.rank() != 4 || xv.dim(1) != a.channels || xv.dim(2) != a.height || xv.dim(3) != a.width)
        throw InvalidShape("encode: image shape does not match codec");
    Var h = t.leaky_relu(t.conv2d(x, p["enc.conv0.w"], p["enc.conv0.b"], 1, 1), T(0.2));
    h = t.leaky_relu(t.conv2d(h, p["enc.conv1.w"], p["enc.conv1.b"], 2, 1), T(0.2));
    h = t.leaky_relu(t.conv2d(h, p["enc.conv2.w"], p["enc.conv2.b"], 2, 1), T(0.2));
    h = t.conv2d(h, p["enc.conv3.w"], p["enc.conv3.b"], 1, 1);
    Var flat = t.reshape(h, {xv.dim(0), 2 * a.k()});
    return t.power_normalize_rows(flat, pbar);
}

/// Decoder graph: (B, 2k) -> sigmoid image (B,C,H,W).
template <class T>
Var decode_graph(Tape<T>& t, Var z, const CodecArch& a, const BoundParams<T>& p) {
    const Tensor<T>& zv = t.val(z);
    if (zv.rank() != 2 || zv.dim(1) != 2 * a.k()) throw InvalidShape("decode: signal length does not match codec");
    Var g = t.reshape(z, {zv.dim(0), a.signal_ch, a.grid_h(), a.grid_w()});
    Var h = t.leaky_relu(t.conv2d(g, p["dec.conv0.w"], p["dec.conv0.b"], 1, 1), T(0.2));
    h = t.leaky_relu(t.conv2d(t.upsample2(h), p["dec.conv1.w"], p["dec.conv1.b"], 1, 1), T(0.2));
    h = t.leaky_relu(t.conv2d(t.upsample2(h), p["dec.conv2.w"], p["dec.conv2.b"], 1, 1), T(0.2));
    return t.sigmoid_op(t.conv2d(h, p["dec.conv3.w"], p["dec.conv3.b"], 1, 1));
}

/// Plain (non-graph) batch encode: (B,C,H,W) -> (B, 2k).
template <class T>
Tensor<T> encode_batch(const CodecParams<T>& c, const Tensor<T>& images) {
    Tape<T> t;
    BoundParams<T> p(t, c.params, false);
    return t.val(encode_graph(t, t.constant(images), c.arch, p, static_cast<T>(c.pbar)));
}

template <class T>
Tensor<T> decode_batch(const CodecParams<T>& c, const Tensor<T>& signals) {
    Tape<T> t;
    BoundParams<T> p(t, c.params, false);
    return t.val(decode_graph(t, t.constant(signals), c.arch, p));
}

template <class T>
ChannelSignal<T> encode_one(const CodecParams<T>& c, const Tensor<T>& image) {
    const auto b = encode_batch(c, image.reshaped({1, c.arch.channels, c.arch.height, c.arch.width}));
    return ChannelSignal<T>(b.reshaped({2 * c.k()}));
}

template <class T>
Tensor<T> decode_one(const CodecParams<T>& c, const ChannelSignal<T>& z) {
    const auto b = decode_batch(c, z.values.reshaped({1, 2 * c.k()}));
    return b.reshaped({c.arch.channels, c.arch.height, c.arch.width});
}

// ---------------------------------------------------------------------------
// Composite loss: pixel MSE plus layer-weighted raw-feature MSE over a frozen
// feature extractor (the identity backbone by default).
// ---------------------------------------------------------------------------

template <class T = float>
struct CodecLossConfig {
    T lambda_pix = T(1);
    T lambda_perc = T(0.1);
    const FeatureExtractor<T>* feature_net = nullptr; // required when lambda_perc > 0

    void validate() const {
        if (!(lambda_pix >= T(0)) || !(lambda_perc >= T(0)) || lambda_pix + lambda_perc <= T(0))
            throw ConfigError("codec loss: need lambda_pix + lambda_perc > 0");
        if (lambda_perc > T(0) && feature_net == nullptr)
            throw ConfigError("codec loss: perceptual term needs a feature net");
    }
};

template <class T>
Var composite_loss_graph(Tape<T>& t, Var x, Var xhat, const CodecLossConfig<T>& cfg) {
    cfg.validate();
    if (!t.val(x).same_shape(t.val(xhat))) throw InvalidShape("composite_loss: shape mismatch");
    const int B = t.val(x).dim(0);
    const T n_per = static_cast<T>(t.val(x).size() / B);
    // pixel term: mean over batch of (1/N)||x - xhat||^2
    Var loss = t.scale(t.sse(x, xhat), cfg.lambda_pix / (n_per * static_cast<T>(B)));
    if (cfg.lambda_perc > T(0)) {
        auto fa = cfg.feature_net->build(t, x);
        auto fb = cfg.feature_net->build(t, xhat);
        const auto w = cfg.feature_net->weights();
        for (std::size_t l = 0; l < fa.size(); ++l) {
            const auto& shape = t.val(fa[l]).shape();
            const T denom = static_cast<T>(shape[2]) * static_cast<T>(shape[3]) * static_cast<T>(B);
            loss = t.add(loss, t.scale(t.sse(fa[l], fb[l]), cfg.lambda_perc * static_cast<T>(w[l]) / denom));
        }
    }
    return loss;
}

template <class T>
T composite_loss(const Tensor<T>& x, const Tensor<T>& xhat, const CodecLossConfig<T>& cfg) {
    Tape<T> t;
    const auto batched = [&](const Tensor<T>& img) {
        return img.rank() == 3 ? img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)}) : img;
    };
    return t.val(composite_loss_graph(t, t.constant(batched(x)), t.constant(batched(xhat)), cfg))[0];
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Draws the channel condition for one training batch.
using SnrSampler = std::function<ChannelSpec(Rng&)>;

/// Uniform SNR in [lo, hi] dB on a fixed family, the paper's protocol.
inline SnrSampler uniform_snr_sampler(ChannelFamily family, double lo, double hi, double pbar = 1.0) {
    return [family, lo, hi, pbar](Rng& rng) {
        std::uniform_real_distribution<double> u(lo, hi);
        ChannelSpec s;
        s.family = family;
        s.snr_db = u(rng);
        s.pbar = pbar;
        return s;
    };
}

struct CodecTrainConfig {
    int epochs = 60;
    int batch = 32;
    double lr = 1e-3;
    double lr_final = -1;        // cosine-decay target; < 0 keeps lr constant
    double grad_clip = 5.0;
    int workers = 2;             // deterministic data-parallel shards per step
    std::string checkpoint_path; // optional periodic checkpoint target
    int checkpoint_every = 10;   // epochs
    bool verbose = false;
};

/// Builds z -> equalized-z weights for a fixed channel draw (MMSE with
/// perfect CSI), as an interleaved complex multiplier.
template <class T>
Tensor<T> mmse_weights(const Tensor<T>& h, T sigma2, T pbar) {
    Tensor<T> w(h.shape());
    for (std::int64_t i = 0; i < h.size(); i += 2) {
        const T hr = h[i], hi = h[i + 1];
        const T den = hr * hr + hi * hi + sigma2 / pbar;
        w[i] = hr / den;
        w[i + 1] = -hi / den;
    }
    return w;
}

/// One end-to-end training graph: encode, channel, (equalize), decode, loss.
/// The channel realization enters as constants so the noise is
/// reparameterized and gradients reach theta1.
template <class T>
Var codec_training_loss(Tape<T>& t, const CodecParams<T>& codec, const BoundParams<T>& p, Var x,
                        const ChannelSpec& spec, const CodecLossConfig<T>& loss_cfg, Rng& rng) {
    const int B = t.val(x).dim(0);
    const int k = codec.k();
    Var z = encode_graph(t, x, codec.arch, p, static_cast<T>(codec.pbar));

    const T sigma2 = static_cast<T>(spec.noise_variance());
    Tensor<T> hb({B, 2 * k}), nb({B, 2 * k});
    for (int b = 0; b < B; ++b) {
        auto d = draw_channel<T>(spec.family, sigma2, k, rng);
        std::copy(d.h.data(), d.h.data() + 2 * k, hb.data() + static_cast<std::int64_t>(b) * 2 * k);
        std::copy(d.noise.data(), d.noise.data() + 2 * k, nb.data() + static_cast<std::int64_t>(b) * 2 * k);
    }
    Var zhat = t.add(t.complex_hadamard(z, t.constant(hb)), t.constant(nb));
    if (spec.family == ChannelFamily::Rayleigh) {
        Tensor<T> wb({B, 2 * k});
        for (int b = 0; b < B; ++b) {
            Tensor<T> hrow({2 * k});
            std::copy(hb.data() + static_cast<std::int64_t>(b) * 2 * k,
                      hb.data() + static_cast<std::int64_t>(b + 1) * 2 * k, hrow.data());
            auto w = mmse_weights(hrow, sigma2, static_cast<T>(codec.pbar));
            std::copy(w.data(), w.data() + 2 * k, wb.data() + static_cast<std::int64_t>(b) * 2 * k);
        }
        zhat = t.complex_hadamard(zhat, t.constant(wb));
    }
    Var xhat = decode_graph(t, zhat, codec.arch, p);
    return composite_loss_graph(t, x, xhat, loss_cfg);
}

/// Joint encoder/decoder training over the noisy channel. Returns trained
/// parameters with the per-epoch loss curve; persists periodic checkpoints
/// when a path is configured and throws TrainingDiverged (with the last good
/// checkpoint) if the loss stops being finite.
template <class T = float>
CodecParams<T> train_codec(const Dataset<T>& train, const SnrSampler& sampler, const CodecArch& arch,
                           const CodecLossConfig<T>& loss_cfg, const CodecTrainConfig& cfg, Rng& rng,
                           double pbar = 1.0) {
    CodecParams<T> codec = make_codec<T>(arch, pbar, rng);
    Adam<T> opt(static_cast<T>(cfg.lr), T(0.9), T(0.999), T(1e-8), static_cast<T>(cfg.grad_clip));
    const int n = train.count();
    if (n < cfg.batch) throw EmptyDataset("train_codec: dataset smaller than one batch");
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::string last_good;
    const int workers = std::max(1, std::min(cfg.workers, cfg.batch));
    const int shard = cfg.batch / workers;
    const std::int64_t total_steps = static_cast<std::int64_t>(cfg.epochs) * std::max(1, n / cfg.batch);
    std::int64_t step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0;
        int steps = 0;
        for (int s = 0; s + cfg.batch <= n; s += cfg.batch) {
            const ChannelSpec spec = sampler(rng);
            const std::uint64_t step_seed = rng();
            if (cfg.lr_final > 0) opt.set_lr(static_cast<T>(cosine_lr(cfg.lr, cfg.lr_final, step, total_steps)));

            auto result = sharded_batch_grads<T>(workers, [&](int w) {
                std::vector<int> idx(order.begin() + s + w * shard, order.begin() + s + (w + 1) * shard);
                Tensor<T> batch = gather_batch(train, idx);
                Rng wrng(substream_seed(step_seed, "w" + std::to_string(w)));
                Tape<T> t;
                BoundParams<T> p(t, codec.params, true);
                Var loss = codec_training_loss(t, codec, p, t.constant(batch), spec, loss_cfg, wrng);
                const double lv = static_cast<double>(t.val(loss)[0]);
                t.backward(loss);
                return std::make_pair(lv, p.grads());
            });
            if (!std::isfinite(result.first))
                throw TrainingDiverged("codec loss became non-finite", last_good);
            opt.step(codec.params, std::move(result.second));
            epoch_loss += result.first;
            ++steps;
            ++step;
        }
        codec.train_curve.push_back(epoch_loss / std::max(1, steps));
        if (cfg.verbose)
            std::cerr << "[codec] epoch " << epoch << " loss " << codec.train_curve.back() << "\n";
        if (!cfg.checkpoint_path.empty() &&
            ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs)) {
            if (codec.params.all_finite()) {
                json meta{{"kind", "codec"}, {"arch", codec.arch}, {"pbar", codec.pbar},
                          {"epoch", epoch + 1},  {"train_curve", codec.train_curve}};
                save_checkpoint(cfg.checkpoint_path, codec.params, meta);
                last_good = cfg.checkpoint_path;
            }
        }
    }
    return codec;
}

template <class T = float>
CodecParams<T> load_codec(const std::filesystem::path& path) {
    auto loaded = load_checkpoint<T>(path);
    const json& meta = loaded.second;
    CodecParams<T> c;
    c.arch = meta.at("arch").get<CodecArch>();
    c.pbar = meta.at("pbar").get<double>();
    if (meta.contains("train_curve")) c.train_curve = meta.at("train_curve").get<std::vector<double>>();
    c.params = std::move(loaded.first);
    return c;
}

/// Mean PSNR of decode(channel(encode(x))) over a dataset at one channel
/// condition; Bob equalizes under Rayleigh.
template <class T>
double codec_eval_psnr(const CodecParams<T>& codec, const Dataset<T>& data, const ChannelSpec& spec, Rng& rng) {
    double acc = 0;
    for (int i = 0; i < data.count(); ++i) {
        const auto img = data.image(i);
        auto z = encode_one(codec, img);
        auto out = transmit(z, spec, rng);
        ChannelSignal<T> zin =
            spec.family == ChannelFamily::Rayleigh ? equalize(out, static_cast<T>(codec.pbar)) : out.received;
        acc += psnr(img, decode_one(codec, zin));
    }
    return acc / std::max(1, data.count());
}

} // namespace semsec
