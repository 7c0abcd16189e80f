#pragma once

#include "semsec/codec.hpp"

namespace semsec {

enum class LhatMode { zero_constant, gaussian_sample };

inline const char* to_string(LhatMode m) { return m == LhatMode::zero_constant ? "zero_constant" : "gaussian_sample"; }
inline LhatMode lhat_mode_from_string(const std::string& s) {
    if (s == "zero_constant") return LhatMode::zero_constant;
    if (s == "gaussian_sample") return LhatMode::gaussian_sample;
    throw ConfigError("unknown lhat mode: " + s);
}

/// Invertible signal-steganography module: I additive-affine coupling blocks
/// over the channel signal viewed as the encoder's pre-flatten grid
/// (C' x H' x W' = 2k). The exp argument is bounded by alpha*tanh so the
/// analytic inverse stays numerically exact.
struct StegArch {
    int grid_c = 8, grid_h = 8, grid_w = 8;
    int blocks = 8;
    int width = 16; // hidden channels of the coupling nets
    double clamp_alpha = 2.0;

    int signal_len() const { return grid_c * grid_h * grid_w; } // == 2k
    int k() const { return signal_len() / 2; }

    void validate() const {
        if (signal_len() % 2 != 0) throw ConfigError("steg: grid must hold an even real count");
        if (blocks < 1) throw ConfigError("steg: need at least one block");
    }

    static StegArch for_codec(const CodecArch& c, int blocks = 8, int width = 16, double clamp_alpha = 2.0) {
        StegArch a;
        a.grid_c = c.signal_ch;
        a.grid_h = c.grid_h();
        a.grid_w = c.grid_w();
        a.blocks = blocks;
        a.width = width;
        a.clamp_alpha = clamp_alpha;
        a.validate();
        return a;
    }
};

inline void to_json(json& j, const StegArch& a) {
    j = json{{"grid_c", a.grid_c}, {"grid_h", a.grid_h}, {"grid_w", a.grid_w},
             {"blocks", a.blocks}, {"width", a.width},   {"clamp_alpha", a.clamp_alpha}};
}
inline void from_json(const json& j, StegArch& a) {
    j.at("grid_c").get_to(a.grid_c);
    j.at("grid_h").get_to(a.grid_h);
    j.at("grid_w").get_to(a.grid_w);
    j.at("blocks").get_to(a.blocks);
    j.at("width").get_to(a.width);
    j.at("clamp_alpha").get_to(a.clamp_alpha);
}

/// psi. This checkpoint is the shared secret between Alice and Bob.
template <class T = float>
struct StegParams {
    StegArch arch;
    ParamStore<T> params;
    LhatMode lhat_mode = LhatMode::zero_constant;
    double pbar = 1.0;
    std::vector<double> train_curve;
};

/// Coupling nets: conv -> lrelu -> conv with the last conv zero-initialized,
/// so a fresh module is the identity map.
template <class T>
void init_steg_params(StegParams<T>& s, Rng& rng) {
    const auto& a = s.arch;
    for (int b = 0; b < a.blocks; ++b) {
        const std::string blk = "blk" + std::to_string(b);
        for (const char* net : {"phi", "rho", "eta"}) {
            add_conv(s.params, blk + "." + net + ".conv0", a.grid_c, a.width, 3, rng);
            add_conv(s.params, blk + "." + net + ".conv1", a.width, a.grid_c, 3, rng, /*zero=*/true);
        }
    }
}

template <class T>
StegParams<T> make_steg(const StegArch& arch, Rng& rng, double pbar = 1.0,
                        LhatMode mode = LhatMode::zero_constant) {
    StegParams<T> s;
    s.arch = arch;
    s.arch.validate();
    s.pbar = pbar;
    s.lhat_mode = mode;
    init_steg_params(s, rng);
    return s;
}

namespace detail {

/// Plain-tensor coupling net evaluation; arithmetic identical to the graph
/// path because both reduce to conv2d_fwd.
template <class T>
Tensor<T> coupling_eval(const ParamStore<T>& p, const std::string& prefix, const Tensor<T>& x) {
    Tensor<T> h = conv2d_fwd(x, p.at(prefix + ".conv0.w"), &p.at(prefix + ".conv0.b"), 1, 1);
    for (auto& v : h.vec())
        if (v < T(0)) v *= T(0.2);
    return conv2d_fwd(h, p.at(prefix + ".conv1.w"), &p.at(prefix + ".conv1.b"), 1, 1);
}

template <class T>
Var coupling_graph(Tape<T>& t, const BoundParams<T>& p, const std::string& prefix, Var x) {
    Var h = t.leaky_relu(t.conv2d(x, p[prefix + ".conv0.w"], p[prefix + ".conv0.b"], 1, 1), T(0.2));
    return t.conv2d(h, p[prefix + ".conv1.w"], p[prefix + ".conv1.b"], 1, 1);
}

} // namespace detail

/// One coupling block, forward:
///   zh' = zh + phi(zp)
///   zp' = zp (.) exp(alpha tanh(rho(zh'))) + eta(zh')
/// Inputs and outputs are (B, C', H', W') grids.
template <class T>
std::pair<Tensor<T>, Tensor<T>> inn_block_forward(const Tensor<T>& zh, const Tensor<T>& zp,
                                                  const ParamStore<T>& p, const std::string& blk,
                                                  double clamp_alpha) {
    if (!zh.same_shape(zp)) throw InvalidShape("inn_block_forward: branch shape mismatch");
    Tensor<T> zh1 = zh;
    {
        Tensor<T> phi = detail::coupling_eval(p, blk + ".phi", zp);
        for (std::int64_t i = 0; i < zh1.size(); ++i) zh1[i] += phi[i];
    }
    Tensor<T> rho = detail::coupling_eval(p, blk + ".rho", zh1);
    Tensor<T> eta = detail::coupling_eval(p, blk + ".eta", zh1);
    Tensor<T> zp1 = zp;
    const T alpha = static_cast<T>(clamp_alpha);
    for (std::int64_t i = 0; i < zp1.size(); ++i) {
        zp1[i] = zp[i] * std::exp(alpha * std::tanh(rho[i])) + eta[i];
        if (!std::isfinite(static_cast<double>(zp1[i]))) throw NumericalError("inn_block_forward: non-finite value");
    }
    return {std::move(zh1), std::move(zp1)};
}

/// Exact algebraic inverse of inn_block_forward.
template <class T>
std::pair<Tensor<T>, Tensor<T>> inn_block_backward(const Tensor<T>& zh1, const Tensor<T>& zp1,
                                                   const ParamStore<T>& p, const std::string& blk,
                                                   double clamp_alpha) {
    if (!zh1.same_shape(zp1)) throw InvalidShape("inn_block_backward: branch shape mismatch");
    Tensor<T> rho = detail::coupling_eval(p, blk + ".rho", zh1);
    Tensor<T> eta = detail::coupling_eval(p, blk + ".eta", zh1);
    Tensor<T> zp = zp1;
    const T alpha = static_cast<T>(clamp_alpha);
    for (std::int64_t i = 0; i < zp.size(); ++i) {
        zp[i] = (zp1[i] - eta[i]) * std::exp(-alpha * std::tanh(rho[i]));
        if (!std::isfinite(static_cast<double>(zp[i]))) throw NumericalError("inn_block_backward: non-finite value");
    }
    Tensor<T> zh = zh1;
    {
        Tensor<T> phi = detail::coupling_eval(p, blk + ".phi", zp);
        for (std::int64_t i = 0; i < zh.size(); ++i) zh[i] -= phi[i];
    }
    return {std::move(zh), std::move(zp)};
}

/// Container + lost information. z_c is the raw INN output (what the inverse
/// expects); z_c_tx is the power-normalized copy that actually goes on air.
template <class T = float>
struct StegPacket {
    ChannelSignal<T> z_c;    // container, pre-normalization
    ChannelSignal<T> z_c_tx; // container re-normalized to pbar for transmission
    ChannelSignal<T> l;      // lost information, never transmitted
};

namespace detail {
template <class T>
Tensor<T> to_grid(const ChannelSignal<T>& z, const StegArch& a) {
    if (z.values.size() != a.signal_len()) throw InvalidShape("steg: signal length does not match grid");
    return z.values.reshaped({1, a.grid_c, a.grid_h, a.grid_w});
}
template <class T>
ChannelSignal<T> from_grid(const Tensor<T>& g, const StegArch& a) {
    return ChannelSignal<T>(g.reshaped({a.signal_len()}));
}
} // namespace detail

/// S(z_h, z_p; psi): I blocks forward; z_c = host branch, l = private branch.
template <class T>
StegPacket<T> steg_embed(const ChannelSignal<T>& z_h, const ChannelSignal<T>& z_p, const StegParams<T>& psi) {
    if (z_h.values.size() != z_p.values.size()) throw InvalidShape("steg_embed: host/private length mismatch");
    Tensor<T> zh = detail::to_grid(z_h, psi.arch);
    Tensor<T> zp = detail::to_grid(z_p, psi.arch);
    for (int b = 0; b < psi.arch.blocks; ++b) {
        auto nxt = inn_block_forward(zh, zp, psi.params, "blk" + std::to_string(b), psi.arch.clamp_alpha);
        zh = std::move(nxt.first);
        zp = std::move(nxt.second);
    }
    StegPacket<T> pkt;
    pkt.z_c = detail::from_grid(zh, psi.arch);
    pkt.z_c_tx = power_normalize(pkt.z_c, static_cast<T>(psi.pbar));
    pkt.l = detail::from_grid(zp, psi.arch);
    return pkt;
}

/// Bob's l-hat: zeros by default, or a standard-normal draw in sampled mode.
template <class T>
ChannelSignal<T> make_lhat(const StegParams<T>& psi, Rng* rng = nullptr) {
    Tensor<T> l({psi.arch.signal_len()});
    if (psi.lhat_mode == LhatMode::gaussian_sample) {
        if (!rng) throw ConfigError("gaussian_sample lhat needs an rng");
        fill_normal(l, *rng, T(1));
    }
    return ChannelSignal<T>(std::move(l));
}

/// S^-1(z_c, l_hat; psi): blocks applied in reverse.
template <class T>
std::pair<ChannelSignal<T>, ChannelSignal<T>> steg_extract(const ChannelSignal<T>& zc_hat,
                                                           const ChannelSignal<T>& lhat,
                                                           const StegParams<T>& psi) {
    if (zc_hat.values.size() != lhat.values.size()) throw InvalidShape("steg_extract: container/lhat mismatch");
    Tensor<T> zh = detail::to_grid(zc_hat, psi.arch);
    Tensor<T> zp = detail::to_grid(lhat, psi.arch);
    for (int b = psi.arch.blocks - 1; b >= 0; --b) {
        auto prv = inn_block_backward(zh, zp, psi.params, "blk" + std::to_string(b), psi.arch.clamp_alpha);
        zh = std::move(prv.first);
        zp = std::move(prv.second);
    }
    return {detail::from_grid(zh, psi.arch), detail::from_grid(zp, psi.arch)};
}

// ---------------------------------------------------------------------------
// Training graph and losses
// ---------------------------------------------------------------------------

template <class T = float>
struct StegLossConfig {
    T lambda1 = T(1); // container ~ host signal
    T lambda2 = T(2); // lost info ~ lhat
    T lambda3 = T(2); // private signal recovery
    T lambda4 = T(1); // host signal recovery
    T lambda5 = T(1); // private image consistency
    LhatMode lhat_mode = LhatMode::zero_constant;

    void validate() const {
        for (T v : {lambda1, lambda2, lambda3, lambda4, lambda5})
            if (!(v >= T(0)) || !std::isfinite(static_cast<double>(v)))
                throw ConfigError("steg loss: weights must be finite and >= 0");
        if (lambda1 + lambda2 + lambda3 + lambda4 + lambda5 <= T(0))
            throw ConfigError("steg loss: at least one positive weight");
    }
};

template <class T>
struct StegLossVars {
    Var forward, backward, privacy, total;
};

template <class T>
Var inn_forward_graph(Tape<T>& t, const BoundParams<T>& p, const StegArch& a, Var& zh, Var& zp) {
    for (int b = 0; b < a.blocks; ++b) {
        const std::string blk = "blk" + std::to_string(b);
        zh = t.add(zh, detail::coupling_graph(t, p, blk + ".phi", zp));
        Var rho = t.scale(t.tanh_op(detail::coupling_graph(t, p, blk + ".rho", zh)), static_cast<T>(a.clamp_alpha));
        zp = t.add(t.mul(zp, t.exp_op(rho)), detail::coupling_graph(t, p, blk + ".eta", zh));
    }
    return zh;
}

template <class T>
void inn_backward_graph(Tape<T>& t, const BoundParams<T>& p, const StegArch& a, Var& zh, Var& zp) {
    for (int b = a.blocks - 1; b >= 0; --b) {
        const std::string blk = "blk" + std::to_string(b);
        Var rho = t.scale(t.tanh_op(detail::coupling_graph(t, p, blk + ".rho", zh)), static_cast<T>(a.clamp_alpha));
        zp = t.mul(t.sub(zp, detail::coupling_graph(t, p, blk + ".eta", zh)), t.exp_op(t.scale(rho, T(-1))));
        zh = t.sub(zh, detail::coupling_graph(t, p, blk + ".phi", zp));
    }
}

/// A batch of host/private image pairs for one training step.
template <class T>
struct StegBatch {
    Tensor<T> host;    // (B,C,H,W)
    Tensor<T> priv;    // (B,C,H,W)
    ChannelSpec spec;  // channel condition for this step
};

/// Full pipeline losses on one batch: encode both images with the frozen
/// codec, embed, normalize, transmit, extract with l-hat, decode the private
/// image. Squared norms are summed per sample and averaged over the batch.
template <class T>
StegLossVars<T> steg_losses_graph(Tape<T>& t, const StegBatch<T>& batch, const CodecParams<T>& codec,
                                  const StegParams<T>& psi, const BoundParams<T>& psi_bound,
                                  const StegLossConfig<T>& cfg, Rng& rng) {
    cfg.validate();
    const int B = batch.host.dim(0);
    const int len = psi.arch.signal_len();
    const int k = psi.arch.k();
    BoundParams<T> codec_bound(t, codec.params, false);

    Var zh_sig = encode_graph(t, t.constant(batch.host), codec.arch, codec_bound, static_cast<T>(codec.pbar));
    Var zp_sig = encode_graph(t, t.constant(batch.priv), codec.arch, codec_bound, static_cast<T>(codec.pbar));

    Var zh = t.reshape(zh_sig, {B, psi.arch.grid_c, psi.arch.grid_h, psi.arch.grid_w});
    Var zp = t.reshape(zp_sig, {B, psi.arch.grid_c, psi.arch.grid_h, psi.arch.grid_w});
    inn_forward_graph(t, psi_bound, psi.arch, zh, zp);
    Var zc_raw = t.reshape(zh, {B, len});
    Var l_out = t.reshape(zp, {B, len});

    // l-hat: zero constant, or one gaussian draw per batch in sampled mode
    Tensor<T> lhat_t({B, len});
    if (cfg.lhat_mode == LhatMode::gaussian_sample) fill_normal(lhat_t, rng, T(1));
    Var lhat = t.constant(std::move(lhat_t));

    // transmit the re-normalized container
    Var zc_tx = t.power_normalize_rows(zc_raw, static_cast<T>(codec.pbar));
    const T sigma2 = static_cast<T>(batch.spec.noise_variance());
    Tensor<T> hb({B, len}), nb({B, len});
    for (int b = 0; b < B; ++b) {
        auto d = draw_channel<T>(batch.spec.family, sigma2, k, rng);
        std::copy(d.h.data(), d.h.data() + len, hb.data() + static_cast<std::int64_t>(b) * len);
        std::copy(d.noise.data(), d.noise.data() + len, nb.data() + static_cast<std::int64_t>(b) * len);
    }
    Var zc_hat = t.add(t.complex_hadamard(zc_tx, t.constant(hb)), t.constant(nb));
    if (batch.spec.family == ChannelFamily::Rayleigh) {
        Tensor<T> wb({B, len});
        for (int b = 0; b < B; ++b) {
            Tensor<T> hrow({len});
            std::copy(hb.data() + static_cast<std::int64_t>(b) * len, hb.data() + static_cast<std::int64_t>(b + 1) * len,
                      hrow.data());
            auto w = mmse_weights(hrow, sigma2, static_cast<T>(codec.pbar));
            std::copy(w.data(), w.data() + len, wb.data() + static_cast<std::int64_t>(b) * len);
        }
        zc_hat = t.complex_hadamard(zc_hat, t.constant(wb));
    }

    // Bob's inverse pass
    Var rzh = t.reshape(zc_hat, {B, psi.arch.grid_c, psi.arch.grid_h, psi.arch.grid_w});
    Var rzp = t.reshape(lhat, {B, psi.arch.grid_c, psi.arch.grid_h, psi.arch.grid_w});
    inn_backward_graph(t, psi_bound, psi.arch, rzh, rzp);
    Var zh_rec = t.reshape(rzh, {B, len});
    Var zp_rec = t.reshape(rzp, {B, len});

    Var xp_hat = decode_graph(t, zp_rec, codec.arch, codec_bound);

    const T inv_b = T(1) / static_cast<T>(B);
    StegLossVars<T> out;
    out.forward = t.add(t.scale(t.sse(zc_raw, zh_sig), cfg.lambda1 * inv_b),
                        t.scale(t.sse(l_out, lhat), cfg.lambda2 * inv_b));
    out.backward = t.add(t.scale(t.sse(zp_sig, zp_rec), cfg.lambda3 * inv_b),
                         t.scale(t.sse(zh_sig, zh_rec), cfg.lambda4 * inv_b));
    out.privacy = t.scale(t.sse(t.constant(batch.priv), xp_hat), cfg.lambda5 * inv_b);
    out.total = t.add(t.add(out.forward, out.backward), out.privacy);
    return out;
}

/// Non-graph convenience used by tests and diagnostics.
template <class T>
struct StegLossValues {
    double forward, backward, privacy, total;
};

template <class T>
StegLossValues<T> steg_losses(const StegBatch<T>& batch, const CodecParams<T>& codec, const StegParams<T>& psi,
                              const StegLossConfig<T>& cfg, Rng& rng) {
    Tape<T> t;
    BoundParams<T> pb(t, psi.params, false);
    auto v = steg_losses_graph(t, batch, codec, psi, pb, cfg, rng);
    return {static_cast<double>(t.val(v.forward)[0]), static_cast<double>(t.val(v.backward)[0]),
            static_cast<double>(t.val(v.privacy)[0]), static_cast<double>(t.val(v.total)[0])};
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct StegTrainConfig {
    int pairs = 1000; // host/private pairs drawn for training
    int epochs = 40;
    int batch = 128;
    double lr = 3e-4;
    double lr_final = -1;
    double grad_clip = 5.0;
    int workers = 2;
    std::string checkpoint_path;
    bool verbose = false;
};

/// Algorithm: sample (host, private) pairs, push them through the frozen
/// codec + INN + channel pipeline and descend on L_total.
template <class T = float>
StegParams<T> train_steganography(const Dataset<T>& data, const CodecParams<T>& codec,
                                  const StegLossConfig<T>& loss_cfg, const StegTrainConfig& cfg,
                                  const SnrSampler& sampler, Rng& rng, const StegArch* arch_override = nullptr) {
    StegArch arch = arch_override ? *arch_override : StegArch::for_codec(codec.arch);
    StegParams<T> psi = make_steg<T>(arch, rng, codec.pbar, loss_cfg.lhat_mode);
    if (data.count() < 2) throw EmptyDataset("train_steganography: need at least two images");

    // fixed pool of pairs (host != private)
    std::vector<std::pair<int, int>> pool;
    pool.reserve(static_cast<std::size_t>(cfg.pairs));
    std::uniform_int_distribution<int> pick(0, data.count() - 1);
    for (int i = 0; i < cfg.pairs; ++i) {
        int a = pick(rng), b = pick(rng);
        while (b == a) b = pick(rng);
        pool.emplace_back(a, b);
    }

    Adam<T> opt(static_cast<T>(cfg.lr), T(0.9), T(0.999), T(1e-8), static_cast<T>(cfg.grad_clip));
    const int workers = std::max(1, std::min(cfg.workers, cfg.batch));
    const int shard = std::max(1, cfg.batch / workers);
    const int batch = shard * workers;
    const int steps_per_epoch = std::max(1, static_cast<int>(pool.size()) / batch);
    const std::int64_t total_steps = static_cast<std::int64_t>(cfg.epochs) * steps_per_epoch;
    std::int64_t step = 0;
    std::string last_good;
    std::vector<int> order(pool.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0;
        int steps = 0;
        for (int s = 0; s + batch <= static_cast<int>(pool.size()); s += batch, ++step) {
            const ChannelSpec spec = sampler(rng);
            const std::uint64_t step_seed = rng();
            if (cfg.lr_final > 0) opt.set_lr(static_cast<T>(cosine_lr(cfg.lr, cfg.lr_final, step, total_steps)));

            auto result = sharded_batch_grads<T>(workers, [&](int w) {
                std::vector<int> hosts, privs;
                for (int i = 0; i < shard; ++i) {
                    const auto& pr = pool[static_cast<std::size_t>(order[static_cast<std::size_t>(s + w * shard + i)])];
                    hosts.push_back(pr.first);
                    privs.push_back(pr.second);
                }
                StegBatch<T> sb{gather_batch(data, hosts), gather_batch(data, privs), spec};
                Rng wrng(substream_seed(step_seed, "w" + std::to_string(w)));
                Tape<T> t;
                BoundParams<T> pb(t, psi.params, true);
                auto losses = steg_losses_graph(t, sb, codec, psi, pb, loss_cfg, wrng);
                const double lv = static_cast<double>(t.val(losses.total)[0]);
                t.backward(losses.total);
                return std::make_pair(lv, pb.grads());
            });
            if (!std::isfinite(result.first))
                throw TrainingDiverged("steganography loss became non-finite", last_good);
            opt.step(psi.params, std::move(result.second));
            epoch_loss += result.first;
            ++steps;
        }
        psi.train_curve.push_back(epoch_loss / std::max(1, steps));
        if (cfg.verbose)
            std::cerr << "[steg] epoch " << epoch << " loss " << psi.train_curve.back() << "\n";
        if (!cfg.checkpoint_path.empty() && psi.params.all_finite()) {
            json meta{{"kind", "steganography"},
                      {"arch", psi.arch},
                      {"pbar", psi.pbar},
                      {"lhat_mode", to_string(psi.lhat_mode)},
                      {"train_curve", psi.train_curve}};
            save_checkpoint(cfg.checkpoint_path, psi.params, meta);
            last_good = cfg.checkpoint_path;
        }
    }
    return psi;
}

template <class T = float>
StegParams<T> load_steg(const std::filesystem::path& path) {
    auto loaded = load_checkpoint<T>(path);
    const json& meta = loaded.second;
    StegParams<T> s;
    s.arch = meta.at("arch").get<StegArch>();
    s.pbar = meta.at("pbar").get<double>();
    s.lhat_mode = lhat_mode_from_string(meta.at("lhat_mode").get<std::string>());
    if (meta.contains("train_curve")) s.train_curve = meta.at("train_curve").get<std::vector<double>>();
    s.params = std::move(loaded.first);
    return s;
}

/// Bob's receive path under the defense: takes the (already equalized, for
/// Rayleigh) received container, inverts the steganography module with
/// l-hat and decodes both images.
template <class T>
struct CovertReceive {
    Tensor<T> host_image, private_image;
    ChannelSignal<T> zh_rec, zp_rec;
};

template <class T>
CovertReceive<T> covert_receive(const ChannelSignal<T>& zc_hat, const StegParams<T>& psi,
                                const CodecParams<T>& codec, Rng* lhat_rng = nullptr) {
    auto lhat = make_lhat(psi, lhat_rng);
    auto rec = steg_extract(zc_hat, lhat, psi);
    CovertReceive<T> r;
    r.zh_rec = rec.first;
    r.zp_rec = rec.second;
    r.host_image = decode_one(codec, rec.first);
    r.private_image = decode_one(codec, rec.second);
    return r;
}

} // namespace semsec
