#pragma once

#include "semsec/generator.hpp"
#include "semsec/codec.hpp"

namespace semsec {

enum class AttackOptimizer { sgd, adam };

struct AttackConfig {
    double lr = 1e-3;          // eta
    int max_iters = 1000;      // T_max
    double stop_eps = 1e-4;    // stop when ||F(x) - zhat|| < eps
    double sigma_e2 = 1.0;     // Eve's (assumed) noise variance for the MAP weighting
    AttackOptimizer optimizer = AttackOptimizer::adam;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (!(lr > 0) || max_iters < 1 || !(stop_eps >= 0)) throw ConfigError("attack config: bad eta/T_max/eps");
    }
};

/// Differentiable encoder as seen by the glass-box attacker: x -> (1, 2k).
template <class T>
using EncoderGraphFn = std::function<Var(Tape<T>&, Var)>;

/// F(x) = h_e (.) E(x; theta1): Eve folds her own fading into the forward
/// function (she knows h_e).
template <class T>
EncoderGraphFn<T> make_forward_fn(const CodecParams<T>& codec, Tensor<T> h_e) {
    if (h_e.size() != 2 * codec.k()) throw InvalidShape("forward_fn: h_e length mismatch");
    return [&codec, h = std::move(h_e)](Tape<T>& t, Var x) {
        BoundParams<T> p(t, codec.params, false);
        Var z = encode_graph(t, x, codec.arch, p, static_cast<T>(codec.pbar));
        return t.complex_hadamard(z, t.constant(h.reshaped({1, static_cast<int>(h.size())})));
    };
}

/// Plain evaluation of the forward function on one image.
template <class T>
Tensor<T> forward_fn(const CodecParams<T>& codec, const Tensor<T>& h_e, const Tensor<T>& image) {
    Tape<T> t;
    auto fn = make_forward_fn(codec, h_e);
    Var x = t.constant(image.reshaped({1, codec.arch.channels, codec.arch.height, codec.arch.width}));
    return t.val(fn(t, x)).reshaped({2 * codec.k()});
}

template <class T>
struct GlassBoxResult {
    Tensor<T> image;                 // clamped to [0,1], caller's shape
    std::vector<double> residuals;   // ||F(x) - zhat|| per iteration (accepted steps)
    double final_objective = 0;      // 0.5 * ||zhat - F(x)||^2
    int iterations = 0;
    bool restarted = false;
};

namespace detail {

template <class T>
GlassBoxResult<T> glassbox_descent(const Tensor<T>& zhat, const EncoderGraphFn<T>& fwd,
                                   const std::vector<int>& x_shape, const AttackConfig& cfg,
                                   std::uint64_t seed, const Tensor<T>* x0) {
    cfg.validate();
    GlassBoxResult<T> res;
    ParamStore<T> xs;
    {
        Tensor<T> x(x_shape);
        if (x0) {
            if (!x0->same_shape(x)) throw InvalidShape("glassbox: x0 shape mismatch");
            x = *x0;
        } else {
            Rng rng(seed);
            fill_uniform(x, rng, T(0), T(1));
        }
        xs.add("x", std::move(x));
    }
    Adam<T> adam(static_cast<T>(cfg.lr));
    Tensor<T> ztarget = zhat.reshaped({1, static_cast<int>(zhat.size())});

    double obj = 0;
    for (int it = 0; it <= cfg.max_iters; ++it) {
        Tape<T> t;
        BoundParams<T> bp(t, xs, true);
        Var f = fwd(t, bp["x"]);
        Var diff = t.sub(f, t.constant(ztarget));
        Var objective = t.scale(t.l2sq(diff), T(0.5));
        obj = static_cast<double>(t.val(objective)[0]);
        if (!std::isfinite(obj)) throw NumericalError("glassbox: non-finite objective");
        const double residual = std::sqrt(2.0 * obj);
        res.residuals.push_back(residual);
        res.iterations = it;
        if (residual < cfg.stop_eps || it == cfg.max_iters) break;

        t.backward(objective);
        if (cfg.optimizer == AttackOptimizer::adam) {
            adam.step(xs, bp.grads());
        } else {
            auto g = bp.grads();
            Tensor<T>& x = xs.at("x");
            for (std::int64_t i = 0; i < x.size(); ++i) x[i] -= static_cast<T>(cfg.lr) * g[0][i];
        }
        // feasibility: pixel estimates live in [0,1]
        for (auto& v : xs.at("x").vec()) v = std::clamp(v, T(0), T(1));
    }
    res.image = xs.at("x");
    res.final_objective = obj;
    return res;
}

} // namespace detail

/// Algorithm: gradient descent on 0.5||zhat_e - F(x)||^2 from a random
/// in-range start, clamped to [0,1] after each step. One restart from a new
/// seed if the optimization turns non-finite.
template <class T>
GlassBoxResult<T> glassbox_invert_fn(const Tensor<T>& zhat_e, const EncoderGraphFn<T>& fwd,
                                     const std::vector<int>& x_shape, const AttackConfig& cfg,
                                     const Tensor<T>* x0 = nullptr) {
    try {
        return detail::glassbox_descent<T>(zhat_e, fwd, x_shape, cfg, cfg.rng_seed, x0);
    } catch (const NumericalError&) {
        try {
            auto res = detail::glassbox_descent<T>(zhat_e, fwd, x_shape, cfg,
                                                   substream_seed(cfg.rng_seed, "restart"), nullptr);
            res.restarted = true;
            return res;
        } catch (const NumericalError&) {
            throw AttackDiverged("glassbox inversion diverged twice");
        }
    }
}

template <class T>
GlassBoxResult<T> glassbox_invert(const Tensor<T>& zhat_e, const Tensor<T>& h_e, const CodecParams<T>& codec,
                                  const AttackConfig& cfg, const Tensor<T>* x0 = nullptr) {
    auto fwd = make_forward_fn(codec, h_e);
    auto res = glassbox_invert_fn(zhat_e, fwd, {1, codec.arch.channels, codec.arch.height, codec.arch.width},
                                  cfg, x0);
    res.image = res.image.reshaped({codec.arch.channels, codec.arch.height, codec.arch.width});
    return res;
}

/// GenAI-enhanced glass box: MAP in the latent space,
///   s* = argmin (1/(2 sigma_e^2)) ||zhat_e - F(G(s))||^2 + 0.5||s||^2,
/// returning G(s*).
template <class T>
struct GenaiGlassBoxResult {
    Tensor<T> image;
    Tensor<T> latent;
    std::vector<double> objectives;
    double final_objective = 0;
    int iterations = 0;
};

template <class T>
GenaiGlassBoxResult<T> genai_glassbox_invert(const Tensor<T>& zhat_e, const Tensor<T>& h_e,
                                             const CodecParams<T>& codec, const GeneratorParams<T>& gen,
                                             const AttackConfig& cfg) {
    cfg.validate();
    if (gen.arch.height != codec.arch.height || gen.arch.width != codec.arch.width)
        throw InvalidShape("genai glassbox: generator/codec resolution mismatch");
    auto fwd = make_forward_fn(codec, h_e);
    ParamStore<T> ss;
    {
        Rng rng(cfg.rng_seed);
        Tensor<T> s({1, gen.arch.d_s});
        fill_normal(s, rng, T(1));
        ss.add("s", std::move(s));
    }
    Adam<T> adam(static_cast<T>(cfg.lr));
    Tensor<T> ztarget = zhat_e.reshaped({1, static_cast<int>(zhat_e.size())});
    const T w = T(1) / (T(2) * static_cast<T>(cfg.sigma_e2));

    GenaiGlassBoxResult<T> res;
    double obj = 0;
    for (int it = 0; it <= cfg.max_iters; ++it) {
        Tape<T> t;
        BoundParams<T> bs(t, ss, true);
        BoundParams<T> pg(t, gen.params, false);
        Var img = generate_graph(t, bs["s"], Var{}, gen.arch, pg);
        Var f = fwd(t, img);
        Var fit = t.scale(t.l2sq(t.sub(f, t.constant(ztarget))), w);
        Var prior = t.scale(t.l2sq(bs["s"]), T(0.5));
        Var objective = t.add(fit, prior);
        obj = static_cast<double>(t.val(objective)[0]);
        if (!std::isfinite(obj)) throw AttackDiverged("genai glassbox objective non-finite");
        res.objectives.push_back(obj);
        res.iterations = it;
        if (it == cfg.max_iters) break;
        t.backward(objective);
        adam.step(ss, bs.grads());
    }
    res.final_objective = obj;
    res.latent = ss.at("s").reshaped({gen.arch.d_s});
    LatentCode<T> s{res.latent};
    res.image = generate(gen, s);
    return res;
}

// ---------------------------------------------------------------------------
// Closed box: query dataset, inverse network, single-pass inversion
// ---------------------------------------------------------------------------

/// The only view of the encoder a closed-box attacker gets.
template <class T>
class EncoderApi {
  public:
    virtual ~EncoderApi() = default;
    virtual Tensor<T> evaluate(const Tensor<T>& image) = 0; // (C,H,W) -> (2k)
    virtual int signal_len() const = 0;
    int queries_made() const { return queries_; }

  protected:
    int queries_ = 0;
};

template <class T>
class CodecEncoderApi : public EncoderApi<T> {
  public:
    explicit CodecEncoderApi(const CodecParams<T>& codec) : codec_(&codec) {}
    Tensor<T> evaluate(const Tensor<T>& image) override {
        ++this->queries_;
        return encode_one(*codec_, image).values;
    }
    int signal_len() const override { return 2 * codec_->k(); }

  private:
    const CodecParams<T>* codec_;
};

template <class T = float>
struct QueryDataset {
    std::vector<Tensor<T>> images;  // x_i, (C,H,W)
    std::vector<Tensor<T>> signals; // z~_i, (2k), post simulated channel (equalized under Rayleigh)
    ChannelSpec channel_spec_used;

    int m() const { return static_cast<int>(images.size()); }
};

/// Algorithm stage 1: query the encoder API with probe images and push each
/// output through Eve's simulated channel. An API failure ends collection
/// early with a warning; the partial dataset is still returned.
template <class T>
QueryDataset<T> collect_query_dataset(EncoderApi<T>& api, const std::vector<Tensor<T>>& probe_images,
                                      const ChannelSpec& spec, Rng& rng) {
    QueryDataset<T> qd;
    qd.channel_spec_used = spec;
    for (const auto& x : probe_images) {
        Tensor<T> z;
        try {
            z = api.evaluate(x);
        } catch (const std::exception& e) {
            std::cerr << "[semsec] encoder API failed after " << qd.m() << " queries: " << e.what()
                      << "; keeping partial dataset\n";
            break;
        }
        auto out = transmit(ChannelSignal<T>(z), spec, rng);
        ChannelSignal<T> zt =
            spec.family == ChannelFamily::Rayleigh ? equalize(out, static_cast<T>(spec.pbar)) : out.received;
        if (!zt.values.all_finite()) throw NumericalError("collect_query_dataset: non-finite signal");
        qd.images.push_back(x);
        qd.signals.push_back(zt.values);
    }
    return qd;
}

/// Inverse network. Image mode mirrors the semantic decoder; latent mode maps
/// the signal grid to (d_s, d_n) for a frozen generator.
struct InverseArch {
    int grid_c = 8, grid_h = 8, grid_w = 8;
    int channels = 3, height = 32, width = 32;
    int c1 = 32, c2 = 64, c3 = 64; // decoder-mirror widths
    int d_s = 0, d_n = 0;          // latent mode only

    int signal_len() const { return grid_c * grid_h * grid_w; }

    static InverseArch mirror_of(const CodecArch& c) {
        InverseArch a;
        a.grid_c = c.signal_ch;
        a.grid_h = c.grid_h();
        a.grid_w = c.grid_w();
        a.channels = c.channels;
        a.height = c.height;
        a.width = c.width;
        a.c1 = c.c1;
        a.c2 = c.c2;
        a.c3 = c.c3;
        return a;
    }
};

inline void to_json(json& j, const InverseArch& a) {
    j = json{{"grid_c", a.grid_c}, {"grid_h", a.grid_h}, {"grid_w", a.grid_w}, {"channels", a.channels},
             {"height", a.height}, {"width", a.width},   {"c1", a.c1},         {"c2", a.c2},
             {"c3", a.c3},         {"d_s", a.d_s},       {"d_n", a.d_n}};
}
inline void from_json(const json& j, InverseArch& a) {
    j.at("grid_c").get_to(a.grid_c);
    j.at("grid_h").get_to(a.grid_h);
    j.at("grid_w").get_to(a.grid_w);
    j.at("channels").get_to(a.channels);
    j.at("height").get_to(a.height);
    j.at("width").get_to(a.width);
    j.at("c1").get_to(a.c1);
    j.at("c2").get_to(a.c2);
    j.at("c3").get_to(a.c3);
    j.at("d_s").get_to(a.d_s);
    j.at("d_n").get_to(a.d_n);
}

enum class InverseOutputMode { image, latent_plus_noise };

template <class T = float>
struct InverseNetParams {
    InverseArch arch;
    InverseOutputMode output_mode = InverseOutputMode::image;
    ParamStore<T> params;
    std::vector<double> train_curve, val_curve;
};

template <class T>
InverseNetParams<T> make_inverse_net(const InverseArch& arch, InverseOutputMode mode, Rng& rng) {
    InverseNetParams<T> net;
    net.arch = arch;
    net.output_mode = mode;
    auto& p = net.params;
    if (mode == InverseOutputMode::image) {
        add_conv(p, "inv.conv0", arch.grid_c, arch.c3, 3, rng);
        add_conv(p, "inv.conv1", arch.c3, arch.c2, 3, rng);
        add_conv(p, "inv.conv2", arch.c2, arch.c1, 3, rng);
        add_conv(p, "inv.conv3", arch.c1, arch.channels, 3, rng);
    } else {
        if (arch.d_s <= 0 || arch.d_n < 0) throw ConfigError("inverse net: latent mode needs d_s/d_n");
        add_conv(p, "inv.conv0", arch.grid_c, arch.c3, 3, rng);
        add_conv(p, "inv.conv1", arch.c3, arch.c2, 3, rng);
        add_dense(p, "inv.head", arch.c2 * arch.grid_h * arch.grid_w, arch.d_s + arch.d_n, rng);
    }
    return net;
}

/// z~ (B, 2k) -> image (B,C,H,W) or latent/noise split (B, d_s + d_n).
template <class T>
Var inverse_forward(Tape<T>& t, Var z, const InverseNetParams<T>& net, const BoundParams<T>& p) {
    const Tensor<T>& zv = t.val(z);
    if (zv.rank() != 2 || zv.dim(1) != net.arch.signal_len())
        throw InvalidShape("inverse net: signal length mismatch");
    const int B = zv.dim(0);
    Var g = t.reshape(z, {B, net.arch.grid_c, net.arch.grid_h, net.arch.grid_w});
    if (net.output_mode == InverseOutputMode::image) {
        Var h = t.leaky_relu(t.conv2d(g, p["inv.conv0.w"], p["inv.conv0.b"], 1, 1), T(0.2));
        h = t.leaky_relu(t.conv2d(t.upsample2(h), p["inv.conv1.w"], p["inv.conv1.b"], 1, 1), T(0.2));
        h = t.leaky_relu(t.conv2d(t.upsample2(h), p["inv.conv2.w"], p["inv.conv2.b"], 1, 1), T(0.2));
        return t.sigmoid_op(t.conv2d(h, p["inv.conv3.w"], p["inv.conv3.b"], 1, 1));
    }
    Var h = t.leaky_relu(t.conv2d(g, p["inv.conv0.w"], p["inv.conv0.b"], 1, 1), T(0.2));
    h = t.leaky_relu(t.conv2d(h, p["inv.conv1.w"], p["inv.conv1.b"], 1, 1), T(0.2));
    Var flat = t.reshape(h, {B, net.arch.c2 * net.arch.grid_h * net.arch.grid_w});
    return t.dense(flat, p["inv.head.w"], p["inv.head.b"]);
}

struct InverseTrainConfig {
    int epochs = 200;
    int batch = 16;
    double lr = 1e-3;
    double lr_final = -1;
    double val_fraction = 0.1;
    int workers = 2;
    bool verbose = false;
};

namespace detail {

template <class T>
std::pair<Tensor<T>, Tensor<T>> stack_query_pairs(const QueryDataset<T>& qd, const std::vector<int>& idx) {
    const auto& img0 = qd.images[0];
    const int len = static_cast<int>(qd.signals[0].size());
    Tensor<T> xs({static_cast<int>(idx.size()), img0.dim(0), img0.dim(1), img0.dim(2)});
    Tensor<T> zs({static_cast<int>(idx.size()), len});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& im = qd.images[static_cast<std::size_t>(idx[i])];
        const auto& sg = qd.signals[static_cast<std::size_t>(idx[i])];
        std::copy(im.data(), im.data() + im.size(), xs.data() + static_cast<std::int64_t>(i) * im.size());
        std::copy(sg.data(), sg.data() + sg.size(), zs.data() + static_cast<std::int64_t>(i) * sg.size());
    }
    return {std::move(xs), std::move(zs)};
}

/// Shared trainer for both inverse-network variants; `loss_fn` maps the net
/// output and image batch to the step loss.
template <class T, class LossFn>
void train_inverse_common(InverseNetParams<T>& net, const QueryDataset<T>& qd, const InverseTrainConfig& cfg,
                          Rng& rng, LossFn loss_fn) {
    if (qd.m() == 0) throw EmptyDataset("inverse network: empty query dataset");
    const int m = qd.m();
    const int n_val = (m >= 10) ? std::max(1, static_cast<int>(std::lround(m * cfg.val_fraction))) : 0;
    std::vector<int> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> val_idx(order.begin(), order.begin() + n_val);
    std::vector<int> train_idx(order.begin() + n_val, order.end());

    const int batch = std::min<int>(cfg.batch, static_cast<int>(train_idx.size()));
    const int workers = std::max(1, std::min(cfg.workers, batch));
    const int shard = batch / workers;
    Adam<T> opt(static_cast<T>(cfg.lr), T(0.9), T(0.999), T(1e-8), T(5));
    const int steps_per_epoch = std::max(1, static_cast<int>(train_idx.size()) / (shard * workers));
    const std::int64_t total_steps = static_cast<std::int64_t>(cfg.epochs) * steps_per_epoch;
    std::int64_t step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        double epoch_loss = 0;
        int steps = 0;
        for (int s = 0; s + shard * workers <= static_cast<int>(train_idx.size()); s += shard * workers, ++step) {
            if (cfg.lr_final > 0) opt.set_lr(static_cast<T>(cosine_lr(cfg.lr, cfg.lr_final, step, total_steps)));
            auto result = sharded_batch_grads<T>(workers, [&](int w) {
                std::vector<int> idx(train_idx.begin() + s + w * shard, train_idx.begin() + s + (w + 1) * shard);
                auto [xs, zs] = stack_query_pairs(qd, idx);
                Tape<T> t;
                BoundParams<T> p(t, net.params, true);
                Var out = inverse_forward(t, t.constant(zs), net, p);
                Var loss = loss_fn(t, out, xs);
                const double lv = static_cast<double>(t.val(loss)[0]);
                t.backward(loss);
                return std::make_pair(lv, p.grads());
            });
            if (!std::isfinite(result.first)) throw TrainingDiverged("inverse network loss non-finite", "");
            opt.step(net.params, std::move(result.second));
            epoch_loss += result.first;
            ++steps;
        }
        net.train_curve.push_back(epoch_loss / std::max(1, steps));
        if (n_val > 0) {
            auto [xs, zs] = stack_query_pairs(qd, val_idx);
            Tape<T> t;
            BoundParams<T> p(t, net.params, false);
            Var out = inverse_forward(t, t.constant(zs), net, p);
            Var loss = loss_fn(t, out, xs);
            net.val_curve.push_back(static_cast<double>(t.val(loss)[0]));
        }
        if (cfg.verbose)
            std::cerr << "[inverse] epoch " << epoch << " loss " << net.train_curve.back() << "\n";
    }
}

} // namespace detail

/// Algorithm stage 2: phi* = argmin mean ||D~(z~; phi) - x||^2.
template <class T = float>
InverseNetParams<T> train_inverse_network(const QueryDataset<T>& qd, const InverseArch& arch,
                                          const InverseTrainConfig& cfg, Rng& rng) {
    auto net = make_inverse_net<T>(arch, InverseOutputMode::image, rng);
    detail::train_inverse_common(net, qd, cfg, rng, [](Tape<T>& t, Var out, const Tensor<T>& xs) {
        return t.scale(t.sse(out, t.constant(xs)), T(1) / static_cast<T>(xs.dim(0)));
    });
    return net;
}

/// Algorithm stage 3: one forward pass per intercepted signal.
template <class T>
Tensor<T> closedbox_invert(const Tensor<T>& z_tilde, const InverseNetParams<T>& net) {
    if (net.output_mode != InverseOutputMode::image) throw ConfigError("closedbox_invert: wrong output mode");
    Tape<T> t;
    BoundParams<T> p(t, net.params, false);
    Var out = inverse_forward(t, t.constant(z_tilde.reshaped({1, net.arch.signal_len()})), net, p);
    return t.val(out).reshaped({net.arch.channels, net.arch.height, net.arch.width});
}

/// GenAI variant of stage 2: the inverse net emits (s, n) and the frozen
/// generator renders; phi* = argmin mean ||G(D~(z~)) - x||^2.
template <class T = float>
InverseNetParams<T> train_genai_inverse_network(const QueryDataset<T>& qd, const GeneratorParams<T>& gen,
                                                InverseArch arch, const InverseTrainConfig& cfg, Rng& rng) {
    arch.d_s = gen.arch.d_s;
    arch.d_n = gen.arch.d_n();
    auto net = make_inverse_net<T>(arch, InverseOutputMode::latent_plus_noise, rng);
    detail::train_inverse_common(net, qd, cfg, rng, [&gen](Tape<T>& t, Var out, const Tensor<T>& xs) {
        BoundParams<T> pg(t, gen.params, false);
        Var s = t.slice_cols(out, 0, gen.arch.d_s);
        Var n = t.slice_cols(out, gen.arch.d_s, gen.arch.d_s + gen.arch.d_n());
        Var img = generate_graph(t, s, n, gen.arch, pg);
        return t.scale(t.sse(img, t.constant(xs)), T(1) / static_cast<T>(xs.dim(0)));
    });
    return net;
}

/// (s, n) = D~(z~; phi), then G(s, n).
template <class T>
Tensor<T> genai_closedbox_invert(const Tensor<T>& z_tilde, const InverseNetParams<T>& net,
                                 const GeneratorParams<T>& gen) {
    if (net.output_mode != InverseOutputMode::latent_plus_noise)
        throw ConfigError("genai_closedbox_invert: wrong output mode");
    Tape<T> t;
    BoundParams<T> p(t, net.params, false);
    Var out = inverse_forward(t, t.constant(z_tilde.reshaped({1, net.arch.signal_len()})), net, p);
    BoundParams<T> pg(t, gen.params, false);
    Var s = t.slice_cols(out, 0, gen.arch.d_s);
    Var n = t.slice_cols(out, gen.arch.d_s, gen.arch.d_s + gen.arch.d_n());
    Var img = generate_graph(t, s, n, gen.arch, pg);
    return t.val(img).reshaped({gen.arch.channels, gen.arch.height, gen.arch.width});
}

} // namespace semsec
