#pragma once

#include <iostream>

#include "semsec/dataset.hpp"
#include "semsec/serialize.hpp"

namespace semsec {

/// Upsampling decoder with a Gaussian latent space. Per-stage noise maps are
/// added after each upsampling conv, so a zero noise vector reproduces the
/// deterministic path bit-for-bit. Trained as a VAE decoder; the attacks only
/// need the two-input differentiable interface.
struct GeneratorArch {
    int channels = 3, height = 64, width = 64;
    int d_s = 64;
    int g0 = 64, g1 = 64, g2 = 48, g3 = 32;

    int base_h() const { return height / 8; }
    int base_w() const { return width / 8; }

    struct Stage {
        int h, w;
    };
    std::vector<Stage> noise_stages() const {
        return {{height / 4, width / 4}, {height / 2, width / 2}, {height, width}};
    }
    int d_n() const {
        int n = 0;
        for (const auto& s : noise_stages()) n += s.h * s.w;
        return n;
    }

    void validate() const {
        if (height % 8 != 0 || width % 8 != 0) throw ConfigError("generator: dims must be divisible by 8");
        if (d_s < 1) throw ConfigError("generator: d_s must be positive");
    }
};

inline void to_json(json& j, const GeneratorArch& a) {
    j = json{{"channels", a.channels}, {"height", a.height}, {"width", a.width}, {"d_s", a.d_s},
             {"g0", a.g0},           {"g1", a.g1},         {"g2", a.g2},       {"g3", a.g3}};
}
inline void from_json(const json& j, GeneratorArch& a) {
    j.at("channels").get_to(a.channels);
    j.at("height").get_to(a.height);
    j.at("width").get_to(a.width);
    j.at("d_s").get_to(a.d_s);
    j.at("g0").get_to(a.g0);
    j.at("g1").get_to(a.g1);
    j.at("g2").get_to(a.g2);
    j.at("g3").get_to(a.g3);
}

template <class T = float>
struct LatentCode {
    Tensor<T> s; // rank 1, d_s
};

template <class T = float>
struct NoiseVector {
    Tensor<T> n; // rank 1, d_n; per-stage partition defined by the arch
};

template <class T = float>
struct GeneratorParams {
    GeneratorArch arch;
    ParamStore<T> params;
    std::vector<double> train_curve;
};

template <class T>
void init_generator_params(GeneratorParams<T>& g, Rng& rng) {
    const auto& a = g.arch;
    add_dense(g.params, "gen.fc", a.d_s, a.g0 * a.base_h() * a.base_w(), rng);
    add_conv(g.params, "gen.conv0", a.g0, a.g1, 3, rng);
    add_conv(g.params, "gen.conv1", a.g1, a.g2, 3, rng);
    add_conv(g.params, "gen.conv2", a.g2, a.g3, 3, rng);
    add_conv(g.params, "gen.out", a.g3, a.channels, 3, rng);
}

template <class T>
GeneratorParams<T> make_generator(const GeneratorArch& arch, Rng& rng) {
    GeneratorParams<T> g;
    g.arch = arch;
    g.arch.validate();
    init_generator_params(g, rng);
    return g;
}

/// s ~ N(0, I)
template <class T = float>
LatentCode<T> sample_latent(int d_s, Rng& rng) {
    if (d_s < 1) throw ConfigError("sample_latent: d_s must be >= 1");
    LatentCode<T> s{Tensor<T>({d_s})};
    fill_normal(s.s, rng, T(1));
    return s;
}

/// log p(s) for the standard normal prior.
template <class T>
double prior_log_density(const LatentCode<T>& s) {
    double sq = 0;
    for (T v : s.s.vec()) sq += static_cast<double>(v) * v;
    return -0.5 * sq - 0.5 * s.s.size() * std::log(2.0 * 3.14159265358979323846);
}

/// Graph form: s(B, d_s) and optional noise(B, d_n) -> image (B,C,H,W).
template <class T>
Var generate_graph(Tape<T>& t, Var s, Var noise, const GeneratorArch& a, const BoundParams<T>& p) {
    const Tensor<T>& sv = t.val(s);
    if (sv.rank() != 2 || sv.dim(1) != a.d_s) throw InvalidShape("generate: latent width mismatch");
    const int B = sv.dim(0);
    if (noise.valid()) {
        const Tensor<T>& nv = t.val(noise);
        if (nv.rank() != 2 || nv.dim(1) != a.d_n() || nv.dim(0) != B)
            throw InvalidShape("generate: noise vector mismatch");
    }
    Var h = t.dense(s, p["gen.fc.w"], p["gen.fc.b"]);
    h = t.leaky_relu(t.reshape(h, {B, a.g0, a.base_h(), a.base_w()}), T(0.2));
    const char* convs[3] = {"gen.conv0", "gen.conv1", "gen.conv2"};
    const auto stages = a.noise_stages();
    int offset = 0;
    for (int i = 0; i < 3; ++i) {
        h = t.conv2d(t.upsample2(h), p[std::string(convs[i]) + ".w"], p[std::string(convs[i]) + ".b"], 1, 1);
        if (noise.valid()) {
            Var slice = t.slice_cols(noise, offset, offset + stages[static_cast<std::size_t>(i)].h * stages[static_cast<std::size_t>(i)].w);
            Var map = t.reshape(slice, {B, 1, stages[static_cast<std::size_t>(i)].h, stages[static_cast<std::size_t>(i)].w});
            h = t.add_broadcast_chan(h, map);
        }
        offset += stages[static_cast<std::size_t>(i)].h * stages[static_cast<std::size_t>(i)].w;
        h = t.leaky_relu(h, T(0.2));
    }
    return t.sigmoid_op(t.conv2d(h, p["gen.out.w"], p["gen.out.b"], 1, 1));
}

/// Single-sample convenience: none / zero noise are the same path.
template <class T>
Tensor<T> generate(const GeneratorParams<T>& g, const LatentCode<T>& s, const NoiseVector<T>* noise = nullptr) {
    Tape<T> t;
    BoundParams<T> p(t, g.params, false);
    Var sv = t.constant(s.s.reshaped({1, g.arch.d_s}));
    Var nv{};
    if (noise) nv = t.constant(noise->n.reshaped({1, g.arch.d_n()}));
    const auto img = t.val(generate_graph(t, sv, nv, g.arch, p));
    return img.reshaped({g.arch.channels, g.arch.height, g.arch.width});
}

// ---------------------------------------------------------------------------
// VAE training (the paper's pretrained GAN is replaced by this desk-scale
// generative prior; only the sampling interface matters downstream).
// ---------------------------------------------------------------------------

struct GeneratorTrainConfig {
    int epochs = 80;
    int batch = 32;
    double lr = 2e-3;
    double lr_final = -1;
    double beta = 3e-3; // KL weight per latent dim
    int workers = 2;
    std::string checkpoint_path;
    bool verbose = false;
};

template <class T>
void init_vae_encoder_params(ParamStore<T>& p, const GeneratorArch& a, Rng& rng) {
    add_conv(p, "venc.conv0", a.channels, 32, 3, rng);
    add_conv(p, "venc.conv1", 32, 64, 3, rng);
    add_conv(p, "venc.conv2", 64, 64, 3, rng);
    add_dense(p, "venc.mu", 64 * a.base_h() * a.base_w(), a.d_s, rng);
    add_dense(p, "venc.logvar", 64 * a.base_h() * a.base_w(), a.d_s, rng);
}

template <class T>
std::pair<Var, Var> vae_encode_graph(Tape<T>& t, Var x, const GeneratorArch& a, const BoundParams<T>& p) {
    Var h = t.leaky_relu(t.conv2d(x, p["venc.conv0.w"], p["venc.conv0.b"], 2, 1), T(0.2));
    h = t.leaky_relu(t.conv2d(h, p["venc.conv1.w"], p["venc.conv1.b"], 2, 1), T(0.2));
    h = t.leaky_relu(t.conv2d(h, p["venc.conv2.w"], p["venc.conv2.b"], 2, 1), T(0.2));
    const int B = t.val(x).dim(0);
    Var flat = t.reshape(h, {B, 64 * a.base_h() * a.base_w()});
    return {t.dense(flat, p["venc.mu.w"], p["venc.mu.b"]), t.dense(flat, p["venc.logvar.w"], p["venc.logvar.b"])};
}

/// Trains the generator as a VAE decoder and returns it with the VAE encoder
/// discarded. The resulting samples must at least beat uniform noise on
/// perceptual distance to the data manifold, which the tests enforce.
template <class T = float>
GeneratorParams<T> train_generator(const Dataset<T>& train, const GeneratorArch& arch,
                                   const GeneratorTrainConfig& cfg, Rng& rng) {
    GeneratorParams<T> gen = make_generator<T>(arch, rng);
    ParamStore<T> joint;
    for (std::size_t i = 0; i < gen.params.size(); ++i)
        joint.add(gen.params.entry(i).name, gen.params.entry(i).tensor);
    init_vae_encoder_params(joint, arch, rng);

    Adam<T> opt(static_cast<T>(cfg.lr), T(0.9), T(0.999), T(1e-8), T(5));
    const int n = train.count();
    if (n < cfg.batch) throw EmptyDataset("train_generator: dataset smaller than one batch");
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    const int workers = std::max(1, std::min(cfg.workers, cfg.batch));
    const int shard = cfg.batch / workers;
    const std::int64_t total_steps = static_cast<std::int64_t>(cfg.epochs) * std::max(1, n / cfg.batch);
    std::int64_t step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0;
        int steps = 0;
        for (int s = 0; s + cfg.batch <= n; s += cfg.batch, ++step) {
            const std::uint64_t step_seed = rng();
            if (cfg.lr_final > 0) opt.set_lr(static_cast<T>(cosine_lr(cfg.lr, cfg.lr_final, step, total_steps)));
            auto result = sharded_batch_grads<T>(workers, [&](int w) {
                std::vector<int> idx(order.begin() + s + w * shard, order.begin() + s + (w + 1) * shard);
                Tensor<T> batch = gather_batch(train, idx);
                Rng wrng(substream_seed(step_seed, "w" + std::to_string(w)));
                Tensor<T> eps({shard, arch.d_s});
                fill_normal(eps, wrng, T(1));

                Tape<T> t;
                BoundParams<T> p(t, joint, true);
                Var x = t.constant(batch);
                auto [mu, logvar] = vae_encode_graph(t, x, arch, p);
                Var sdev = t.exp_op(t.scale(logvar, T(0.5)));
                Var z = t.add(mu, t.mul(sdev, t.constant(eps)));
                Var xhat = generate_graph(t, z, Var{}, arch, p);
                Var recon = t.mse(x, xhat);
                // KL(q || N(0,I)) averaged per sample and latent dim
                Var klsum = t.add(t.l2sq(mu), t.sub(t.sum(t.exp_op(logvar)), t.sum(logvar)));
                Var kl = t.scale(t.add_scalar(klsum, -static_cast<T>(arch.d_s * shard)),
                                 T(0.5) / static_cast<T>(arch.d_s * shard));
                Var loss = t.add(recon, t.scale(kl, static_cast<T>(cfg.beta)));
                const double lv = static_cast<double>(t.val(loss)[0]);
                t.backward(loss);
                return std::make_pair(lv, p.grads());
            });
            if (!std::isfinite(result.first)) throw TrainingDiverged("generator loss became non-finite", "");
            opt.step(joint, std::move(result.second));
            epoch_loss += result.first;
            ++steps;
        }
        gen.train_curve.push_back(epoch_loss / std::max(1, steps));
        if (cfg.verbose)
            std::cerr << "[generator] epoch " << epoch << " loss " << gen.train_curve.back() << "\n";
    }

    // keep only the decoder: that is the generative prior
    for (std::size_t i = 0; i < gen.params.size(); ++i)
        gen.params.entry(i).tensor = joint.at(gen.params.entry(i).name);
    if (!cfg.checkpoint_path.empty()) {
        json meta{{"kind", "generator"}, {"arch", gen.arch}, {"train_curve", gen.train_curve}};
        save_checkpoint(cfg.checkpoint_path, gen.params, meta);
    }
    return gen;
}

template <class T = float>
GeneratorParams<T> load_generator(const std::filesystem::path& path) {
    auto loaded = load_checkpoint<T>(path);
    const json& meta = loaded.second;
    GeneratorParams<T> g;
    g.arch = meta.at("arch").get<GeneratorArch>();
    if (meta.contains("train_curve")) g.train_curve = meta.at("train_curve").get<std::vector<double>>();
    g.params = std::move(loaded.first);
    return g;
}

} // namespace semsec
