#pragma once

#include <thread>

#include "semsec/attacks.hpp"
#include "semsec/metrics.hpp"
#include "semsec/steganography.hpp"

namespace semsec {

// ---------------------------------------------------------------------------
// Experiment configuration: a JSON file with schema validation. Every default
// is materialized back into the record so paper-unspecified choices stay
// auditable.
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    std::string run_dir = "runs/default";
    std::uint64_t seed = 1;

    struct DatasetCfg {
        std::string path;
        int channels = 3, height = 64, width = 64;
        double split_ratio = 14.0; // train : test
    } dataset;

    struct CodecCfg {
        int bcr_num = 1, bcr_den = 12;
        int c1 = 16, c2 = 32, c3 = 32;
        int epochs = 220, batch = 16;
        double lr = 3e-3, lr_final = 2e-4;
        double lambda_pix = 1.0, lambda_perc = 0.1;
        std::string train_family = "awgn";
        double snr_lo = 0.0, snr_hi = 20.0;
        double pbar = 1.0;
    } codec;

    struct GeneratorCfg {
        int d_s = 64;
        int g0 = 64, g1 = 64, g2 = 48, g3 = 32;
        int epochs = 120, batch = 16;
        double lr = 2e-3, lr_final = 3e-4, beta = 3e-3;
    } generator;

    struct IdentityCfg {
        int embed_dim = 64;
        int epochs = 30, batch = 32;
        double lr = 1e-3, gate = 0.9, aug_noise = 0.06;
    } identity;

    struct StegCfg {
        int blocks = 8, width = 16;
        double clamp_alpha = 2.0;
        double lambda1 = 1, lambda2 = 2, lambda3 = 2, lambda4 = 1, lambda5 = 1;
        std::string lhat_mode = "zero_constant";
        int pairs = 1000, epochs = 60, batch = 128;
        double lr = 3e-4, lr_final = -1;
    } steg;

    struct AttackCfg {
        std::vector<std::string> strategies = {"decoder", "glass", "closed", "genai-glass", "genai-closed"};
        double glass_lr = 2e-3;   // pixel-space Adam step
        int glass_iters = 300;
        std::string glass_init = "midpoint"; // or "uniform"; midpoint keeps the
                                             // encoder's null space smooth
        double genai_lr = 3e-2;   // latent-space Adam step
        int genai_iters = 300;
        double stop_eps = 1e-4;
        int m_queries = 100;
        double sigma_e2 = -1;     // <= 0: Eve uses the true noise variance of her link
        int inverse_epochs = 240, inverse_batch = 20;
        double inverse_lr = 1e-3, inverse_lr_final = 1e-4;
        int eval_samples = -1;    // <= 0: whole test split
    } attack;

    struct GridCfg {
        std::vector<std::string> families = {"awgn"};
        std::vector<double> snrs_db = {0, 5, 10, 15, 20};
        bool defended = true;
        bool undefended = true;
    } grid;

    json to_json() const;
    static ExperimentConfig from_json(const json& j);
    static ExperimentConfig load(const std::filesystem::path& file);

    // run-directory layout
    std::filesystem::path dir() const { return run_dir; }
    std::filesystem::path checkpoints_dir() const { return dir() / "checkpoints"; }
    std::filesystem::path metrics_dir() const { return dir() / "metrics"; }
    std::filesystem::path report_dir() const { return dir() / "report"; }
    std::filesystem::path codec_ckpt() const { return checkpoints_dir() / "codec.ckpt"; }
    std::filesystem::path generator_ckpt() const { return checkpoints_dir() / "generator.ckpt"; }
    std::filesystem::path identity_ckpt() const { return checkpoints_dir() / "identity.ckpt"; }
    std::filesystem::path steg_ckpt() const { return checkpoints_dir() / "steganography.ckpt"; }
    std::filesystem::path record_path() const { return dir() / "record.json"; }
};

namespace detail {

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
}

template <class V>
void take(const json& j, const char* key, V& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

} // namespace detail

inline json ExperimentConfig::to_json() const {
    return json{
        {"run_dir", run_dir},
        {"seed", seed},
        {"dataset",
         {{"path", dataset.path},
          {"channels", dataset.channels},
          {"height", dataset.height},
          {"width", dataset.width},
          {"split_ratio", dataset.split_ratio}}},
        {"codec",
         {{"bcr", std::to_string(codec.bcr_num) + "/" + std::to_string(codec.bcr_den)},
          {"c1", codec.c1},
          {"c2", codec.c2},
          {"c3", codec.c3},
          {"epochs", codec.epochs},
          {"batch", codec.batch},
          {"lr", codec.lr},
          {"lr_final", codec.lr_final},
          {"lambda_pix", codec.lambda_pix},
          {"lambda_perc", codec.lambda_perc},
          {"train_family", codec.train_family},
          {"snr_lo", codec.snr_lo},
          {"snr_hi", codec.snr_hi},
          {"pbar", codec.pbar}}},
        {"generator",
         {{"d_s", generator.d_s},
          {"g0", generator.g0},
          {"g1", generator.g1},
          {"g2", generator.g2},
          {"g3", generator.g3},
          {"epochs", generator.epochs},
          {"batch", generator.batch},
          {"lr", generator.lr},
          {"lr_final", generator.lr_final},
          {"beta", generator.beta}}},
        {"identity",
         {{"embed_dim", identity.embed_dim},
          {"epochs", identity.epochs},
          {"batch", identity.batch},
          {"lr", identity.lr},
          {"gate", identity.gate},
          {"aug_noise", identity.aug_noise}}},
        {"steganography",
         {{"blocks", steg.blocks},
          {"width", steg.width},
          {"clamp_alpha", steg.clamp_alpha},
          {"lambda", json::array({steg.lambda1, steg.lambda2, steg.lambda3, steg.lambda4, steg.lambda5})},
          {"lhat_mode", steg.lhat_mode},
          {"pairs", steg.pairs},
          {"epochs", steg.epochs},
          {"batch", steg.batch},
          {"lr", steg.lr},
          {"lr_final", steg.lr_final}}},
        {"attack",
         {{"strategies", attack.strategies},
          {"glass_lr", attack.glass_lr},
          {"glass_iters", attack.glass_iters},
          {"genai_lr", attack.genai_lr},
          {"genai_iters", attack.genai_iters},
          {"stop_eps", attack.stop_eps},
          {"m_queries", attack.m_queries},
          {"sigma_e2", attack.sigma_e2},
          {"inverse_epochs", attack.inverse_epochs},
          {"inverse_batch", attack.inverse_batch},
          {"inverse_lr", attack.inverse_lr},
          {"inverse_lr_final", attack.inverse_lr_final},
          {"eval_samples", attack.eval_samples}}},
        {"grid",
         {{"families", grid.families},
          {"snrs_db", grid.snrs_db},
          {"defended", grid.defended},
          {"undefended", grid.undefended}}}};
}

inline ExperimentConfig ExperimentConfig::from_json(const json& j) {
    using detail::check_keys;
    using detail::take;
    check_keys(j, "config",
               {"run_dir", "seed", "dataset", "codec", "generator", "identity", "steganography", "attack", "grid"});
    ExperimentConfig c;
    take(j, "run_dir", c.run_dir);
    take(j, "seed", c.seed);
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        check_keys(d, "dataset", {"path", "channels", "height", "width", "split_ratio"});
        take(d, "path", c.dataset.path);
        take(d, "channels", c.dataset.channels);
        take(d, "height", c.dataset.height);
        take(d, "width", c.dataset.width);
        take(d, "split_ratio", c.dataset.split_ratio);
    }
    if (j.contains("codec")) {
        const auto& d = j.at("codec");
        check_keys(d, "codec", {"bcr", "c1", "c2", "c3", "epochs", "batch", "lr", "lr_final", "lambda_pix",
                                "lambda_perc", "train_family", "snr_lo", "snr_hi", "pbar"});
        if (d.contains("bcr")) {
            const std::string b = d.at("bcr").get<std::string>();
            const auto slash = b.find('/');
            if (slash == std::string::npos) throw ConfigError("codec.bcr: expected \"num/den\"");
            c.codec.bcr_num = std::stoi(b.substr(0, slash));
            c.codec.bcr_den = std::stoi(b.substr(slash + 1));
            if (c.codec.bcr_num < 1 || c.codec.bcr_den < 1) throw ConfigError("codec.bcr: must be positive");
        }
        take(d, "c1", c.codec.c1);
        take(d, "c2", c.codec.c2);
        take(d, "c3", c.codec.c3);
        take(d, "epochs", c.codec.epochs);
        take(d, "batch", c.codec.batch);
        take(d, "lr", c.codec.lr);
        take(d, "lr_final", c.codec.lr_final);
        take(d, "lambda_pix", c.codec.lambda_pix);
        take(d, "lambda_perc", c.codec.lambda_perc);
        take(d, "train_family", c.codec.train_family);
        take(d, "snr_lo", c.codec.snr_lo);
        take(d, "snr_hi", c.codec.snr_hi);
        take(d, "pbar", c.codec.pbar);
    }
    if (j.contains("generator")) {
        const auto& d = j.at("generator");
        check_keys(d, "generator", {"d_s", "g0", "g1", "g2", "g3", "epochs", "batch", "lr", "lr_final", "beta"});
        take(d, "d_s", c.generator.d_s);
        take(d, "g0", c.generator.g0);
        take(d, "g1", c.generator.g1);
        take(d, "g2", c.generator.g2);
        take(d, "g3", c.generator.g3);
        take(d, "epochs", c.generator.epochs);
        take(d, "batch", c.generator.batch);
        take(d, "lr", c.generator.lr);
        take(d, "lr_final", c.generator.lr_final);
        take(d, "beta", c.generator.beta);
    }
    if (j.contains("identity")) {
        const auto& d = j.at("identity");
        check_keys(d, "identity", {"embed_dim", "epochs", "batch", "lr", "gate", "aug_noise"});
        take(d, "embed_dim", c.identity.embed_dim);
        take(d, "epochs", c.identity.epochs);
        take(d, "batch", c.identity.batch);
        take(d, "lr", c.identity.lr);
        take(d, "gate", c.identity.gate);
        take(d, "aug_noise", c.identity.aug_noise);
    }
    if (j.contains("steganography")) {
        const auto& d = j.at("steganography");
        check_keys(d, "steganography", {"blocks", "width", "clamp_alpha", "lambda", "lhat_mode", "pairs", "epochs",
                                        "batch", "lr", "lr_final"});
        take(d, "blocks", c.steg.blocks);
        take(d, "width", c.steg.width);
        take(d, "clamp_alpha", c.steg.clamp_alpha);
        if (d.contains("lambda")) {
            auto l = d.at("lambda").get<std::vector<double>>();
            if (l.size() != 5) throw ConfigError("steganography.lambda: need 5 weights");
            c.steg.lambda1 = l[0];
            c.steg.lambda2 = l[1];
            c.steg.lambda3 = l[2];
            c.steg.lambda4 = l[3];
            c.steg.lambda5 = l[4];
        }
        take(d, "lhat_mode", c.steg.lhat_mode);
        take(d, "pairs", c.steg.pairs);
        take(d, "epochs", c.steg.epochs);
        take(d, "batch", c.steg.batch);
        take(d, "lr", c.steg.lr);
        take(d, "lr_final", c.steg.lr_final);
    }
    if (j.contains("attack")) {
        const auto& d = j.at("attack");
        check_keys(d, "attack",
                   {"strategies", "glass_lr", "glass_iters", "glass_init", "genai_lr", "genai_iters", "stop_eps",
                    "m_queries", "sigma_e2", "inverse_epochs", "inverse_batch", "inverse_lr", "inverse_lr_final",
                    "eval_samples"});
        take(d, "strategies", c.attack.strategies);
        take(d, "glass_lr", c.attack.glass_lr);
        take(d, "glass_iters", c.attack.glass_iters);
        take(d, "glass_init", c.attack.glass_init);
        if (c.attack.glass_init != "midpoint" && c.attack.glass_init != "uniform")
            throw ConfigError("attack.glass_init: expected midpoint or uniform");
        take(d, "genai_lr", c.attack.genai_lr);
        take(d, "genai_iters", c.attack.genai_iters);
        take(d, "stop_eps", c.attack.stop_eps);
        take(d, "m_queries", c.attack.m_queries);
        take(d, "sigma_e2", c.attack.sigma_e2);
        take(d, "inverse_epochs", c.attack.inverse_epochs);
        take(d, "inverse_batch", c.attack.inverse_batch);
        take(d, "inverse_lr", c.attack.inverse_lr);
        take(d, "inverse_lr_final", c.attack.inverse_lr_final);
        take(d, "eval_samples", c.attack.eval_samples);
    }
    if (j.contains("grid")) {
        const auto& d = j.at("grid");
        check_keys(d, "grid", {"families", "snrs_db", "defended", "undefended"});
        take(d, "families", c.grid.families);
        take(d, "snrs_db", c.grid.snrs_db);
        take(d, "defended", c.grid.defended);
        take(d, "undefended", c.grid.undefended);
    }
    for (const auto& f : c.grid.families) channel_family_from_string(f); // validate early
    lhat_mode_from_string(c.steg.lhat_mode);
    return c;
}

inline ExperimentConfig ExperimentConfig::load(const std::filesystem::path& file) {
    std::ifstream is(file);
    if (!is) throw IoError("cannot read config " + file.string());
    json j;
    is >> j;
    return from_json(j);
}

// ---------------------------------------------------------------------------
// Stages. Each trains (or loads, when resuming) one artifact and persists a
// checkpoint under run_dir/checkpoints.
// ---------------------------------------------------------------------------

template <class T = float>
struct ExperimentArtifacts {
    SplitDataset<T> data;
    CodecParams<T> codec;
    GeneratorParams<T> generator;
    IdentityModel<T> identity;
    FeatureExtractor<T> features;
    StegParams<T> steg;
    bool has_codec = false, has_generator = false, has_identity = false, has_steg = false;
};

template <class T = float>
SplitDataset<T> stage_dataset(const ExperimentConfig& cfg) {
    if (cfg.dataset.path.empty()) throw ConfigError("dataset.path is required");
    return load_dataset<T>(cfg.dataset.path, cfg.dataset.height, cfg.dataset.width, cfg.dataset.split_ratio,
                           cfg.seed);
}

template <class T = float>
IdentityModel<T> stage_identity(const ExperimentConfig& cfg, const SplitDataset<T>& data, bool resume) {
    if (resume && std::filesystem::exists(cfg.identity_ckpt())) {
        auto loaded = load_checkpoint<T>(cfg.identity_ckpt());
        IdentityModel<T> m;
        m.arch = loaded.second.at("arch").template get<IdentityArch>();
        m.holdout_accuracy = loaded.second.at("holdout_accuracy").template get<double>();
        m.tau = loaded.second.at("tau").template get<double>();
        m.params = std::move(loaded.first);
        return m;
    }
    IdentityTrainConfig icfg;
    icfg.epochs = cfg.identity.epochs;
    icfg.batch = cfg.identity.batch;
    icfg.lr = cfg.identity.lr;
    icfg.gate = cfg.identity.gate;
    icfg.embed_dim = cfg.identity.embed_dim;
    icfg.aug_noise = cfg.identity.aug_noise;
    Rng rng(substream_seed(cfg.seed, "identity"));
    auto m = train_identity_model<T>(data.train, data.test, icfg, rng);
    calibrate_cosine_threshold(m, data.train);
    m.rule = DecisionRule::nearest_class; // default rule; tau kept for cosine mode
    json meta{{"kind", "identity"}, {"arch", m.arch}, {"holdout_accuracy", m.holdout_accuracy}, {"tau", m.tau},
              {"seed", cfg.seed}};
    save_checkpoint(cfg.identity_ckpt(), m.params, meta);
    return m;
}

template <class T = float>
CodecParams<T> stage_codec(const ExperimentConfig& cfg, const SplitDataset<T>& data,
                           const FeatureExtractor<T>* features, bool resume) {
    if (resume && std::filesystem::exists(cfg.codec_ckpt())) return load_codec<T>(cfg.codec_ckpt());
    CodecArch arch = CodecArch::for_bcr(cfg.dataset.channels, cfg.dataset.height, cfg.dataset.width,
                                        cfg.codec.bcr_num, cfg.codec.bcr_den, cfg.codec.c1, cfg.codec.c2,
                                        cfg.codec.c3);
    CodecLossConfig<T> loss;
    loss.lambda_pix = static_cast<T>(cfg.codec.lambda_pix);
    loss.lambda_perc = features ? static_cast<T>(cfg.codec.lambda_perc) : T(0);
    loss.feature_net = features;
    CodecTrainConfig tcfg;
    tcfg.epochs = cfg.codec.epochs;
    tcfg.batch = cfg.codec.batch;
    tcfg.lr = cfg.codec.lr;
    tcfg.lr_final = cfg.codec.lr_final;
    tcfg.checkpoint_path = cfg.codec_ckpt().string();
    Rng rng(substream_seed(cfg.seed, "codec"));
    auto sampler = uniform_snr_sampler(channel_family_from_string(cfg.codec.train_family), cfg.codec.snr_lo,
                                       cfg.codec.snr_hi, cfg.codec.pbar);
    return train_codec<T>(data.train, sampler, arch, loss, tcfg, rng, cfg.codec.pbar);
}

template <class T = float>
GeneratorParams<T> stage_generator(const ExperimentConfig& cfg, const SplitDataset<T>& data, bool resume) {
    if (resume && std::filesystem::exists(cfg.generator_ckpt())) return load_generator<T>(cfg.generator_ckpt());
    GeneratorArch arch;
    arch.channels = cfg.dataset.channels;
    arch.height = cfg.dataset.height;
    arch.width = cfg.dataset.width;
    arch.d_s = cfg.generator.d_s;
    arch.g0 = cfg.generator.g0;
    arch.g1 = cfg.generator.g1;
    arch.g2 = cfg.generator.g2;
    arch.g3 = cfg.generator.g3;
    GeneratorTrainConfig gcfg;
    gcfg.epochs = cfg.generator.epochs;
    gcfg.batch = cfg.generator.batch;
    gcfg.lr = cfg.generator.lr;
    gcfg.lr_final = cfg.generator.lr_final;
    gcfg.beta = cfg.generator.beta;
    gcfg.checkpoint_path = cfg.generator_ckpt().string();
    Rng rng(substream_seed(cfg.seed, "generator"));
    return train_generator<T>(data.train, arch, gcfg, rng);
}

template <class T = float>
StegParams<T> stage_steg(const ExperimentConfig& cfg, const SplitDataset<T>& data, const CodecParams<T>& codec,
                         bool resume) {
    if (resume && std::filesystem::exists(cfg.steg_ckpt())) return load_steg<T>(cfg.steg_ckpt());
    StegLossConfig<T> loss;
    loss.lambda1 = static_cast<T>(cfg.steg.lambda1);
    loss.lambda2 = static_cast<T>(cfg.steg.lambda2);
    loss.lambda3 = static_cast<T>(cfg.steg.lambda3);
    loss.lambda4 = static_cast<T>(cfg.steg.lambda4);
    loss.lambda5 = static_cast<T>(cfg.steg.lambda5);
    loss.lhat_mode = lhat_mode_from_string(cfg.steg.lhat_mode);
    StegTrainConfig tcfg;
    tcfg.pairs = cfg.steg.pairs;
    tcfg.epochs = cfg.steg.epochs;
    tcfg.batch = cfg.steg.batch;
    tcfg.lr = cfg.steg.lr;
    tcfg.lr_final = cfg.steg.lr_final;
    tcfg.checkpoint_path = cfg.steg_ckpt().string();
    StegArch arch = StegArch::for_codec(codec.arch, cfg.steg.blocks, cfg.steg.width, cfg.steg.clamp_alpha);
    Rng rng(substream_seed(cfg.seed, "steganography"));
    auto sampler = uniform_snr_sampler(channel_family_from_string(cfg.codec.train_family), cfg.codec.snr_lo,
                                       cfg.codec.snr_hi, cfg.codec.pbar);
    return train_steganography<T>(data.train, codec, loss, tcfg, sampler, rng, &arch);
}

// ---------------------------------------------------------------------------
// Evaluation grid
// ---------------------------------------------------------------------------

/// One (strategy x family x snr x defense) cell of the evaluation grid.
struct CellKey {
    std::string strategy;
    std::string family;
    double snr_db = 0;
    bool defended = false;

    std::string name() const {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%s_%s_%gdB%s", strategy.c_str(), family.c_str(), snr_db,
                      defended ? "_defended" : "");
        return buf;
    }
};

/// Eve-side metrics for one cell. Under the defense the reconstruction is
/// scored against both the host and the private image.
struct CellResult {
    CellKey key;
    MetricReport vs_original;  // undefended: vs the transmitted image; defended: vs the private image
    MetricReport vs_host;      // defended only
    MetricReport bob_private;  // Bob's reconstruction quality (defended: private image)
    MetricReport bob_host;     // defended only
};

namespace detail {

template <class T>
Tensor<T> eve_intercept(const ChannelSignal<T>& z, const ChannelSpec& spec, T pbar, bool equalize_rayleigh,
                        Rng& rng, Tensor<T>* h_out) {
    auto out = transmit(z, spec, rng);
    if (h_out) *h_out = out.coefficients;
    if (equalize_rayleigh && spec.family == ChannelFamily::Rayleigh)
        return equalize(out, pbar).values;
    return out.received.values;
}

} // namespace detail

/// Trained per-cell attacker state for the closed-box strategies.
template <class T>
struct ClosedBoxAttacker {
    InverseNetParams<T> plain;
    InverseNetParams<T> genai;
    bool has_plain = false, has_genai = false;
};

/// Stage 1 + 2 for one channel condition: collect M query pairs through the
/// encoder API and train the requested inverse networks.
template <class T>
ClosedBoxAttacker<T> prepare_closedbox(const ExperimentConfig& cfg, const ExperimentArtifacts<T>& art,
                                       const ChannelSpec& spec, bool want_plain, bool want_genai,
                                       std::uint64_t cell_seed) {
    ClosedBoxAttacker<T> atk;
    if (!want_plain && !want_genai) return atk;
    // Eve's probe set: her own data, disjoint from Alice's test split
    const int m = std::min(cfg.attack.m_queries, art.data.train.count());
    std::vector<Tensor<T>> probes;
    probes.reserve(static_cast<std::size_t>(m));
    Rng prng(substream_seed(cell_seed, "probes"));
    std::vector<int> idx(static_cast<std::size_t>(art.data.train.count()));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), prng);
    for (int i = 0; i < m; ++i) probes.push_back(art.data.train.image(idx[static_cast<std::size_t>(i)]));

    CodecEncoderApi<T> api(art.codec);
    Rng crng(substream_seed(cell_seed, "query-channel"));
    auto qd = collect_query_dataset<T>(api, probes, spec, crng);

    InverseTrainConfig icfg;
    icfg.epochs = cfg.attack.inverse_epochs;
    icfg.batch = cfg.attack.inverse_batch;
    icfg.lr = cfg.attack.inverse_lr;
    icfg.lr_final = cfg.attack.inverse_lr_final;
    if (want_plain) {
        Rng rng(substream_seed(cell_seed, "inverse-plain"));
        atk.plain = train_inverse_network<T>(qd, InverseArch::mirror_of(art.codec.arch), icfg, rng);
        atk.has_plain = true;
    }
    if (want_genai) {
        Rng rng(substream_seed(cell_seed, "inverse-genai"));
        atk.genai = train_genai_inverse_network<T>(qd, art.generator, InverseArch::mirror_of(art.codec.arch),
                                                   icfg, rng);
        atk.has_genai = true;
    }
    return atk;
}

/// Runs one attack strategy on one intercepted signal.
template <class T>
Tensor<T> run_attack(const std::string& strategy, const ExperimentConfig& cfg,
                     const ExperimentArtifacts<T>& art, const ClosedBoxAttacker<T>& atk,
                     const Tensor<T>& intercepted_raw, const Tensor<T>& intercepted_eq, const Tensor<T>& h_e,
                     double sigma_e2, std::uint64_t sample_seed) {
    if (strategy == "decoder") {
        // reference eavesdropper that owns the semantic decoder
        return decode_one(art.codec, ChannelSignal<T>(intercepted_eq));
    }
    if (strategy == "closed") {
        return closedbox_invert(intercepted_eq, atk.plain);
    }
    if (strategy == "genai-closed") {
        return genai_closedbox_invert(intercepted_eq, atk.genai, art.generator);
    }
    if (strategy == "glass") {
        AttackConfig acfg;
        acfg.lr = cfg.attack.glass_lr;
        acfg.max_iters = cfg.attack.glass_iters;
        acfg.stop_eps = cfg.attack.stop_eps;
        acfg.rng_seed = sample_seed;
        if (cfg.attack.glass_init == "midpoint") {
            Tensor<T> mid = Tensor<T>::full({1, art.codec.arch.channels, art.codec.arch.height,
                                             art.codec.arch.width}, T(0.5));
            return glassbox_invert(intercepted_raw, h_e, art.codec, acfg, &mid).image;
        }
        return glassbox_invert(intercepted_raw, h_e, art.codec, acfg).image;
    }
    if (strategy == "genai-glass") {
        AttackConfig acfg;
        acfg.lr = cfg.attack.genai_lr;
        acfg.max_iters = cfg.attack.genai_iters;
        acfg.stop_eps = cfg.attack.stop_eps;
        acfg.sigma_e2 = sigma_e2;
        acfg.rng_seed = sample_seed;
        return genai_glassbox_invert(intercepted_raw, h_e, art.codec, art.generator, acfg).image;
    }
    throw ConfigError("unknown attack strategy: " + strategy);
}

/// Evaluates one grid cell over the test split. Deterministic given the
/// config seed; samples are processed on a small worker pool with
/// per-sample substreams.
template <class T>
CellResult evaluate_cell(const ExperimentConfig& cfg, const ExperimentArtifacts<T>& art, const CellKey& key,
                         const ClosedBoxAttacker<T>& atk, Tensor<T>* recons_out = nullptr) {
    const auto& test = art.data.test;
    const int n = (cfg.attack.eval_samples > 0) ? std::min(cfg.attack.eval_samples, test.count()) : test.count();
    CellResult res;
    res.key = key;
    res.vs_original.samples.resize(static_cast<std::size_t>(n));
    res.bob_private.samples.resize(static_cast<std::size_t>(n));
    if (key.defended) {
        res.vs_host.samples.resize(static_cast<std::size_t>(n));
        res.bob_host.samples.resize(static_cast<std::size_t>(n));
    }

    ChannelSpec spec;
    spec.family = channel_family_from_string(key.family);
    spec.snr_db = key.snr_db;
    spec.pbar = cfg.codec.pbar;
    const double sigma_e2 = cfg.attack.sigma_e2 > 0 ? cfg.attack.sigma_e2 : std::max(spec.noise_variance(), 1e-9);
    const std::uint64_t cell_seed = substream_seed(cfg.seed, "cell/" + key.name());
    const auto net = feature_extractor_from_identity(art.identity);

    const int C = test.images.dim(1), H = test.images.dim(2), W = test.images.dim(3);
    const std::int64_t stride = static_cast<std::int64_t>(C) * H * W;
    Tensor<T> recons({n, C, H, W}), originals({n, C, H, W}), hosts;
    if (key.defended) hosts = Tensor<T>({n, C, H, W});

    auto process = [&](int i) {
        const std::uint64_t sseed = substream_seed(cell_seed, "sample/" + std::to_string(i));
        const Tensor<T> priv = test.image(i);
        std::copy(priv.data(), priv.data() + stride, originals.data() + i * stride);

        ChannelSignal<T> tx_signal;
        Tensor<T> host;
        if (key.defended) {
            // host pool: non-sensitive images from the train split; the decoy
            // is never the same identity as the private payload
            Rng hrng(substream_seed(sseed, "host"));
            std::uniform_int_distribution<int> pick(0, art.data.train.count() - 1);
            int hidx = pick(hrng);
            while (art.data.train.labels[static_cast<std::size_t>(hidx)] ==
                   test.labels[static_cast<std::size_t>(i)])
                hidx = pick(hrng);
            host = art.data.train.image(hidx);
            std::copy(host.data(), host.data() + stride, hosts.data() + i * stride);
            auto zh = encode_one(art.codec, host);
            auto zp = encode_one(art.codec, priv);
            tx_signal = steg_embed(zh, zp, art.steg).z_c_tx;
        } else {
            tx_signal = encode_one(art.codec, priv);
        }

        // independent channel draws for Bob and Eve (the two-link model)
        Rng bob_rng(substream_seed(sseed, "bob"));
        auto bob_out = transmit(tx_signal, spec, bob_rng);
        ChannelSignal<T> bob_in = spec.family == ChannelFamily::Rayleigh
                                      ? equalize(bob_out, static_cast<T>(cfg.codec.pbar))
                                      : bob_out.received;

        Rng eve_rng(substream_seed(sseed, "eve"));
        auto eve_out = transmit(tx_signal, spec, eve_rng);
        const Tensor<T>& h_e = eve_out.coefficients;
        Tensor<T> eve_raw = eve_out.received.values;
        Tensor<T> eve_eq = spec.family == ChannelFamily::Rayleigh
                               ? equalize(eve_out, static_cast<T>(cfg.codec.pbar)).values
                               : eve_out.received.values;

        // Bob
        if (key.defended) {
            auto rec = covert_receive(bob_in, art.steg, art.codec);
            res.bob_private.samples[static_cast<std::size_t>(i)] =
                SampleMetrics{psnr(priv, rec.private_image), ms_ssim(priv, rec.private_image),
                              perceptual_distance(priv, rec.private_image, net), -1};
            res.bob_host.samples[static_cast<std::size_t>(i)] =
                SampleMetrics{psnr(host, rec.host_image), ms_ssim(host, rec.host_image),
                              perceptual_distance(host, rec.host_image, net), -1};
        } else {
            auto xb = decode_one(art.codec, bob_in);
            res.bob_private.samples[static_cast<std::size_t>(i)] =
                SampleMetrics{psnr(priv, xb), ms_ssim(priv, xb), perceptual_distance(priv, xb, net), -1};
        }

        // Eve: reconstruct from her own intercept, always scored against the
        // private image; additionally against the host under the defense
        auto recon = run_attack(key.strategy, cfg, art, atk, eve_raw, eve_eq, h_e, sigma_e2,
                                substream_seed(sseed, "attack"));
        std::copy(recon.data(), recon.data() + stride, recons.data() + i * stride);
        res.vs_original.samples[static_cast<std::size_t>(i)] =
            SampleMetrics{psnr(priv, recon), ms_ssim(priv, recon), perceptual_distance(priv, recon, net), 0};
        if (key.defended) {
            res.vs_host.samples[static_cast<std::size_t>(i)] =
                SampleMetrics{psnr(host, recon), ms_ssim(host, recon), perceptual_distance(host, recon, net), 0};
        }
    };

    // two workers, statically partitioned; per-sample seeds keep this
    // schedule-independent
    const int workers = 2;
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
        threads.emplace_back([&, w] {
            try {
                for (int i = w; i < n; i += workers) process(i);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    for (auto& th : threads) th.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    // FPESR: identity of the reconstruction vs identity of the reference
    auto preds_recon = identity_predict(art.identity, recons);
    auto preds_orig = identity_predict(art.identity, originals);
    for (int i = 0; i < n; ++i)
        res.vs_original.samples[static_cast<std::size_t>(i)].fpesr_hit =
            preds_recon[static_cast<std::size_t>(i)] == preds_orig[static_cast<std::size_t>(i)] ? 1 : 0;
    if (key.defended) {
        auto preds_host = identity_predict(art.identity, hosts);
        for (int i = 0; i < n; ++i)
            res.vs_host.samples[static_cast<std::size_t>(i)].fpesr_hit =
                preds_recon[static_cast<std::size_t>(i)] == preds_host[static_cast<std::size_t>(i)] ? 1 : 0;
    }
    if (recons_out) *recons_out = std::move(recons);
    return res;
}

// ---------------------------------------------------------------------------
// Records and the experiment driver
// ---------------------------------------------------------------------------

/// Persisted run artifact: effective config, checkpoint hashes, per-cell
/// aggregates and pointers to the per-sample JSONL files. Re-running with the
/// recorded config and seeds reproduces the per-sample rows byte-for-byte.
struct ExperimentRecord {
    json config;
    json stages = json::object();      // stage -> status / notes
    json checkpoints = json::object(); // file -> sha256
    json cells = json::object();       // cell name -> aggregate block

    void save(const std::filesystem::path& path) const {
        std::filesystem::create_directories(path.parent_path());
        std::ofstream os(path, std::ios::trunc);
        if (!os) throw IoError("cannot write record " + path.string());
        os << json{{"config", config}, {"stages", stages}, {"checkpoints", checkpoints}, {"cells", cells}}.dump(2)
           << "\n";
    }

    static ExperimentRecord load(const std::filesystem::path& path) {
        std::ifstream is(path);
        if (!is) throw IoError("cannot read record " + path.string());
        json j;
        is >> j;
        ExperimentRecord r;
        r.config = j.at("config");
        r.stages = j.value("stages", json::object());
        r.checkpoints = j.value("checkpoints", json::object());
        r.cells = j.value("cells", json::object());
        return r;
    }
};

inline void write_cell_jsonl(const std::filesystem::path& path, const CellResult& res) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    for (std::size_t i = 0; i < res.vs_original.samples.size(); ++i) {
        json row{{"sample", i},
                 {"eve_vs_private", res.vs_original.samples[i]},
                 {"bob_private", res.bob_private.samples[i]}};
        if (res.key.defended) {
            row["eve_vs_host"] = res.vs_host.samples[i];
            row["bob_host"] = res.bob_host.samples[i];
        }
        os << row.dump() << "\n";
    }
}

inline json cell_aggregate(const CellResult& res) {
    json out{{"strategy", res.key.strategy},
             {"family", res.key.family},
             {"snr_db", res.key.snr_db},
             {"defended", res.key.defended},
             {"eve_vs_private", res.vs_original.to_json()["aggregate"]},
             {"bob_private", res.bob_private.to_json()["aggregate"]}};
    if (res.key.defended) {
        out["eve_vs_host"] = res.vs_host.to_json()["aggregate"];
        out["bob_host"] = res.bob_host.to_json()["aggregate"];
    }
    return out;
}

/// Runs the full evaluation grid with trained artifacts; one closed-box
/// attacker pair is trained per channel condition and shared by the
/// strategies of that condition.
template <class T>
json evaluate_grid(const ExperimentConfig& cfg, const ExperimentArtifacts<T>& art, ExperimentRecord& record) {
    const bool want_plain = std::count(cfg.attack.strategies.begin(), cfg.attack.strategies.end(), "closed") > 0;
    const bool want_genai =
        std::count(cfg.attack.strategies.begin(), cfg.attack.strategies.end(), "genai-closed") > 0;

    for (const auto& family : cfg.grid.families) {
        for (double snr : cfg.grid.snrs_db) {
            ChannelSpec spec;
            spec.family = channel_family_from_string(family);
            spec.snr_db = snr;
            spec.pbar = cfg.codec.pbar;
            char cond[64];
            std::snprintf(cond, sizeof(cond), "%s_%gdB", family.c_str(), snr);
            const std::uint64_t cond_seed = substream_seed(cfg.seed, std::string("closedbox/") + cond);
            auto atk = prepare_closedbox<T>(cfg, art, spec, want_plain, want_genai && art.has_generator,
                                            cond_seed);

            for (const auto& strategy : cfg.attack.strategies) {
                if ((strategy == "genai-glass" || strategy == "genai-closed") && !art.has_generator) continue;
                for (int defended = 0; defended < 2; ++defended) {
                    if (defended && (!cfg.grid.defended || !art.has_steg)) continue;
                    if (!defended && !cfg.grid.undefended) continue;
                    CellKey key{strategy, family, snr, defended != 0};
                    auto res = evaluate_cell<T>(cfg, art, key, atk);
                    const auto jsonl = cfg.metrics_dir() / (key.name() + ".jsonl");
                    write_cell_jsonl(jsonl, res);
                    json agg = cell_aggregate(res);
                    agg["jsonl"] = jsonl.lexically_relative(cfg.dir()).string();
                    record.cells[key.name()] = agg;
                }
            }
        }
    }
    return record.cells;
}

/// Executes stages in dependency order (dataset, identity, codec, generator,
/// steganography, evaluation), resuming from checkpoints where they exist.
/// Stage failures are recorded and downstream stages that lost their inputs
/// are skipped; everything that ran is preserved in the record.
template <class T = float>
ExperimentRecord run_experiment(const ExperimentConfig& cfg, bool resume = false) {
    std::filesystem::create_directories(cfg.checkpoints_dir());
    std::filesystem::create_directories(cfg.metrics_dir());
    ExperimentRecord record;
    record.config = cfg.to_json();
    ExperimentArtifacts<T> art;

    auto stage = [&record](const char* name, auto&& fn) {
        try {
            fn();
            if (!record.stages.contains(name)) record.stages[name] = {{"status", "ok"}};
            return true;
        } catch (const std::exception& e) {
            record.stages[name] = {{"status", "failed"}, {"error", e.what()}};
            std::cerr << "[semsec] stage " << name << " failed: " << e.what() << "\n";
            return false;
        }
    };

    const bool have_data = stage("dataset", [&] {
        art.data = stage_dataset<T>(cfg);
        record.stages["dataset"] = {{"status", "ok"},
                                    {"train", art.data.train.count()},
                                    {"test", art.data.test.count()},
                                    {"identities", art.data.train.n_identities()}};
    });
    if (have_data) {
        art.has_identity = stage("identity", [&] {
            art.identity = stage_identity<T>(cfg, art.data, resume);
            art.features = feature_extractor_from_identity(art.identity);
            record.stages["identity"] = {{"status", "ok"}, {"holdout_accuracy", art.identity.holdout_accuracy}};
        });
        art.has_codec = stage("codec", [&] {
            art.codec = stage_codec<T>(cfg, art.data, art.has_identity ? &art.features : nullptr, resume);
            json meta{{"kind", "codec"}, {"arch", art.codec.arch}, {"pbar", art.codec.pbar},
                      {"train_curve", art.codec.train_curve}};
            save_checkpoint(cfg.codec_ckpt(), art.codec.params, meta);
        });
        const bool needs_generator =
            std::count(cfg.attack.strategies.begin(), cfg.attack.strategies.end(), "genai-glass") ||
            std::count(cfg.attack.strategies.begin(), cfg.attack.strategies.end(), "genai-closed");
        if (needs_generator)
            art.has_generator = stage("generator", [&] { art.generator = stage_generator<T>(cfg, art.data, resume); });
        if (art.has_codec && cfg.grid.defended)
            art.has_steg = stage("steganography", [&] {
                art.steg = stage_steg<T>(cfg, art.data, art.codec, resume);
                json meta{{"kind", "steganography"}, {"arch", art.steg.arch}, {"pbar", art.steg.pbar},
                          {"lhat_mode", to_string(art.steg.lhat_mode)}, {"train_curve", art.steg.train_curve}};
                save_checkpoint(cfg.steg_ckpt(), art.steg.params, meta);
            });
        if (art.has_codec && art.has_identity && !cfg.attack.strategies.empty())
            stage("evaluate", [&] { evaluate_grid<T>(cfg, art, record); });
    }

    for (const auto& p : {cfg.codec_ckpt(), cfg.generator_ckpt(), cfg.identity_ckpt(), cfg.steg_ckpt()})
        if (std::filesystem::exists(p))
            record.checkpoints[p.filename().string()] = sha256_file(p);

    record.save(cfg.record_path());
    return record;
}

/// Loads every artifact of a finished run (used by replay and the report CLI).
template <class T = float>
ExperimentArtifacts<T> load_artifacts(const ExperimentConfig& cfg) {
    ExperimentArtifacts<T> art;
    art.data = stage_dataset<T>(cfg);
    if (std::filesystem::exists(cfg.identity_ckpt())) {
        art.identity = stage_identity<T>(cfg, art.data, /*resume=*/true);
        art.features = feature_extractor_from_identity(art.identity);
        art.has_identity = true;
    }
    if (std::filesystem::exists(cfg.codec_ckpt())) {
        art.codec = load_codec<T>(cfg.codec_ckpt());
        art.has_codec = true;
    }
    if (std::filesystem::exists(cfg.generator_ckpt())) {
        art.generator = load_generator<T>(cfg.generator_ckpt());
        art.has_generator = true;
    }
    if (std::filesystem::exists(cfg.steg_ckpt())) {
        art.steg = load_steg<T>(cfg.steg_ckpt());
        art.has_steg = true;
    }
    return art;
}

} // namespace semsec
