// Command-line front end: dataset synthesis, stage training, attacks,
// the evaluation grid and report emission, all driven by one JSON config.

#include <CLI11.hpp>

#include "semsec/report.hpp"

using namespace semsec;

namespace {

ExperimentConfig load_config(const std::string& path, std::uint64_t seed_override) {
    auto cfg = ExperimentConfig::load(path);
    if (seed_override != 0) cfg.seed = seed_override;
    return cfg;
}

int run_stage_only(const ExperimentConfig& cfg, const std::string& which, bool resume) {
    auto data = stage_dataset<float>(cfg);
    if (which == "identity") {
        auto m = stage_identity<float>(cfg, data, resume);
        std::cout << "identity model holdout accuracy " << m.holdout_accuracy << " -> " << cfg.identity_ckpt()
                  << "\n";
        return 0;
    }
    if (which == "codec") {
        FeatureExtractor<float> feats;
        const FeatureExtractor<float>* fptr = nullptr;
        if (std::filesystem::exists(cfg.identity_ckpt())) {
            auto idm = stage_identity<float>(cfg, data, /*resume=*/true);
            feats = feature_extractor_from_identity(idm);
            fptr = &feats;
        } else if (cfg.codec.lambda_perc > 0) {
            std::cerr << "no identity checkpoint yet; training codec with the pixel term only\n";
        }
        auto codec = stage_codec<float>(cfg, data, fptr, resume);
        json meta{{"kind", "codec"}, {"arch", codec.arch}, {"pbar", codec.pbar},
                  {"train_curve", codec.train_curve}};
        save_checkpoint(cfg.codec_ckpt(), codec.params, meta);
        std::cout << "codec trained (final loss " << (codec.train_curve.empty() ? 0.0 : codec.train_curve.back())
                  << ") -> " << cfg.codec_ckpt() << "\n";
        return 0;
    }
    if (which == "generator") {
        auto gen = stage_generator<float>(cfg, data, resume);
        std::cout << "generator trained -> " << cfg.generator_ckpt() << "\n";
        return 0;
    }
    if (which == "steg") {
        if (!std::filesystem::exists(cfg.codec_ckpt())) {
            std::cerr << "train-steg needs a codec checkpoint first\n";
            return 1;
        }
        auto codec = load_codec<float>(cfg.codec_ckpt());
        auto steg = stage_steg<float>(cfg, data, codec, resume);
        std::cout << "steganography module trained -> " << cfg.steg_ckpt()
                  << "\nthis checkpoint is the shared secret; distribute it to the receiver out of band\n";
        return 0;
    }
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"semsec: secure semantic communication testbed"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    bool resume = false;

    auto add_common = [&](CLI::App* cmd, bool with_resume = true) {
        cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
        cmd->add_option("--seed", seed, "override the config seed");
        if (with_resume) cmd->add_flag("--resume", resume, "reuse existing checkpoints");
    };

    // synth-dataset
    auto* synth = app.add_subcommand("synth-dataset", "generate a procedural identity dataset");
    std::string out_dir = "data/faces";
    int identities = 25, per_identity = 30, size = 32;
    std::uint64_t synth_seed = 1;
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_option("--identities", identities, "number of identities");
    synth->add_option("--per-identity", per_identity, "images per identity");
    synth->add_option("--size", size, "image side length");
    synth->add_option("--seed", synth_seed, "generation seed");

    auto* tc = app.add_subcommand("train-codec", "train the joint source-channel codec");
    add_common(tc);
    auto* tg = app.add_subcommand("train-generator", "train the generative prior");
    add_common(tg);
    auto* ti = app.add_subcommand("train-identity", "train the identity model");
    add_common(ti);
    auto* ts = app.add_subcommand("train-steg", "train the signal steganography module");
    add_common(ts);

    // attack
    auto* atk = app.add_subcommand("attack", "run one eavesdropping strategy on one channel condition");
    std::string strategy = "glass", family = "awgn";
    double snr = 10.0, eta = -1, eps = -1, sigma_e2 = -1;
    int t_max = -1, m_queries = -1, samples = -1;
    bool defended = false;
    add_common(atk, false);
    atk->add_option("--strategy", strategy, "glass | closed | genai-glass | genai-closed | decoder")->required();
    atk->add_option("--family", family, "awgn | rayleigh");
    atk->add_option("--snr", snr, "eavesdropping link SNR in dB");
    atk->add_option("--m", m_queries, "closed-box query budget M");
    atk->add_option("--lr", eta, "attack learning rate eta");
    atk->add_option("--iters", t_max, "max iterations T_max");
    atk->add_option("--eps", eps, "stopping residual epsilon");
    atk->add_option("--sigma-e2", sigma_e2, "Eve's assumed noise variance (genai-glass)");
    atk->add_option("--samples", samples, "number of test samples to attack");
    atk->add_flag("--defended", defended, "attack the covert (steganography) transmission");

    auto* ev = app.add_subcommand("evaluate", "run all stages and the full evaluation grid");
    add_common(ev);

    auto* rep = app.add_subcommand("report", "render plots and tables from a finished run");
    add_common(rep, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            synthesize_face_dataset(out_dir, identities, per_identity, size, synth_seed);
            std::cout << "wrote " << identities << " identities x " << per_identity << " images to " << out_dir
                      << "\n";
            return 0;
        }
        if (tc->parsed()) return run_stage_only(load_config(config_path, seed), "codec", resume);
        if (tg->parsed()) return run_stage_only(load_config(config_path, seed), "generator", resume);
        if (ti->parsed()) return run_stage_only(load_config(config_path, seed), "identity", resume);
        if (ts->parsed()) return run_stage_only(load_config(config_path, seed), "steg", resume);

        if (ev->parsed()) {
            auto cfg = load_config(config_path, seed);
            auto record = run_experiment<float>(cfg, resume);
            std::cout << "record written to " << cfg.record_path() << "\n";
            for (const auto& [name, st] : record.stages.items())
                std::cout << "  stage " << name << ": " << st.at("status").get<std::string>() << "\n";
            return 0;
        }

        if (rep->parsed()) {
            auto cfg = load_config(config_path, seed);
            auto record = ExperimentRecord::load(cfg.record_path());
            auto files = emit_report(cfg, record);
            for (const auto& f : files) std::cout << "wrote " << f.string() << "\n";
            return 0;
        }

        if (atk->parsed()) {
            auto cfg = load_config(config_path, seed);
            if (eta > 0) {
                cfg.attack.glass_lr = eta;
                cfg.attack.genai_lr = eta;
            }
            if (t_max > 0) {
                cfg.attack.glass_iters = t_max;
                cfg.attack.genai_iters = t_max;
            }
            if (eps >= 0) cfg.attack.stop_eps = eps;
            if (sigma_e2 > 0) cfg.attack.sigma_e2 = sigma_e2;
            if (m_queries > 0) cfg.attack.m_queries = m_queries;
            if (samples > 0) cfg.attack.eval_samples = samples;

            auto art = load_artifacts<float>(cfg);
            if (!art.has_codec || !art.has_identity) {
                std::cerr << "attack needs codec and identity checkpoints (run evaluate or train-* first)\n";
                return 1;
            }
            if (defended && !art.has_steg) {
                std::cerr << "--defended needs a steganography checkpoint\n";
                return 1;
            }
            if ((strategy == "genai-glass" || strategy == "genai-closed") && !art.has_generator) {
                std::cerr << "GenAI strategies need a generator checkpoint\n";
                return 1;
            }

            ChannelSpec spec;
            spec.family = channel_family_from_string(family);
            spec.snr_db = snr;
            spec.pbar = cfg.codec.pbar;
            CellKey key{strategy, family, snr, defended};
            auto atk_state =
                prepare_closedbox<float>(cfg, art, spec, strategy == "closed", strategy == "genai-closed",
                                         substream_seed(cfg.seed, "closedbox/" + key.name()));
            Tensor<float> recons;
            auto res = evaluate_cell<float>(cfg, art, key, atk_state, &recons);

            const auto recon_dir = cfg.dir() / "attacks" / key.name();
            std::filesystem::create_directories(recon_dir);
            for (int i = 0; i < recons.dim(0); ++i) {
                char name[32];
                std::snprintf(name, sizeof(name), "recon_%03d.ppm", i);
                Tensor<float> img({recons.dim(1), recons.dim(2), recons.dim(3)});
                std::copy(recons.data() + static_cast<std::int64_t>(i) * img.size(),
                          recons.data() + static_cast<std::int64_t>(i + 1) * img.size(), img.data());
                write_ppm(recon_dir / name, img);
            }
            std::cout << "reconstructions: " << recon_dir << "\n";

            const auto jsonl = cfg.metrics_dir() / (key.name() + ".jsonl");
            write_cell_jsonl(jsonl, res);
            std::cout << "metrics log: " << jsonl << "\n";
            const auto agg = cell_aggregate(res);
            std::cout << agg.dump(2) << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
