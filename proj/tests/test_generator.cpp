#include <catch2/catch.hpp>

#include "fd_check.hpp"
#include "semsec/generator.hpp"
#include "semsec/metrics.hpp"

using namespace semsec;
using semsec_test::fd_gradient;
using semsec_test::rel_err;

namespace {

Dataset<float> faces(int n_ids, int per_id, int size, std::uint64_t seed) {
    Dataset<float> d;
    for (int id = 0; id < n_ids; ++id) d.identity_names.push_back("id_" + std::to_string(id));
    d.images = Tensor<float>({n_ids * per_id, 3, size, size});
    int row = 0;
    for (int id = 0; id < n_ids; ++id) {
        const FaceIdentity f = make_identity(id, seed);
        for (int j = 0; j < per_id; ++j) {
            Rng r(substream_seed(seed, "g/" + std::to_string(id) + "/" + std::to_string(j)));
            auto img = render_face<float>(f, size, size, r);
            std::copy(img.data(), img.data() + img.size(), d.images.data() + static_cast<std::int64_t>(row) * img.size());
            d.labels.push_back(id);
            ++row;
        }
    }
    return d;
}

struct GenFixture {
    Dataset<float> train = faces(4, 30, 32, 5);
    GeneratorParams<float> gen;

    GenFixture() {
        GeneratorArch arch;
        arch.height = arch.width = 32;
        arch.d_s = 32;
        arch.g0 = 48;
        arch.g1 = 48;
        arch.g2 = 32;
        arch.g3 = 24;
        GeneratorTrainConfig cfg;
        cfg.epochs = 60;
        cfg.batch = 16;
        cfg.lr = 2e-3;
        cfg.lr_final = 3e-4;
        Rng rng(1234);
        gen = train_generator<float>(train, arch, cfg, rng);
    }

    static const GenFixture& get() {
        static GenFixture f;
        return f;
    }
};

} // namespace

TEST_CASE("sample_latent reproducibility and moments") {
    Rng a(5), b(5);
    auto s1 = sample_latent<float>(16, a);
    auto s2 = sample_latent<float>(16, b);
    for (int i = 0; i < 16; ++i) REQUIRE(s1.s[i] == s2.s[i]);

    Rng rng(7);
    const int d = 10, draws = 10000;
    double sum = 0, sq = 0;
    for (int i = 0; i < draws; ++i) {
        auto s = sample_latent<double>(d, rng);
        for (int j = 0; j < d; ++j) {
            sum += s.s[j];
            sq += s.s[j] * s.s[j];
        }
    }
    const double n = static_cast<double>(d) * draws;
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(var == Approx(1.0).epsilon(0.02));

    CHECK_THROWS_AS(sample_latent<float>(0, rng), ConfigError);
}

TEST_CASE("prior log-density peaks at the origin") {
    Rng rng(11);
    LatentCode<double> zero{Tensor<double>({16})};
    const double at_zero = prior_log_density(zero);
    for (int i = 0; i < 200; ++i) {
        auto s = sample_latent<double>(16, rng);
        CHECK(prior_log_density(s) <= at_zero);
    }
}

TEST_CASE("omitted noise equals explicit zero noise") {
    GeneratorArch arch;
    arch.height = arch.width = 32;
    arch.d_s = 8;
    Rng rng(3);
    auto gen = make_generator<float>(arch, rng);
    auto s = sample_latent<float>(8, rng);
    NoiseVector<float> zeros{Tensor<float>({arch.d_n()})};
    auto a = generate(gen, s);
    auto b = generate(gen, s, &zeros);
    REQUIRE(a.size() == b.size());
    for (std::int64_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
    // in-range before any training
    for (float v : a.vec()) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
    }
    // dimension mismatch
    LatentCode<float> bad{Tensor<float>({9})};
    CHECK_THROWS_AS(generate(gen, bad), InvalidShape);
}

TEST_CASE("generator gradients wrt latent and noise match finite differences") {
    GeneratorArch arch;
    arch.height = arch.width = 16;
    arch.d_s = 12;
    arch.g0 = 8;
    arch.g1 = 8;
    arch.g2 = 6;
    arch.g3 = 6;
    Rng rng(17);
    auto gen = make_generator<double>(arch, rng);
    Tensor<double> target({1, 3, 16, 16});
    fill_uniform(target, rng, 0.0, 1.0);
    Tensor<double> s0({1, arch.d_s});
    fill_normal(s0, rng, 1.0);
    Tensor<double> n0({1, arch.d_n()});
    fill_normal(n0, rng, 0.3);

    auto loss_s = [&](const Tensor<double>& sv) {
        Tape<double> t;
        BoundParams<double> p(t, gen.params, false);
        Var img = generate_graph(t, t.constant(sv), t.constant(n0), arch, p);
        return t.val(t.sse(img, t.constant(target)))[0];
    };
    auto loss_n = [&](const Tensor<double>& nv) {
        Tape<double> t;
        BoundParams<double> p(t, gen.params, false);
        Var img = generate_graph(t, t.constant(s0), t.constant(nv), arch, p);
        return t.val(t.sse(img, t.constant(target)))[0];
    };

    Tape<double> t;
    BoundParams<double> p(t, gen.params, false);
    Var s = t.leaf(s0, true);
    Var nv = t.leaf(n0, true);
    Var img = generate_graph(t, s, nv, arch, p);
    Var loss = t.sse(img, t.constant(target));
    t.backward(loss);

    CHECK(rel_err(t.grad(s), fd_gradient(loss_s, s0)) < 1e-3);
    CHECK(rel_err(t.grad(nv), fd_gradient(loss_n, n0)) < 1e-3);
}

TEST_CASE("generation is deterministic given latent, noise and params") {
    const auto& fx = GenFixture::get();
    Rng rng(23);
    auto s = sample_latent<float>(fx.gen.arch.d_s, rng);
    NoiseVector<float> nv{Tensor<float>({fx.gen.arch.d_n()})};
    fill_normal(nv.n, rng, 0.1f);
    auto a = generate(fx.gen, s, &nv);
    auto b = generate(fx.gen, s, &nv);
    for (std::int64_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
}

TEST_CASE("trained generator samples beat uniform noise on distance to the data manifold") {
    const auto& fx = GenFixture::get();
    Rng rng(29);

    auto nearest_pixel_mse = [&](const Tensor<float>& img) {
        double best = 1e18;
        for (int i = 0; i < fx.train.count(); ++i) {
            const auto ref = fx.train.image(i);
            double mse = 0;
            for (std::int64_t j = 0; j < ref.size(); ++j) {
                const double d = ref[j] - img[j];
                mse += d * d;
            }
            best = std::min(best, mse / ref.size());
        }
        return best;
    };

    double gen_dist = 0, noise_dist = 0;
    const int trials = 12;
    for (int i = 0; i < trials; ++i) {
        auto s = sample_latent<float>(fx.gen.arch.d_s, rng);
        gen_dist += nearest_pixel_mse(generate(fx.gen, s));
        Tensor<float> u({3, 32, 32});
        fill_uniform(u, rng, 0.0f, 1.0f);
        noise_dist += nearest_pixel_mse(u);
    }
    CHECK(gen_dist / trials < noise_dist / trials);
}

TEST_CASE("two distinct latents give distinct images") {
    const auto& fx = GenFixture::get();
    Rng rng(31);
    auto s0 = sample_latent<float>(fx.gen.arch.d_s, rng);
    auto s1 = sample_latent<float>(fx.gen.arch.d_s, rng);
    auto a = generate(fx.gen, s0);
    auto b = generate(fx.gen, s1);
    double mse = 0;
    for (std::int64_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
    CHECK(mse > 0.0);
}

TEST_CASE("latent interpolation moves monotonically away from the start image") {
    const auto& fx = GenFixture::get();
    Rng rng(37);
    auto s0 = sample_latent<float>(fx.gen.arch.d_s, rng);
    auto s1 = sample_latent<float>(fx.gen.arch.d_s, rng);
    const auto base = generate(fx.gen, s0);
    std::vector<double> dist;
    for (double tt : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        LatentCode<float> si{Tensor<float>({fx.gen.arch.d_s})};
        for (int i = 0; i < fx.gen.arch.d_s; ++i)
            si.s[i] = static_cast<float>((1 - tt) * s0.s[i] + tt * s1.s[i]);
        const auto img = generate(fx.gen, si);
        double mse = 0;
        for (std::int64_t i = 0; i < img.size(); ++i) mse += (img[i] - base[i]) * (img[i] - base[i]);
        dist.push_back(mse);
    }
    int inversions = 0;
    for (std::size_t i = 1; i < dist.size(); ++i)
        if (dist[i] < dist[i - 1] - 1e-12) ++inversions;
    CHECK(inversions <= 1);
}

TEST_CASE("generator checkpoints round-trip") {
    const auto& fx = GenFixture::get();
    const auto path = std::filesystem::temp_directory_path() / "semsec_gen_test.ckpt";
    json meta{{"kind", "generator"}, {"arch", fx.gen.arch}};
    save_checkpoint(path, fx.gen.params, meta);
    auto loaded = load_generator<float>(path);
    Rng rng(41);
    auto s = sample_latent<float>(fx.gen.arch.d_s, rng);
    auto a = generate(fx.gen, s);
    auto b = generate(loaded, s);
    for (std::int64_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
    std::filesystem::remove(path);
}
