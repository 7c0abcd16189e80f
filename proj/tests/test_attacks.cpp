#include <catch2/catch.hpp>

#include <Eigen/Dense>

#include "fd_check.hpp"
#include "semsec/attacks.hpp"

using namespace semsec;
using semsec_test::fd_gradient;
using semsec_test::rel_err;

namespace {

CodecParams<float> tiny_codec_f(Rng& rng) {
    CodecArch tiny;
    tiny.height = tiny.width = 8;
    tiny.c1 = tiny.c2 = tiny.c3 = 6;
    tiny.signal_ch = 8; // k = 16
    return make_codec<float>(tiny, 1.0, rng);
}

Tensor<float> tiny_face(int id, std::uint64_t seed) {
    Rng r(seed);
    return render_face<float>(make_identity(id, 7), 8, 8, r);
}

Tensor<float> ones_h(int len) {
    Tensor<float> h({len});
    for (int i = 0; i < len; i += 2) h[i] = 1.0f;
    return h;
}

} // namespace

TEST_CASE("forward_fn with unit coefficients is the encoder itself") {
    Rng rng(3);
    auto codec = tiny_codec_f(rng);
    auto x = tiny_face(0, 11);
    auto z = encode_one(codec, x);
    auto f = forward_fn(codec, ones_h(2 * codec.k()), x);
    for (std::int64_t i = 0; i < z.values.size(); ++i) REQUIRE(f[i] == z.values[i]);
}

TEST_CASE("forward_fn modulus identity per symbol") {
    Rng rng(5);
    auto codec = tiny_codec_f(rng);
    auto x = tiny_face(1, 13);
    Tensor<float> h({2 * codec.k()});
    fill_normal(h, rng, 0.7f);
    auto z = encode_one(codec, x);
    auto f = forward_fn(codec, h, x);
    for (int i = 0; i < codec.k(); ++i) {
        const double hz = std::abs(std::complex<double>(h[2 * i], h[2 * i + 1]));
        const double ze = std::abs(std::complex<double>(z.values[2 * i], z.values[2 * i + 1]));
        const double fe = std::abs(std::complex<double>(f[2 * i], f[2 * i + 1]));
        CHECK(fe == Approx(hz * ze).margin(1e-5));
    }
}

TEST_CASE("forward_fn gradient wrt the image matches finite differences") {
    Rng rng(7);
    CodecArch tiny;
    tiny.height = tiny.width = 8;
    tiny.c1 = tiny.c2 = tiny.c3 = 4;
    tiny.signal_ch = 8;
    auto codec = make_codec<double>(tiny, 1.0, rng);
    Tensor<double> h({2 * codec.k()});
    fill_normal(h, rng, 1.0);
    Tensor<double> target({1, 2 * codec.k()});
    fill_normal(target, rng, 1.0);
    Tensor<double> x0({1, 3, 8, 8});
    fill_uniform(x0, rng, 0.1, 0.9);

    auto fwd = make_forward_fn(codec, h);
    auto loss = [&](const Tensor<double>& xv) {
        Tape<double> t;
        Var f = fwd(t, t.constant(xv));
        return 0.5 * t.val(t.l2sq(t.sub(f, t.constant(target))))[0];
    };

    Tape<double> t;
    Var x = t.leaf(x0, true);
    Var f = fwd(t, x);
    Var obj = t.scale(t.l2sq(t.sub(f, t.constant(target))), 0.5);
    t.backward(obj);
    CHECK(rel_err(t.grad(x), fd_gradient(loss, x0)) < 1e-3);
}

TEST_CASE("glassbox from the ground truth stops immediately on a noiseless channel") {
    Rng rng(11);
    auto codec = tiny_codec_f(rng);
    auto x = tiny_face(2, 17);
    auto z = encode_one(codec, x); // noiseless, h = 1
    AttackConfig cfg;
    cfg.stop_eps = 1e-4;
    cfg.max_iters = 50;
    auto x0 = x.reshaped({1, 3, 8, 8});
    auto res = glassbox_invert(z.values, ones_h(2 * codec.k()), codec, cfg, &x0);
    CHECK(res.iterations == 0);
    CHECK(res.residuals.front() < 1e-6);
    CHECK(res.final_objective < 1e-12);
}

namespace {

/// Linear forward map on flat x: interleaved complex h (.) (M x).
struct LinearSetup {
    int n = 48, k2 = 16; // 2k = 16 reals, so k < N holds
    Tensor<double> m{std::vector<int>{16, 48}};
    Tensor<double> h{std::vector<int>{16}};
    Tensor<double> x0{std::vector<int>{1, 48}};
    Tensor<double> zhat{std::vector<int>{16}};

    explicit LinearSetup(std::uint64_t seed) {
        Rng rng(seed);
        fill_normal(m, rng, 1.0 / std::sqrt(48.0));
        fill_normal(h, rng, std::sqrt(0.5));
        fill_uniform(x0, rng, 0.2, 0.8); // feasible planted solution
        Tape<double> t;
        Var f = fwd()(t, t.constant(x0));
        const auto& fv = t.val(f);
        for (int i = 0; i < 16; ++i) zhat[i] = fv[i];
    }

    EncoderGraphFn<double> fwd() const {
        return [this](Tape<double>& t, Var x) {
            Var z = t.dense(x, t.constant(m), Var{});
            return t.complex_hadamard(z, t.constant(h.reshaped({1, 16})));
        };
    }

    /// Closed-form least-squares optimum of 0.5||zhat - B x||^2 over all x
    /// (minimum-norm solution via SVD).
    double optimum_objective() const {
        Eigen::MatrixXd B(16, 48);
        for (int i = 0; i < 8; ++i) {
            const double hr = h[2 * i], hi = h[2 * i + 1];
            for (int j = 0; j < 48; ++j) {
                B(2 * i, j) = hr * m[(2 * i) * 48 + j] - hi * m[(2 * i + 1) * 48 + j];
                B(2 * i + 1, j) = hi * m[(2 * i) * 48 + j] + hr * m[(2 * i + 1) * 48 + j];
            }
        }
        Eigen::VectorXd z(16);
        for (int i = 0; i < 16; ++i) z(i) = zhat[i];
        Eigen::VectorXd xstar = B.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(z);
        return 0.5 * (z - B * xstar).squaredNorm();
    }
};

} // namespace

TEST_CASE("glassbox reaches the closed-form least-squares optimum on a linear encoder") {
    LinearSetup s(23);
    const double opt = s.optimum_objective();
    REQUIRE(opt < 1e-12); // underdetermined system: exact fit exists

    AttackConfig cfg;
    cfg.lr = 0.05;
    cfg.max_iters = 3000;
    cfg.stop_eps = 1e-5;
    cfg.rng_seed = 1;
    auto res = glassbox_invert_fn(s.zhat, s.fwd(), {1, 48}, cfg);
    CHECK(res.final_objective <= opt + 1e-3);
    CHECK(res.final_objective < 1e-3);
}

TEST_CASE("plain-descent glassbox residuals are non-increasing") {
    LinearSetup s(29);
    AttackConfig cfg;
    cfg.optimizer = AttackOptimizer::sgd;
    cfg.lr = 0.02;
    cfg.max_iters = 300;
    cfg.stop_eps = 0;
    cfg.rng_seed = 2;
    auto res = glassbox_invert_fn(s.zhat, s.fwd(), {1, 48}, cfg);
    for (std::size_t i = 1; i < res.residuals.size(); ++i)
        REQUIRE(res.residuals[i] <= res.residuals[i - 1] + 1e-9);
}

TEST_CASE("genai glassbox collapses to the prior mode when Eve's noise dominates") {
    Rng rng(31);
    GeneratorArch ga;
    ga.height = ga.width = 8;
    ga.d_s = 6;
    ga.g0 = 8;
    ga.g1 = 8;
    ga.g2 = 6;
    ga.g3 = 6;
    auto gen = make_generator<float>(ga, rng);
    auto codec = tiny_codec_f(rng);

    AttackConfig cfg;
    cfg.sigma_e2 = 1e12; // likelihood term vanishes
    cfg.lr = 0.05;
    cfg.max_iters = 400;
    cfg.rng_seed = 3;
    Tensor<float> zhat({2 * codec.k()});
    fill_normal(zhat, rng, 1.0f);
    auto res = genai_glassbox_invert(zhat, ones_h(2 * codec.k()), codec, gen, cfg);

    double snorm = 0;
    for (float v : res.latent.vec()) snorm += static_cast<double>(v) * v;
    CHECK(std::sqrt(snorm) < 0.05);

    LatentCode<float> zero{Tensor<float>({ga.d_s})};
    auto at_zero = generate(gen, zero);
    double mse = 0;
    for (std::int64_t i = 0; i < at_zero.size(); ++i)
        mse += (at_zero[i] - res.image[i]) * (at_zero[i] - res.image[i]);
    CHECK(mse / at_zero.size() < 1e-4);
}

TEST_CASE("genai glassbox recovers a planted latent code") {
    Rng rng(37);
    GeneratorArch ga;
    ga.height = ga.width = 8;
    ga.d_s = 6;
    ga.g0 = 8;
    ga.g1 = 8;
    ga.g2 = 6;
    ga.g3 = 6;
    auto gen = make_generator<double>(ga, rng);
    CodecArch tiny;
    tiny.height = tiny.width = 8;
    tiny.c1 = tiny.c2 = tiny.c3 = 4;
    tiny.signal_ch = 8;
    auto codec = make_codec<double>(tiny, 1.0, rng);

    auto s0 = sample_latent<double>(ga.d_s, rng);
    auto planted = generate(gen, s0);
    Tensor<double> h({2 * codec.k()});
    for (int i = 0; i < codec.k(); ++i) h[2 * i] = 1.0;
    auto zhat = forward_fn(codec, h, planted);

    // nonconvex landscape: the attacker restarts from a few seeds and keeps
    // the best objective, as any practical inversion would
    double best = std::numeric_limits<double>::infinity();
    for (std::uint64_t seed : {4ull, 5ull, 6ull}) {
        AttackConfig cfg;
        cfg.sigma_e2 = 1e-3;
        cfg.lr = 0.03;
        cfg.max_iters = 3000;
        cfg.rng_seed = seed;
        auto res = genai_glassbox_invert(zhat, h, codec, gen, cfg);
        best = std::min(best, res.final_objective);
    }
    double s0_norm = 0;
    for (double v : s0.s.vec()) s0_norm += v * v;
    const double obj_at_plant = 0.5 * s0_norm; // exact fit leaves only the prior term
    CHECK(best <= obj_at_plant + 1e-3);
}

namespace {

/// Query-only test double with no codec behind it: a fixed random linear
/// map. Proves the closed-box pipeline touches nothing but evaluate().
class OpaqueApi : public EncoderApi<float> {
  public:
    OpaqueApi(int n, int len, std::uint64_t seed) : n_(n), len_(len), w_({len, n}) {
        Rng rng(seed);
        fill_normal(w_, rng, 1.0f / std::sqrt(static_cast<float>(n)));
    }
    Tensor<float> evaluate(const Tensor<float>& image) override {
        ++queries_;
        Tensor<float> flat = image.reshaped({1, n_});
        auto z = dense_fwd(flat, w_, static_cast<const Tensor<float>*>(nullptr)).reshaped({len_});
        return power_normalize(ChannelSignal<float>(z), 1.0f).values;
    }
    int signal_len() const override { return len_; }

  private:
    int n_, len_;
    Tensor<float> w_;
};

class FailingApi : public EncoderApi<float> {
  public:
    explicit FailingApi(int ok) : ok_(ok) {}
    Tensor<float> evaluate(const Tensor<float>&) override {
        if (queries_ >= ok_) throw IoError("api quota exhausted");
        ++queries_;
        Tensor<float> z({128});
        z[0] = 1.0f;
        return z;
    }
    int signal_len() const override { return 128; }

  private:
    int ok_;
};

std::vector<Tensor<float>> tiny_probes(int m, std::uint64_t seed) {
    std::vector<Tensor<float>> out;
    for (int i = 0; i < m; ++i) out.push_back(tiny_face(i % 5, substream_seed(seed, std::to_string(i))));
    return out;
}

} // namespace

TEST_CASE("query collection under a degenerate channel reproduces the encoder exactly") {
    Rng rng(41);
    auto codec = tiny_codec_f(rng);
    CodecEncoderApi<float> api(codec);
    auto probes = tiny_probes(8, 43);
    ChannelSpec spec;
    spec.snr_db = ChannelSpec::noiseless; // h = 1
    Rng crng(1);
    auto qd = collect_query_dataset<float>(api, probes, spec, crng);
    REQUIRE(qd.m() == 8);
    CHECK(api.queries_made() == 8);
    for (int i = 0; i < qd.m(); ++i) {
        auto z = encode_one(codec, probes[static_cast<std::size_t>(i)]);
        REQUIRE(qd.signals[static_cast<std::size_t>(i)].size() == z.values.size());
        for (std::int64_t j = 0; j < z.values.size(); ++j)
            REQUIRE(qd.signals[static_cast<std::size_t>(i)][j] == z.values[j]);
    }
}

TEST_CASE("query collection keeps a partial dataset when the API fails") {
    FailingApi api(3);
    auto probes = tiny_probes(10, 47);
    ChannelSpec spec;
    spec.snr_db = 15;
    Rng crng(2);
    auto qd = collect_query_dataset<float>(api, probes, spec, crng);
    CHECK(qd.m() == 3);
    for (const auto& z : qd.signals) CHECK(z.all_finite());
}

TEST_CASE("closed-box training works against an opaque query-only API") {
    OpaqueApi api(3 * 8 * 8, 32, 53);
    auto probes = tiny_probes(24, 59);
    ChannelSpec spec;
    spec.snr_db = 12;
    Rng crng(3);
    auto qd = collect_query_dataset<float>(api, probes, spec, crng);
    REQUIRE(qd.m() == 24);
    CHECK(api.queries_made() == 24); // exactly M queries, nothing else touched

    InverseArch arch;
    arch.grid_c = 8;
    arch.grid_h = 2;
    arch.grid_w = 2;
    arch.channels = 3;
    arch.height = 8;
    arch.width = 8;
    arch.c1 = 8;
    arch.c2 = 12;
    arch.c3 = 12;
    InverseTrainConfig cfg;
    cfg.epochs = 60;
    cfg.batch = 8;
    Rng rng(61);
    auto net = train_inverse_network<float>(qd, arch, cfg, rng);
    REQUIRE(net.train_curve.size() >= 2);
    CHECK(net.train_curve.back() < net.train_curve.front());
    CHECK_FALSE(net.val_curve.empty());
}

TEST_CASE("single-pair memorization drives the training MSE below 1e-3") {
    Rng rng(67);
    auto codec = tiny_codec_f(rng);
    CodecEncoderApi<float> api(codec);
    auto probes = tiny_probes(1, 71);
    ChannelSpec spec;
    spec.snr_db = ChannelSpec::noiseless;
    Rng crng(4);
    auto qd = collect_query_dataset<float>(api, probes, spec, crng);

    InverseTrainConfig cfg;
    cfg.epochs = 1500;
    cfg.batch = 1;
    cfg.lr = 5e-3;
    cfg.lr_final = 5e-4;
    cfg.workers = 1;
    Rng trng(73);
    auto net = train_inverse_network<float>(qd, InverseArch::mirror_of(codec.arch), cfg, trng);
    CHECK(net.train_curve.back() < 1e-3);
}

TEST_CASE("closed-box inversion is deterministic and in range") {
    Rng rng(79);
    auto codec = tiny_codec_f(rng);
    CodecEncoderApi<float> api(codec);
    ChannelSpec spec;
    spec.snr_db = 10;
    Rng crng(5);
    auto qd = collect_query_dataset<float>(api, tiny_probes(16, 83), spec, crng);
    InverseTrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch = 8;
    cfg.lr = 3e-3;
    cfg.lr_final = 3e-4;
    Rng trng(89);
    auto net = train_inverse_network<float>(qd, InverseArch::mirror_of(codec.arch), cfg, trng);

    auto z = qd.signals[0];
    auto a = closedbox_invert(z, net);
    auto b = closedbox_invert(z, net);
    for (std::int64_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i] == b[i]);
        REQUIRE(a[i] >= 0.0f);
        REQUIRE(a[i] <= 1.0f);
    }

    // reconstruction of a training pair beats the probe-set mean image
    Tensor<float> mean({3, 8, 8});
    for (const auto& img : qd.images)
        for (std::int64_t i = 0; i < mean.size(); ++i) mean[i] += img[i] / qd.m();
    const double mean_psnr = psnr(qd.images[0], mean);
    const double net_psnr = psnr(qd.images[0], a);
    CHECK(net_psnr > mean_psnr);
}

TEST_CASE("genai closed-box keeps the generator frozen and splits (s, n) exactly") {
    Rng rng(97);
    GeneratorArch ga;
    ga.height = ga.width = 8;
    ga.d_s = 6;
    ga.g0 = 8;
    ga.g1 = 8;
    ga.g2 = 6;
    ga.g3 = 6;
    auto gen = make_generator<float>(ga, rng);
    ParamStore<float> before;
    for (std::size_t i = 0; i < gen.params.size(); ++i)
        before.add(gen.params.entry(i).name, gen.params.entry(i).tensor);

    auto codec = tiny_codec_f(rng);
    CodecEncoderApi<float> api(codec);
    ChannelSpec spec;
    spec.snr_db = 15;
    Rng crng(6);
    auto qd = collect_query_dataset<float>(api, tiny_probes(12, 101), spec, crng);

    InverseTrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch = 6;
    Rng trng(103);
    auto net = train_genai_inverse_network<float>(qd, gen, InverseArch::mirror_of(codec.arch), cfg, trng);
    REQUIRE(net.output_mode == InverseOutputMode::latent_plus_noise);
    CHECK(net.train_curve.back() < net.train_curve.front());

    // generator untouched, bit for bit
    for (std::size_t e = 0; e < gen.params.size(); ++e)
        for (std::int64_t i = 0; i < gen.params.entry(e).tensor.size(); ++i)
            REQUIRE(gen.params.entry(e).tensor[i] == before.entry(e).tensor[i]);

    // head output splits into exactly (d_s, d_n)
    Tape<float> t;
    BoundParams<float> p(t, net.params, false);
    Var out = inverse_forward(t, t.constant(qd.signals[0].reshaped({1, net.arch.signal_len()})), net, p);
    REQUIRE(t.val(out).dim(1) == ga.d_s + ga.d_n());

    auto a = genai_closedbox_invert(qd.signals[0], net, gen);
    auto b = genai_closedbox_invert(qd.signals[0], net, gen);
    REQUIRE(a.shape() == std::vector<int>{3, 8, 8});
    for (std::int64_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);

    // wrong mode guards
    CHECK_THROWS_AS(closedbox_invert(qd.signals[0], net), ConfigError);
}
