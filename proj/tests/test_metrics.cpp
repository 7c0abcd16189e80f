#include <catch2/catch.hpp>

#include "msssim_reference.hpp"
#include "semsec/metrics.hpp"

using namespace semsec;

namespace {

// Shared fixture: tiny 2-identity dataset and a gated identity model.
struct MetricsFixture {
    Dataset<float> train, holdout;
    IdentityModel<float> model;

    MetricsFixture() {
        const int per_id = 40, H = 32, W = 32;
        auto build = [&](int from, int to) {
            Dataset<float> d;
            d.identity_names = {"id_000", "id_001"};
            const int n = 2 * (to - from);
            d.images = Tensor<float>({n, 3, H, W});
            int row = 0;
            for (int id = 0; id < 2; ++id) {
                const FaceIdentity f = make_identity(id, 11);
                for (int j = from; j < to; ++j) {
                    Rng r(substream_seed(11, "m/" + std::to_string(id) + "/" + std::to_string(j)));
                    auto img = render_face<float>(f, H, W, r);
                    std::copy(img.data(), img.data() + img.size(),
                              d.images.data() + static_cast<std::int64_t>(row) * img.size());
                    d.labels.push_back(id);
                    ++row;
                }
            }
            return d;
        };
        train = build(0, per_id);
        holdout = build(per_id, per_id + 10);
        IdentityTrainConfig cfg;
        cfg.epochs = 12;
        cfg.batch = 16;
        Rng rng(303);
        model = train_identity_model(train, holdout, cfg, rng);
    }

    static const MetricsFixture& get() {
        static MetricsFixture f;
        return f;
    }
};

Tensor<float> blurred(const Tensor<float>& img) {
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    Tensor<float> out(img.shape());
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double acc = 0;
                int cnt = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = std::clamp(y + dy, 0, H - 1), xx = std::clamp(x + dx, 0, W - 1);
                        acc += img[(static_cast<std::int64_t>(c) * H + yy) * W + xx];
                        ++cnt;
                    }
                out[(static_cast<std::int64_t>(c) * H + y) * W + x] = static_cast<float>(acc / cnt);
            }
    return out;
}

Tensor<float> pixel_shuffled(const Tensor<float>& img, Rng& rng) {
    const int C = img.dim(0), HW = img.dim(1) * img.dim(2);
    std::vector<int> perm(static_cast<std::size_t>(HW));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor<float> out(img.shape());
    for (int c = 0; c < C; ++c)
        for (int p = 0; p < HW; ++p)
            out[static_cast<std::int64_t>(c) * HW + p] = img[static_cast<std::int64_t>(c) * HW + perm[static_cast<std::size_t>(p)]];
    return out;
}

} // namespace

TEST_CASE("psnr analytic cases") {
    Tensor<float> x({3, 8, 8});
    CHECK(psnr(x, x) == 100.0);

    Tensor<float> y = x;
    for (auto& v : y.vec()) v += 0.1f; // MSE = 0.01
    CHECK(psnr(x, y) == Approx(20.0).margin(1e-4));

    Tensor<float> ones = Tensor<float>::full({3, 8, 8}, 1.0f);
    CHECK(psnr(x, ones) == Approx(0.0).margin(1e-6));

    CHECK_THROWS_AS(psnr(x, Tensor<float>({3, 4, 4})), InvalidShape);
}

TEST_CASE("psnr strictly decreases with noise amplitude") {
    Rng rng(5);
    const FaceIdentity f = make_identity(3, 7);
    Rng ir(1);
    auto img = render_face<float>(f, 32, 32, ir);
    double prev = 1e9;
    for (double amp : {0.02, 0.05, 0.1, 0.2, 0.4}) {
        Tensor<float> noisy = img;
        std::normal_distribution<double> g(0, amp);
        for (auto& v : noisy.vec()) v = static_cast<float>(std::clamp(v + g(rng), 0.0, 1.0));
        const double p = psnr(img, noisy);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("ms_ssim identity, symmetry and tiny-image guard") {
    const FaceIdentity f = make_identity(1, 7);
    Rng ir(2);
    auto img = render_face<float>(f, 32, 32, ir);
    CHECK(ms_ssim(img, img) == Approx(1.0).margin(1e-9));

    Rng ir2(3);
    auto other = render_face<float>(make_identity(2, 7), 32, 32, ir2);
    CHECK(ms_ssim(img, other) == Approx(ms_ssim(other, img)).margin(1e-12));

    Tensor<float> tiny({3, 8, 8});
    CHECK_THROWS_AS(ms_ssim(tiny, tiny), InvalidShape);
}

TEST_CASE("ms_ssim agrees with the independent reference on 20 pairs") {
    Rng rng(99);
    for (int pair = 0; pair < 20; ++pair) {
        const int size = (pair % 2 == 0) ? 32 : 48;
        auto a = render_face<float>(make_identity(pair % 6, 13), size, size, rng);
        Tensor<float> b = a;
        std::normal_distribution<double> g(0, 0.02 + 0.02 * (pair % 5));
        for (auto& v : b.vec()) v = static_cast<float>(std::clamp(v + g(rng), 0.0, 1.0));
        if (pair % 3 == 0) b = blurred(b);
        const double lib = ms_ssim(a, b);
        const double ref = semsec_test::msssim_reference(a, b);
        CHECK(lib == Approx(ref).margin(1e-3));
    }
}

TEST_CASE("identity model: two clearly distinct classes exceed 95% holdout accuracy") {
    const auto& fx = MetricsFixture::get();
    CHECK(fx.model.holdout_accuracy >= 0.95);
}

TEST_CASE("identity model training is deterministic given the seed") {
    const auto& fx = MetricsFixture::get();
    IdentityTrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 16;
    cfg.gate = 0.0;
    Rng r1(77), r2(77);
    auto m1 = train_identity_model(fx.train, fx.holdout, cfg, r1);
    auto m2 = train_identity_model(fx.train, fx.holdout, cfg, r2);
    for (std::size_t e = 0; e < m1.params.size(); ++e)
        for (std::int64_t i = 0; i < m1.params.entry(e).tensor.size(); ++i)
            REQUIRE(m1.params.entry(e).tensor[i] == m2.params.entry(e).tensor[i]);
}

TEST_CASE("identity model gate failures") {
    const auto& fx = MetricsFixture::get();
    Dataset<float> single;
    single.identity_names = {"only"};
    const int n = 8;
    single.images = Tensor<float>({n, 3, 32, 32});
    for (int i = 0; i < n; ++i) single.labels.push_back(0);
    Rng rng(1);
    IdentityTrainConfig cfg;
    CHECK_THROWS_AS(train_identity_model(single, single, cfg, rng), GateNotMet);

    // unreachable gate reports the measured accuracy
    IdentityTrainConfig hard;
    hard.epochs = 1;
    hard.gate = 1.01;
    Rng r(5);
    try {
        train_identity_model(fx.train, fx.holdout, hard, r);
        FAIL("gate should not pass");
    } catch (const GateNotMet& e) {
        CHECK(e.accuracy >= 0.0);
        CHECK(e.accuracy <= 1.0);
    }
}

TEST_CASE("fpesr of identical batches is 1 under both rules") {
    const auto& fx = MetricsFixture::get();
    auto batch = fx.holdout.images;
    CHECK(fpesr(batch, batch, fx.model) == 1.0);

    auto cosine_model = fx.model;
    calibrate_cosine_threshold(cosine_model, fx.train);
    CHECK(cosine_model.rule == DecisionRule::cosine_threshold);
    CHECK(fpesr(batch, batch, cosine_model) == 1.0);

    Tensor<float> wrong({1, 3, 32, 32});
    CHECK_THROWS_AS(fpesr(wrong, batch, fx.model), InvalidShape);
}

TEST_CASE("fpesr of uniform-noise reconstructions sits at chance level") {
    const auto& fx = MetricsFixture::get();
    const int n = fx.train.count();
    Tensor<float> noise(fx.train.images.shape());
    Rng rng(42);
    fill_uniform(noise, rng, 0.0f, 1.0f);
    const double rate = fpesr(noise, fx.train.images, fx.model);
    const double chance = 1.0 / fx.train.n_identities();
    const double ci = 1.96 * std::sqrt(chance * (1 - chance) / n);
    CHECK(rate >= chance - ci - 1e-9);
    CHECK(rate <= chance + ci + 1e-9);
}

TEST_CASE("perceptual distance: zero at identity, orders shuffle above blur") {
    const auto& fx = MetricsFixture::get();
    auto net = feature_extractor_from_identity(fx.model);
    Rng rng(7);
    for (int i = 0; i < 20; ++i) {
        auto img = render_face<float>(make_identity(i % 4, 21), 32, 32, rng);
        CHECK(perceptual_distance(img, img, net) == 0.0);
        const double d_blur = perceptual_distance(img, blurred(img), net);
        const double d_shuf = perceptual_distance(img, pixel_shuffled(img, rng), net);
        CHECK(d_shuf > d_blur);
    }
}

TEST_CASE("perceptual distance grows with noise amplitude (one inversion allowed)") {
    const auto& fx = MetricsFixture::get();
    auto net = feature_extractor_from_identity(fx.model);
    Rng rng(17);
    auto img = render_face<float>(make_identity(1, 21), 32, 32, rng);
    std::vector<double> d;
    for (double amp : {0.02, 0.05, 0.1, 0.2, 0.4}) {
        Tensor<float> noisy = img;
        std::normal_distribution<double> g(0, amp);
        for (auto& v : noisy.vec()) v = static_cast<float>(std::clamp(v + g(rng), 0.0, 1.0));
        d.push_back(perceptual_distance(img, noisy, net));
    }
    int inversions = 0;
    for (std::size_t i = 1; i < d.size(); ++i)
        if (d[i] < d[i - 1]) ++inversions;
    CHECK(inversions <= 1);
}

TEST_CASE("metric report aggregates are recomputable from rows") {
    MetricReport r;
    r.samples = {{20, 0.9, 0.1, 1}, {24, 0.8, 0.3, 0}, {28, 0.7, 0.2, 1}};
    const auto j = r.to_json();
    CHECK(j["aggregate"]["psnr_mean"].get<double>() == Approx(24.0));
    CHECK(j["aggregate"]["fpesr"].get<double>() == Approx(2.0 / 3.0));
    CHECK(j["samples"].size() == 3);
    double mean = 0;
    for (const auto& row : j["samples"]) mean += row["psnr"].get<double>();
    CHECK(mean / 3.0 == Approx(j["aggregate"]["psnr_mean"].get<double>()));
}
