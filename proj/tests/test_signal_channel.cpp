#include <catch2/catch.hpp>

#include "semsec/channel.hpp"

using namespace semsec;

TEST_CASE("pair_complex basis cases and round trip") {
    auto z0 = pair_complex(Tensor<double>({4}, {0, 0, 0, 0}));
    CHECK(z0.k() == 2);
    CHECK(z0.symbol(0) == std::complex<double>(0, 0));

    auto z1 = pair_complex(Tensor<double>({4}, {1, 0, 0, 1}));
    CHECK(z1.symbol(0) == std::complex<double>(1, 0));
    CHECK(z1.symbol(1) == std::complex<double>(0, 1));

    Rng rng(3);
    Tensor<double> r({64});
    fill_normal(r, rng, 1.0);
    auto back = unpair(pair_complex(r));
    for (std::int64_t i = 0; i < r.size(); ++i) CHECK(back[i] == r[i]); // bit exact

    CHECK_THROWS_AS(pair_complex(Tensor<double>({3}, {1, 2, 3})), InvalidShape);
}

TEST_CASE("power_normalize fixed point and hand case") {
    // (1/k)||z||^2 already 1 -> unchanged
    auto z = pair_complex(Tensor<double>({4}, {1, 0, 0, 1}));
    auto n = power_normalize(z, 1.0);
    for (int i = 0; i < 4; ++i) CHECK(n.values[i] == Approx(z.values[i]));

    // k=2, z=[2+0i, 0+0i] -> [sqrt(2)+0i, 0+0i]
    auto z2 = pair_complex(Tensor<double>({4}, {2, 0, 0, 0}));
    auto n2 = power_normalize(z2, 1.0);
    CHECK(n2.values[0] == Approx(std::sqrt(2.0)));
    CHECK(n2.values[1] == 0.0);
    CHECK(n2.power() == Approx(1.0));

    CHECK_THROWS_AS(power_normalize(pair_complex(Tensor<double>({4})), 1.0), DegenerateSignal);
}

TEST_CASE("per-sample power exactness in float32") {
    Rng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        Tensor<float> r({128});
        fill_normal(r, rng, 2.5f);
        auto z = power_normalize(pair_complex(r), 1.0f);
        CHECK(std::abs(z.power() - 1.0f) < 1e-6f);
    }
}

TEST_CASE("noiseless sentinel propagates the signal exactly") {
    Rng rng(5);
    Tensor<double> r({32});
    fill_normal(r, rng, 1.0);
    auto z = power_normalize(pair_complex(r), 1.0);
    ChannelSpec spec;
    spec.snr_db = ChannelSpec::noiseless;
    Rng crng(1);
    auto out = transmit(z, spec, crng);
    for (std::int64_t i = 0; i < z.values.size(); ++i) CHECK(out.received.values[i] == z.values[i]);
    CHECK(out.noise_var == 0.0);
}

TEST_CASE("transmit rejects non-finite input") {
    Tensor<double> r({4}, {1, 0, std::numeric_limits<double>::quiet_NaN(), 0});
    ChannelSpec spec;
    Rng rng(1);
    CHECK_THROWS_AS(transmit(ChannelSignal<double>(r), spec, rng), NumericalError);
}

TEST_CASE("empirical channel statistics over 1e6 symbols") {
    const int k = 1'000'000;
    Tensor<double> r({2 * k});
    Rng rng(42);
    fill_normal(r, rng, 1.0);
    auto z = power_normalize(pair_complex(r), 1.0);

    ChannelSpec spec;
    spec.snr_db = 10.0; // sigma^2 = 0.1
    CHECK(spec.noise_variance() == Approx(0.1));

    Rng crng(substream_seed(7, "awgn"));
    auto out = transmit(z, spec, crng);
    double acc = 0;
    for (int i = 0; i < 2 * k; ++i) {
        const double d = out.received.values[i] - z.values[i];
        acc += d * d;
    }
    const double sigma2_hat = acc / k;
    CHECK(sigma2_hat == Approx(0.1).epsilon(0.02));

    spec.family = ChannelFamily::Rayleigh;
    Rng rrng(substream_seed(7, "rayleigh"));
    auto rout = transmit(z, spec, rrng);
    double hacc = 0;
    for (int i = 0; i < k; ++i) {
        const double hr = rout.coefficients[2 * i], hi = rout.coefficients[2 * i + 1];
        hacc += hr * hr + hi * hi;
    }
    CHECK(hacc / k == Approx(1.0).epsilon(0.02));
}

TEST_CASE("transmit is bit-deterministic given the seed") {
    Rng rng(5);
    Tensor<float> r({64});
    fill_normal(r, rng, 1.0f);
    auto z = power_normalize(pair_complex(r), 1.0f);
    ChannelSpec spec;
    spec.family = ChannelFamily::Rayleigh;
    spec.snr_db = 3.0;
    Rng a(99), b(99);
    auto o1 = transmit(z, spec, a);
    auto o2 = transmit(z, spec, b);
    for (std::int64_t i = 0; i < o1.received.values.size(); ++i) {
        CHECK(o1.received.values[i] == o2.received.values[i]);
        CHECK(o1.coefficients[i] == o2.coefficients[i]);
    }
}

TEST_CASE("MMSE equalization limits and shrinkage") {
    // h = 1, sigma^2 = 0 -> identity
    ChannelOutput<double> out;
    out.received = pair_complex(Tensor<double>({4}, {0.3, -0.2, 1.0, 0.5}));
    out.coefficients = Tensor<double>({4}, {1, 0, 1, 0});
    out.noise_var = 0.0;
    auto eq = equalize(out, 1.0);
    for (int i = 0; i < 4; ++i) CHECK(eq.values[i] == Approx(out.received.values[i]));

    // single symbol: h = 2+0i, sigma^2/pbar = 0, zhat = 4+0i -> 2+0i
    ChannelOutput<double> zf;
    zf.received = pair_complex(Tensor<double>({2}, {4, 0}));
    zf.coefficients = Tensor<double>({2}, {2, 0});
    zf.noise_var = 0.0;
    auto x = equalize(zf, 1.0);
    CHECK(x.values[0] == Approx(2.0));
    CHECK(x.values[1] == Approx(0.0));

    // random fading with noise: |ztilde_i| <= |zhat_i| / |h_i|
    Rng rng(17);
    Tensor<double> r({256});
    fill_normal(r, rng, 1.0);
    auto z = power_normalize(pair_complex(r), 1.0);
    ChannelSpec spec;
    spec.family = ChannelFamily::Rayleigh;
    spec.snr_db = 5.0;
    auto ro = transmit(z, spec, rng);
    auto zt = equalize(ro, 1.0);
    for (int i = 0; i < zt.k(); ++i) {
        const double habs = std::abs(std::complex<double>(ro.coefficients[2 * i], ro.coefficients[2 * i + 1]));
        if (habs < 1e-12) continue;
        const double lhs = std::abs(zt.symbol(i));
        const double rhs = std::abs(ro.received.symbol(i)) / habs;
        CHECK(lhs <= rhs + 1e-12);
    }

    // sigma^2 = 0 with h = 0 -> singular
    ChannelOutput<double> sing;
    sing.received = pair_complex(Tensor<double>({2}, {1, 1}));
    sing.coefficients = Tensor<double>({2}, {0, 0});
    sing.noise_var = 0.0;
    CHECK_THROWS_AS(equalize(sing, 1.0), SingularChannel);

    // CSI policy none -> equalize refuses
    sing.csi_available = false;
    CHECK_THROWS_AS(equalize(sing, 1.0), Error);
}
