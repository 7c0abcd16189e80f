#include <catch2/catch.hpp>

#include "fd_check.hpp"
#include "semsec/nn.hpp"
#include "semsec/serialize.hpp"

using namespace semsec;
using semsec_test::fd_gradient;
using semsec_test::rel_err;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double sd = 1.0) {
    Tensor<double> t(std::move(shape));
    fill_normal(t, rng, sd);
    return t;
}

// Direct convolution, written independently of the im2col path.
Tensor<double> conv_reference(const Tensor<double>& x, const Tensor<double>& w,
                              const Tensor<double>& b, int stride, int pad) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OC = w.dim(0), K = w.dim(2);
    const int OH = (H + 2 * pad - K) / stride + 1;
    const int OW = (W + 2 * pad - K) / stride + 1;
    Tensor<double> y({B, OC, OH, OW});
    for (int bi = 0; bi < B; ++bi)
        for (int oc = 0; oc < OC; ++oc)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    double acc = b[oc];
                    for (int c = 0; c < C; ++c)
                        for (int ky = 0; ky < K; ++ky)
                            for (int kx = 0; kx < K; ++kx) {
                                const int iy = oy * stride - pad + ky;
                                const int ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x.at4(bi, c, iy, ix) * w.at4(oc, c, ky, kx);
                            }
                    y.at4(bi, oc, oy, ox) = acc;
                }
    return y;
}

} // namespace

TEST_CASE("tensor shape checks") {
    Tensor<float> t({2, 3});
    CHECK(t.size() == 6);
    CHECK_THROWS_AS(t.reshaped({4}), InvalidShape);
    CHECK_THROWS_AS(Tensor<float>({2}, {1.f, 2.f, 3.f}), InvalidShape);
    CHECK(t.reshaped({3, 2}).dim(0) == 3);
}

TEST_CASE("conv2d matches direct convolution") {
    Rng rng(7);
    for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 1}, std::pair{1, 0}}) {
        auto x = random_tensor({2, 3, 6, 5}, rng);
        auto w = random_tensor({4, 3, 3, 3}, rng);
        auto b = random_tensor({4}, rng);
        auto y = conv2d_fwd(x, w, &b, stride, pad);
        auto ref = conv_reference(x, w, b, stride, pad);
        REQUIRE(y.shape() == ref.shape());
        for (std::int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == Approx(ref[i]).margin(1e-12));
    }
}

TEST_CASE("dense matches manual matmul") {
    Rng rng(9);
    auto x = random_tensor({3, 4}, rng);
    auto w = random_tensor({2, 4}, rng);
    auto b = random_tensor({2}, rng);
    auto y = dense_fwd(x, w, &b);
    for (int bi = 0; bi < 3; ++bi)
        for (int o = 0; o < 2; ++o) {
            double acc = b[o];
            for (int i = 0; i < 4; ++i) acc += x[bi * 4 + i] * w[o * 4 + i];
            CHECK(y[bi * 2 + o] == Approx(acc));
        }
}

TEST_CASE("autodiff gradients match finite differences through a conv net") {
    Rng rng(11);
    auto x0 = random_tensor({2, 2, 6, 6}, rng, 0.5);
    auto w1 = random_tensor({3, 2, 3, 3}, rng, 0.4);
    auto b1 = random_tensor({3}, rng, 0.1);
    auto wd = random_tensor({2, 3 * 3 * 3}, rng, 0.3);
    auto bd = random_tensor({2}, rng, 0.1);
    auto target = random_tensor({2, 2}, rng);

    auto loss_fn = [&](const Tensor<double>& w1v) {
        Tape<double> t;
        Var x = t.constant(x0);
        Var w = t.constant(w1v);
        Var c = t.conv2d(x, w, t.constant(b1), 2, 1);
        Var a = t.leaky_relu(c, 0.2);
        Var f = t.reshape(a, {2, 3 * 3 * 3});
        Var d = t.dense(f, t.constant(wd), t.constant(bd));
        Var y = t.tanh_op(d);
        return t.val(t.mse(y, t.constant(target)))[0];
    };

    Tape<double> t;
    Var x = t.constant(x0);
    Var w = t.leaf(w1, true);
    Var c = t.conv2d(x, w, t.constant(b1), 2, 1);
    Var a = t.leaky_relu(c, 0.2);
    Var f = t.reshape(a, {2, 3 * 3 * 3});
    Var d = t.dense(f, t.constant(wd), t.constant(bd));
    Var y = t.tanh_op(d);
    Var l = t.mse(y, t.constant(target));
    t.backward(l);

    auto fd = fd_gradient(loss_fn, w1);
    CHECK(rel_err(t.grad(w), fd) < 1e-7);
}

TEST_CASE("autodiff input gradients flow through every op") {
    Rng rng(13);
    const int B = 2, D = 8;
    auto x0 = random_tensor({B, D}, rng, 0.7);
    auto h = random_tensor({B, D}, rng);
    auto target = random_tensor({B, 3}, rng);
    auto wd = random_tensor({3, D / 2}, rng, 0.5);

    auto build = [&](Tape<double>& t, Var x) {
        Var z = t.power_normalize_rows(x, 1.0);
        Var m = t.complex_hadamard(z, t.constant(h));
        Var s = t.slice_cols(m, 0, D / 2);
        Var e = t.sigmoid_op(s);
        Var d = t.dense(e, t.constant(wd), Var{});
        Var u = t.exp_op(t.scale(d, 0.1));
        return t.sse(u, t.constant(target));
    };

    auto loss_fn = [&](const Tensor<double>& xv) {
        Tape<double> t;
        return t.val(build(t, t.constant(xv)))[0];
    };

    Tape<double> t;
    Var x = t.leaf(x0, true);
    Var l = build(t, x);
    t.backward(l);

    auto fd = fd_gradient(loss_fn, x0);
    CHECK(rel_err(t.grad(x), fd) < 1e-7);
}

TEST_CASE("upsample2, add_broadcast_chan and softmax_ce gradients") {
    Rng rng(17);
    auto x0 = random_tensor({2, 3, 4, 4}, rng, 0.6);
    auto nmap = random_tensor({2, 1, 8, 8}, rng, 0.3);
    auto w = random_tensor({5, 3 * 8 * 8}, rng, 0.2);
    std::vector<int> labels{1, 4};

    auto loss_fn = [&](const Tensor<double>& nv) {
        Tape<double> t;
        Var u = t.upsample2(t.constant(x0));
        Var a = t.add_broadcast_chan(u, t.constant(nv));
        Var f = t.reshape(a, {2, 3 * 8 * 8});
        Var logits = t.dense(f, t.constant(w), Var{});
        return t.val(t.softmax_ce(logits, labels))[0];
    };

    Tape<double> t;
    Var n = t.leaf(nmap, true);
    Var u = t.upsample2(t.constant(x0));
    Var a = t.add_broadcast_chan(u, n);
    Var f = t.reshape(a, {2, 3 * 8 * 8});
    Var logits = t.dense(f, t.constant(w), Var{});
    Var l = t.softmax_ce(logits, labels);
    t.backward(l);

    auto fd = fd_gradient(loss_fn, nmap);
    CHECK(rel_err(t.grad(n), fd) < 1e-7);
}

TEST_CASE("power_normalize_rows forces exact per-row power") {
    Rng rng(19);
    Tape<double> t;
    auto z0 = random_tensor({4, 16}, rng, 3.0);
    Var z = t.power_normalize_rows(t.constant(z0), 2.0);
    for (int b = 0; b < 4; ++b) {
        double s = 0;
        for (int i = 0; i < 16; ++i) {
            const double v = t.val(z)[b * 16 + i];
            s += v * v;
        }
        CHECK(s / 8.0 == Approx(2.0).epsilon(1e-12));
    }
    Tensor<double> zeros({1, 4});
    Tape<double> t2;
    CHECK_THROWS_AS(t2.power_normalize_rows(t2.constant(zeros), 1.0), DegenerateSignal);
}

TEST_CASE("Adam minimizes a quadratic") {
    ParamStore<float> p;
    Rng rng(23);
    Tensor<float> x({8});
    fill_normal(x, rng, 2.0f);
    p.add("x", x);
    Adam<float> opt(0.1f);
    for (int it = 0; it < 400; ++it) {
        Tape<float> t;
        BoundParams<float> bp(t, p, true);
        Var l = t.l2sq(bp["x"]);
        t.backward(l);
        opt.step(p, bp.grads());
    }
    for (std::int64_t i = 0; i < 8; ++i) CHECK(std::abs(p.at("x")[i]) < 1e-3f);
}

TEST_CASE("checkpoint round-trips parameters and metadata") {
    ParamStore<float> p;
    Rng rng(29);
    Tensor<float> a({2, 3});
    fill_normal(a, rng, 1.0f);
    p.add("layer.w", a);
    p.add("layer.b", Tensor<float>::full({3}, 0.5f));
    json meta{{"kind", "unit-test"}, {"seed", 29}};
    const auto path = std::filesystem::temp_directory_path() / "semsec_test.ckpt";
    save_checkpoint(path, p, meta);
    auto [q, m] = load_checkpoint<float>(path);
    REQUIRE(q.size() == 2);
    CHECK(m["kind"] == "unit-test");
    CHECK(q.at("layer.w").shape() == std::vector<int>{2, 3});
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(q.at("layer.w")[i] == a[i]);
    CHECK(sha256_file(path) == sha256_file(path));
    std::filesystem::remove(path);
}

TEST_CASE("sha256 known vectors") {
    Sha256 h;
    CHECK(h.hex_digest() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    Sha256 h2;
    h2.update("abc", 3);
    CHECK(h2.hex_digest() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
