#pragma once

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "semsec/tensor.hpp"

namespace semsec {

/// Handle to a node on a Tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode autodiff tape. One tape per forward pass; ops append nodes,
/// backward() runs the recorded closures in reverse. Gradients are available
/// for every node with requires_grad (leaves marked trainable and anything
/// downstream of them), which is what the model-inversion attacks rely on to
/// differentiate with respect to *inputs* rather than weights.
template <class T>
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor<T> value, bool requires_grad) {
        nodes_.push_back(Node{std::move(value), Tensor<T>(), nullptr, requires_grad});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

    const Tensor<T>& val(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }

    /// Gradient of the last backward() root with respect to v.
    const Tensor<T>& grad(Var v) const {
        const Node& n = nodes_[static_cast<std::size_t>(v.id)];
        if (!n.requires_grad) throw Error("grad requested for a non-differentiable node");
        return n.grad;
    }

    std::size_t node_count() const { return nodes_.size(); }

    void backward(Var root) {
        Node& r = node(root);
        if (r.value.size() != 1) throw InvalidShape("backward root must be scalar");
        for (auto& n : nodes_) {
            if (n.requires_grad)
                n.grad = Tensor<T>::zeros(n.value.shape());
            else
                n.grad = Tensor<T>();
        }
        r.grad = Tensor<T>::full({1}, T(1));
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.back && n.requires_grad) n.back(*this);
        }
    }

    // ---- elementwise --------------------------------------------------

    Var add(Var a, Var b) {
        require_same(a, b, "add");
        Tensor<T> out = val(a);
        const Tensor<T>& vb = val(b);
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] += vb[i];
        return unary_or_binary(std::move(out), a, b, [](Tape& t, Var a, Var b, const Node& n) {
            t.accumulate(a, n.grad);
            t.accumulate(b, n.grad);
        });
    }

    Var sub(Var a, Var b) {
        require_same(a, b, "sub");
        Tensor<T> out = val(a);
        const Tensor<T>& vb = val(b);
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
        return unary_or_binary(std::move(out), a, b, [](Tape& t, Var a, Var b, const Node& n) {
            t.accumulate(a, n.grad);
            t.accumulate_scaled(b, n.grad, T(-1));
        });
    }

    Var mul(Var a, Var b) {
        require_same(a, b, "mul");
        Tensor<T> out = val(a);
        const Tensor<T>& vb = val(b);
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
        return unary_or_binary(std::move(out), a, b, [](Tape& t, Var a, Var b, const Node& n) {
            if (t.wants_grad(a)) {
                Tensor<T>& ga = t.node(a).grad;
                const Tensor<T>& vb = t.val(b);
                for (std::int64_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * vb[i];
            }
            if (t.wants_grad(b)) {
                Tensor<T>& gb = t.node(b).grad;
                const Tensor<T>& va = t.val(a);
                for (std::int64_t i = 0; i < n.grad.size(); ++i) gb[i] += n.grad[i] * va[i];
            }
        });
    }

    Var scale(Var a, T c) {
        Tensor<T> out = val(a);
        for (auto& v : out.vec()) v *= c;
        return unary(std::move(out), a, [c](Tape& t, Var a, const Node& n) {
            t.accumulate_scaled(a, n.grad, c);
        });
    }

    Var add_scalar(Var a, T c) {
        Tensor<T> out = val(a);
        for (auto& v : out.vec()) v += c;
        return unary(std::move(out), a, [](Tape& t, Var a, const Node& n) { t.accumulate(a, n.grad); });
    }

    // ---- activations --------------------------------------------------

    Var leaky_relu(Var a, T slope) {
        Tensor<T> out = val(a);
        for (auto& v : out.vec())
            if (v < T(0)) v *= slope;
        return unary(std::move(out), a, [slope](Tape& t, Var a, const Node& n) {
            Tensor<T>& ga = t.node(a).grad;
            const Tensor<T>& va = t.val(a);
            for (std::int64_t i = 0; i < n.grad.size(); ++i)
                ga[i] += n.grad[i] * (va[i] >= T(0) ? T(1) : slope);
        });
    }

    Var tanh_op(Var a) {
        Tensor<T> out = val(a);
        for (auto& v : out.vec()) v = std::tanh(v);
        return unary(std::move(out), a, [](Tape& t, Var a, const Node& n) {
            Tensor<T>& ga = t.node(a).grad;
            const Tensor<T>& y = n.value;
            for (std::int64_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * (T(1) - y[i] * y[i]);
        });
    }

    Var sigmoid_op(Var a) {
        Tensor<T> out = val(a);
        for (auto& v : out.vec()) v = T(1) / (T(1) + std::exp(-v));
        return unary(std::move(out), a, [](Tape& t, Var a, const Node& n) {
            Tensor<T>& ga = t.node(a).grad;
            const Tensor<T>& y = n.value;
            for (std::int64_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * y[i] * (T(1) - y[i]);
        });
    }

    Var exp_op(Var a) {
        Tensor<T> out = val(a);
        for (auto& v : out.vec()) v = std::exp(v);
        return unary(std::move(out), a, [](Tape& t, Var a, const Node& n) {
            Tensor<T>& ga = t.node(a).grad;
            const Tensor<T>& y = n.value;
            for (std::int64_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * y[i];
        });
    }

    // ---- shape ---------------------------------------------------------

    Var reshape(Var a, std::vector<int> shape) {
        Tensor<T> out = val(a).reshaped(std::move(shape));
        return unary(std::move(out), a, [](Tape& t, Var a, const Node& n) {
            Tensor<T>& ga = t.node(a).grad;
            for (std::int64_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
        });
    }

    /// Columns [c0, c1) of a (B, D) tensor.
    Var slice_cols(Var a, int c0, int c1) {
        const Tensor<T>& va = val(a);
        if (va.rank() != 2 || c0 < 0 || c1 > va.dim(1) || c0 >= c1)
            throw InvalidShape("slice_cols: bad range");
        const int B = va.dim(0), D = va.dim(1), W = c1 - c0;
        Tensor<T> out({B, W});
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < W; ++c) out[static_cast<std::int64_t>(b) * W + c] = va[static_cast<std::int64_t>(b) * D + c0 + c];
        return unary(std::move(out), a, [c0, W, D](Tape& t, Var a, const Node& n) {
            Tensor<T>& ga = t.node(a).grad;
            const int B = n.value.dim(0);
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < W; ++c)
                    ga[static_cast<std::int64_t>(b) * D + c0 + c] += n.grad[static_cast<std::int64_t>(b) * W + c];
        });
    }

    // ---- layers ---------------------------------------------------------

    Var dense(Var x, Var w, Var b) {
        Tensor<T> out = dense_fwd(val(x), val(w), b.valid() ? &val(b) : nullptr);
        Var v = push(std::move(out), requires_any({x, w, b}));
        node(v).back = [x, w, b, v](Tape& t) {
            const Node& n = t.node(v);
            const Tensor<T>& xv = t.val(x);
            const Tensor<T>& wv = t.val(w);
            const int B = xv.dim(0), I = xv.dim(1), O = wv.dim(0);
            ECMap<T> gy(n.grad.data(), B, O);
            if (t.wants_grad(x)) {
                EMap<T> gx(t.node(x).grad.data(), B, I);
                ECMap<T> wm(wv.data(), O, I);
                gx.noalias() += gy * wm;
            }
            if (t.wants_grad(w)) {
                EMap<T> gw(t.node(w).grad.data(), O, I);
                ECMap<T> xm(xv.data(), B, I);
                gw.noalias() += gy.transpose() * xm;
            }
            if (b.valid() && t.wants_grad(b)) {
                Tensor<T>& gb = t.node(b).grad;
                for (int bi = 0; bi < B; ++bi)
                    for (int o = 0; o < O; ++o) gb[o] += gy(bi, o);
            }
        };
        return v;
    }

    Var conv2d(Var x, Var w, Var b, int stride, int pad) {
        auto col = std::make_shared<std::vector<T>>();
        Tensor<T> out = conv2d_fwd(val(x), val(w), b.valid() ? &val(b) : nullptr, stride, pad, col.get());
        const Tensor<T>& xv0 = val(x);
        Conv2dShape s{xv0.dim(0), xv0.dim(1), xv0.dim(2), xv0.dim(3), val(w).dim(0), val(w).dim(2), stride, pad};
        Var v = push(std::move(out), requires_any({x, w, b}));
        node(v).back = [x, w, b, v, s, col](Tape& t) {
            const Node& n = t.node(v);
            conv2d_bwd(n.grad, t.val(w), *col, s,
                       t.wants_grad(x) ? &t.node(x).grad : nullptr,
                       t.wants_grad(w) ? &t.node(w).grad : nullptr,
                       (b.valid() && t.wants_grad(b)) ? &t.node(b).grad : nullptr);
        };
        return v;
    }

    Var upsample2(Var x) {
        Tensor<T> out = upsample2_fwd(val(x));
        return unary(std::move(out), x, [](Tape& t, Var x, const Node& n) {
            upsample2_bwd(n.grad, t.node(x).grad);
        });
    }

    /// x(B,C,H,W) + m(B,1,H,W) broadcast over channels.
    Var add_broadcast_chan(Var x, Var m) {
        const Tensor<T>& xv = val(x);
        const Tensor<T>& mv = val(m);
        if (xv.rank() != 4 || mv.rank() != 4 || mv.dim(1) != 1 || xv.dim(0) != mv.dim(0) ||
            xv.dim(2) != mv.dim(2) || xv.dim(3) != mv.dim(3))
            throw InvalidShape("add_broadcast_chan: shape mismatch");
        Tensor<T> out = xv;
        const int B = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (int p = 0; p < HW; ++p)
                    out[(static_cast<std::int64_t>(b) * C + c) * HW + p] += mv[static_cast<std::int64_t>(b) * HW + p];
        Var v = push(std::move(out), requires_any({x, m}));
        node(v).back = [x, m, v, B, C, HW](Tape& t) {
            const Node& n = t.node(v);
            if (t.wants_grad(x)) t.accumulate(x, n.grad);
            if (t.wants_grad(m)) {
                Tensor<T>& gm = t.node(m).grad;
                for (int b = 0; b < B; ++b)
                    for (int c = 0; c < C; ++c)
                        for (int p = 0; p < HW; ++p)
                            gm[static_cast<std::int64_t>(b) * HW + p] += n.grad[(static_cast<std::int64_t>(b) * C + c) * HW + p];
            }
        };
        return v;
    }

    // ---- reductions and losses -----------------------------------------

    Var sum(Var a) {
        double s = 0;
        for (T v : val(a).vec()) s += static_cast<double>(v);
        return unary(Tensor<T>({1}, {static_cast<T>(s)}), a, [](Tape& t, Var a, const Node& n) {
            Tensor<T>& ga = t.node(a).grad;
            const T g = n.grad[0];
            for (auto& v : ga.vec()) v += g;
        });
    }

    Var mean(Var a) { return scale(sum(a), T(1) / static_cast<T>(val(a).size())); }

    /// Sum of squared differences, sum_i (a_i - b_i)^2, as a scalar.
    Var sse(Var a, Var b) {
        require_same(a, b, "sse");
        const Tensor<T>& va = val(a);
        const Tensor<T>& vb = val(b);
        double s = 0;
        for (std::int64_t i = 0; i < va.size(); ++i)
            s += static_cast<double>(va[i] - vb[i]) * static_cast<double>(va[i] - vb[i]);
        return unary_or_binary(Tensor<T>({1}, {static_cast<T>(s)}), a, b, [](Tape& t, Var a, Var b, const Node& n) {
            const Tensor<T>& va = t.val(a);
            const Tensor<T>& vb = t.val(b);
            const T g = T(2) * n.grad[0];
            if (t.wants_grad(a)) {
                Tensor<T>& ga = t.node(a).grad;
                for (std::int64_t i = 0; i < va.size(); ++i) ga[i] += g * (va[i] - vb[i]);
            }
            if (t.wants_grad(b)) {
                Tensor<T>& gb = t.node(b).grad;
                for (std::int64_t i = 0; i < va.size(); ++i) gb[i] -= g * (va[i] - vb[i]);
            }
        });
    }

    /// Mean squared error, sse / element count.
    Var mse(Var a, Var b) { return scale(sse(a, b), T(1) / static_cast<T>(val(a).size())); }

    /// Sum of squares as a scalar.
    Var l2sq(Var a) {
        double s = 0;
        for (T v : val(a).vec()) s += static_cast<double>(v) * static_cast<double>(v);
        return unary(Tensor<T>({1}, {static_cast<T>(s)}), a, [](Tape& t, Var a, const Node& n) {
            Tensor<T>& ga = t.node(a).grad;
            const Tensor<T>& va = t.val(a);
            const T g = T(2) * n.grad[0];
            for (std::int64_t i = 0; i < va.size(); ++i) ga[i] += g * va[i];
        });
    }

    /// Mean softmax cross-entropy over a batch; labels are class indices.
    Var softmax_ce(Var logits, const std::vector<int>& labels) {
        const Tensor<T>& lv = val(logits);
        if (lv.rank() != 2 || lv.dim(0) != static_cast<int>(labels.size()))
            throw InvalidShape("softmax_ce: bad shapes");
        const int B = lv.dim(0), K = lv.dim(1);
        auto probs = std::make_shared<Tensor<T>>(Tensor<T>({B, K}));
        T loss = T(0);
        for (int b = 0; b < B; ++b) {
            const T* row = lv.data() + static_cast<std::int64_t>(b) * K;
            T mx = row[0];
            for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
            T z = T(0);
            for (int k = 0; k < K; ++k) z += std::exp(row[k] - mx);
            const T logz = std::log(z) + mx;
            for (int k = 0; k < K; ++k) (*probs)[static_cast<std::int64_t>(b) * K + k] = std::exp(row[k] - logz);
            loss -= row[labels[static_cast<std::size_t>(b)]] - logz;
        }
        loss /= static_cast<T>(B);
        Var v = push(Tensor<T>({1}, {loss}), node(logits).requires_grad);
        node(v).back = [logits, v, probs, labels](Tape& t) {
            if (!t.wants_grad(logits)) return;
            const Node& n = t.node(v);
            Tensor<T>& gl = t.node(logits).grad;
            const int B = gl.dim(0), K = gl.dim(1);
            const T g = n.grad[0] / static_cast<T>(B);
            for (int b = 0; b < B; ++b)
                for (int k = 0; k < K; ++k) {
                    T p = (*probs)[static_cast<std::int64_t>(b) * K + k];
                    if (k == labels[static_cast<std::size_t>(b)]) p -= T(1);
                    gl[static_cast<std::int64_t>(b) * K + k] += g * p;
                }
        };
        return v;
    }

    // ---- signal ops ------------------------------------------------------

    /// Pairwise complex product of interleaved-real rows: out = h (.) z.
    /// Typically h is a constant (the channel realization is fixed per step).
    Var complex_hadamard(Var z, Var h) {
        require_same(z, h, "complex_hadamard");
        const Tensor<T>& zv = val(z);
        const Tensor<T>& hv = val(h);
        if (zv.size() % 2 != 0) throw InvalidShape("complex_hadamard: odd length");
        Tensor<T> out(zv.shape());
        for (std::int64_t i = 0; i < zv.size(); i += 2) {
            const T a = zv[i], b = zv[i + 1], c = hv[i], d = hv[i + 1];
            out[i] = a * c - b * d;
            out[i + 1] = a * d + b * c;
        }
        Var v = push(std::move(out), requires_any({z, h}));
        node(v).back = [z, h, v](Tape& t) {
            const Node& n = t.node(v);
            const Tensor<T>& zv = t.val(z);
            const Tensor<T>& hv = t.val(h);
            if (t.wants_grad(z)) {
                Tensor<T>& gz = t.node(z).grad;
                for (std::int64_t i = 0; i < zv.size(); i += 2) {
                    const T c = hv[i], d = hv[i + 1];
                    gz[i] += n.grad[i] * c + n.grad[i + 1] * d;
                    gz[i + 1] += -n.grad[i] * d + n.grad[i + 1] * c;
                }
            }
            if (t.wants_grad(h)) {
                Tensor<T>& gh = t.node(h).grad;
                for (std::int64_t i = 0; i < zv.size(); i += 2) {
                    const T a = zv[i], b = zv[i + 1];
                    gh[i] += n.grad[i] * a + n.grad[i + 1] * b;
                    gh[i + 1] += -n.grad[i] * b + n.grad[i + 1] * a;
                }
            }
        };
        return v;
    }

    /// Per-row power normalization of (B, 2k): row -> row * sqrt(k*pbar)/||row||.
    Var power_normalize_rows(Var z, T pbar) {
        const Tensor<T>& zv = val(z);
        if (zv.rank() != 2 || zv.dim(1) % 2 != 0) throw InvalidShape("power_normalize_rows: need (B, 2k)");
        const int B = zv.dim(0), D = zv.dim(1);
        const T target = std::sqrt(static_cast<T>(D) / T(2) * pbar);
        auto norms = std::make_shared<std::vector<T>>(static_cast<std::size_t>(B));
        Tensor<T> out(zv.shape());
        for (int b = 0; b < B; ++b) {
            double s = 0;
            const T* row = zv.data() + static_cast<std::int64_t>(b) * D;
            for (int i = 0; i < D; ++i) s += static_cast<double>(row[i]) * static_cast<double>(row[i]);
            const T nrm = static_cast<T>(std::sqrt(s));
            if (!(nrm > T(0))) throw DegenerateSignal("power_normalize: zero-norm signal");
            (*norms)[static_cast<std::size_t>(b)] = nrm;
            const T g = target / nrm;
            for (int i = 0; i < D; ++i) out[static_cast<std::int64_t>(b) * D + i] = row[i] * g;
        }
        Var v = push(std::move(out), node(z).requires_grad);
        node(v).back = [z, v, norms, target](Tape& t) {
            if (!t.wants_grad(z)) return;
            const Node& n = t.node(v);
            const Tensor<T>& zv = t.val(z);
            Tensor<T>& gz = t.node(z).grad;
            const int B = zv.dim(0), D = zv.dim(1);
            for (int b = 0; b < B; ++b) {
                const T* row = zv.data() + static_cast<std::int64_t>(b) * D;
                const T* gy = n.grad.data() + static_cast<std::int64_t>(b) * D;
                T* gx = gz.data() + static_cast<std::int64_t>(b) * D;
                const T nrm = (*norms)[static_cast<std::size_t>(b)];
                T dot = T(0);
                for (int i = 0; i < D; ++i) dot += row[i] * gy[i];
                const T a = target / nrm;
                const T c = dot / (nrm * nrm);
                for (int i = 0; i < D; ++i) gx[i] += a * (gy[i] - row[i] * c);
            }
        };
        return v;
    }

  private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::function<void(Tape&)> back;
        bool requires_grad = false;
    };

    std::deque<Node> nodes_;

    Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
    const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }
    int next_id() const { return static_cast<int>(nodes_.size()); }
    bool wants_grad(Var v) const { return v.valid() && node(v).requires_grad; }

    bool requires_any(std::initializer_list<Var> vs) const {
        for (Var v : vs)
            if (v.valid() && node(v).requires_grad) return true;
        return false;
    }

    Var push(Tensor<T> value, bool requires_grad) {
        nodes_.push_back(Node{std::move(value), Tensor<T>(), nullptr, requires_grad});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    void require_same(Var a, Var b, const char* op) const {
        if (!val(a).same_shape(val(b))) throw InvalidShape(std::string(op) + ": shape mismatch");
    }

    void accumulate(Var v, const Tensor<T>& g) {
        if (!wants_grad(v)) return;
        Tensor<T>& dst = node(v).grad;
        for (std::int64_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }

    void accumulate_scaled(Var v, const Tensor<T>& g, T c) {
        if (!wants_grad(v)) return;
        Tensor<T>& dst = node(v).grad;
        for (std::int64_t i = 0; i < g.size(); ++i) dst[i] += c * g[i];
    }

    template <class F>
    Var unary(Tensor<T> out, Var a, F f) {
        Var v = push(std::move(out), node(a).requires_grad);
        if (node(a).requires_grad)
            node(v).back = [a, v, f](Tape& t) { f(t, a, t.node(v)); };
        return v;
    }

    template <class F>
    Var unary_or_binary(Tensor<T> out, Var a, Var b, F f) {
        Var v = push(std::move(out), requires_any({a, b}));
        if (node(v).requires_grad)
            node(v).back = [a, b, v, f](Tape& t) { f(t, a, b, t.node(v)); };
        return v;
    }
};

} // namespace semsec
