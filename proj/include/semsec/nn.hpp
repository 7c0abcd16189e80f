#pragma once

#include <map>
#include <string>
#include <string_view>
#include <thread>

#include "semsec/autodiff.hpp"

namespace semsec {

/// Ordered, named parameter set. Order is the optimizer state order and the
/// checkpoint order, so it must stay stable across runs.
template <class T>
class ParamStore {
  public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
    };

    Tensor<T>& add(std::string name, Tensor<T> t) {
        if (index_.count(name)) throw Error("duplicate parameter: " + name);
        index_[name] = entries_.size();
        entries_.push_back(Entry{std::move(name), std::move(t)});
        return entries_.back().tensor;
    }

    bool has(std::string_view name) const { return index_.count(std::string(name)) > 0; }

    Tensor<T>& at(std::string_view name) {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) throw Error("unknown parameter: " + std::string(name));
        return entries_[it->second].tensor;
    }
    const Tensor<T>& at(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) throw Error("unknown parameter: " + std::string(name));
        return entries_[it->second].tensor;
    }

    std::size_t size() const { return entries_.size(); }
    Entry& entry(std::size_t i) { return entries_[i]; }
    const Entry& entry(std::size_t i) const { return entries_[i]; }

    std::int64_t scalar_count() const {
        std::int64_t n = 0;
        for (const auto& e : entries_) n += e.tensor.size();
        return n;
    }

    bool all_finite() const {
        for (const auto& e : entries_)
            if (!e.tensor.all_finite()) return false;
        return true;
    }

  private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

/// Kaiming-style init for a conv layer; `zero` makes the layer an exact zero
/// map (used for the last layer of flow coupling nets).
template <class T>
void add_conv(ParamStore<T>& p, const std::string& prefix, int in_c, int out_c, int k, Rng& rng,
              bool zero = false) {
    Tensor<T> w({out_c, in_c, k, k});
    if (!zero) fill_normal(w, rng, static_cast<T>(std::sqrt(2.0 / (in_c * k * k))));
    p.add(prefix + ".w", std::move(w));
    p.add(prefix + ".b", Tensor<T>::zeros({out_c}));
}

template <class T>
void add_dense(ParamStore<T>& p, const std::string& prefix, int in, int out, Rng& rng,
               bool zero = false) {
    Tensor<T> w({out, in});
    if (!zero) fill_normal(w, rng, static_cast<T>(std::sqrt(2.0 / in)));
    p.add(prefix + ".w", std::move(w));
    p.add(prefix + ".b", Tensor<T>::zeros({out}));
}

/// Binds every tensor of a store onto a tape, trainable or frozen.
template <class T>
class BoundParams {
  public:
    BoundParams(Tape<T>& tape, const ParamStore<T>& store, bool trainable)
        : tape_(&tape), store_(&store), trainable_(trainable) {
        vars_.reserve(store.size());
        for (std::size_t i = 0; i < store.size(); ++i)
            vars_.push_back(tape.leaf(store.entry(i).tensor, trainable));
    }

    Var operator[](std::string_view name) const {
        for (std::size_t i = 0; i < store_->size(); ++i)
            if (store_->entry(i).name == name) return vars_[i];
        throw Error("unbound parameter: " + std::string(name));
    }

    bool trainable() const { return trainable_; }

    /// Gradients in store order; call after tape.backward().
    std::vector<Tensor<T>> grads() const {
        std::vector<Tensor<T>> g;
        g.reserve(vars_.size());
        for (Var v : vars_) g.push_back(tape_->grad(v));
        return g;
    }

  private:
    Tape<T>* tape_;
    const ParamStore<T>* store_;
    bool trainable_;
    std::vector<Var> vars_;
};

/// Sharded loss/gradient evaluation: each worker builds its own tape over a
/// slice of the batch; losses and gradients are averaged in worker order, so
/// results are bit-identical regardless of thread scheduling.
template <class T, class Fn>
std::pair<double, std::vector<Tensor<T>>> sharded_batch_grads(int workers, Fn worker_fn) {
    using Result = std::pair<double, std::vector<Tensor<T>>>;
    std::vector<Result> results(static_cast<std::size_t>(workers));
    if (workers <= 1) {
        results[0] = worker_fn(0);
    } else {
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
        std::vector<std::thread> threads;
        threads.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w)
            threads.emplace_back([&results, &errors, &worker_fn, w] {
                try {
                    results[static_cast<std::size_t>(w)] = worker_fn(w);
                } catch (...) {
                    errors[static_cast<std::size_t>(w)] = std::current_exception();
                }
            });
        for (auto& th : threads) th.join();
        for (const auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    Result out = std::move(results[0]);
    for (int w = 1; w < workers; ++w) {
        out.first += results[static_cast<std::size_t>(w)].first;
        for (std::size_t i = 0; i < out.second.size(); ++i) {
            auto& dst = out.second[i];
            const auto& src = results[static_cast<std::size_t>(w)].second[i];
            for (std::int64_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
    }
    const T inv = T(1) / static_cast<T>(workers);
    out.first /= workers;
    for (auto& g : out.second)
        for (auto& v : g.vec()) v *= inv;
    return out;
}

/// Cosine decay from lr0 to lr1 across total steps.
inline double cosine_lr(double lr0, double lr1, std::int64_t step, std::int64_t total) {
    if (total <= 1) return lr0;
    const double t = std::min<double>(1.0, static_cast<double>(step) / static_cast<double>(total - 1));
    return lr1 + 0.5 * (lr0 - lr1) * (1.0 + std::cos(3.14159265358979323846 * t));
}

/// Adam with optional global-norm gradient clipping.
template <class T>
class Adam {
  public:
    explicit Adam(T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8), T clip_norm = T(0))
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), clip_(clip_norm) {}

    void step(ParamStore<T>& params, std::vector<Tensor<T>> grads) {
        if (m_.empty()) {
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_.push_back(Tensor<T>::zeros(params.entry(i).tensor.shape()));
                v_.push_back(Tensor<T>::zeros(params.entry(i).tensor.shape()));
            }
        }
        if (grads.size() != params.size()) throw Error("Adam: grad/param count mismatch");
        if (clip_ > T(0)) {
            double total = 0;
            for (const auto& g : grads)
                for (T x : g.vec()) total += static_cast<double>(x) * x;
            const double nrm = std::sqrt(total);
            if (nrm > static_cast<double>(clip_)) {
                const T f = static_cast<T>(static_cast<double>(clip_) / nrm);
                for (auto& g : grads)
                    for (auto& x : g.vec()) x *= f;
            }
        }
        ++t_;
        const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor<T>& p = params.entry(i).tensor;
            const Tensor<T>& g = grads[i];
            for (std::int64_t j = 0; j < p.size(); ++j) {
                m_[i][j] = beta1_ * m_[i][j] + (T(1) - beta1_) * g[j];
                v_[i][j] = beta2_ * v_[i][j] + (T(1) - beta2_) * g[j] * g[j];
                p[j] -= lr_ * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps_);
            }
        }
    }

    void set_lr(T lr) { lr_ = lr; }
    T lr() const { return lr_; }

  private:
    T lr_, beta1_, beta2_, eps_, clip_;
    std::int64_t t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

} // namespace semsec
