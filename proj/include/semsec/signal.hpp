#pragma once

#include <complex>

#include "semsec/tensor.hpp"

namespace semsec {

/// A length-k complex channel signal stored as 2k interleaved reals
/// (re0, im0, re1, im1, ...). The interleaved layout is what the neural
/// encoder emits and what the coupling nets consume, so pairing and
/// unpairing are exact by construction.
template <class T>
struct ChannelSignal {
    Tensor<T> values; // rank 1, length 2k

    ChannelSignal() = default;
    explicit ChannelSignal(Tensor<T> v) : values(std::move(v)) {
        if (values.rank() != 1 || values.size() % 2 != 0)
            throw InvalidShape("ChannelSignal: need a rank-1 tensor of even length");
    }

    int k() const { return static_cast<int>(values.size() / 2); }

    std::complex<T> symbol(int i) const { return {values[2 * i], values[2 * i + 1]}; }

    /// (1/k) * sum |z_i|^2
    T power() const {
        double s = 0;
        for (T v : values.vec()) s += static_cast<double>(v) * static_cast<double>(v);
        return static_cast<T>(s / k());
    }
};

/// Wraps a real vector of length 2k as a complex signal.
template <class T>
ChannelSignal<T> pair_complex(Tensor<T> reals) {
    if (reals.rank() != 1 || reals.size() % 2 != 0)
        throw InvalidShape("pair_complex: input length must be even");
    return ChannelSignal<T>(std::move(reals));
}

/// Exact inverse of pair_complex.
template <class T>
Tensor<T> unpair(const ChannelSignal<T>& z) {
    return z.values;
}

/// Scales z so that (1/k)||z||^2 == pbar exactly.
template <class T>
ChannelSignal<T> power_normalize(const ChannelSignal<T>& z, T pbar) {
    if (!(pbar > T(0))) throw Error("power_normalize: pbar must be positive");
    double nsq = 0;
    for (T v : z.values.vec()) nsq += static_cast<double>(v) * static_cast<double>(v);
    if (!(nsq > 0)) throw DegenerateSignal("power_normalize: zero signal");
    const T g = static_cast<T>(std::sqrt(static_cast<double>(z.k()) * static_cast<double>(pbar) / nsq));
    ChannelSignal<T> out = z;
    for (auto& v : out.values.vec()) v *= g;
    return out;
}

} // namespace semsec
