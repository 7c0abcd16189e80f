#pragma once

#include <limits>

#include "semsec/signal.hpp"

namespace semsec {

enum class ChannelFamily { AWGN, Rayleigh };
enum class CsiPolicy { perfect, none };

inline const char* to_string(ChannelFamily f) { return f == ChannelFamily::AWGN ? "awgn" : "rayleigh"; }

inline ChannelFamily channel_family_from_string(const std::string& s) {
    if (s == "awgn" || s == "AWGN") return ChannelFamily::AWGN;
    if (s == "rayleigh" || s == "Rayleigh") return ChannelFamily::Rayleigh;
    throw ConfigError("unknown channel family: " + s);
}

struct ChannelSpec {
    ChannelFamily family = ChannelFamily::AWGN;
    double snr_db = 10.0; // +infinity selects the noiseless sentinel
    double pbar = 1.0;
    CsiPolicy csi = CsiPolicy::perfect;
    std::uint64_t rng_seed = 0;

    /// sigma^2 per complex symbol: pbar / 10^(snr/10). Zero in the noiseless
    /// sentinel mode.
    double noise_variance() const {
        if (std::isinf(snr_db)) return 0.0;
        return pbar / std::pow(10.0, snr_db / 10.0);
    }

    static constexpr double noiseless = std::numeric_limits<double>::infinity();
};

template <class T>
struct ChannelOutput {
    ChannelSignal<T> received;   // z_hat
    Tensor<T> coefficients;      // h, interleaved complex; all (1,0) under AWGN
    T noise_var = T(0);          // sigma^2 per complex symbol
    bool csi_available = true;
};

/// One channel realization for k complex symbols: h (interleaved) and noise
/// (interleaved). AWGN draws h = 1. Used directly by transmit() and, in
/// batch form, inside training graphs where the realization enters the tape
/// as a constant so gradients flow through the reparameterized noise.
template <class T>
struct ChannelDraw {
    Tensor<T> h;     // length 2k
    Tensor<T> noise; // length 2k
};

template <class T>
ChannelDraw<T> draw_channel(ChannelFamily family, T sigma2, int k, Rng& rng) {
    ChannelDraw<T> d{Tensor<T>({2 * k}), Tensor<T>({2 * k})};
    if (family == ChannelFamily::AWGN) {
        for (int i = 0; i < k; ++i) {
            d.h[2 * i] = T(1);
            d.h[2 * i + 1] = T(0);
        }
    } else {
        // h_i ~ CN(0,1): each real part N(0, 1/2)
        std::normal_distribution<double> g(0.0, std::sqrt(0.5));
        for (std::int64_t i = 0; i < 2 * k; ++i) d.h[i] = static_cast<T>(g(rng));
    }
    if (sigma2 > T(0)) {
        std::normal_distribution<double> g(0.0, std::sqrt(static_cast<double>(sigma2) / 2.0));
        for (std::int64_t i = 0; i < 2 * k; ++i) d.noise[i] = static_cast<T>(g(rng));
    }
    return d;
}

/// z_hat = h (.) z + n. Deterministic given rng state; with the noiseless
/// sentinel under AWGN no random draws happen at all and z_hat == z exactly.
template <class T>
ChannelOutput<T> transmit(const ChannelSignal<T>& z, const ChannelSpec& spec, Rng& rng) {
    if (!z.values.all_finite()) throw NumericalError("transmit: non-finite input signal");
    const int k = z.k();
    const T sigma2 = static_cast<T>(spec.noise_variance());
    ChannelOutput<T> out;
    out.noise_var = sigma2;
    out.csi_available = spec.csi == CsiPolicy::perfect;
    if (spec.family == ChannelFamily::AWGN && sigma2 == T(0)) {
        out.received = z;
        out.coefficients = Tensor<T>({2 * k});
        for (int i = 0; i < k; ++i) out.coefficients[2 * i] = T(1);
        return out;
    }
    ChannelDraw<T> d = draw_channel<T>(spec.family, sigma2, k, rng);
    Tensor<T> r({2 * k});
    for (int i = 0; i < k; ++i) {
        const T a = z.values[2 * i], b = z.values[2 * i + 1];
        const T c = d.h[2 * i], dd = d.h[2 * i + 1];
        r[2 * i] = a * c - b * dd + d.noise[2 * i];
        r[2 * i + 1] = a * dd + b * c + d.noise[2 * i + 1];
    }
    out.received = ChannelSignal<T>(std::move(r));
    out.coefficients = std::move(d.h);
    return out;
}

/// MMSE equalization with perfect CSI:
///   z_tilde_i = conj(h_i) z_hat_i / (|h_i|^2 + sigma^2/pbar)
/// Reduces to identity for h = 1 in the noiseless limit.
template <class T>
ChannelSignal<T> equalize(const ChannelOutput<T>& out, T pbar) {
    if (!out.csi_available) throw Error("equalize: CSI not available under this policy");
    const int k = out.received.k();
    Tensor<T> r({2 * k});
    const T reg = out.noise_var / pbar;
    for (int i = 0; i < k; ++i) {
        const T hr = out.coefficients[2 * i], hi = out.coefficients[2 * i + 1];
        const T mag = hr * hr + hi * hi;
        const T den = mag + reg;
        if (!(den > T(0))) throw SingularChannel("equalize: zero coefficient with zero noise");
        const T yr = out.received.values[2 * i], yi = out.received.values[2 * i + 1];
        // conj(h) * y / den
        r[2 * i] = (hr * yr + hi * yi) / den;
        r[2 * i + 1] = (hr * yi - hi * yr) / den;
    }
    return ChannelSignal<T>(std::move(r));
}

} // namespace semsec
