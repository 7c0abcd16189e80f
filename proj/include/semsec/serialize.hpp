#pragma once

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "semsec/nn.hpp"

namespace semsec {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Checkpoint archive: a small key/value container holding named float32
// tensors with shape metadata plus one JSON metadata blob. Layout:
//
//   8 bytes   magic "SSCKPT1\n"
//   u64       meta length, then meta JSON (UTF-8)
//   u32       tensor count
//   repeated: u32 name length, name bytes,
//             u32 rank, u32 dims[rank],
//             f32 data (little endian, row major)
//
// The steganography checkpoint doubles as the shared secret between Alice
// and Bob; whoever holds the file can invert containers.
// ---------------------------------------------------------------------------

namespace detail {
constexpr char kCkptMagic[8] = {'S', 'S', 'C', 'K', 'P', 'T', '1', '\n'};

template <class V>
void write_pod(std::ostream& os, V v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}
template <class V>
V read_pod(std::istream& is) {
    V v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!is) throw IoError("checkpoint: truncated file");
    return v;
}
} // namespace detail

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& params, const json& meta) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    os.write(detail::kCkptMagic, 8);
    const std::string m = meta.dump();
    detail::write_pod<std::uint64_t>(os, m.size());
    os.write(m.data(), static_cast<std::streamsize>(m.size()));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = params.entry(i);
        detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(e.tensor.rank()));
        for (int d = 0; d < e.tensor.rank(); ++d)
            detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(e.tensor.dim(d)));
        for (std::int64_t j = 0; j < e.tensor.size(); ++j)
            detail::write_pod<float>(os, static_cast<float>(e.tensor[j]));
    }
    if (!os) throw IoError("short write to " + path.string());
}

template <class T = float>
std::pair<ParamStore<T>, json> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
        throw IoError("not a checkpoint file: " + path.string());
    const auto mlen = detail::read_pod<std::uint64_t>(is);
    std::string m(mlen, '\0');
    is.read(m.data(), static_cast<std::streamsize>(mlen));
    if (!is) throw IoError("checkpoint: truncated metadata");
    json meta = json::parse(m);
    ParamStore<T> params;
    const auto n = detail::read_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto nlen = detail::read_pod<std::uint32_t>(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        const auto rank = detail::read_pod<std::uint32_t>(is);
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(detail::read_pod<std::uint32_t>(is));
        Tensor<T> t(shape);
        for (std::int64_t j = 0; j < t.size(); ++j) t[j] = static_cast<T>(detail::read_pod<float>(is));
        params.add(std::move(name), std::move(t));
    }
    return {std::move(params), std::move(meta)};
}

// ---------------------------------------------------------------------------
// SHA-256, used for content-hashing checkpoints into experiment records.
// ---------------------------------------------------------------------------

class Sha256 {
  public:
    Sha256() { reset(); }

    void reset() {
        h_ = {0x6a09e667u, 0xbb67ae85u, 0x3c6ef372u, 0xa54ff53au,
              0x510e527fu, 0x9b05688cu, 0x1f83d9abu, 0x5be0cd19u};
        len_ = 0;
        buf_used_ = 0;
    }

    void update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        len_ += n;
        while (n > 0) {
            const std::size_t take = std::min<std::size_t>(64 - buf_used_, n);
            std::memcpy(buf_.data() + buf_used_, p, take);
            buf_used_ += take;
            p += take;
            n -= take;
            if (buf_used_ == 64) {
                compress(buf_.data());
                buf_used_ = 0;
            }
        }
    }

    std::string hex_digest() {
        const std::uint64_t bits = len_ * 8;
        unsigned char pad[72] = {0x80};
        const std::size_t padlen = (buf_used_ < 56) ? (56 - buf_used_) : (120 - buf_used_);
        update(pad, padlen);
        unsigned char lenb[8];
        for (int i = 0; i < 8; ++i) lenb[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
        update(lenb, 8);
        static const char* hexd = "0123456789abcdef";
        std::string out;
        out.reserve(64);
        for (std::uint32_t w : h_) {
            for (int i = 28; i >= 0; i -= 4) out.push_back(hexd[(w >> i) & 0xF]);
        }
        return out;
    }

  private:
    static std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

    void compress(const unsigned char* p) {
        static constexpr std::uint32_t K[64] = {
            0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
            0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
            0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
            0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
            0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
            0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
            0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
            0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};
        std::uint32_t w[64];
        for (int i = 0; i < 16; ++i)
            w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
                   (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
        for (int i = 16; i < 64; ++i) {
            const std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
            const std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16] + s0 + w[i - 7] + s1;
        }
        auto a = h_[0], b = h_[1], c = h_[2], d = h_[3], e = h_[4], f = h_[5], g = h_[6], h = h_[7];
        for (int i = 0; i < 64; ++i) {
            const std::uint32_t S1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
            const std::uint32_t ch = (e & f) ^ (~e & g);
            const std::uint32_t t1 = h + S1 + ch + K[i] + w[i];
            const std::uint32_t S0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
            const std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
            const std::uint32_t t2 = S0 + maj;
            h = g; g = f; f = e; e = d + t1; d = c; c = b; b = a; a = t1 + t2;
        }
        h_[0] += a; h_[1] += b; h_[2] += c; h_[3] += d;
        h_[4] += e; h_[5] += f; h_[6] += g; h_[7] += h;
    }

    std::array<std::uint32_t, 8> h_;
    std::array<unsigned char, 64> buf_;
    std::uint64_t len_ = 0;
    std::size_t buf_used_ = 0;
};

inline std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot hash " + path.string());
    Sha256 h;
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof(buf));
        h.update(buf, static_cast<std::size_t>(is.gcount()));
    }
    return h.hex_digest();
}

} // namespace semsec
