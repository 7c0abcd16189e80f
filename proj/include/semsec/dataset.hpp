#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "semsec/tensor.hpp"

namespace semsec {

// ---------------------------------------------------------------------------
// Image I/O. Images are float C x H x W in [0,1]; on disk they are binary
// PPM (P6), one file per image, one directory per identity.
// ---------------------------------------------------------------------------

template <class T>
void write_ppm(const std::filesystem::path& path, const Tensor<T>& img) {
    if (img.rank() != 3 || img.dim(0) != 3) throw InvalidShape("write_ppm: need 3xHxW");
    const int H = img.dim(1), W = img.dim(2);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    os << "P6\n" << W << " " << H << "\n255\n";
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(static_cast<double>(img[(static_cast<std::int64_t>(c) * H + y) * W + x]), 0.0, 1.0);
                os.put(static_cast<char>(std::lround(v * 255.0)));
            }
    if (!os) throw IoError("short write: " + path.string());
}

template <class T = float>
Tensor<T> read_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path.string());
    std::string magic;
    is >> magic;
    if (magic != "P6" && magic != "P5") throw IoError("unsupported image format in " + path.string());
    auto next_int = [&is, &path]() {
        int v;
        while (is >> std::ws && is.peek() == '#') is.ignore(1 << 20, '\n');
        if (!(is >> v)) throw IoError("bad header in " + path.string());
        return v;
    };
    const int W = next_int(), H = next_int(), maxval = next_int();
    is.get(); // single whitespace after maxval
    const int ch = (magic == "P6") ? 3 : 1;
    std::vector<unsigned char> raw(static_cast<std::size_t>(W) * H * ch);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) throw IoError("truncated image " + path.string());
    Tensor<T> img({3, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                const unsigned char b = raw[(static_cast<std::size_t>(y) * W + x) * ch + (ch == 3 ? c : 0)];
                img[(static_cast<std::int64_t>(c) * H + y) * W + x] = static_cast<T>(b) / static_cast<T>(maxval);
            }
    return img;
}

/// Bilinear resize of a CxHxW image.
template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& img, int out_h, int out_w) {
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    if (H == out_h && W == out_w) return img;
    Tensor<T> out({C, out_h, out_w});
    for (int y = 0; y < out_h; ++y) {
        const double fy = (out_h > 1) ? static_cast<double>(y) * (H - 1) / (out_h - 1) : 0.0;
        const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, H - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = (out_w > 1) ? static_cast<double>(x) * (W - 1) / (out_w - 1) : 0.0;
            const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, W - 1);
            const double wx = fx - x0;
            for (int c = 0; c < C; ++c) {
                const double v00 = img[(static_cast<std::int64_t>(c) * H + y0) * W + x0];
                const double v01 = img[(static_cast<std::int64_t>(c) * H + y0) * W + x1];
                const double v10 = img[(static_cast<std::int64_t>(c) * H + y1) * W + x0];
                const double v11 = img[(static_cast<std::int64_t>(c) * H + y1) * W + x1];
                out[(static_cast<std::int64_t>(c) * out_h + y) * out_w + x] =
                    static_cast<T>((1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic identity dataset. Each identity is a fixed set of appearance
// parameters (skin/hair/background palettes indexed so that no two
// identities share the full combination, plus per-identity geometry); each
// image jitters pose, expression, lighting and adds a smooth noise field.
// ---------------------------------------------------------------------------

struct FaceIdentity {
    float skin[3], hair[3], bg_a[3], bg_b[3], iris[3];
    float face_w, face_h, eye_dx, eye_y, eye_r, mouth_y, mouth_w, hair_drop;
    bool glasses;
};

inline FaceIdentity make_identity(int id, std::uint64_t seed) {
    static constexpr float skin_palette[8][3] = {
        {0.98f, 0.86f, 0.74f}, {0.93f, 0.74f, 0.57f}, {0.85f, 0.64f, 0.45f}, {0.72f, 0.52f, 0.36f},
        {0.60f, 0.42f, 0.28f}, {0.48f, 0.33f, 0.22f}, {0.99f, 0.78f, 0.68f}, {0.80f, 0.58f, 0.50f}};
    static constexpr float hair_palette[8][3] = {
        {0.08f, 0.06f, 0.05f}, {0.35f, 0.22f, 0.10f}, {0.62f, 0.44f, 0.16f}, {0.85f, 0.74f, 0.42f},
        {0.55f, 0.10f, 0.08f}, {0.75f, 0.75f, 0.78f}, {0.20f, 0.22f, 0.45f}, {0.12f, 0.35f, 0.16f}};
    static constexpr float bg_palette[10][3] = {
        {0.55f, 0.70f, 0.90f}, {0.85f, 0.60f, 0.55f}, {0.60f, 0.85f, 0.65f}, {0.90f, 0.85f, 0.55f},
        {0.70f, 0.55f, 0.85f}, {0.50f, 0.80f, 0.85f}, {0.92f, 0.70f, 0.80f}, {0.65f, 0.65f, 0.50f},
        {0.40f, 0.50f, 0.70f}, {0.78f, 0.78f, 0.88f}};
    FaceIdentity f{};
    // co-prime strides keep the palette triple unique for id < 40
    const auto* sp = skin_palette[id % 8];
    const auto* hp = hair_palette[(3 * id + 1) % 8];
    const auto* bp = bg_palette[(7 * id + 2) % 10];
    std::copy(sp, sp + 3, f.skin);
    std::copy(hp, hp + 3, f.hair);
    std::copy(bp, bp + 3, f.bg_a);
    Rng rng(substream_seed(seed, "identity/" + std::to_string(id)));
    std::uniform_real_distribution<float> u(0.f, 1.f);
    for (int c = 0; c < 3; ++c) f.bg_b[c] = std::clamp(f.bg_a[c] + 0.25f * (u(rng) - 0.5f), 0.f, 1.f);
    f.iris[0] = 0.1f + 0.4f * u(rng);
    f.iris[1] = 0.1f + 0.5f * u(rng);
    f.iris[2] = 0.2f + 0.6f * u(rng);
    f.face_w = 0.25f + 0.10f * u(rng);
    f.face_h = 0.32f + 0.10f * u(rng);
    f.eye_dx = 0.09f + 0.05f * u(rng);
    f.eye_y = 0.42f + 0.06f * u(rng);
    f.eye_r = 0.030f + 0.022f * u(rng);
    f.mouth_y = 0.68f + 0.05f * u(rng);
    f.mouth_w = 0.08f + 0.07f * u(rng);
    f.hair_drop = 0.28f + 0.18f * u(rng);
    f.glasses = u(rng) < 0.35f;
    return f;
}

namespace detail {
inline float smoothstep01(float t) {
    t = std::clamp(t, 0.f, 1.f);
    return t * t * (3.f - 2.f * t);
}
/// Soft-edged ellipse coverage at normalized point (x, y).
inline float ellipse_alpha(float x, float y, float cx, float cy, float rx, float ry, float edge = 0.06f) {
    const float dx = (x - cx) / rx, dy = (y - cy) / ry;
    const float d = dx * dx + dy * dy;
    return smoothstep01((1.f + edge - d) / edge);
}
} // namespace detail

/// Renders one sample of an identity with pose/expression/lighting jitter.
template <class T = float>
Tensor<T> render_face(const FaceIdentity& f, int H, int W, Rng& rng) {
    std::uniform_real_distribution<float> u(0.f, 1.f);
    const float jx = 0.035f * (u(rng) - 0.5f); // translation
    const float jy = 0.035f * (u(rng) - 0.5f);
    const float sc = 1.f + 0.06f * (u(rng) - 0.5f); // scale
    const float bright = 0.09f * (u(rng) - 0.5f);
    const float mouth_open = 0.2f + 0.8f * u(rng);
    const float blink = u(rng) < 0.12f ? 0.35f : 1.f;
    const float bg_tilt = 0.6f * (u(rng) - 0.5f);
    float cj[3];
    for (auto& c : cj) c = 0.05f * (u(rng) - 0.5f);
    // smooth noise field: few random cosines
    float a1 = u(rng) * 6.28f, a2 = u(rng) * 6.28f, f1 = 1.f + 2.f * u(rng), f2 = 1.f + 2.f * u(rng);

    const float cx = 0.5f + jx, cy = 0.54f + jy;
    const float fw = f.face_w * sc, fh = f.face_h * sc;

    Tensor<T> img({3, H, W});
    for (int py = 0; py < H; ++py) {
        for (int px = 0; px < W; ++px) {
            const float x = (px + 0.5f) / W, y = (py + 0.5f) / H;
            float col[3];
            const float t = detail::smoothstep01(y + bg_tilt * (x - 0.5f));
            for (int c = 0; c < 3; ++c) col[c] = f.bg_a[c] * (1 - t) + f.bg_b[c] * t;

            auto blend = [&](const float* rgb, float alpha) {
                for (int c = 0; c < 3; ++c) col[c] = col[c] * (1 - alpha) + rgb[c] * alpha;
            };

            // hair cap behind the face
            const float ha = detail::ellipse_alpha(x, y, cx, cy - 0.08f * sc, fw * 1.22f, fh * 1.18f);
            const float below = detail::smoothstep01((y - (cy + f.hair_drop * sc - 0.5f * fh)) / 0.05f);
            blend(f.hair, ha * (1.f - below));
            // face
            blend(f.skin, detail::ellipse_alpha(x, y, cx, cy, fw, fh));
            // eyes
            const float ey = cy - (0.54f - f.eye_y) * sc;
            const float white[3] = {0.97f, 0.97f, 0.97f};
            const float dark[3] = {0.05f, 0.05f, 0.06f};
            for (int side = -1; side <= 1; side += 2) {
                const float ex = cx + side * f.eye_dx * sc;
                blend(white, detail::ellipse_alpha(x, y, ex, ey, f.eye_r * 1.6f, f.eye_r * blink));
                blend(f.iris, detail::ellipse_alpha(x, y, ex, ey, f.eye_r * 0.8f, f.eye_r * 0.8f * blink));
                if (f.glasses) {
                    const float ring = detail::ellipse_alpha(x, y, ex, ey, f.eye_r * 2.3f, f.eye_r * 2.0f) -
                                       detail::ellipse_alpha(x, y, ex, ey, f.eye_r * 1.9f, f.eye_r * 1.6f);
                    blend(dark, std::clamp(ring, 0.f, 1.f) * 0.8f);
                }
            }
            // nose
            const float nose[3] = {f.skin[0] * 0.82f, f.skin[1] * 0.80f, f.skin[2] * 0.80f};
            blend(nose, detail::ellipse_alpha(x, y, cx, cy + 0.04f * sc, 0.022f * sc, 0.05f * sc));
            // mouth
            const float lips[3] = {0.72f, 0.22f, 0.24f};
            const float my = cy + (f.mouth_y - 0.54f) * sc;
            blend(lips, detail::ellipse_alpha(x, y, cx, my, f.mouth_w * sc, 0.016f + 0.022f * mouth_open));

            const float nz = 0.012f * (std::cos(6.28f * f1 * x + a1) * std::cos(6.28f * f2 * y + a2));
            for (int c = 0; c < 3; ++c)
                img[(static_cast<std::int64_t>(c) * H + py) * W + px] =
                    static_cast<T>(std::clamp(col[c] + bright + cj[c] + nz, 0.f, 1.f));
        }
    }
    return img;
}

/// Writes a subfolder-per-identity PPM tree.
inline void synthesize_face_dataset(const std::filesystem::path& root, int n_identities, int per_identity,
                                    int size, std::uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(root);
    for (int id = 0; id < n_identities; ++id) {
        char dname[32];
        std::snprintf(dname, sizeof(dname), "id_%03d", id);
        fs::create_directories(root / dname);
        const FaceIdentity f = make_identity(id, seed);
        for (int j = 0; j < per_identity; ++j) {
            Rng rng(substream_seed(seed, "img/" + std::to_string(id) + "/" + std::to_string(j)));
            auto img = render_face<float>(f, size, size, rng);
            char fname[32];
            std::snprintf(fname, sizeof(fname), "img_%04d.ppm", j);
            write_ppm(root / dname / fname, img);
        }
    }
}

// ---------------------------------------------------------------------------
// Loading and splitting
// ---------------------------------------------------------------------------

template <class T = float>
struct Dataset {
    Tensor<T> images; // N x C x H x W
    std::vector<int> labels;
    std::vector<std::string> identity_names;

    int count() const { return images.empty() ? 0 : images.dim(0); }
    int n_identities() const { return static_cast<int>(identity_names.size()); }

    Tensor<T> image(int i) const {
        const int C = images.dim(1), H = images.dim(2), W = images.dim(3);
        Tensor<T> out({C, H, W});
        std::copy(images.data() + static_cast<std::int64_t>(i) * C * H * W,
                  images.data() + static_cast<std::int64_t>(i + 1) * C * H * W, out.data());
        return out;
    }
};

template <class T = float>
struct SplitDataset {
    Dataset<T> train, test;
};

/// Reads a subfolder-per-identity tree, resizes to (3, H, W), normalizes to
/// [0,1] and splits train:test = split_ratio:1 with a seed-deterministic
/// shuffle.
template <class T = float>
SplitDataset<T> load_dataset(const std::filesystem::path& path, int out_h, int out_w,
                             double split_ratio, std::uint64_t seed) {
    namespace fs = std::filesystem;
    if (!fs::exists(path)) throw EmptyDataset("dataset path does not exist: " + path.string());
    std::vector<std::string> classes;
    bool stray_files = false;
    for (const auto& e : fs::directory_iterator(path)) {
        if (e.is_directory())
            classes.push_back(e.path().filename().string());
        else
            stray_files = true;
    }
    std::sort(classes.begin(), classes.end());
    if (classes.empty()) {
        if (stray_files) throw MissingLabels("images without identity subfolders in " + path.string());
        throw EmptyDataset("no identity folders in " + path.string());
    }

    std::vector<std::pair<std::string, int>> files; // path, label
    for (int label = 0; label < static_cast<int>(classes.size()); ++label) {
        std::vector<std::string> imgs;
        for (const auto& e : fs::directory_iterator(path / classes[static_cast<std::size_t>(label)]))
            if (e.is_regular_file()) imgs.push_back(e.path().string());
        std::sort(imgs.begin(), imgs.end());
        for (auto& p : imgs) files.emplace_back(std::move(p), label);
    }
    if (files.empty()) throw EmptyDataset("no images under " + path.string());

    std::vector<int> order(files.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(substream_seed(seed, "split"));
    std::shuffle(order.begin(), order.end(), rng);

    const int total = static_cast<int>(files.size());
    const int n_test = std::max(1, static_cast<int>(std::lround(total / (split_ratio + 1.0))));

    auto build = [&](int from, int to) {
        Dataset<T> d;
        d.identity_names = classes;
        const int n = to - from;
        d.images = Tensor<T>({n, 3, out_h, out_w});
        d.labels.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const auto& [fpath, label] = files[static_cast<std::size_t>(order[static_cast<std::size_t>(from + i)])];
            auto img = resize_bilinear(read_ppm<T>(fpath), out_h, out_w);
            std::copy(img.data(), img.data() + img.size(),
                      d.images.data() + static_cast<std::int64_t>(i) * img.size());
            d.labels[static_cast<std::size_t>(i)] = label;
        }
        return d;
    };
    SplitDataset<T> out;
    out.test = build(0, n_test);
    out.train = build(n_test, total);
    return out;
}

/// Stacks selected images into a batch tensor.
template <class T>
Tensor<T> gather_batch(const Dataset<T>& d, const std::vector<int>& idx) {
    const int C = d.images.dim(1), H = d.images.dim(2), W = d.images.dim(3);
    Tensor<T> out({static_cast<int>(idx.size()), C, H, W});
    const std::int64_t stride = static_cast<std::int64_t>(C) * H * W;
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(d.images.data() + idx[i] * stride, d.images.data() + (idx[i] + 1) * stride,
                  out.data() + static_cast<std::int64_t>(i) * stride);
    return out;
}

} // namespace semsec
