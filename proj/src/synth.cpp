#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "shiftforge/data.hpp"

// Procedural stand-in corpora for offline runs: stroke-rendered digits in the
// MNIST IDX layout and textured colour shapes in the CIFAR-10 binary layout.
// Both are deliberately noisy (affine jitter, elastic wobble, sensor noise)
// so that classifiers neither saturate instantly nor stall.

namespace shiftforge {

namespace {

struct Vec2 {
    float x, y;
};

struct Stroke {
    std::vector<Vec2> pts;  // polyline in design space [0,1]^2, y down
};

void arc(Stroke& s, float cx, float cy, float rx, float ry, float a0_deg, float a1_deg, int n = 14) {
    for (int i = 0; i <= n; ++i) {
        float a = (a0_deg + (a1_deg - a0_deg) * i / n) * 3.14159265f / 180.0f;
        s.pts.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
    }
}

void bezier(Stroke& s, Vec2 p0, Vec2 c, Vec2 p1, int n = 12) {
    for (int i = 0; i <= n; ++i) {
        float t = static_cast<float>(i) / n;
        float u = 1.0f - t;
        s.pts.push_back({u * u * p0.x + 2 * u * t * c.x + t * t * p1.x,
                         u * u * p0.y + 2 * u * t * c.y + t * t * p1.y});
    }
}

void line(Stroke& s, Vec2 a, Vec2 b) {
    s.pts.push_back(a);
    s.pts.push_back(b);
}

// glyph variants: a few digits have alternate forms picked per sample
std::vector<Stroke> digit_strokes(int digit, Rng& rng) {
    std::vector<Stroke> g;
    auto stroke = [&]() -> Stroke& {
        g.emplace_back();
        return g.back();
    };
    switch (digit) {
        case 0:
            arc(stroke(), 0.5f, 0.5f, 0.24f + rng.uniform(-0.02f, 0.03f),
                0.35f + rng.uniform(-0.03f, 0.03f), 0, 360, 22);
            break;
        case 1: {
            float top = 0.14f;
            Stroke& s = stroke();
            s.pts.push_back({0.36f, 0.30f});
            s.pts.push_back({0.53f, top});
            s.pts.push_back({0.53f, 0.87f});
            if (rng.uniform(0, 1) < 0.4f) line(stroke(), {0.38f, 0.87f}, {0.68f, 0.87f});
            break;
        }
        case 2: {
            arc(stroke(), 0.5f, 0.33f, 0.20f, 0.19f, 180, 385, 16);
            line(stroke(), {0.66f, 0.45f}, {0.30f, 0.84f});
            line(stroke(), {0.30f, 0.84f}, {0.73f, 0.84f});
            break;
        }
        case 3:
            arc(stroke(), 0.47f, 0.33f, 0.19f, 0.18f, 215, 450, 16);
            arc(stroke(), 0.47f, 0.67f, 0.21f, 0.19f, -90, 140, 16);
            break;
        case 4: {
            float vx = 0.60f + rng.uniform(-0.03f, 0.03f);
            line(stroke(), {vx, 0.14f}, {vx, 0.88f});
            line(stroke(), {vx, 0.14f}, {0.27f, 0.60f});
            line(stroke(), {0.27f, 0.60f}, {0.79f, 0.60f});
            break;
        }
        case 5: {
            line(stroke(), {0.69f, 0.15f}, {0.34f, 0.15f});
            line(stroke(), {0.34f, 0.15f}, {0.32f, 0.45f});
            arc(stroke(), 0.47f, 0.64f, 0.21f, 0.20f, -100, 150, 16);
            break;
        }
        case 6: {
            bezier(stroke(), {0.66f, 0.13f}, {0.36f, 0.18f}, {0.31f, 0.58f});
            arc(stroke(), 0.50f, 0.65f, 0.20f, 0.19f, 0, 360, 20);
            break;
        }
        case 7: {
            line(stroke(), {0.29f, 0.16f}, {0.73f, 0.16f});
            line(stroke(), {0.73f, 0.16f}, {0.42f, 0.88f});
            if (rng.uniform(0, 1) < 0.35f) line(stroke(), {0.38f, 0.52f}, {0.62f, 0.52f});
            break;
        }
        case 8:
            arc(stroke(), 0.50f, 0.33f, 0.17f, 0.19f, 0, 360, 20);
            arc(stroke(), 0.50f, 0.68f, 0.20f, 0.20f, 0, 360, 20);
            break;
        case 9: {
            arc(stroke(), 0.51f, 0.36f, 0.19f, 0.20f, 0, 360, 20);
            bezier(stroke(), {0.70f, 0.40f}, {0.72f, 0.62f}, {0.50f, 0.88f});
            break;
        }
        default: throw ConfigError("digit out of range");
    }
    return g;
}

float dist_to_segment(Vec2 p, Vec2 a, Vec2 b) {
    float vx = b.x - a.x, vy = b.y - a.y;
    float wx = p.x - a.x, wy = p.y - a.y;
    float len2 = vx * vx + vy * vy;
    float t = len2 > 0 ? std::clamp((wx * vx + wy * vy) / len2, 0.0f, 1.0f) : 0.0f;
    float dx = wx - t * vx, dy = wy - t * vy;
    return std::sqrt(dx * dx + dy * dy);
}

float dist_to_strokes(Vec2 p, const std::vector<Stroke>& strokes) {
    float d = 1e9f;
    for (const Stroke& s : strokes)
        for (size_t i = 0; i + 1 < s.pts.size(); ++i)
            d = std::min(d, dist_to_segment(p, s.pts[i], s.pts[i + 1]));
    return d;
}

void render_digit(int digit, Rng& rng, uint8_t* out /*28x28*/) {
    std::vector<Stroke> strokes = digit_strokes(digit, rng);
    float rot = rng.uniform(-0.30f, 0.30f);  // radians, ~17 deg
    float shear = rng.uniform(-0.15f, 0.15f);
    float sx = rng.uniform(0.78f, 1.12f);
    float sy = sx * rng.uniform(0.9f, 1.1f);
    float tx = rng.uniform(-2.2f, 2.2f);
    float ty = rng.uniform(-2.2f, 2.2f);
    float radius = rng.uniform(0.042f, 0.085f);
    float intensity = rng.uniform(0.78f, 1.0f);
    float wob_amp = rng.uniform(0.015f, 0.06f);
    float wob_fx = rng.uniform(1.0f, 2.5f), wob_fy = rng.uniform(1.0f, 2.5f);
    float wob_px = rng.uniform(0.0f, 6.28f), wob_py = rng.uniform(0.0f, 6.28f);
    float noise_sigma = rng.uniform(0.08f, 0.20f);

    float ca = std::cos(rot), sa = std::sin(rot);
    float img[28 * 28];
    for (int y = 0; y < 28; ++y)
        for (int x = 0; x < 28; ++x) {
            // pixel -> centred -> inverse affine -> design space
            float px = (x + 0.5f - 14.0f - tx);
            float py = (y + 0.5f - 14.0f - ty);
            float rx = (ca * px + sa * py) / (20.0f * sx);
            float ry = (-sa * px + ca * py) / (20.0f * sy);
            rx -= shear * ry;
            float gx = rx + 0.5f, gy = ry + 0.5f;
            gx += wob_amp * std::sin(6.28318f * (wob_fx * gy) + wob_px);
            gy += wob_amp * std::sin(6.28318f * (wob_fy * gx) + wob_py);
            float d = dist_to_strokes({gx, gy}, strokes);
            float aa = 0.03f;
            float cov = std::clamp((radius - d) / aa * 0.5f + 0.5f, 0.0f, 1.0f);
            img[y * 28 + x] = intensity * cov;
        }
    for (int i = 0; i < 28 * 28; ++i) {
        float v = img[i] + rng.normal(0.0f, noise_sigma);
        out[i] = static_cast<uint8_t>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f);
    }
}

void write_be32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<char*>(b), 4);
}

void write_idx_pair(const std::string& dir, const std::string& img_name,
                    const std::string& lbl_name, const std::vector<uint8_t>& pixels,
                    const std::vector<uint8_t>& labels, uint32_t rows, uint32_t cols) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream os(fs::path(dir) / img_name, std::ios::binary);
        if (!os) throw IoError("cannot write dataset under '" + dir + "'");
        write_be32(os, 0x00000803);
        write_be32(os, static_cast<uint32_t>(labels.size()));
        write_be32(os, rows);
        write_be32(os, cols);
        os.write(reinterpret_cast<const char*>(pixels.data()),
                 static_cast<std::streamsize>(pixels.size()));
    }
    {
        std::ofstream os(fs::path(dir) / lbl_name, std::ios::binary);
        write_be32(os, 0x00000801);
        write_be32(os, static_cast<uint32_t>(labels.size()));
        os.write(reinterpret_cast<const char*>(labels.data()),
                 static_cast<std::streamsize>(labels.size()));
    }
}

void make_digit_split(size_t n, Rng& rng, std::vector<uint8_t>& pixels,
                      std::vector<uint8_t>& labels) {
    pixels.resize(n * 28 * 28);
    labels.resize(n);
    for (size_t i = 0; i < n; ++i) {
        int digit = static_cast<int>(i % 10);  // balanced classes
        labels[i] = static_cast<uint8_t>(digit);
        render_digit(digit, rng, pixels.data() + i * 28 * 28);
    }
    // shuffle jointly so batches are class-mixed even without sampler shuffling
    for (size_t i = n; i > 1; --i) {
        size_t j = rng.index(i);
        std::swap(labels[i - 1], labels[j]);
        for (int k = 0; k < 28 * 28; ++k)
            std::swap(pixels[(i - 1) * 784 + static_cast<size_t>(k)],
                      pixels[j * 784 + static_cast<size_t>(k)]);
    }
}

}  // namespace

void write_synthetic_mnist(const std::string& dir, size_t train_n, size_t test_n, uint64_t seed) {
    Rng rng(seed);
    std::vector<uint8_t> pixels, labels;
    make_digit_split(train_n, rng, pixels, labels);
    write_idx_pair(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", pixels, labels, 28, 28);
    Rng rng_test(seed + 7777);
    make_digit_split(test_n, rng_test, pixels, labels);
    write_idx_pair(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", pixels, labels, 28, 28);
}

// ---- colour shapes in the CIFAR-10 binary layout ----

namespace {

struct ShapeParams {
    float cx, cy, size, rot;
};

float shape_mask(int cls, float x, float y, const ShapeParams& sp) {
    // x,y in pixel coords; returns coverage in [0,1]
    float dx = x - sp.cx, dy = y - sp.cy;
    float ca = std::cos(sp.rot), sa = std::sin(sp.rot);
    float rx = ca * dx + sa * dy, ry = -sa * dx + ca * dy;
    float s = sp.size;
    auto soft = [](float signed_dist) { return std::clamp(0.5f - signed_dist, 0.0f, 1.0f); };
    switch (cls) {
        case 0: {  // disc
            return soft(std::sqrt(rx * rx + ry * ry) - s);
        }
        case 1: {  // filled square
            return soft(std::max(std::fabs(rx), std::fabs(ry)) - s);
        }
        case 2: {  // triangle (equilateral, pointing up)
            float d = std::max({ry - s * 0.8f, -0.866f * rx - 0.5f * ry - s * 0.5f,
                                0.866f * rx - 0.5f * ry - s * 0.5f});
            return soft(d);
        }
        case 3: {  // ring
            float r = std::sqrt(rx * rx + ry * ry);
            return soft(std::fabs(r - s * 0.85f) - s * 0.3f);
        }
        case 4: {  // plus
            float bar = s * 0.36f;
            float d1 = std::max(std::fabs(rx) - bar, std::fabs(ry) - s);
            float d2 = std::max(std::fabs(ry) - bar, std::fabs(rx) - s);
            return soft(std::min(d1, d2));
        }
        case 5: {  // diamond (L1 ball)
            return soft((std::fabs(rx) + std::fabs(ry)) - s * 1.2f);
        }
        case 6: {  // five-spoke star
            float best = 1e9f;
            for (int k = 0; k < 5; ++k) {
                float a = 6.28318f * k / 5.0f;
                float ux = std::cos(a), uy = std::sin(a);
                float t = std::clamp(rx * ux + ry * uy, 0.0f, s);
                float ddx = rx - t * ux, ddy = ry - t * uy;
                best = std::min(best, std::sqrt(ddx * ddx + ddy * ddy) - s * 0.28f);
            }
            return soft(best);
        }
        case 7: {  // horizontal stripes inside a square window
            float win = std::max(std::fabs(rx), std::fabs(ry)) - s;
            float phase = std::sin(ry * 3.14159f / (s * 0.45f));
            return soft(win) * (phase > 0 ? 1.0f : 0.0f);
        }
        case 8: {  // vertical stripes
            float win = std::max(std::fabs(rx), std::fabs(ry)) - s;
            float phase = std::sin(rx * 3.14159f / (s * 0.45f));
            return soft(win) * (phase > 0 ? 1.0f : 0.0f);
        }
        case 9: {  // checkerboard
            float win = std::max(std::fabs(rx), std::fabs(ry)) - s;
            float px = std::sin(rx * 3.14159f / (s * 0.55f));
            float py = std::sin(ry * 3.14159f / (s * 0.55f));
            return soft(win) * (px * py > 0 ? 1.0f : 0.0f);
        }
        default: throw ConfigError("shape class out of range");
    }
}

void render_shape(int cls, Rng& rng, uint8_t* out /*3 planes x 1024*/) {
    ShapeParams sp;
    sp.cx = 16.0f + rng.uniform(-5.0f, 5.0f);
    sp.cy = 16.0f + rng.uniform(-5.0f, 5.0f);
    sp.size = rng.uniform(6.5f, 11.0f);
    // orientation-carrying classes (stripes, checker, square vs diamond) keep
    // a bounded tilt, otherwise rotation would alias them into each other
    bool oriented = cls == 1 || cls == 5 || cls >= 7;
    sp.rot = oriented ? rng.uniform(-0.30f, 0.30f) : rng.uniform(0.0f, 6.28318f);

    float bg[3], fg[3];
    for (int c = 0; c < 3; ++c) bg[c] = rng.uniform(0.05f, 0.95f);
    // draw a foreground colour with guaranteed contrast
    float dist2;
    do {
        dist2 = 0.0f;
        for (int c = 0; c < 3; ++c) {
            fg[c] = rng.uniform(0.05f, 0.95f);
            dist2 += (fg[c] - bg[c]) * (fg[c] - bg[c]);
        }
    } while (dist2 < 0.25f);
    // low-frequency background gradient
    float gx = rng.uniform(-0.01f, 0.01f), gy = rng.uniform(-0.01f, 0.01f);
    float noise_sigma = rng.uniform(0.02f, 0.06f);
    // distractor segment of a third colour
    bool distract = rng.uniform(0, 1) < 0.5f;
    Vec2 da{rng.uniform(2.0f, 30.0f), rng.uniform(2.0f, 30.0f)};
    Vec2 db{rng.uniform(2.0f, 30.0f), rng.uniform(2.0f, 30.0f)};
    float dc[3] = {rng.uniform(0.0f, 1.0f), rng.uniform(0.0f, 1.0f), rng.uniform(0.0f, 1.0f)};

    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            float m = shape_mask(cls, x + 0.5f, y + 0.5f, sp);
            float dseg = distract ? dist_to_segment({x + 0.5f, y + 0.5f}, da, db) : 1e9f;
            float dm = std::clamp(1.5f - dseg, 0.0f, 1.0f) * 0.8f;
            for (int c = 0; c < 3; ++c) {
                float base = bg[c] + gx * (x - 16) + gy * (y - 16);
                float v = base * (1 - m) + fg[c] * m;
                v = v * (1 - dm) + dc[c] * dm;
                v += rng.normal(0.0f, noise_sigma);
                out[c * 1024 + y * 32 + x] =
                    static_cast<uint8_t>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f);
            }
        }
}

void write_cifar_batch(const std::string& path, const std::vector<uint8_t>& records) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write '" + path + "'");
    os.write(reinterpret_cast<const char*>(records.data()),
             static_cast<std::streamsize>(records.size()));
}

std::vector<uint8_t> make_shape_records(size_t n, Rng& rng) {
    const size_t rec = 1 + 3072;
    std::vector<uint8_t> records(n * rec);
    std::vector<int> classes(n);
    for (size_t i = 0; i < n; ++i) classes[i] = static_cast<int>(i % 10);
    rng.shuffle(classes);
    for (size_t i = 0; i < n; ++i) {
        records[i * rec] = static_cast<uint8_t>(classes[i]);
        render_shape(classes[i], rng, records.data() + i * rec + 1);
    }
    return records;
}

}  // namespace

void write_synthetic_cifar(const std::string& dir, size_t train_n, size_t test_n, uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    Rng rng(seed);
    // spread the train split over the canonical five batch files
    size_t per = (train_n + 4) / 5;
    size_t written = 0;
    for (int b = 1; b <= 5; ++b) {
        size_t n = std::min(per, train_n - written);
        if (n == 0) n = 1;  // loaders reject empty files; keep every batch non-empty
        write_cifar_batch((fs::path(dir) / ("data_batch_" + std::to_string(b) + ".bin")).string(),
                          make_shape_records(n, rng));
        written += n;
    }
    Rng rng_test(seed + 1313);
    write_cifar_batch((fs::path(dir) / "test_batch.bin").string(),
                      make_shape_records(test_n, rng_test));
}

}  // namespace shiftforge
