#include "ardx/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "ardx/rng.hpp"
#include "ardx/sample_opt.hpp"

namespace ardx {

void Dataset::validate() const {
    if (!labels.empty() && int(labels.size()) != size())
        throw std::invalid_argument("Dataset " + name + ": labels do not align with examples");
    for (double v : examples.data)
        if (v < bins.lo || v > bins.hi)
            throw std::invalid_argument("Dataset " + name + ": value outside bin coverage");
}

Dataset gen_manifold2d(int n, uint64_t seed, const BinSpec& bins) {
    if (n < 1) throw std::invalid_argument("gen_manifold2d: n must be >= 1");
    Rng rng(seed);
    Dataset d;
    d.name = "manifold2d";
    d.bins = bins;
    d.provenance = "synthetic: x1 = 0, x2 ~ N(0,1) snapped to the grid";
    d.examples = Tensor(Shape{n, 2});
    for (int i = 0; i < n; ++i) {
        d.examples[size_t(i) * 2] = 0.0;
        d.examples[size_t(i) * 2 + 1] = bins.snap(rng.normal());
    }
    return d;
}

static const double kPalette[6][3] = {
    {1.0, 0.3, 0.3}, {0.3, 1.0, 0.3}, {0.3, 0.3, 1.0},
    {1.0, 1.0, 0.3}, {1.0, 0.3, 1.0}, {0.3, 1.0, 1.0},
};

Dataset colorize_mnist(const Dataset& gray, uint64_t seed) {
    const Shape& s = gray.examples.shape;
    if (s.size() != 4 || s[1] != 1)
        throw std::invalid_argument("colorize_mnist: expects grayscale images [N,1,H,W]");
    const int n = s[0], h = s[2], w = s[3];
    const BinSpec& bins = gray.bins;
    Rng rng(seed);
    Dataset d;
    d.name = gray.name + "_colorized";
    d.bins = bins;
    d.labels = gray.labels;
    d.provenance = "multiplicative tint of " + gray.name;
    d.examples = Tensor(Shape{n, 3, h, w});
    const double span = bins.hi - bins.lo;
    for (int i = 0; i < n; ++i) {
        const double* hue = kPalette[rng.uniform_int(6)];
        for (int c = 0; c < 3; ++c)
            for (int p = 0; p < h * w; ++p) {
                const double g = gray.examples[(size_t(i) * h * w) + size_t(p)];
                const double t = (g - bins.lo) / span;
                d.examples[((size_t(i) * 3 + c) * h + p / w) * w + p % w] =
                    bins.snap(bins.lo + span * t * hue[c]);
            }
    }
    return d;
}

Tensor channel_mean(const Tensor& rgb) {
    if (rgb.ndim() != 3 || rgb.shape[0] != 3)
        throw std::invalid_argument("channel_mean: expects [3,H,W]");
    const int h = rgb.shape[1], w = rgb.shape[2];
    Tensor out(Shape{1, h, w});
    for (int p = 0; p < h * w; ++p)
        out[size_t(p)] = (rgb[size_t(p)] + rgb[size_t(h * w + p)] + rgb[size_t(2 * h * w + p)]) / 3.0;
    return out;
}

namespace {

uint32_t read_be32(std::istream& f, size_t offset, const std::string& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f)
        throw std::runtime_error("IDX " + path + ": truncated at byte " + std::to_string(offset));
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_be32(std::ostream& f, uint32_t v) {
    const unsigned char b[4] = {(unsigned char)(v >> 24), (unsigned char)(v >> 16),
                                (unsigned char)(v >> 8), (unsigned char)v};
    f.write(reinterpret_cast<const char*>(b), 4);
}

std::string hex_magic(uint32_t m) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", m);
    return buf;
}

} // namespace

Dataset load_idx(const std::string& path, const BinSpec& bins) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("IDX: cannot open " + path);
    const uint32_t magic = read_be32(f, 0, path);
    if (magic != 0x00000803u)
        throw std::runtime_error("IDX " + path + ": magic " + hex_magic(magic) +
                                 " at byte 0 is not an image tensor (0x00000803)");
    const uint32_t n = read_be32(f, 4, path);
    const uint32_t h = read_be32(f, 8, path);
    const uint32_t w = read_be32(f, 12, path);
    const uint64_t total = uint64_t(n) * h * w;
    if (n == 0 || h == 0 || w == 0 || total > (1ull << 31))
        throw std::runtime_error("IDX " + path + ": dimension overflow at byte 4");
    std::vector<unsigned char> bytes(total);
    f.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(total));
    if (!f)
        throw std::runtime_error("IDX " + path + ": truncated payload at byte " +
                                 std::to_string(16 + f.gcount()));
    Dataset d;
    d.name = path;
    d.bins = bins;
    d.provenance = "idx:" + path;
    d.examples = Tensor(Shape{int(n), 1, int(h), int(w)});
    const double delta = (bins.hi - bins.lo) / 255.0;
    for (uint64_t i = 0; i < total; ++i) d.examples[size_t(i)] = bins.lo + double(bytes[i]) * delta;
    return d;
}

std::vector<int> load_idx_labels(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("IDX: cannot open " + path);
    const uint32_t magic = read_be32(f, 0, path);
    if (magic != 0x00000801u)
        throw std::runtime_error("IDX " + path + ": magic " + hex_magic(magic) +
                                 " at byte 0 is not a label vector (0x00000801)");
    const uint32_t n = read_be32(f, 4, path);
    if (n == 0 || n > (1u << 30))
        throw std::runtime_error("IDX " + path + ": dimension overflow at byte 4");
    std::vector<unsigned char> bytes(n);
    f.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(n));
    if (!f)
        throw std::runtime_error("IDX " + path + ": truncated payload at byte " +
                                 std::to_string(8 + f.gcount()));
    return std::vector<int>(bytes.begin(), bytes.end());
}

void save_idx(const std::string& path, const Tensor& images, const BinSpec& bins) {
    if (images.ndim() != 4 || images.shape[1] != 1)
        throw std::invalid_argument("save_idx: expects [N,1,H,W]");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("IDX: cannot open " + path + " for writing");
    write_be32(f, 0x00000803u);
    write_be32(f, uint32_t(images.shape[0]));
    write_be32(f, uint32_t(images.shape[2]));
    write_be32(f, uint32_t(images.shape[3]));
    const double span = bins.hi - bins.lo;
    std::vector<unsigned char> bytes(images.data.size());
    for (size_t i = 0; i < bytes.size(); ++i) {
        const double t = (images[size_t(i)] - bins.lo) / span * 255.0;
        bytes[i] = (unsigned char)std::clamp(int(std::lround(t)), 0, 255);
    }
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw std::runtime_error("IDX: write failed for " + path);
}

void save_idx_labels(const std::string& path, const std::vector<int>& labels) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("IDX: cannot open " + path + " for writing");
    write_be32(f, 0x00000801u);
    write_be32(f, uint32_t(labels.size()));
    for (int l : labels) {
        const unsigned char b = (unsigned char)std::clamp(l, 0, 255);
        f.write(reinterpret_cast<const char*>(&b), 1);
    }
    if (!f) throw std::runtime_error("IDX: write failed for " + path);
}

Dataset make_probe_images(const std::string& kind, int n, int channels, int height, int width,
                          const BinSpec& bins, uint64_t seed) {
    if (kind != "noise" && kind != "black" && kind != "white")
        throw std::invalid_argument("make_probe_images: unknown kind " + kind);
    Dataset d;
    d.name = kind;
    d.bins = bins;
    d.provenance = "probe:" + kind;
    d.examples = probe_start_set(probe_kind_from_string(kind), n, Shape{channels, height, width},
                                 bins, seed);
    return d;
}

namespace {

double stroke_coverage(double px, double py, double ax, double ay, double bx, double by,
                       double thickness) {
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
    const double dist = std::sqrt(dx * dx + dy * dy);
    return std::clamp(thickness - dist + 0.5, 0.0, 1.0); // 1px anti-aliasing band
}

} // namespace

Dataset gen_strokes(int n, int height, int width, uint64_t seed, const BinSpec& bins) {
    if (n < 1) throw std::invalid_argument("gen_strokes: n must be >= 1");
    Rng rng(seed);
    Dataset d;
    d.name = "strokes";
    d.bins = bins;
    d.provenance = "synthetic stroke images, label = stroke count - 1";
    d.examples = Tensor(Shape{n, 1, height, width});
    const double span = bins.hi - bins.lo;
    for (int i = 0; i < n; ++i) {
        const int n_strokes = 1 + rng.uniform_int(3);
        d.labels.push_back(n_strokes - 1);
        std::vector<std::array<double, 6>> strokes; // ax ay bx by thickness intensity
        for (int s = 0; s < n_strokes; ++s)
            strokes.push_back({rng.uniform(0.1, 0.9) * width, rng.uniform(0.1, 0.9) * height,
                               rng.uniform(0.1, 0.9) * width, rng.uniform(0.1, 0.9) * height,
                               rng.uniform(0.045, 0.09) * std::min(width, height),
                               rng.uniform(0.7, 1.0)});
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                double v = 0.0;
                for (const auto& st : strokes)
                    v = std::max(v, st[5] * stroke_coverage(x + 0.5, y + 0.5, st[0], st[1], st[2],
                                                            st[3], st[4]));
                d.examples[(size_t(i) * height + y) * width + x] = bins.snap(bins.lo + span * v);
            }
    }
    return d;
}

Dataset gen_blobs(int n, int height, int width, uint64_t seed, const BinSpec& bins) {
    if (n < 1) throw std::invalid_argument("gen_blobs: n must be >= 1");
    Rng rng(seed);
    Dataset d;
    d.name = "blobs";
    d.bins = bins;
    d.provenance = "synthetic blob images, label = blob count - 1";
    d.examples = Tensor(Shape{n, 1, height, width});
    const double span = bins.hi - bins.lo;
    for (int i = 0; i < n; ++i) {
        const int n_blobs = 1 + rng.uniform_int(3);
        d.labels.push_back(n_blobs - 1);
        std::vector<std::array<double, 4>> blobs; // cx cy radius intensity
        for (int s = 0; s < n_blobs; ++s)
            blobs.push_back({rng.uniform(0.2, 0.8) * width, rng.uniform(0.2, 0.8) * height,
                             rng.uniform(0.08, 0.2) * std::min(width, height),
                             rng.uniform(0.7, 1.0)});
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                double v = 0.0;
                for (const auto& bl : blobs) {
                    const double dx = x + 0.5 - bl[0], dy = y + 0.5 - bl[1];
                    v = std::max(v, bl[3] * std::exp(-(dx * dx + dy * dy) / (2.0 * bl[2] * bl[2])));
                }
                d.examples[(size_t(i) * height + y) * width + x] = bins.snap(bins.lo + span * v);
            }
    }
    return d;
}

static Dataset dataset_range(const Dataset& d, int from, int count, const std::string& name) {
    if (from < 0 || count < 1 || from + count > d.size())
        throw std::invalid_argument("dataset split: range out of bounds");
    Dataset out;
    out.name = name;
    out.bins = d.bins;
    out.provenance = d.provenance + " [" + std::to_string(from) + ":" +
                     std::to_string(from + count) + ")";
    Shape s = d.examples.shape;
    s[0] = count;
    out.examples = Tensor(s);
    const size_t m = out.examples.data.size() / size_t(count);
    std::memcpy(out.examples.data.data(), d.examples.data.data() + size_t(from) * m,
                out.examples.data.size() * sizeof(double));
    if (!d.labels.empty())
        out.labels.assign(d.labels.begin() + from, d.labels.begin() + from + count);
    return out;
}

Dataset dataset_head(const Dataset& d, int n, const std::string& name) {
    return dataset_range(d, 0, n, name);
}

Dataset dataset_tail(const Dataset& d, int n, const std::string& name) {
    return dataset_range(d, d.size() - n, n, name);
}

} // namespace ardx
