#include "ardx/emit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ardx {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string artifact_header(const std::string& experiment, uint64_t seed) {
    std::ostringstream os;
    os << "# " << kArtifactVersion << " experiment=" << experiment << " seed=" << seed << "\n";
    return os.str();
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("emit: cannot open " + path + " for writing");
    return f;
}

void finish_out(std::ofstream& f, const std::string& path) {
    f.flush();
    if (!f) throw std::runtime_error("emit: write failed for " + path);
}

} // namespace

void emit_train_report_csv(const std::string& path, const TrainReport& report,
                           const std::string& experiment, uint64_t seed) {
    std::ofstream f = open_out(path);
    f << artifact_header(experiment, seed);
    f << "step,nll_nats,bits_per_dim\n";
    for (const StepStat& s : report.steps)
        f << s.step << "," << fmt17(s.nll_nats) << "," << fmt17(s.bits_per_dim) << "\n";
    finish_out(f, path);
}

void emit_trajectory_csv(const std::string& path, const OptimizeResult& result,
                         const std::string& experiment, uint64_t seed) {
    std::ofstream f = open_out(path);
    f << artifact_header(experiment, seed);
    f << "iteration,example,nll_bits_per_dim,grad_norm\n";
    for (const TrajectoryPoint& p : result.trajectory)
        for (size_t i = 0; i < p.nll_bits.size(); ++i)
            f << p.iteration << "," << i << "," << fmt17(p.nll_bits[i]) << ","
              << fmt17(p.grad_norm[i]) << "\n";
    finish_out(f, path);
}

void emit_field_csv(const std::string& path, const GradField& field,
                    const std::string& experiment, uint64_t seed) {
    std::ofstream f = open_out(path);
    f << artifact_header(experiment, seed);
    f << "x1,x2,norm\n";
    for (int i2 = 0; i2 < field.res2; ++i2)
        for (int i1 = 0; i1 < field.res1; ++i1)
            f << fmt17(field.x1_at(i1)) << "," << fmt17(field.x2_at(i2)) << ","
              << fmt17(field.at(i2, i1)) << "\n";
    finish_out(f, path);
}

GradField load_field_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("emit: cannot open " + path);
    std::string line;
    std::vector<double> x1s, x2s, norms;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("x1,", 0) == 0) continue;
        std::istringstream is(line);
        std::string a, b, c;
        std::getline(is, a, ',');
        std::getline(is, b, ',');
        std::getline(is, c);
        x1s.push_back(std::stod(a));
        x2s.push_back(std::stod(b));
        norms.push_back(std::stod(c));
    }
    if (norms.empty()) throw std::runtime_error("emit: field csv " + path + " is empty");
    GradField g;
    int res1 = 0;
    while (res1 < int(x1s.size()) && !(res1 > 0 && x1s[size_t(res1)] == x1s[0])) ++res1;
    g.res1 = res1;
    g.res2 = int(norms.size()) / res1;
    if (g.res1 * g.res2 != int(norms.size()))
        throw std::runtime_error("emit: field csv " + path + " is not a full grid");
    g.x1_lo = x1s.front();
    g.x1_hi = x1s[size_t(res1 - 1)];
    g.x2_lo = x2s.front();
    g.x2_hi = x2s.back();
    g.norms = std::move(norms);
    return g;
}

void emit_matrix_csv(const std::string& path, const DetectionMatrix& matrix,
                     const std::string& experiment, uint64_t seed) {
    std::ofstream f = open_out(path);
    f << artifact_header(experiment, seed);
    f << "dataset";
    for (const auto& c : matrix.col_names) f << "," << c;
    f << "\n";
    for (size_t r = 0; r < matrix.row_names.size(); ++r) {
        f << matrix.row_names[r];
        for (size_t c = 0; c < matrix.col_names.size(); ++c)
            f << "," << fmt17(matrix.at(int(r), int(c)));
        f << "\n";
    }
    finish_out(f, path);
}

DetectionMatrix load_matrix_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("emit: cannot open " + path);
    std::string line;
    DetectionMatrix m;
    bool have_header = false;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream is(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(is, cell, ',')) cells.push_back(cell);
        if (!have_header) {
            have_header = true;
            for (size_t i = 1; i < cells.size(); ++i) m.col_names.push_back(cells[i]);
            continue;
        }
        m.row_names.push_back(cells[0]);
        for (size_t i = 1; i < cells.size(); ++i) m.percent.push_back(std::stod(cells[i]));
    }
    if (!have_header) throw std::runtime_error("emit: matrix csv " + path + " has no header");
    return m;
}

std::string render_table(const DetectionMatrix& matrix) {
    size_t name_w = std::strlen("Dataset");
    for (const auto& r : matrix.row_names) name_w = std::max(name_w, r.size());
    std::vector<size_t> col_w;
    for (const auto& c : matrix.col_names) col_w.push_back(std::max<size_t>(c.size(), 6));
    std::ostringstream os;
    os << std::string(name_w - std::strlen("Dataset"), ' ') << "Dataset";
    for (size_t c = 0; c < matrix.col_names.size(); ++c)
        os << "  " << std::string(col_w[c] - matrix.col_names[c].size(), ' ')
           << matrix.col_names[c];
    os << "\n";
    for (size_t r = 0; r < matrix.row_names.size(); ++r) {
        os << std::string(name_w - matrix.row_names[r].size(), ' ') << matrix.row_names[r];
        for (size_t c = 0; c < matrix.col_names.size(); ++c) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.1f%%", matrix.at(int(r), int(c)));
            os << "  " << std::string(col_w[c] - std::strlen(buf), ' ') << buf;
        }
        os << "\n";
    }
    return os.str();
}

void emit_table(const std::string& path, const DetectionMatrix& matrix) {
    std::ofstream f = open_out(path);
    f << render_table(matrix);
    finish_out(f, path);
}

namespace {

// three-stop monotone ramp, dark to light
void ramp_color(double t, int& r, int& g, int& b) {
    t = std::clamp(t, 0.0, 1.0);
    const int stops[3][3] = {{0, 0, 16}, {196, 78, 82}, {255, 250, 210}};
    const double seg = t * 2.0;
    const int k = seg < 1.0 ? 0 : 1;
    const double u = seg - k;
    r = int(std::lround(stops[k][0] + u * (stops[k + 1][0] - stops[k][0])));
    g = int(std::lround(stops[k][1] + u * (stops[k + 1][1] - stops[k][1])));
    b = int(std::lround(stops[k][2] + u * (stops[k + 1][2] - stops[k][2])));
}

} // namespace

void emit_svg_heatmap(const std::string& path, const GradField& field,
                      const std::string& experiment, uint64_t seed) {
    const int cell = 6, margin = 34;
    const int w = field.res1 * cell + 2 * margin;
    const int h = field.res2 * cell + 2 * margin;
    double vmax = 0.0;
    for (double v : field.norms) vmax = std::max(vmax, v);
    if (vmax <= 0.0) vmax = 1.0;

    std::ofstream f = open_out(path);
    f << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    f << "<!-- " << kArtifactVersion << " experiment=" << experiment << " seed=" << seed
      << " -->\n";
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
    f << "<style>text { font: 9px sans-serif; fill: #333; }</style>\n";
    for (int i2 = 0; i2 < field.res2; ++i2)
        for (int i1 = 0; i1 < field.res1; ++i1) {
            int r, g, b;
            ramp_color(field.at(i2, i1) / vmax, r, g, b);
            // y axis points up: row 0 (x2_lo) lands at the bottom
            f << "<rect class=\"cell\" x=\"" << margin + i1 * cell << "\" y=\""
              << margin + (field.res2 - 1 - i2) * cell << "\" width=\"" << cell << "\" height=\""
              << cell << "\" fill=\"rgb(" << r << "," << g << "," << b << ")\"/>\n";
        }
    f << "<text x=\"" << margin << "\" y=\"" << h - margin + 12 << "\">x1 = " << field.x1_lo
      << "</text>\n";
    f << "<text x=\"" << margin + field.res1 * cell - 30 << "\" y=\"" << h - margin + 12
      << "\">x1 = " << field.x1_hi << "</text>\n";
    f << "<text x=\"" << 2 << "\" y=\"" << h - margin << "\">x2 = " << field.x2_lo
      << "</text>\n";
    f << "<text x=\"" << 2 << "\" y=\"" << margin + 8 << "\">x2 = " << field.x2_hi
      << "</text>\n";
    f << "<text x=\"" << margin << "\" y=\"" << margin - 6 << "\">max norm = " << fmt17(vmax)
      << "</text>\n";
    f << "</svg>\n";
    finish_out(f, path);
}

namespace {

unsigned char quantize(double v, const BinSpec& bins) {
    const double t = (v - bins.lo) / (bins.hi - bins.lo) * 255.0;
    return (unsigned char)std::clamp(int(std::lround(t)), 0, 255);
}

} // namespace

void write_pgm(const std::string& path, const Tensor& image, const BinSpec& bins) {
    Shape s = image.shape;
    if (s.size() == 3 && s[0] == 1) s = {s[1], s[2]};
    if (s.size() != 2) throw std::invalid_argument("write_pgm: expects [H,W] or [1,H,W]");
    std::ofstream f = open_out(path);
    f << "P5\n# " << kArtifactVersion << "\n" << s[1] << " " << s[0] << "\n255\n";
    std::vector<unsigned char> bytes(image.data.size());
    for (size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize(image[size_t(i)], bins);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    finish_out(f, path);
}

void write_ppm(const std::string& path, const Tensor& image, const BinSpec& bins) {
    if (image.ndim() != 3 || image.shape[0] != 3)
        throw std::invalid_argument("write_ppm: expects [3,H,W]");
    const int h = image.shape[1], w = image.shape[2];
    std::ofstream f = open_out(path);
    f << "P6\n# " << kArtifactVersion << "\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> bytes(size_t(3) * h * w);
    for (int p = 0; p < h * w; ++p)
        for (int c = 0; c < 3; ++c)
            bytes[size_t(p) * 3 + c] = quantize(image[size_t(c) * h * w + p], bins);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    finish_out(f, path);
}

Tensor hconcat_images(const std::vector<Tensor>& images) {
    if (images.empty()) throw std::invalid_argument("hconcat_images: empty");
    const int c = images[0].shape[0], h = images[0].shape[1];
    int total_w = 0;
    for (const Tensor& im : images) {
        if (im.ndim() != 3 || im.shape[0] != c || im.shape[1] != h)
            throw std::invalid_argument("hconcat_images: shape mismatch");
        total_w += im.shape[2];
    }
    Tensor out(Shape{c, h, total_w});
    int xoff = 0;
    for (const Tensor& im : images) {
        const int w = im.shape[2];
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    out[(size_t(ci) * h + y) * total_w + xoff + x] =
                        im[(size_t(ci) * h + y) * w + x];
        xoff += w;
    }
    return out;
}

} // namespace ardx
