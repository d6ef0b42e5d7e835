#pragma once

#include <string>

#include "ardx/detect.hpp"
#include "ardx/sample_opt.hpp"
#include "ardx/train.hpp"

namespace ardx {

inline constexpr const char* kArtifactVersion = "ardx-v1";

// shortest round-trip decimal form (17 significant digits)
std::string fmt17(double v);

// Every emitted text artifact starts with a comment line naming the
// artifact version, the experiment kind, and the seed.
std::string artifact_header(const std::string& experiment, uint64_t seed);

void emit_train_report_csv(const std::string& path, const TrainReport& report,
                           const std::string& experiment, uint64_t seed);
void emit_trajectory_csv(const std::string& path, const OptimizeResult& result,
                         const std::string& experiment, uint64_t seed);
void emit_field_csv(const std::string& path, const GradField& field,
                    const std::string& experiment, uint64_t seed);
GradField load_field_csv(const std::string& path);
void emit_matrix_csv(const std::string& path, const DetectionMatrix& matrix,
                     const std::string& experiment, uint64_t seed);
DetectionMatrix load_matrix_csv(const std::string& path);

// aligned plain-text table: datasets as rows, detectors as columns, one
// decimal place per cell
std::string render_table(const DetectionMatrix& matrix);
void emit_table(const std::string& path, const DetectionMatrix& matrix);

// grid heatmap with a monotone color ramp and axis range labels; one
// <rect class="cell"> per grid cell
void emit_svg_heatmap(const std::string& path, const GradField& field,
                      const std::string& experiment, uint64_t seed);

// binary PGM (grayscale [1,H,W] or [H,W]) / PPM ([3,H,W]); values quantized
// onto the 0..255 range of the bin grid
void write_pgm(const std::string& path, const Tensor& image, const BinSpec& bins);
void write_ppm(const std::string& path, const Tensor& image, const BinSpec& bins);

// horizontal concatenation for triptych snapshots; images [C,H,W]
Tensor hconcat_images(const std::vector<Tensor>& images);

} // namespace ardx
