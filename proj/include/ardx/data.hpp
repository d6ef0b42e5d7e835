#pragma once

#include <string>
#include <vector>

#include "ardx/tensor.hpp"

namespace ardx {

struct Dataset {
    std::string name;
    Tensor examples;         // [N, ...] within the bin coverage
    std::vector<int> labels; // empty or one per example
    BinSpec bins;
    std::string provenance;

    int size() const { return examples.ndim() ? examples.shape[0] : 0; }
    void validate() const;
};

inline BinSpec toy_bins() { return BinSpec(-5.0, 5.0, 51); }
inline BinSpec image_bins() { return BinSpec(-1.0, 1.0, 256); }

// n points with x1 = 0 exactly and x2 ~ N(0,1) snapped to the grid
Dataset gen_manifold2d(int n, uint64_t seed, const BinSpec& bins = toy_bins());

// Per-image multiplicative tint from a fixed 6-hue palette, applied in
// intensity space so black stays black. The channel mean recovers a
// monotone transform of the source grayscale image.
Dataset colorize_mnist(const Dataset& gray, uint64_t seed);

// grayscale projection used by the colorizer's inverse checks
Tensor channel_mean(const Tensor& rgb); // [3,H,W] -> [1,H,W]

// IDX ingestion (big-endian): magic 0x00000803 for uint8 image tensors,
// 0x00000801 for label vectors. Pixel bytes rescale onto the bin grid.
Dataset load_idx(const std::string& images_path, const BinSpec& bins = image_bins());
std::vector<int> load_idx_labels(const std::string& path);
void save_idx(const std::string& path, const Tensor& images, const BinSpec& bins = image_bins());
void save_idx_labels(const std::string& path, const std::vector<int>& labels);

// kind in {noise, black, white}
Dataset make_probe_images(const std::string& kind, int n, int channels, int height, int width,
                          const BinSpec& bins = image_bins(), uint64_t seed = 0);

// Synthetic digit-like corpora: anti-aliased strokes (or blobs) on a dark
// background, labeled by element count. Hermetic stand-ins for IDX corpora
// in environments without one on disk.
Dataset gen_strokes(int n, int height, int width, uint64_t seed,
                    const BinSpec& bins = image_bins());
Dataset gen_blobs(int n, int height, int width, uint64_t seed, const BinSpec& bins = image_bins());

// first n / last n split helpers
Dataset dataset_head(const Dataset& d, int n, const std::string& name);
Dataset dataset_tail(const Dataset& d, int n, const std::string& name);

} // namespace ardx
