#pragma once

#include <string>
#include <vector>

#include "ardx/checkpoint.hpp"
#include "ardx/tensor.hpp"
#include "ardx/train.hpp"

namespace ardx {

// Small convolutional classifier over single images. The penultimate tanh
// layer doubles as the feature extractor for the class-conditional Gaussian
// detector.
struct Classifier {
    int in_channels = 1, height = 0, width = 0;
    int n_classes = 2, feat_width = 32;
    int c1 = 8, c2 = 16;
    Tensor w_conv1, b_conv1, w_conv2, b_conv2, w_fc1, b_fc1, w_fc2, b_fc2;

    static Classifier create(int channels, int height, int width, int classes, int feat_width,
                             uint64_t seed);
    static Classifier load_file(const std::string& path);

    struct Bound {
        Ref x, features, log_probs;
        std::vector<Ref> param_refs;
    };
    Bound bind(Tape& tape, const Tensor& image, bool x_requires_grad) const;
    std::vector<ParamRef> params();

    Tensor features(const Tensor& image) const;                 // [feat_width]
    std::vector<double> class_log_probs(const Tensor& image) const;
    int predict(const Tensor& image) const;

    NamedArrays to_arrays() const;
    void save(const std::string& path) const { save_arrays(path, to_arrays()); }
};

struct ClassifierReport {
    std::vector<StepStat> steps; // nll in nats, bits column is nats/ln2
    double holdout_accuracy = 0.0;
    double wall_seconds = 0.0;
};

// cross-entropy training; rejects single-class data
ClassifierReport train_classifier(Classifier& model, const Tensor& images,
                                  const std::vector<int>& labels, const OptConfig& cfg);

} // namespace ardx
