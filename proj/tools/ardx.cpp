// Workbench command line: every experiment is one subcommand driven by a
// key = value config file, and (config, seed) pins all outputs bitwise.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <iostream>

#include "ardx/arcycle.hpp"
#include "ardx/classifier.hpp"
#include "ardx/config.hpp"
#include "ardx/data.hpp"
#include "ardx/detect.hpp"
#include "ardx/emit.hpp"
#include "ardx/made.hpp"
#include "ardx/pixel_ar.hpp"
#include "ardx/sample_opt.hpp"
#include "ardx/train.hpp"

namespace fs = std::filesystem;
using namespace ardx;

namespace {

BinSpec bins_from_config(RunConfig& cfg, const BinSpec& fallback) {
    return BinSpec(cfg.get_double("bins.lo", fallback.lo), cfg.get_double("bins.hi", fallback.hi),
                   int(cfg.get_int("bins.count", fallback.count)));
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::string cur;
    for (char c : s + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(std::stoi(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    return out;
}

// data.kind selects the source; synthetic corpora keep runs hermetic, idx
// ingests external files
Dataset resolve_dataset(RunConfig& cfg, const std::string& prefix, const BinSpec& bins,
                        uint64_t seed) {
    const std::string kind = cfg.get_str(prefix + ".kind");
    if (kind == "manifold2d")
        return gen_manifold2d(int(cfg.get_int(prefix + ".n", 10000)), seed, bins);
    const int h = int(cfg.get_int(prefix + ".height", 16));
    const int w = int(cfg.get_int(prefix + ".width", 16));
    const int n = int(cfg.get_int(prefix + ".n", 512));
    if (kind == "strokes") return gen_strokes(n, h, w, seed, bins);
    if (kind == "blobs") return gen_blobs(n, h, w, seed, bins);
    if (kind == "colorized_strokes") return colorize_mnist(gen_strokes(n, h, w, seed, bins), seed + 1);
    if (kind == "idx") {
        Dataset d = load_idx(cfg.get_str(prefix + ".images"), bins);
        const std::string labels = cfg.get_str(prefix + ".labels", "");
        if (!labels.empty()) d.labels = load_idx_labels(labels);
        return d;
    }
    throw std::runtime_error("unknown dataset kind: " + kind);
}

OptConfig opt_from_config(RunConfig& cfg, uint64_t seed, const std::string& out_dir) {
    OptConfig opt;
    opt.learning_rate = cfg.get_double("train.lr", 1e-3);
    opt.beta1 = cfg.get_double("train.beta1", 0.9);
    opt.beta2 = cfg.get_double("train.beta2", 0.999);
    opt.epsilon = cfg.get_double("train.eps", 1e-8);
    opt.batch_size = int(cfg.get_int("train.batch", 64));
    opt.max_steps = int(cfg.get_int("train.steps", 1000));
    opt.checkpoint_every = int(cfg.get_int("train.checkpoint_every", 0));
    opt.validation_fraction = cfg.get_double("train.val_fraction", 0.1);
    opt.seed = seed;
    opt.checkpoint_dir = out_dir;
    opt.checkpoint_prefix = cfg.get_str("train.checkpoint_prefix", "model");
    return opt;
}

int run_train(RunConfig& cfg, uint64_t seed) {
    const std::string out_dir = cfg.get_str("out_dir");
    fs::create_directories(out_dir);
    const std::string model_kind = cfg.get_str("model");
    const OptConfig opt = opt_from_config(cfg, seed, out_dir);

    if (model_kind == "made") {
        const BinSpec bins = bins_from_config(cfg, toy_bins());
        Dataset data = resolve_dataset(cfg, "data", bins, seed + 17);
        const int d = data.examples.shape[1];
        std::vector<int> ordering(static_cast<size_t>(d));
        for (int i = 0; i < d; ++i) ordering[size_t(i)] = i;
        if (cfg.get_str("made.ordering", "natural") == "reversed")
            std::reverse(ordering.begin(), ordering.end());
        MadeModel model = MadeModel::create(
            bins, parse_int_list(cfg.get_str("made.hidden", "64,64")), ordering, seed);
        if (cfg.has("made.joint_floor")) model.joint_floor = cfg.get_double("made.joint_floor");
        cfg.finish();
        const TrainReport report = train_mle(model, data.examples, opt);
        emit_train_report_csv(out_dir + "/train_report.csv", report, "train-made", seed);
        std::cout << "final nll " << report.steps.back().bits_per_dim << " bits/dim, checkpoint "
                  << report.final_checkpoint << "\n";
        return 0;
    }
    if (model_kind == "pixel") {
        const BinSpec bins = bins_from_config(cfg, image_bins());
        Dataset data = resolve_dataset(cfg, "data", bins, seed + 17);
        const Shape& s = data.examples.shape;
        PixelArModel model = PixelArModel::create(
            bins, s[1], s[2], s[3], int(cfg.get_int("pixel.hidden", 24)),
            int(cfg.get_int("pixel.layers", 4)), int(cfg.get_int("pixel.mix_k", 3)),
            int(cfg.get_int("pixel.kernel", 3)), seed);
        cfg.finish();
        const TrainReport report = train_mle(model, data.examples, opt);
        emit_train_report_csv(out_dir + "/train_report.csv", report, "train-pixel", seed);
        std::cout << "final nll " << report.steps.back().bits_per_dim << " bits/dim, checkpoint "
                  << report.final_checkpoint << "\n";
        return 0;
    }
    if (model_kind == "classifier") {
        const BinSpec bins = bins_from_config(cfg, image_bins());
        Dataset data = resolve_dataset(cfg, "data", bins, seed + 17);
        const Shape& s = data.examples.shape;
        int classes = 0;
        for (int l : data.labels) classes = std::max(classes, l + 1);
        Classifier model = Classifier::create(s[1], s[2], s[3], classes,
                                              int(cfg.get_int("classifier.feat_width", 32)), seed);
        cfg.finish();
        const ClassifierReport report = train_classifier(model, data.examples, data.labels, opt);
        model.save(out_dir + "/classifier_final.ardx");
        std::cout << "holdout accuracy " << report.holdout_accuracy << ", checkpoint "
                  << out_dir + "/classifier_final.ardx" << "\n";
        return 0;
    }
    throw std::runtime_error("unknown model kind: " + model_kind);
}

int run_heatmap(RunConfig& cfg, uint64_t seed) {
    const std::string out_dir = cfg.get_str("out_dir");
    fs::create_directories(out_dir);
    const auto model = load_ar_model(cfg.get_str("model"));
    const double lo1 = cfg.get_double("grid.x1_lo", -3.0), hi1 = cfg.get_double("grid.x1_hi", 3.0);
    const double lo2 = cfg.get_double("grid.x2_lo", -3.0), hi2 = cfg.get_double("grid.x2_hi", 3.0);
    const int r1 = int(cfg.get_int("grid.res1", 100)), r2 = int(cfg.get_int("grid.res2", 100));
    cfg.finish();
    const GradField field = gradient_field(*model, lo1, hi1, lo2, hi2, r1, r2);
    emit_field_csv(out_dir + "/field.csv", field, "heatmap", seed);
    emit_svg_heatmap(out_dir + "/field.svg", field, "heatmap", seed);
    std::cout << "field written to " << out_dir << "/field.{csv,svg}\n";
    return 0;
}

int run_optimize(RunConfig& cfg, uint64_t seed) {
    const std::string out_dir = cfg.get_str("out_dir");
    fs::create_directories(out_dir);
    const auto model = load_ar_model(cfg.get_str("model"));
    const std::string kind_str = cfg.get_str("probe", "noise");
    const int n = int(cfg.get_int("probe.n", 3));
    const int steps = int(cfg.get_int("opt.steps", 1000));
    const double lr = cfg.get_double("opt.lr", model->dims() == 2 ? 1e-2 : 1e-3);
    const int log_every = int(cfg.get_int("opt.log_every", 50));

    Tensor x0;
    const Shape img = model->input_shape();
    if (kind_str == "digits") {
        const BinSpec bins = bins_from_config(cfg, model->bins());
        Dataset src = resolve_dataset(cfg, "data", bins, seed + 29);
        x0 = probe_start_set(ProbeKind::digits, n, img, model->bins(), seed, &src.examples);
    } else {
        x0 = probe_start_set(probe_kind_from_string(kind_str), n, img, model->bins(), seed);
    }
    cfg.finish();
    const OptimizeResult res = optimize_samples(*model, x0, steps, lr, log_every);
    emit_trajectory_csv(out_dir + "/trajectory_" + kind_str + ".csv", res, "optimize", seed);
    if (img.size() == 3) {
        for (const TrajectoryPoint& p : res.trajectory) {
            if (p.iteration != 0 && p.iteration != steps && p.iteration != steps / 2) continue;
            for (int i = 0; i < p.batch.shape[0]; ++i) {
                const Tensor im = batch_example(p.batch, i);
                const std::string base = out_dir + "/" + kind_str + "_iter" +
                                         std::to_string(p.iteration) + "_ex" + std::to_string(i);
                if (img[0] == 3)
                    write_ppm(base + ".ppm", im, model->bins());
                else
                    write_pgm(base + ".pgm", im, model->bins());
            }
        }
    }
    std::cout << (res.aborted ? "aborted at iteration " + std::to_string(res.aborted_at)
                              : std::string("completed ") + std::to_string(steps) + " steps")
              << ", trajectory in " << out_dir << "\n";
    return 0;
}

int run_detect(RunConfig& cfg, uint64_t seed) {
    const std::string out_dir = cfg.get_str("out_dir");
    fs::create_directories(out_dir);
    const auto model = load_ar_model(cfg.get_str("model"));
    const BinSpec bins = model->bins();
    const Shape img = model->input_shape();

    Dataset train_set = resolve_dataset(cfg, "train_data", bins, seed + 17);
    Dataset test_set = resolve_dataset(cfg, "test_data", bins, seed + 18);
    Dataset ood_set = resolve_dataset(cfg, "ood_data", bins, seed + 19);
    const int n_probe = int(cfg.get_int("probe.n", 64));

    // interval detectors fitted on training-set bits/dim
    std::vector<double> train_bits;
    for (double lp : logprob_batch(*model, train_set.examples))
        train_bits.push_back(bits_per_dim(-lp, model->dims()));
    const std::vector<IntervalDetector> dets = {
        fit_interval(train_bits, IntervalKind::two_sd),
        fit_interval(train_bits, IntervalKind::one_sd),
        fit_interval(train_bits, IntervalKind::one_sided),
    };

    // optional CCG column
    std::unique_ptr<Classifier> clf;
    CcgDetector ccg;
    if (cfg.has("classifier")) {
        clf = std::make_unique<Classifier>(Classifier::load_file(cfg.get_str("classifier")));
        std::vector<std::vector<double>> feats;
        for (int i = 0; i < train_set.size(); ++i)
            feats.push_back(clf->features(batch_example(train_set.examples, i)).data);
        ccg = fit_ccg(feats, train_set.labels, cfg.get_double("ccg.shrinkage", 0.05),
                      cfg.get_double("ccg.tau_percentile", 5.0),
                      cfg.get_double("ccg.holdout_fraction", 0.2), seed + 5);
    }
    cfg.finish();

    std::vector<ProbeSet> probes;
    probes.push_back({"in-dist test", test_set.examples});
    probes.push_back({"ood images", ood_set.examples});
    probes.push_back({"noise", make_probe_images("noise", n_probe, img[0], img[1], img[2], bins,
                                                 seed + 31).examples});
    probes.push_back({"all black", make_probe_images("black", n_probe, img[0], img[1], img[2],
                                                     bins).examples});
    probes.push_back({"all white", make_probe_images("white", n_probe, img[0], img[1], img[2],
                                                     bins).examples});

    const DetectionMatrix m = detection_table(*model, dets, clf ? &ccg : nullptr, clf.get(), probes);
    emit_matrix_csv(out_dir + "/detection.csv", m, "detect", seed);
    emit_table(out_dir + "/detection.txt", m);
    std::cout << render_table(m);
    return 0;
}

int run_arcycle(RunConfig& cfg, uint64_t seed) {
    const std::string out_dir = cfg.get_str("out_dir");
    fs::create_directories(out_dir);
    const auto p_x = load_ar_model(cfg.get_str("p_x"));
    const auto p_y = load_ar_model(cfg.get_str("p_y"));
    const BinSpec bins = p_y->bins();
    Dataset y_set = resolve_dataset(cfg, "y_data", bins, seed + 41);
    Dataset x_set = cfg.get_bool("x_data.colorize_of_y", true)
                        ? colorize_mnist(y_set, seed + 42)
                        : resolve_dataset(cfg, "x_data", bins, seed + 42);

    ArCycleConfig acfg;
    acfg.ablation = ablation_from_string(cfg.get_str("arcycle.ablation", "full"));
    acfg.beta = cfg.get_double("arcycle.beta", 1.0);
    acfg.auto_beta = cfg.get_bool("arcycle.auto_beta", true);
    acfg.blur_sigma = cfg.get_double("arcycle.blur_sigma", 1.0);
    acfg.snapshot_every = int(cfg.get_int("arcycle.snapshot_every", 25));
    acfg.snapshot_rows = int(cfg.get_int("arcycle.snapshot_rows", 3));
    acfg.pretrain_steps = int(cfg.get_int("arcycle.pretrain_steps", 0));
    acfg.max_steps = int(cfg.get_int("arcycle.steps", 100));
    acfg.batch_size = int(cfg.get_int("arcycle.batch", 8));
    acfg.learning_rate = cfg.get_double("arcycle.lr", 1e-3);
    acfg.seed = seed;
    acfg.out_dir = out_dir;
    cfg.finish();

    const Shape& xs = x_set.examples.shape;
    const Shape& ys = y_set.examples.shape;
    Generator f = Generator::create(xs[1], ys[1], xs[2], xs[3], 16, 3, bins, seed + 1);
    Generator g = Generator::create(ys[1], xs[1], xs[2], xs[3], 16, 3, bins, seed + 2);
    const ArCycleReport report = train_arcycle(f, g, *p_x, *p_y, x_set, y_set, acfg);

    // run report CSV
    {
        std::ofstream out(out_dir + "/arcycle_report.csv", std::ios::binary);
        out << artifact_header("arcycle", seed);
        out << "iteration,l_cyc,nll_x_bits,nll_y_bits\n";
        for (const auto& st : report.steps)
            out << st.iteration << "," << fmt17(st.l_cyc) << "," << fmt17(st.nll_x_bits) << ","
                << fmt17(st.nll_y_bits) << "\n";
    }
    // triptych snapshots
    auto to_rgb = [](const Tensor& im) {
        if (im.shape[0] == 3) return im;
        Tensor out(Shape{3, im.shape[1], im.shape[2]});
        for (int c = 0; c < 3; ++c)
            std::copy(im.data.begin(), im.data.end(), out.data.begin() + size_t(c) * im.numel());
        return out;
    };
    for (const auto& snap : report.snapshots) {
        for (int i = 0; i < snap.x.shape[0]; ++i) {
            const Tensor trip_x = hconcat_images({to_rgb(batch_example(snap.x, i)),
                                                  to_rgb(batch_example(snap.fx, i)),
                                                  to_rgb(batch_example(snap.gfx, i))});
            write_ppm(out_dir + "/triptych_x_iter" + std::to_string(snap.iteration) + "_ex" +
                          std::to_string(i) + ".ppm",
                      trip_x, bins);
            const Tensor trip_y = hconcat_images({to_rgb(batch_example(snap.y, i)),
                                                  to_rgb(batch_example(snap.gy, i)),
                                                  to_rgb(batch_example(snap.fgy, i))});
            write_ppm(out_dir + "/triptych_y_iter" + std::to_string(snap.iteration) + "_ex" +
                          std::to_string(i) + ".ppm",
                      trip_y, bins);
        }
    }
    std::cout << "beta " << report.beta_used << ", final l_cyc "
              << (report.steps.empty() ? 0.0 : report.steps.back().l_cyc) << ", report in "
              << out_dir << "\n";
    return 0;
}

int run_report(RunConfig& cfg, uint64_t seed) {
    const std::string out_dir = cfg.get_str("out_dir");
    fs::create_directories(out_dir);
    if (cfg.has("field_csv")) {
        const GradField f = load_field_csv(cfg.get_str("field_csv"));
        emit_svg_heatmap(out_dir + "/field.svg", f, "report", seed);
        std::cout << "re-rendered " << out_dir << "/field.svg\n";
    }
    if (cfg.has("matrix_csv")) {
        const DetectionMatrix m = load_matrix_csv(cfg.get_str("matrix_csv"));
        emit_table(out_dir + "/detection.txt", m);
        std::cout << render_table(m);
    }
    cfg.finish();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"autoregressive density workbench"};
    app.require_subcommand(1);

    std::string config_path;
    long long seed_override = -1;
    const std::vector<std::string> names = {"train",   "heatmap", "optimize",
                                            "detect",  "arcycle", "report"};
    std::map<std::string, CLI::App*> subs;
    for (const auto& name : names) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "run configuration file")->required();
        sub->add_option("--seed", seed_override, "override the config seed");
        subs[name] = sub;
    }
    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = RunConfig::from_file(config_path);
        if (seed_override >= 0) cfg.set("seed", std::to_string(seed_override));
        const uint64_t seed = cfg.get_seed(0);
        if (subs["train"]->parsed()) return run_train(cfg, seed);
        if (subs["heatmap"]->parsed()) return run_heatmap(cfg, seed);
        if (subs["optimize"]->parsed()) return run_optimize(cfg, seed);
        if (subs["detect"]->parsed()) return run_detect(cfg, seed);
        if (subs["arcycle"]->parsed()) return run_arcycle(cfg, seed);
        if (subs["report"]->parsed()) return run_report(cfg, seed);
    } catch (const std::invalid_argument& e) {
        std::cerr << "contract error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
