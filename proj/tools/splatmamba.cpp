// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

#include "splatmamba/loss/losses.hpp"
#include "splatmamba/pipeline/checkpoint.hpp"
#include "splatmamba/pipeline/config.hpp"
#include "splatmamba/pipeline/dataset.hpp"
#include "splatmamba/pipeline/diagnostics.hpp"
#include "splatmamba/pipeline/metrics.hpp"
#include "splatmamba/pipeline/trainer.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace {

using namespace sm;

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

std::array<double, 3> parse_color(const std::string& text) {
    std::array<double, 3> c{};
    std::istringstream ss(text);
    char sep = 0;
    if (!(ss >> c[0] >> sep >> c[1] >> sep >> c[2])) throw model::ConfigError("expected r,g,b but got '" + text + "'");
    for (double v : c) {
        if (!(v >= 0.0 && v <= 1.0)) throw model::ConfigError("background components must lie in [0, 1]");
    }
    return c;
}

int run(int argc, char** argv) {
    CLI::App app{"splatmamba: single-image 3D Gaussian reconstruction with a Mamba backbone"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-view dataset");
    pipeline::DatasetOptions gen_opt;
    std::string gen_out;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--objects", gen_opt.objects, "number of objects")->capture_default_str();
    gen->add_option("--views", gen_opt.views, "views per object")->capture_default_str();
    gen->add_option("--resolution", gen_opt.resolution, "image size in pixels")->capture_default_str();
    gen->add_option("--seed", gen_opt.seed, "generator seed")->capture_default_str();
    gen->add_option("--min-splats", gen_opt.min_splats)->capture_default_str();
    gen->add_option("--max-splats", gen_opt.max_splats)->capture_default_str();

    // train: every config key is also a flag
    auto* train = app.add_subcommand("train", "train on one object of a dataset");
    std::string config_file, preset = "toy", resume;
    train->add_option("--config", config_file, "key = value config file");
    train->add_option("--preset", preset, "toy or full")->capture_default_str();
    train->add_option("--resume", resume, "checkpoint to continue from");
    std::map<std::string, std::string> overrides;
    for (const auto& key : pipeline::Config::keys()) {
        train->add_option("--" + key.name, overrides[key.name], key.doc);
    }

    // infer
    auto* inf = app.add_subcommand("infer", "predict splats from one image");
    std::string inf_ckpt, inf_image, inf_camera, inf_out;
    std::uint64_t inf_seed = 0;
    inf->add_option("--checkpoint", inf_ckpt)->required();
    inf->add_option("--image", inf_image, "RGB or RGBA PNG")->required();
    inf->add_option("--camera", inf_camera, "camera file; its first camera replaces the normalized reference pose");
    inf->add_option("--out", inf_out, "output .smgs file")->required();
    inf->add_option("--seed", inf_seed, "unused; inference is deterministic");

    // render
    auto* ren = app.add_subcommand("render", "render a gaussian file from every camera of a camera file");
    std::string ren_gauss, ren_cams, ren_out, ren_bg = "1,1,1";
    std::uint64_t ren_seed = 0;
    ren->add_option("--gaussians", ren_gauss)->required();
    ren->add_option("--cameras", ren_cams)->required();
    ren->add_option("--out", ren_out)->required();
    ren->add_option("--background", ren_bg, "r,g,b in [0, 1]")->capture_default_str();
    ren->add_option("--seed", ren_seed, "unused; rendering is deterministic");

    // eval
    auto* ev = app.add_subcommand("eval", "PSNR and SSIM between two directories of PNGs");
    std::string ev_pred, ev_gt, ev_masks, ev_out;
    std::uint64_t ev_seed = 0;
    ev->add_option("--pred", ev_pred)->required();
    ev->add_option("--gt", ev_gt)->required();
    ev->add_option("--masks", ev_masks, "optional masks; background is ignored");
    ev->add_option("--out", ev_out, "CSV output path");
    ev->add_option("--seed", ev_seed, "unused");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the renderer and the scan");
    int gc_scenes = 20, gc_splats = 8, gc_size = 16;
    double gc_tol = 1e-3;
    std::uint64_t gc_seed = 0;
    gc->add_option("--scenes", gc_scenes)->capture_default_str();
    gc->add_option("--max-splats", gc_splats)->capture_default_str();
    gc->add_option("--size", gc_size)->capture_default_str();
    gc->add_option("--tolerance", gc_tol)->capture_default_str();
    gc->add_option("--seed", gc_seed)->capture_default_str();

    // bench-scan
    auto* bs = app.add_subcommand("bench-scan", "time the selective scan at several sequence lengths");
    std::vector<std::size_t> bs_lengths{1024, 2048, 4096};
    std::size_t bs_inner = 256, bs_state = 16;
    int bs_runs = 5;
    std::uint64_t bs_seed = 0;
    bs->add_option("--lengths", bs_lengths)->delimiter(',')->capture_default_str();
    bs->add_option("--d-inner", bs_inner)->capture_default_str();
    bs->add_option("--d-state", bs_state)->capture_default_str();
    bs->add_option("--runs", bs_runs)->capture_default_str();
    bs->add_option("--seed", bs_seed)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    if (gen->parsed()) {
        pipeline::gen_synthetic_dataset(gen_out, gen_opt);
        std::cerr << "wrote " << gen_opt.objects << " object(s) x " << gen_opt.views << " views to " << gen_out << '\n';
        return kOk;
    }

    if (train->parsed()) {
        std::string text;
        for (const auto& key : pipeline::Config::keys()) {
            if (train->count("--" + key.name) > 0) text += key.name + " = " + overrides[key.name] + "\n";
        }
        if (!resume.empty()) {
            if (!config_file.empty()) throw model::ConfigError("--resume takes its config from the checkpoint; drop --config");
            auto trainer = pipeline::Trainer::resume(resume, text);
            trainer.run(&std::cerr);
            return kOk;
        }
        auto cfg = pipeline::Config::preset(preset);
        if (!config_file.empty()) cfg.apply_file(config_file);
        cfg.apply_text(text, "command line");
        pipeline::Trainer trainer(cfg);
        trainer.run(&std::cerr);
        std::cerr << "train-view PSNR " << trainer.mean_psnr(trainer.training_views()) << " dB, held-out PSNR "
                  << trainer.mean_psnr(trainer.held_out_views()) << " dB\n";
        return kOk;
    }

    if (inf->parsed()) {
        const auto ckpt = pipeline::load_checkpoint(inf_ckpt);
        const auto m = pipeline::restore_model(ckpt);
        std::optional<model::Camera> cam;
        if (!inf_camera.empty()) {
            const auto cams = pipeline::read_cameras(inf_camera);
            if (cams.empty()) throw util::ParseError(inf_camera + ": no cameras");
            cam = cams.front();
        }
        const auto r = pipeline::infer(m, ckpt.config, pipeline::read_png(inf_image), cam);
        model::write_gaussian_file(inf_out, r.splats);
        std::cerr << "wrote " << r.splats.size() << " splats to " << inf_out << " (forward " << r.seconds << " s)\n";
        return kOk;
    }

    if (ren->parsed()) {
        const auto n = pipeline::render_views(ren_gauss, ren_cams, ren_out, parse_color(ren_bg));
        std::cerr << "rendered " << n << " view(s) into " << ren_out << '\n';
        return kOk;
    }

    if (ev->parsed()) {
        const auto report = pipeline::evaluate(ev_pred, ev_gt, ev_masks);
        if (!ev_out.empty()) {
            std::ofstream out(ev_out, std::ios::trunc);
            if (!out) throw std::runtime_error("cannot write " + ev_out);
            out << report.csv();
        }
        std::cout << report.summary();
        return kOk;
    }

    if (gc->parsed()) {
        const auto r = pipeline::renderer_gradcheck(gc_scenes, gc_splats, gc_size, gc_seed);
        const auto s = pipeline::scan_gradcheck(gc_scenes, gc_seed);
        std::cout << "renderer: " << r.scenes << " scenes, max rel. error " << r.max_rel_error << '\n'
                  << "scan:     " << s.scenes << " cases, max rel. error " << s.max_rel_error << '\n';
        return r.max_rel_error < gc_tol && s.max_rel_error < gc_tol ? kOk : kNumerical;
    }

    if (bs->parsed()) {
        const auto timings = pipeline::bench_scan(bs_lengths, bs_inner, bs_state, bs_runs, bs_seed);
        std::cout << "length,median_seconds\n";
        for (const auto& t : timings) std::cout << t.length << ',' << t.median_seconds << '\n';
        return kOk;
    }
    return kUsage;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const sm::ad::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const sm::model::CameraError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const sm::model::ConfigError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        // parse errors, missing files, degenerate masks
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    }
}
