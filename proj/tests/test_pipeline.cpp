// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "splatmamba/pipeline/checkpoint.hpp"
#include "splatmamba/pipeline/config.hpp"
#include "splatmamba/pipeline/dataset.hpp"
#include "splatmamba/pipeline/image_io.hpp"
#include "splatmamba/pipeline/metrics.hpp"
#include "splatmamba/pipeline/trainer.hpp"
#include "splatmamba/render/splat.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>

namespace sm::pipeline {
namespace {

namespace fs = std::filesystem;

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::vector<std::uint8_t>> tree_bytes(const fs::path& dir) {
    std::map<std::string, std::vector<std::uint8_t>> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = file_bytes(e.path());
    }
    return out;
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("splatmamba_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Small enough that a training step takes milliseconds.
Config tiny_config(const fs::path& data, const fs::path& run) {
    Config c;
    c.image_size = 16;
    c.patch = 8;
    c.token_channels = 8;
    c.depth = 1;
    c.d_model = 16;
    c.n_gaussians = 24;
    c.embed_dim = 16;
    c.camera_hidden = 8;
    c.d_state = 4;
    c.decoder_hidden = 16;
    c.decoder_layers = 2;
    c.bins = 8;
    c.views_per_step = 3;
    c.train_views = 4;
    c.lr = 1e-3;
    c.steps = 10;
    c.checkpoint_every = 0;
    c.data_dir = data.string();
    c.run_dir = run.string();
    return c;
}

const fs::path& tiny_dataset() {
    static const fs::path dir = [] {
        auto d = scratch("tiny_data");
        DatasetOptions opt;
        opt.objects = 2;
        opt.views = 6;
        opt.resolution = 16;
        opt.seed = 4;
        gen_synthetic_dataset(d, opt);
        return d;
    }();
    return dir;
}

TEST(Config, TextRoundTripIsExact) {
    Config c;
    c.lr = 0.1 + 0.2; // not representable in short decimal
    c.seed = 18446744073709551615ull;
    c.run_dir = "some/dir";
    Config d;
    d.apply_text(c.to_text());
    EXPECT_EQ(d.to_text(), c.to_text());
    EXPECT_EQ(d.lr, c.lr);
    EXPECT_EQ(d.seed, c.seed);
}

TEST(Config, EveryKeyHasDocAndDefault) {
    const Config c;
    for (const auto& k : Config::keys()) {
        EXPECT_FALSE(k.doc.empty()) << k.name;
        EXPECT_FALSE(c.get(k.name).empty()) << k.name;
    }
    EXPECT_EQ(c.lr, 1e-4);
    EXPECT_EQ(c.weight_decay, 0.05);
    EXPECT_EQ(c.grad_clip, 1.0);
    EXPECT_EQ(c.views_per_step, 6u);
    EXPECT_NO_THROW(c.validate());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    Config c;
    EXPECT_THROW(c.set("learning_rate", "1"), model::ConfigError);
    EXPECT_THROW(c.set("steps", "-3"), model::ConfigError);
    EXPECT_THROW(c.set("lr", "fast"), model::ConfigError);
    EXPECT_THROW(c.set("lr", "nan"), model::ConfigError);
    EXPECT_THROW(c.apply_text("steps 10\n"), model::ConfigError);
    c.apply_text("# comment\n  steps = 12   # trailing\n\nlr=0.5\n");
    EXPECT_EQ(c.steps, 12u);
    EXPECT_EQ(c.lr, 0.5);
    try {
        c.apply_text("steps = 1\nbogus = 2\n", "cfg.txt");
        FAIL();
    } catch (const model::ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("cfg.txt:2"), std::string::npos);
    }
}

TEST(Config, ValidationAndPresets) {
    Config c;
    c.image_size = 60;
    EXPECT_THROW(c.validate(), model::ConfigError);
    c = Config{};
    c.train_views = 3;
    EXPECT_THROW(c.validate(), model::ConfigError);
    const auto full = Config::preset("full");
    EXPECT_EQ(full.n_gaussians, 16384u);
    EXPECT_EQ(full.image_size, 512u);
    EXPECT_EQ(full.depth, 10u);
    EXPECT_EQ(full.d_model, 1024u);
    EXPECT_NO_THROW(full.validate());
    EXPECT_EQ(Config::preset("toy").to_text(), Config{}.to_text());
    EXPECT_THROW(Config::preset("huge"), model::ConfigError);
}

TEST(Config, LearningRateSchedule) {
    Config c;
    c.lr = 1e-3;
    c.steps = 100;
    EXPECT_EQ(c.lr_at(0), 1e-3);
    EXPECT_EQ(c.lr_at(99), 1e-3);
    c.lr_final = 1e-4;
    c.lr_warmup = 10;
    EXPECT_NEAR(c.lr_at(0), 1e-4, 1e-15);
    EXPECT_NEAR(c.lr_at(9), 1e-3, 1e-15);
    EXPECT_NEAR(c.lr_at(10), 1e-3, 1e-15);
    EXPECT_NEAR(c.lr_at(55), 5.5e-4, 1e-12);
    EXPECT_NEAR(c.lr_at(100), 1e-4, 1e-15);
}

TEST(ImageIo, PngAndRawRoundTrips) {
    const auto dir = scratch("io");
    Image img(5, 3, 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(i * 17 % 256) / 255.0f;
    write_png(dir / "a.png", img);
    const auto back = read_png(dir / "a.png");
    ASSERT_EQ(back.width, 5);
    ASSERT_EQ(back.height, 3);
    ASSERT_EQ(back.channels, 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_EQ(back.data[i], img.data[i]);

    Image raw(4, 2, 4);
    for (std::size_t i = 0; i < raw.data.size(); ++i) raw.data[i] = std::sin(static_cast<float>(i)) * 3.0f;
    write_raw_image(dir / "a.smrf", raw);
    const auto rb = read_raw_image(dir / "a.smrf");
    EXPECT_EQ(rb.data, raw.data);

    auto bytes = file_bytes(dir / "a.smrf");
    bytes.resize(bytes.size() - 3);
    std::ofstream(dir / "cut.smrf", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    try {
        read_raw_image(dir / "cut.smrf");
        FAIL();
    } catch (const util::ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
    }
    EXPECT_THROW(read_png(dir / "a.smrf"), util::ParseError);
}

TEST(ImageIo, CameraFileRoundTripAndErrors) {
    const auto dir = scratch("cams");
    const auto cams = anchor_cameras(5, 32);
    write_cameras(dir / "c.txt", cams);
    const auto back = read_cameras(dir / "c.txt");
    ASSERT_EQ(back.size(), cams.size());
    for (std::size_t i = 0; i < cams.size(); ++i) {
        EXPECT_EQ(back[i].extrinsic, cams[i].extrinsic);
        EXPECT_EQ(back[i].intrinsic, cams[i].intrinsic);
        EXPECT_EQ(back[i].width, 32);
    }
    std::ofstream(dir / "empty.txt") << "# nothing\n\n";
    EXPECT_TRUE(read_cameras(dir / "empty.txt").empty());
    std::ofstream(dir / "short.txt") << "1 0 0 0 1 0 0 0 1 0 0 2 32 32 16 16 32\n";
    try {
        read_cameras(dir / "short.txt");
        FAIL();
    } catch (const util::ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
    }
    std::ofstream(dir / "word.txt") << "1 0 0 0 1 0 0 0 1 0 0 2 32 32 16 16 32 x32\n";
    EXPECT_THROW(read_cameras(dir / "word.txt"), util::ParseError);
    std::ofstream(dir / "skew.txt") << "2 0 0 0 1 0 0 0 1 0 0 2 32 32 16 16 32 32\n";
    EXPECT_THROW(read_cameras(dir / "skew.txt"), util::ParseError);
}

TEST(Dataset, DefaultsAndAnchorLayout) {
    EXPECT_EQ(DatasetOptions{}.views, 48u);
    const auto cams = anchor_cameras(48, 64);
    for (const auto& c : cams) {
        EXPECT_NEAR(c.center().norm(), kAnchorRadius, 1e-12);
        EXPECT_EQ(c.fx(), 64.0);
        EXPECT_NO_THROW(c.validate());
    }
    // views spread over both hemispheres
    EXPECT_GT(cams.front().center().y(), 1.9);
    EXPECT_LT(cams.back().center().y(), -1.9);
}

TEST(Dataset, GenerationIsDeterministicAndValid) {
    const auto a = scratch("gen_a"), b = scratch("gen_b");
    DatasetOptions opt;
    opt.objects = 3;
    opt.views = 5;
    opt.resolution = 24;
    opt.seed = 11;
    gen_synthetic_dataset(a, opt);
    gen_synthetic_dataset(b, opt);
    const auto ta = tree_bytes(a);
    EXPECT_EQ(ta, tree_bytes(b));
    EXPECT_EQ(ta.size(), 1 + 3 * (2 + 3 * 5));

    for (std::size_t o = 0; o < 3; ++o) {
        const auto obj = load_object(a, o);
        EXPECT_GE(obj.ground_truth.size(), 8u);
        EXPECT_LE(obj.ground_truth.size(), 64u);
        EXPECT_FALSE(model::check_invariants(obj.ground_truth).has_value());
        for (const auto& m : obj.masks) EXPECT_GT(m.area(), 0u);
        // the PNG is the straight image over white
        const auto png = read_png(view_path(object_dir(a, o), 2, "png"));
        const auto over_white = composite(obj.rgba[2], {1, 1, 1});
        for (std::size_t i = 0; i < png.data.size(); ++i) EXPECT_NEAR(png.data[i], over_white.data[i], 0.5 / 255 + 1e-6);
    }
    EXPECT_THROW(load_object(a, 3), DataError);
    const auto m = read_manifest(a);
    EXPECT_EQ(m.views, 5u);
    EXPECT_EQ(m.seed, 11u);

    opt.seed = 12;
    const auto c = scratch("gen_c");
    gen_synthetic_dataset(c, opt);
    EXPECT_NE(tree_bytes(c), ta);
}

TEST(Dataset, ReferenceViewSelection) {
    loss::Mask small(20, 20), big(20, 20);
    for (int i = 0; i < 100; ++i) small.data[static_cast<std::size_t>(i)] = 1;
    for (int i = 0; i < 200; ++i) big.data[static_cast<std::size_t>(i)] = 1;
    std::vector<loss::Mask> one{small};
    EXPECT_EQ(select_reference_view(one), 0u);
    std::vector<loss::Mask> two{small, big};
    EXPECT_EQ(select_reference_view(two), 1u);
    std::vector<loss::Mask> tie{small, big, big};
    EXPECT_EQ(select_reference_view(tie), 1u);
    EXPECT_THROW(select_reference_view({}), std::invalid_argument);
}

TEST(Metrics, PsnrCases) {
    Image a(8, 8, 3), b(8, 8, 3);
    std::fill(a.data.begin(), a.data.end(), 0.25f);
    b = a;
    EXPECT_EQ(psnr(a, b), 99.0);
    std::fill(b.data.begin(), b.data.end(), 0.35f);
    // MSE 0.01 up to float rounding of 0.35 - 0.25
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-5);
    EXPECT_NEAR(psnr_from_mse(0.01), 20.0, 1e-12);
    EXPECT_NEAR(psnr_from_mse(1e-3), 30.0, 1e-12);
    EXPECT_EQ(psnr_from_mse(5e-11), 99.0);
    EXPECT_THROW(psnr(a, Image(8, 4, 3)), std::invalid_argument);
}

TEST(Metrics, SsimIdentityAndSymmetry) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(0, 1);
    Image a(32, 24, 3), b(32, 24, 3);
    for (auto& v : a.data) v = u(rng);
    for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] = std::clamp(a.data[i] + 0.2f * (u(rng) - 0.5f), 0.0f, 1.0f);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
    const double ab = ssim(a, b), ba = ssim(b, a);
    EXPECT_NEAR(ab, ba, 1e-9);
    EXPECT_LT(ab, 0.99);
    EXPECT_GT(ab, 0.0);
    Image tiny(4, 4, 1);
    EXPECT_NEAR(ssim(tiny, tiny), 1.0, 1e-12);
}

TEST(Metrics, EvaluateDirectories) {
    const auto dir = scratch("eval");
    fs::create_directories(dir / "pred");
    fs::create_directories(dir / "gt");
    Image a(12, 12, 3), b(12, 12, 3);
    std::fill(a.data.begin(), a.data.end(), 0.2f);
    std::fill(b.data.begin(), b.data.end(), 0.6f);
    write_png(dir / "pred" / "v0.png", a);
    write_png(dir / "gt" / "v0.png", a);
    write_png(dir / "pred" / "v1.png", a);
    write_png(dir / "gt" / "v1.png", b);
    const auto r = evaluate(dir / "pred", dir / "gt");
    ASSERT_EQ(r.views.size(), 2u);
    EXPECT_EQ(r.views[0].psnr, 99.0);
    EXPECT_NEAR(r.views[0].ssim, 1.0, 1e-12);
    EXPECT_NEAR(r.views[1].psnr, 10.0 * std::log10(1.0 / (0.4 * 0.4)), 1e-3);
    EXPECT_NEAR(r.mean_psnr, 0.5 * (r.views[0].psnr + r.views[1].psnr), 1e-12);
    EXPECT_NE(r.csv().find("mean,"), std::string::npos);
    EXPECT_NE(r.summary().find("2 views"), std::string::npos);
    write_png(dir / "gt" / "v2.png", b);
    EXPECT_THROW(evaluate(dir / "pred", dir / "gt"), std::invalid_argument);
}

TEST(Trainer, SeededRunsAgreeBitExactly) {
    const auto run = scratch("det");
    const auto cfg = tiny_config(tiny_dataset(), run);
    Trainer a(cfg), b(cfg);
    for (int i = 0; i < 10; ++i) {
        const auto ma = a.step(), mb = b.step();
        EXPECT_EQ(ma.loss, mb.loss) << "step " << i;
        EXPECT_EQ(ma.grad_norm, mb.grad_norm) << "step " << i;
    }
    auto other = cfg;
    other.seed = 1;
    Trainer c(other);
    Trainer d(cfg);
    EXPECT_NE(c.step().loss, d.step().loss);
}

TEST(Trainer, CheckpointRoundTripAndResume) {
    const auto run = scratch("ckpt");
    const auto cfg = tiny_config(tiny_dataset(), run);
    Trainer a(cfg);
    for (int i = 0; i < 4; ++i) a.step();
    a.save(run / "a.ckpt");
    const auto loaded = load_checkpoint(run / "a.ckpt");
    save_checkpoint(run / "b.ckpt", loaded);
    EXPECT_EQ(file_bytes(run / "a.ckpt"), file_bytes(run / "b.ckpt"));
    EXPECT_EQ(loaded.step, 4u);

    auto resumed = Trainer::resume(run / "a.ckpt");
    EXPECT_EQ(resumed.current_step(), 4u);
    for (int i = 0; i < 3; ++i) {
        const auto x = a.step(), y = resumed.step();
        EXPECT_EQ(x.loss, y.loss) << "step " << i;
        EXPECT_EQ(x.grad_norm, y.grad_norm);
    }
    EXPECT_EQ(serialize_checkpoint(a.checkpoint()), serialize_checkpoint(resumed.checkpoint()));
}

TEST(Trainer, CheckpointErrors) {
    const auto run = scratch("ckpt_err");
    Trainer a(tiny_config(tiny_dataset(), run));
    auto bytes = serialize_checkpoint(a.checkpoint());
    auto bad_version = bytes;
    bad_version[8] = 9;
    EXPECT_THROW(deserialize_checkpoint(bad_version, "v"), util::ParseError);
    auto cut = bytes;
    cut.resize(cut.size() / 2);
    try {
        deserialize_checkpoint(cut, "cut");
        FAIL();
    } catch (const util::ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
    }
    auto ckpt = deserialize_checkpoint(bytes, "ok");
    ckpt.config.n_gaussians += 1;
    EXPECT_THROW(restore_model(ckpt), util::ParseError);
}

TEST(Trainer, RunLeavesDatasetUntouchedAndWritesLogs) {
    const auto before = tree_bytes(tiny_dataset());
    const auto run = scratch("run");
    auto cfg = tiny_config(tiny_dataset(), run);
    cfg.log_every = 2;
    cfg.checkpoint_every = 5;
    Trainer t(cfg);
    t.run();
    EXPECT_EQ(tree_bytes(tiny_dataset()), before);
    EXPECT_TRUE(fs::exists(run / "final.ckpt"));
    EXPECT_TRUE(fs::exists(run / "step_005.ckpt"));
    std::ifstream csv(run / "metrics.csv");
    std::string header;
    std::getline(csv, header);
    EXPECT_EQ(header, "step,loss,rgb,mask,dist,psnr,grad_norm,lr,seconds");
    int rows = 0;
    for (std::string line; std::getline(csv, line);) ++rows;
    EXPECT_EQ(rows, 6); // steps 0, 2, 4, 6, 8 and the last (9)
}

TEST(Trainer, RejectsMismatchedResolution) {
    auto cfg = tiny_config(tiny_dataset(), scratch("res"));
    cfg.image_size = 32;
    EXPECT_THROW(Trainer{cfg}, model::ConfigError);
    cfg = tiny_config(tiny_dataset(), scratch("res"));
    cfg.train_views = 7;
    EXPECT_THROW(Trainer{cfg}, model::ConfigError);
    cfg = tiny_config(scratch("no_data"), scratch("res"));
    EXPECT_THROW(Trainer{cfg}, DataError);
}

TEST(Trainer, NonFiniteLossAbortsWithDump) {
    const auto run = scratch("nan");
    Trainer a(tiny_config(tiny_dataset(), run));
    auto ckpt = a.checkpoint();
    for (auto& [name, t] : ckpt.params) {
        if (name.find("lift_weight") != std::string::npos) t.mutable_data()[0] = std::nanf("");
    }
    save_checkpoint(run / "poisoned.ckpt", ckpt);
    auto b = Trainer::resume(run / "poisoned.ckpt");
    EXPECT_THROW(b.step(), ad::NumericalError);
    EXPECT_TRUE(fs::exists(run / "nan_dump" / "batch.txt"));
    EXPECT_TRUE(fs::exists(run / "nan_dump" / "state.ckpt"));
}

TEST(Trainer, OverfitLossDropsForThreeSeeds) {
    const auto data = scratch("overfit_data");
    DatasetOptions opt;
    opt.objects = 1;
    opt.views = 6;
    opt.resolution = 16;
    opt.seed = 9;
    gen_synthetic_dataset(data, opt);
    for (std::uint64_t seed : {0u, 1u, 2u}) {
        auto cfg = tiny_config(data, scratch("overfit_run"));
        cfg.seed = seed;
        cfg.steps = 2001;
        Trainer t(cfg);
        const double first = t.step().loss;
        StepMetrics last;
        while (t.current_step() < 2001) last = t.step();
        ASSERT_EQ(last.step, 2000u);
        EXPECT_LT(last.loss, first) << "seed " << seed;
    }
}

TEST(Inference, EmitsExactlyNValidSplatsDeterministically) {
    const auto run = scratch("infer");
    const auto cfg = tiny_config(tiny_dataset(), run);
    Trainer t(cfg);
    t.step();
    const auto image = read_png(view_path(object_dir(tiny_dataset(), 0), 0, "png"));
    const auto r1 = infer(t.model(), cfg, image);
    const auto r2 = infer(t.model(), cfg, image);
    ASSERT_EQ(r1.splats.size(), cfg.n_gaussians);
    EXPECT_FALSE(model::check_invariants(r1.splats, cfg.scale_max).has_value());
    model::write_gaussian_file(run / "a.smgs", r1.splats);
    model::write_gaussian_file(run / "b.smgs", r2.splats);
    EXPECT_EQ(file_bytes(run / "a.smgs"), file_bytes(run / "b.smgs"));
    EXPECT_GE(r1.seconds, 0.0);
    EXPECT_THROW(infer(t.model(), cfg, Image(8, 8, 3)), model::ConfigError);
}

TEST(RenderViews, CountsAndMatchesGeneratedImages) {
    const auto out = scratch("render");
    const auto obj = object_dir(tiny_dataset(), 1);
    EXPECT_EQ(render_views(obj / "gaussians.smgs", obj / "cameras.txt", out / "all"), 6u);
    for (std::size_t v = 0; v < 6; ++v) {
        EXPECT_EQ(file_bytes(out / "all" / view_path("", v, "png")), file_bytes(view_path(obj, v, "png")));
        EXPECT_TRUE(fs::exists(out / "all" / view_path("", v, "smrf")));
    }
    std::ofstream(out / "none.txt") << "";
    EXPECT_EQ(render_views(obj / "gaussians.smgs", out / "none.txt", out / "none"), 0u);
    EXPECT_TRUE(fs::is_empty(out / "none"));

    std::ofstream(out / "bad.smgs") << "SMGS";
    EXPECT_THROW(render_views(out / "bad.smgs", obj / "cameras.txt", out / "x"), util::ParseError);
}

} // namespace
} // namespace sm::pipeline
