// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "splatmamba/pipeline/trainer.hpp"

#include "splatmamba/autodiff/ops.hpp"
#include "splatmamba/pipeline/metrics.hpp"
#include "splatmamba/render/splat.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace sm::pipeline {
namespace {

using Clock = std::chrono::steady_clock;

constexpr std::array<double, 3> kWhite{1.0, 1.0, 1.0};

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint32_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
    return std::mt19937_64(seq);
}

ad::Tensor<float> mask_tensor(const loss::Mask& m) {
    std::vector<float> v(m.data.begin(), m.data.end());
    return ad::Tensor<float>({static_cast<std::size_t>(m.height), static_cast<std::size_t>(m.width), 1}, std::move(v));
}

std::string rng_text(const std::mt19937_64& rng) {
    std::ostringstream ss;
    ss << rng;
    return ss.str();
}

Image rgb_image(const render::RenderedImage& img) { return view_images(img, {0, 0, 0}).rgb; }

std::string numbered(const char* stem, std::size_t i, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%03zu.%s", stem, i, ext);
    return buf;
}

} // namespace

Trainer::Trainer(Config cfg) : Trainer(std::move(cfg), nullptr) {}

Trainer::Trainer(Config cfg, const Checkpoint* ckpt) : cfg_(std::move(cfg)) {
    cfg_.validate();
    data_ = load_object(cfg_.data_dir, cfg_.object);
    const auto res = static_cast<std::size_t>(data_.cameras.front().width);
    if (res != cfg_.image_size || static_cast<std::size_t>(data_.cameras.front().height) != cfg_.image_size) {
        throw model::ConfigError("dataset resolution " + std::to_string(res) + " does not match image_size " +
                                 std::to_string(cfg_.image_size));
    }
    if (cfg_.train_views > data_.cameras.size()) {
        throw model::ConfigError("train_views = " + std::to_string(cfg_.train_views) + " but the object has only " +
                                 std::to_string(data_.cameras.size()) + " views");
    }
    reference_ = select_reference_view(std::span<const loss::Mask>(data_.masks.data(), cfg_.train_views));
    for (std::size_t v = 0; v < cfg_.train_views; ++v) polygons_.push_back(loss::mask_to_radial_polygon(data_.masks[v]));

    if (ckpt) {
        model_ = restore_model(*ckpt);
        std::istringstream ss(ckpt->rng_state);
        ss >> rng_;
        if (!ss) throw util::ParseError("checkpoint: unreadable RNG state");
        step_ = ckpt->step;
    } else {
        auto init_rng = derived_rng(cfg_.seed, 1);
        model_ = init_model<float>(cfg_, init_rng);
        rng_ = derived_rng(cfg_.seed, 2);
    }
    optimizer_ = std::make_unique<ad::AdamW<float>>(ad::tensors_of(model_.named()), cfg_.optimizer());
    if (ckpt) {
        auto state = ckpt->optimizer;
        state.config = cfg_.optimizer();
        optimizer_->load_state(std::move(state));
    }
}

Trainer Trainer::resume(const std::filesystem::path& checkpoint, const std::string& overrides) {
    const auto ckpt = load_checkpoint(checkpoint);
    auto cfg = ckpt.config;
    cfg.apply_text(overrides, "overrides");
    return Trainer(std::move(cfg), &ckpt);
}

std::vector<std::size_t> Trainer::training_views() const {
    std::vector<std::size_t> v(cfg_.train_views);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
    return v;
}

std::vector<std::size_t> Trainer::held_out_views() const {
    std::vector<std::size_t> v;
    for (std::size_t i = cfg_.train_views; i < data_.cameras.size(); ++i) v.push_back(i);
    return v;
}

TrainSample Trainer::sample() {
    TrainSample s;
    s.reference = reference_;
    s.views.push_back(reference_);
    std::vector<std::size_t> pool;
    for (std::size_t v = 0; v < cfg_.train_views; ++v) {
        if (v != reference_) pool.push_back(v);
    }
    // partial Fisher-Yates
    for (std::size_t k = 0; k + 1 < cfg_.views_per_step; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
        std::swap(pool[k], pool[pick(rng_)]);
        s.views.push_back(pool[k]);
    }
    s.background = loss::sample_background(rng_);
    return s;
}

StepMetrics Trainer::step() {
    const auto t0 = Clock::now();
    const auto s = sample();
    StepMetrics m;
    m.step = step_;
    m.lr = cfg_.lr_at(step_);
    optimizer_->set_lr(m.lr);

    const auto input = image_tensor<float>(composite(data_.rgba[s.reference], s.background), cfg_);
    const auto g = predict(model_, cfg_, input, data_.cameras[s.reference]);
    const ad::Tensor<float> bg({3}, std::vector<float>(s.background.begin(), s.background.end()));
    const auto weights = cfg_.loss_weights();
    const bool use_dist = step_ < cfg_.dist_warmup && cfg_.lambda_dist > 0.0;

    ad::Tensor<float> total;
    for (const auto v : s.views) {
        const auto pred = render::render(g, data_.cameras[v], bg);
        const auto gt = image_tensor<float>(composite(data_.rgba[v], s.background), cfg_);
        ad::Tensor<float> dist;
        if (use_dist) {
            const auto pc = render::project_centers(g.positions, data_.cameras[v]);
            dist = loss::dist_loss(pc.uv, pc.visible, data_.masks[v], polygons_[v]);
        }
        const auto terms = loss::total_loss(pred, gt, mask_tensor(data_.masks[v]), dist, weights, static_cast<long>(step_));
        total = total.defined() ? ad::add(total, terms.total) : terms.total;
        m.rgb += terms.rgb;
        m.mask += terms.mask;
        m.dist += terms.dist;
    }
    const double k = static_cast<double>(s.views.size());
    const auto loss = ad::scale(total, static_cast<float>(1.0 / k));
    m.loss = loss.item();
    m.rgb /= k;
    m.mask /= k;
    m.dist /= k;
    m.psnr = psnr_from_mse(m.rgb);
    if (!std::isfinite(m.loss)) {
        dump_nan(s, g, "non-finite loss");
        throw ad::NumericalError("step " + std::to_string(step_) + ": non-finite loss; diagnostics in " +
                                 (std::filesystem::path(cfg_.run_dir) / "nan_dump").string());
    }
    ad::backward(loss);
    const auto& params = optimizer_->params();
    m.grad_norm = ad::clip_grad_norm(params, cfg_.grad_clip);
    if (!std::isfinite(m.grad_norm)) {
        dump_nan(s, g, "non-finite gradient");
        throw ad::NumericalError("step " + std::to_string(step_) + ": non-finite gradient; diagnostics in " +
                                 (std::filesystem::path(cfg_.run_dir) / "nan_dump").string());
    }
    optimizer_->step();
    optimizer_->zero_grad();
    ++step_;
    m.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return m;
}

void Trainer::dump_nan(const TrainSample& s, const model::GaussianSet<float>& g, const std::string& what) const {
    const auto dir = std::filesystem::path(cfg_.run_dir) / "nan_dump";
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "batch.txt");
        out << std::setprecision(17) << "reason = " << what << "\nstep = " << step_ << "\nobject = " << data_.index
            << "\nreference = " << s.reference << "\nviews =";
        for (auto v : s.views) out << ' ' << v;
        out << "\nbackground = " << s.background[0] << ' ' << s.background[1] << ' ' << s.background[2] << '\n';
    }
    // raw predicted records, written without validation since they may hold NaNs
    util::ByteWriter w;
    const auto records = model::flatten(model::to_splats(g));
    w.array(std::span<const float>(records));
    w.save(dir / "prediction.f32");
    write_png(dir / "reference_input.png", composite(data_.rgba[s.reference], s.background));
    save_checkpoint(dir / "state.ckpt", checkpoint());
}

void Trainer::run(std::ostream* log) {
    const std::filesystem::path dir(cfg_.run_dir);
    std::filesystem::create_directories(dir);
    {
        std::ofstream c(dir / "config.txt", std::ios::trunc);
        c << cfg_.to_text();
    }
    const bool fresh = step_ == 0;
    std::ofstream csv(dir / "metrics.csv", fresh ? std::ios::trunc : std::ios::app);
    if (!csv) throw std::runtime_error("cannot write " + (dir / "metrics.csv").string());
    csv << std::setprecision(9);
    if (fresh) csv << "step,loss,rgb,mask,dist,psnr,grad_norm,lr,seconds\n";
    if (log) {
        *log << "training object " << data_.index << " from " << cfg_.data_dir << ", reference view " << reference_ << ", "
             << cfg_.train_views << " training views, steps " << step_ << ".." << cfg_.steps << '\n';
    }
    const auto save_to = [&](const std::string& name) { save(dir / name); };
    while (step_ < cfg_.steps) {
        const auto m = step();
        const bool last = step_ == cfg_.steps;
        if (cfg_.log_every > 0 && (m.step % cfg_.log_every == 0 || last)) {
            csv << m.step << ',' << m.loss << ',' << m.rgb << ',' << m.mask << ',' << m.dist << ',' << m.psnr << ','
                << m.grad_norm << ',' << m.lr << ',' << m.seconds << '\n';
            csv.flush();
            if (log) {
                *log << std::fixed << std::setprecision(5) << "step " << m.step << " loss " << m.loss << " rgb " << m.rgb
                     << " psnr " << std::setprecision(2) << m.psnr << " |g| " << std::setprecision(3) << m.grad_norm << " "
                     << std::setprecision(3) << m.seconds << "s\n"
                     << std::defaultfloat;
            }
        }
        if (cfg_.eval_every > 0 && (step_ % cfg_.eval_every == 0 || last) && log) {
            *log << "eval step " << step_ << ": train-view PSNR " << std::fixed << std::setprecision(2)
                 << mean_psnr(training_views()) << " dB\n"
                 << std::defaultfloat;
        }
        if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0) save_to(numbered("step", step_, "ckpt"));
    }
    save_to("final.ckpt");
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.config = cfg_;
    c.step = step_;
    c.rng_state = rng_text(rng_);
    c.params = model_.named();
    c.optimizer = optimizer_->state();
    return c;
}

void Trainer::save(const std::filesystem::path& path) const { save_checkpoint(path, checkpoint()); }

model::GaussianSet<float> Trainer::predict_reference(const std::array<double, 3>& background) const {
    const auto input = image_tensor<float>(composite(data_.rgba[reference_], background), cfg_);
    return predict(model_, cfg_, input, data_.cameras[reference_]);
}

double Trainer::mean_psnr(const std::vector<std::size_t>& views) const {
    if (views.empty()) return 0.0;
    const auto splats = model::to_splats(predict_reference(kWhite));
    double acc = 0;
    for (const auto v : views) {
        const auto img = render::render(splats, data_.cameras[v], kWhite);
        acc += psnr(rgb_image(img), composite(data_.rgba[v], kWhite));
    }
    return acc / static_cast<double>(views.size());
}

InferResult infer(const ReconModel<float>& m, const Config& cfg, const Image& image, const std::optional<model::Camera>& camera) {
    const auto t0 = Clock::now();
    const Image rgb = image.channels == 4 ? composite(image, kWhite) : to_rgb(image);
    const auto input = image_tensor<float>(rgb, cfg);
    const auto cam = camera ? *camera : model::Camera::normalized_reference(static_cast<int>(cfg.image_size), static_cast<int>(cfg.image_size));
    InferResult r;
    r.splats = model::to_splats(predict(m, cfg, input, cam));
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    if (const auto bad = model::check_invariants(r.splats, cfg.scale_max)) {
        throw ad::NumericalError("inference produced an invalid splat: " + *bad);
    }
    return r;
}

std::size_t render_views(const std::filesystem::path& gaussians_file,
                         const std::filesystem::path& cameras_file,
                         const std::filesystem::path& out_dir,
                         const std::array<double, 3>& background) {
    const auto splats = model::read_gaussian_file(gaussians_file);
    const auto cams = read_cameras(cameras_file);
    std::filesystem::create_directories(out_dir);
    for (std::size_t i = 0; i < cams.size(); ++i) {
        const auto views = view_images(render::render(splats, cams[i], background), background);
        write_png(out_dir / numbered("view", i, "png"), views.rgb);
        write_raw_image(out_dir / numbered("view", i, "smrf"), views.rgba);
    }
    return cams.size();
}

} // namespace sm::pipeline
