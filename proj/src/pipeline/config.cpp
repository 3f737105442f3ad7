// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "splatmamba/pipeline/config.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

namespace sm::pipeline {
namespace {

using model::ConfigError;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
    N v{};
    const char* first = text.data();
    const char* last = first + text.size();
    if constexpr (std::is_unsigned_v<N>) {
        if (!text.empty() && text[0] == '-') throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + text + "'");
    }
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last) {
        throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
    }
    if constexpr (std::is_floating_point_v<N>) {
        if (!std::isfinite(v)) throw ConfigError("config key '" + key + "': value must be finite");
    }
    return v;
}

template <typename N>
std::string format_number(N v) {
    std::array<char, 64> buf{};
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

struct Field {
    Config::KeyInfo info;
    std::function<void(Config&, const std::string&)> set;
    std::function<std::string(const Config&)> get;
};

template <typename N>
Field number_field(std::string name, std::string doc, N Config::*member) {
    Field f;
    f.info = {name, std::move(doc)};
    f.set = [name, member](Config& c, const std::string& v) { c.*member = parse_number<N>(name, v); };
    f.get = [member](const Config& c) { return format_number(c.*member); };
    return f;
}

Field string_field(std::string name, std::string doc, std::string Config::*member) {
    Field f;
    f.info = {name, std::move(doc)};
    f.set = [name, member](Config& c, const std::string& v) {
        if (v.empty()) throw ConfigError("config key '" + name + "': empty value");
        c.*member = v;
    };
    f.get = [member](const Config& c) { return c.*member; };
    return f;
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> t;
        t.push_back(number_field("image_size", "input and render resolution (square)", &Config::image_size));
        t.push_back(number_field("patch", "patch size of the image tokenizer", &Config::patch));
        t.push_back(number_field("token_channels", "image token width C", &Config::token_channels));
        t.push_back(number_field("depth", "number of conditioning Mamba layers", &Config::depth));
        t.push_back(number_field("d_model", "hidden width D", &Config::d_model));
        t.push_back(number_field("n_gaussians", "number of 3DGS tokens / output splats N", &Config::n_gaussians));
        t.push_back(number_field("embed_dim", "width of the learnable 3DGS embeddings", &Config::embed_dim));
        t.push_back(number_field("camera_hidden", "hidden width of the camera MLP", &Config::camera_hidden));
        t.push_back(number_field("d_state", "SSM state size n", &Config::d_state));
        t.push_back(number_field("conv_width", "causal depthwise conv width", &Config::conv_width));
        t.push_back(number_field("expand", "Mamba inner expansion factor", &Config::expand));
        t.push_back(number_field("decoder_hidden", "decoder MLP width", &Config::decoder_hidden));
        t.push_back(number_field("decoder_layers", "decoder MLP linear layers", &Config::decoder_layers));
        t.push_back(number_field("bins", "position bins per axis K", &Config::bins));
        t.push_back(number_field("scale_max", "upper clamp on splat scales", &Config::scale_max));
        t.push_back(number_field("init_opacity", "initial splat opacity (head bias)", &Config::init_opacity));
        t.push_back(number_field("init_scale", "initial splat scale (head bias)", &Config::init_scale));
        t.push_back(number_field("position_logit_std", "init std of the position logit weights", &Config::position_logit_std));
        t.push_back(number_field("steps", "optimizer steps", &Config::steps));
        t.push_back(number_field("lr", "AdamW learning rate (peak)", &Config::lr));
        t.push_back(number_field("lr_final", "cosine decay target; negative keeps lr constant", &Config::lr_final));
        t.push_back(number_field("lr_warmup", "linear warmup steps", &Config::lr_warmup));
        t.push_back(number_field("weight_decay", "AdamW decoupled weight decay", &Config::weight_decay));
        t.push_back(number_field("beta1", "AdamW beta1", &Config::beta1));
        t.push_back(number_field("beta2", "AdamW beta2", &Config::beta2));
        t.push_back(number_field("grad_clip", "global gradient norm clip", &Config::grad_clip));
        t.push_back(number_field("views_per_step", "supervised views per step, reference included", &Config::views_per_step));
        t.push_back(number_field("train_views", "leading views of each object used for training", &Config::train_views));
        t.push_back(number_field("lambda_mask", "weight of the alpha-mask MSE", &Config::lambda_mask));
        t.push_back(number_field("lambda_lpips", "weight of the perceptual hook", &Config::lambda_lpips));
        t.push_back(number_field("lambda_dist", "weight of the radial-polygon distance loss", &Config::lambda_dist));
        t.push_back(number_field("dist_warmup", "steps during which the distance loss is active", &Config::dist_warmup));
        t.push_back(number_field("seed", "seed for init, sampling and backgrounds", &Config::seed));
        t.push_back(number_field("object", "object index trained on", &Config::object));
        t.push_back(number_field("log_every", "metrics CSV interval", &Config::log_every));
        t.push_back(number_field("checkpoint_every", "checkpoint interval, 0 disables", &Config::checkpoint_every));
        t.push_back(number_field("eval_every", "training-view PSNR interval, 0 disables", &Config::eval_every));
        t.push_back(string_field("data_dir", "dataset directory", &Config::data_dir));
        t.push_back(string_field("run_dir", "output directory for logs and checkpoints", &Config::run_dir));
        return t;
    }();
    return table;
}

const Field& find_field(const std::string& key) {
    for (const auto& f : fields()) {
        if (f.info.name == key) return f;
    }
    throw ConfigError("unknown config key '" + key + "'");
}

} // namespace

model::BackboneConfig Config::backbone() const {
    model::BackboneConfig b;
    b.image_size = image_size;
    b.patch = patch;
    b.token_channels = token_channels;
    b.depth = depth;
    b.d_model = d_model;
    b.n_gaussians = n_gaussians;
    b.embed_dim = embed_dim;
    b.camera_hidden = camera_hidden;
    b.d_state = d_state;
    b.conv_width = conv_width;
    b.expand = expand;
    return b;
}

model::DecoderConfig Config::decoder() const {
    model::DecoderConfig d;
    d.d_model = d_model;
    d.hidden = decoder_hidden;
    d.layers = decoder_layers;
    d.bins = bins;
    d.scale_max = scale_max;
    d.init_opacity = init_opacity;
    d.init_scale = init_scale;
    d.position_logit_std = position_logit_std;
    return d;
}

ad::AdamWConfig Config::optimizer() const {
    ad::AdamWConfig o;
    o.lr = lr;
    o.weight_decay = weight_decay;
    o.beta1 = beta1;
    o.beta2 = beta2;
    return o;
}

loss::LossWeights Config::loss_weights() const {
    return {lambda_mask, lambda_lpips, lambda_dist, static_cast<long>(dist_warmup)};
}

double Config::lr_at(std::size_t step) const {
    if (lr_warmup > 0 && step < lr_warmup) {
        return lr * static_cast<double>(step + 1) / static_cast<double>(lr_warmup);
    }
    if (lr_final < 0.0 || steps <= lr_warmup) return lr;
    const double t = std::min(1.0, static_cast<double>(step - lr_warmup) / static_cast<double>(steps - lr_warmup));
    return lr_final + 0.5 * (lr - lr_final) * (1.0 + std::cos(std::numbers::pi * t));
}

void Config::validate() const {
    const auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("invalid config: " + what);
    };
    require(image_size > 0 && patch > 0 && image_size % patch == 0, "image_size must be a positive multiple of patch");
    require(token_channels > 0 && depth > 0 && d_model > 0 && n_gaussians > 0 && embed_dim > 0, "model sizes must be positive");
    require(camera_hidden > 0 && d_state > 0 && conv_width > 0 && expand > 0, "ssm sizes must be positive");
    require(decoder_hidden > 0 && decoder_layers > 0 && bins >= 2, "decoder needs hidden > 0, layers > 0, bins >= 2");
    require(scale_max > 0 && init_scale > 0 && init_scale <= scale_max, "need 0 < init_scale <= scale_max");
    require(init_opacity > 0 && init_opacity < 1, "init_opacity must lie in (0, 1)");
    require(position_logit_std >= 0, "position_logit_std must be >= 0");
    require(lr > 0 && weight_decay >= 0 && grad_clip > 0, "need lr > 0, weight_decay >= 0, grad_clip > 0");
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "betas must lie in [0, 1)");
    require(views_per_step >= 1, "views_per_step must be >= 1");
    require(train_views >= views_per_step, "train_views must be >= views_per_step");
    loss_weights().validate();
}

std::string Config::to_text() const {
    std::string out;
    for (const auto& f : fields()) out += f.info.name + " = " + f.get(*this) + "\n";
    return out;
}

void Config::set(const std::string& key, const std::string& value) {
    find_field(key).set(*this, trim(value));
}

std::string Config::get(const std::string& key) const {
    return find_field(key).get(*this);
}

void Config::apply_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        try {
            set(trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void Config::apply_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    apply_text(ss.str(), path.string());
}

Config Config::preset(const std::string& name) {
    Config c;
    if (name == "toy") return c;
    if (name == "full") {
        c.image_size = 512;
        c.patch = 16; // 512 is not a multiple of 14; 16 keeps the token grid whole
        c.token_channels = 768;
        c.depth = 10;
        c.d_model = 1024;
        c.n_gaussians = 16384;
        c.embed_dim = 512;
        c.decoder_hidden = 64;
        c.decoder_layers = 10;
        c.views_per_step = 6;
        c.train_views = 48;
        c.lr = 1e-4;
        c.weight_decay = 0.05;
        c.grad_clip = 1.0;
        c.lambda_mask = 0.01;
        c.lambda_lpips = 0.1;
        return c;
    }
    throw ConfigError("unknown preset '" + name + "' (expected toy or full)");
}

const std::vector<Config::KeyInfo>& Config::keys() {
    static const std::vector<KeyInfo> k = [] {
        std::vector<KeyInfo> out;
        for (const auto& f : fields()) out.push_back(f.info);
        return out;
    }();
    return k;
}

} // namespace sm::pipeline
