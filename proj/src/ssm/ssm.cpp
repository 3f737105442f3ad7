// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "splatmamba/ssm/ssm.hpp"

#include "splatmamba/autodiff/ops.hpp"

#include <cmath>

namespace sm::ssm {

Discretized discretize(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double delta) {
    if (A.rows() != A.cols() || B.rows() != A.rows()) {
        throw ad::DimensionError("discretize: A must be square and B must have as many rows as A");
    }
    const auto n = A.rows();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd lhs = I - (delta / 2.0) * A;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(lhs);
    if (!lu.isInvertible()) {
        throw ad::NumericalError("discretize: (I - delta/2 A) is singular");
    }
    return {lu.solve(I + (delta / 2.0) * A), lu.solve(delta * B)};
}

template <typename T>
ad::Tensor<T> selective_scan(const ad::Tensor<T>& u,
                             const ad::Tensor<T>& delta,
                             const ad::Tensor<T>& A,
                             const ad::Tensor<T>& B,
                             const ad::Tensor<T>& C,
                             const ad::Tensor<T>& D) {
    if (u.rank() != 2 || delta.shape() != u.shape() || A.rank() != 2 || B.rank() != 2 || C.shape() != B.shape() ||
        D.rank() != 1) {
        throw ad::DimensionError("selective_scan: bad operand ranks");
    }
    const std::size_t len = u.dim(0), di = u.dim(1), n = A.dim(1);
    if (len < 1 || A.dim(0) != di || B.dim(0) != len || B.dim(1) != n || D.dim(0) != di) {
        throw ad::DimensionError("selective_scan: u " + ad::shape_str(u.shape()) + ", A " + ad::shape_str(A.shape()) +
                                 ", B " + ad::shape_str(B.shape()) + ", D " + ad::shape_str(D.shape()));
    }

    const T* uv = u.data().data();
    const T* dv = delta.data().data();
    const T* av = A.data().data();
    const T* bv = B.data().data();
    const T* cv = C.data().data();
    const T* Dv = D.data().data();

    // history[t][d][s]; only kept when someone needs gradients
    const bool keep = u.requires_grad() || delta.requires_grad() || A.requires_grad() || B.requires_grad() ||
                      C.requires_grad() || D.requires_grad();
    std::vector<T> history(keep ? len * di * n : 0);
    std::vector<T> h(di * n, T(0));
    std::vector<T> y(len * di);
    for (std::size_t t = 0; t < len; ++t) {
        const T* bt = bv + t * n;
        const T* ct = cv + t * n;
        for (std::size_t d = 0; d < di; ++d) {
            const T dt = dv[t * di + d];
            const T x = uv[t * di + d];
            const T half = dt * T(0.5);
            T* hd = h.data() + d * n;
            const T* ad = av + d * n;
            T acc = 0;
            for (std::size_t s = 0; s < n; ++s) {
                const T inv_q = T(1) / (T(1) - half * ad[s]);
                hd[s] = (T(1) + half * ad[s]) * inv_q * hd[s] + dt * bt[s] * inv_q * x;
                acc += ct[s] * hd[s];
            }
            y[t * di + d] = acc + Dv[d] * x;
        }
        if (keep) {
            std::copy(h.begin(), h.end(), history.begin() + static_cast<std::ptrdiff_t>(t * di * n));
        }
    }

    return ad::make_op<T>(
        "selective_scan", {len, di}, std::move(y), {u, delta, A, B, C, D},
        [len, di, n, history = std::move(history)](ad::detail::Node<T>& self) {
            auto& un = *self.inputs[0];
            auto& deln = *self.inputs[1];
            auto& an = *self.inputs[2];
            auto& bn = *self.inputs[3];
            auto& cn = *self.inputs[4];
            auto& Dn = *self.inputs[5];
            std::vector<T> gu(len * di, T(0)), gdelta(len * di, T(0)), gA(di * n, T(0)), gB(len * n, T(0)),
                gC(len * n, T(0)), gD(di, T(0));
            std::vector<T> dh(di * n, T(0));
            const T* gy = self.grad.data();
            for (std::size_t t = len; t-- > 0;) {
                const T* bt = bn.value.data() + t * n;
                const T* ct = cn.value.data() + t * n;
                const T* ht = history.data() + t * di * n;
                const T* hp = t > 0 ? history.data() + (t - 1) * di * n : nullptr;
                for (std::size_t d = 0; d < di; ++d) {
                    const T dt = deln.value[t * di + d];
                    const T x = un.value[t * di + d];
                    const T g = gy[t * di + d];
                    const T half = dt * T(0.5);
                    const T* ad = an.value.data() + d * n;
                    T* dhd = dh.data() + d * n;
                    T du = Dn.value[d] * g;
                    T ddt = 0;
                    gD[d] += x * g;
                    for (std::size_t s = 0; s < n; ++s) {
                        const std::size_t ds = d * n + s;
                        const T h_prev = hp ? hp[ds] : T(0);
                        gC[t * n + s] += ht[ds] * g;
                        const T dhs = dhd[s] + ct[s] * g;
                        const T inv_q = T(1) / (T(1) - half * ad[s]);
                        const T inv_q2 = inv_q * inv_q;
                        const T a_bar = (T(1) + half * ad[s]) * inv_q;
                        const T b_bar = dt * bt[s] * inv_q;
                        const T da = dhs * h_prev;
                        const T db = dhs * x;
                        du += dhs * b_bar;
                        ddt += (da * ad[s] + db * bt[s]) * inv_q2;
                        gA[ds] += (da * dt + db * dt * half * bt[s]) * inv_q2;
                        gB[t * n + s] += db * dt * inv_q;
                        dhd[s] = dhs * a_bar;
                    }
                    gu[t * di + d] += du;
                    gdelta[t * di + d] += ddt;
                }
            }
            auto flush = [](ad::detail::Node<T>& node, const std::vector<T>& g) {
                if (!node.requires_grad) {
                    return;
                }
                auto& buf = node.grad_buffer();
                for (std::size_t i = 0; i < buf.size(); ++i) {
                    buf[i] += g[i];
                }
            };
            flush(un, gu);
            flush(deln, gdelta);
            flush(an, gA);
            flush(bn, gB);
            flush(cn, gC);
            flush(Dn, gD);
        });
}

template <typename T>
ad::Tensor<T> SsmCore<T>::A() const {
    return ad::scale(ad::exp(A_log), T(-1));
}

template <typename T>
void SsmCore<T>::collect(const std::string& prefix, ad::NamedParams<T>& out) const {
    out.emplace_back(prefix + "A_log", A_log);
    out.emplace_back(prefix + "D", D);
    out.emplace_back(prefix + "x_proj", x_proj);
    out.emplace_back(prefix + "dt_proj", dt_proj);
    out.emplace_back(prefix + "dt_bias", dt_bias);
}

template <typename T>
ad::Tensor<T> selective_scan(const ad::Tensor<T>& x, const SsmCore<T>& core) {
    const std::size_t r = core.dt_rank, n = core.d_state;
    auto proj = ad::linear(x, core.x_proj);
    auto dt_low = ad::slice_cols(proj, 0, r);
    auto B = ad::slice_cols(proj, r, r + n);
    auto C = ad::slice_cols(proj, r + n, r + 2 * n);
    auto delta = ad::softplus(ad::linear(dt_low, core.dt_proj, core.dt_bias));
    return selective_scan(x, delta, core.A(), B, C, core.D);
}

template <typename T>
void MambaBlockParams<T>::collect(const std::string& prefix, ad::NamedParams<T>& out) const {
    out.emplace_back(prefix + "norm_gamma", norm_gamma);
    out.emplace_back(prefix + "norm_beta", norm_beta);
    out.emplace_back(prefix + "in_proj", in_proj);
    out.emplace_back(prefix + "conv_kernel", conv_kernel);
    out.emplace_back(prefix + "conv_bias", conv_bias);
    core.collect(prefix + "ssm.", out);
    out.emplace_back(prefix + "out_proj", out_proj);
}

template <typename T>
MambaBlockParams<T> init_mamba_block(const MambaConfig& cfg, std::mt19937_64& rng) {
    const std::size_t dm = cfg.d_model, di = cfg.d_inner(), n = cfg.d_state, w = cfg.conv_width;
    const std::size_t r = cfg.resolved_dt_rank();
    MambaBlockParams<T> p;
    p.norm_gamma = ad::constant_param<T>({dm}, 1.0);
    p.norm_beta = ad::constant_param<T>({dm}, 0.0);
    p.in_proj = ad::uniform_param<T>({2 * di, dm}, 1.0 / std::sqrt(static_cast<double>(dm)), rng);
    p.conv_kernel = ad::uniform_param<T>({w, di}, 1.0 / std::sqrt(static_cast<double>(w)), rng);
    p.conv_bias = ad::uniform_param<T>({di}, 1.0 / std::sqrt(static_cast<double>(w)), rng);

    auto& core = p.core;
    core.d_state = n;
    core.dt_rank = r;
    std::vector<T> a_log(di * n);
    for (std::size_t d = 0; d < di; ++d) {
        for (std::size_t s = 0; s < n; ++s) {
            a_log[d * n + s] = static_cast<T>(std::log(static_cast<double>(s + 1)));
        }
    }
    core.A_log = ad::Tensor<T>({di, n}, std::move(a_log), true);
    core.D = ad::constant_param<T>({di}, 1.0);
    core.x_proj = ad::uniform_param<T>({r + 2 * n, di}, 1.0 / std::sqrt(static_cast<double>(di)), rng);
    core.dt_proj = ad::uniform_param<T>({di, r}, 1.0 / std::sqrt(static_cast<double>(r)), rng);
    // softplus(dt_bias) is log-uniform in [dt_min, dt_max]
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<T> bias(di);
    for (auto& b : bias) {
        const double dt = std::exp(std::log(cfg.dt_min) + unit(rng) * (std::log(cfg.dt_max) - std::log(cfg.dt_min)));
        b = static_cast<T>(dt + std::log(-std::expm1(-dt)));
    }
    core.dt_bias = ad::Tensor<T>({di}, std::move(bias), true);
    p.out_proj = ad::uniform_param<T>({dm, di}, cfg.out_proj_scale / std::sqrt(static_cast<double>(di)), rng);
    return p;
}

template <typename T>
ad::Tensor<T> mamba_block(const ad::Tensor<T>& x, const MambaBlockParams<T>& p) {
    const std::size_t di = p.conv_bias.dim(0);
    auto xn = ad::layer_norm(x, p.norm_gamma, p.norm_beta);
    auto xz = ad::linear(xn, p.in_proj);
    auto xi = ad::slice_cols(xz, 0, di);
    auto z = ad::slice_cols(xz, di, 2 * di);
    auto xc = ad::silu(ad::add(ad::depthwise_conv1d(xi, p.conv_kernel, true), p.conv_bias));
    auto y = ad::mul(selective_scan(xc, p.core), ad::silu(z));
    return ad::add(x, ad::linear(y, p.out_proj));
}

#define SM_INSTANTIATE_SSM(T)                                                                                   \
    template ad::Tensor<T> selective_scan(const ad::Tensor<T>&, const ad::Tensor<T>&, const ad::Tensor<T>&,      \
                                          const ad::Tensor<T>&, const ad::Tensor<T>&, const ad::Tensor<T>&);    \
    template ad::Tensor<T> selective_scan(const ad::Tensor<T>&, const SsmCore<T>&);                             \
    template struct SsmCore<T>;                                                                                 \
    template struct MambaBlockParams<T>;                                                                        \
    template MambaBlockParams<T> init_mamba_block(const MambaConfig&, std::mt19937_64&);                        \
    template ad::Tensor<T> mamba_block(const ad::Tensor<T>&, const MambaBlockParams<T>&);

SM_INSTANTIATE_SSM(float)
SM_INSTANTIATE_SSM(double)

#undef SM_INSTANTIATE_SSM

} // namespace sm::ssm
