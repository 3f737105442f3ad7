// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatmamba/autodiff/params.hpp"
#include "splatmamba/autodiff/tensor.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>

namespace sm::ssm {

/// Discrete-time state matrices obtained by the bilinear (Tustin) transform.
struct Discretized {
    Eigen::MatrixXd A_bar;
    Eigen::MatrixXd B_bar;
};

/// A_bar = (I - delta/2 A)^-1 (I + delta/2 A),  B_bar = (I - delta/2 A)^-1 delta B.
/// C passes through unchanged. Throws ad::NumericalError if (I - delta/2 A) is singular.
Discretized discretize(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double delta);

/// Fused selective scan over a diagonal state matrix.
///
///   u, delta: [L x Di]   A: [Di x n]   B, C: [L x n]   D: [Di]
///
/// Per channel d and state s, with q = 1 - delta[t,d] A[d,s] / 2:
///   h[t] = (1 + delta A / 2) / q * h[t-1] + delta B[t,s] / q * u[t,d]
///   y[t,d] = sum_s C[t,s] h[t,s] + D[d] u[t,d],    h[-1] = 0.
/// Linear in L; backward recomputes nothing (the state history is kept).
template <typename T>
ad::Tensor<T> selective_scan(const ad::Tensor<T>& u,
                             const ad::Tensor<T>& delta,
                             const ad::Tensor<T>& A,
                             const ad::Tensor<T>& B,
                             const ad::Tensor<T>& C,
                             const ad::Tensor<T>& D);

/// Input-dependent SSM parameters for Di channels and state size n.
template <typename T>
struct SsmCore {
    ad::Tensor<T> A_log;   // [Di x n], A = -exp(A_log)
    ad::Tensor<T> D;       // [Di]
    ad::Tensor<T> x_proj;  // [(dt_rank + 2n) x Di] -> (dt_low, B_k, C_k)
    ad::Tensor<T> dt_proj; // [Di x dt_rank]
    ad::Tensor<T> dt_bias; // [Di]
    std::size_t d_state = 0;
    std::size_t dt_rank = 0;

    ad::Tensor<T> A() const;
    void collect(const std::string& prefix, ad::NamedParams<T>& out) const;
};

/// Projects x[L x Di] to (delta, B, C) and runs the fused scan.
template <typename T>
ad::Tensor<T> selective_scan(const ad::Tensor<T>& x, const SsmCore<T>& core);

struct MambaConfig {
    std::size_t d_model = 128;
    std::size_t d_state = 16;
    std::size_t expand = 2;
    std::size_t conv_width = 4;
    std::size_t dt_rank = 0; // 0 -> ceil(d_model / 16)
    double dt_min = 1e-3;
    double dt_max = 1e-1;
    /// Scales the output projection init; stacks of depth k use 1/sqrt(k).
    double out_proj_scale = 1.0;

    std::size_t d_inner() const { return expand * d_model; }
    std::size_t resolved_dt_rank() const { return dt_rank ? dt_rank : (d_model + 15) / 16; }
};

template <typename T>
struct MambaBlockParams {
    ad::Tensor<T> norm_gamma;  // [D]
    ad::Tensor<T> norm_beta;   // [D]
    ad::Tensor<T> in_proj;     // [2Di x D] -> (x branch, gate branch)
    ad::Tensor<T> conv_kernel; // [w x Di]
    ad::Tensor<T> conv_bias;   // [Di]
    SsmCore<T> core;
    ad::Tensor<T> out_proj;    // [D x Di]

    void collect(const std::string& prefix, ad::NamedParams<T>& out) const;
};

template <typename T>
MambaBlockParams<T> init_mamba_block(const MambaConfig& cfg, std::mt19937_64& rng);

/// Pre-norm Mamba block with residual:
///   x + out_proj( scan(silu(conv(in_x(LN x)))) * silu(in_z(LN x)) )
template <typename T>
ad::Tensor<T> mamba_block(const ad::Tensor<T>& x, const MambaBlockParams<T>& params);

} // namespace sm::ssm
