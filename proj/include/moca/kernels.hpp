#pragma once

// Fused kernels over a bank of R posterior statistics, one per run-length
// hypothesis. The outer loop over hypotheses is OpenMP-parallel; reductions
// over hypotheses are done serially in index order so results do not depend
// on the thread count. `reference::` holds plain serial versions written
// directly from the formulas; tests and the benchmark compare the two.

#include <cstddef>
#include <span>

#include "moca/autodiff.hpp"

namespace moca::kernels {

/// Bank of Bayesian linear regression statistics.
/// linv: R × n × n (Λ⁻¹ per hypothesis), q: R × n × m (Q = Λ K̄).
struct AlpacaDims {
  std::size_t hypotheses = 0; // R
  std::size_t features = 0;   // n
  std::size_t outputs = 0;    // m
};

/// Per hypothesis: u = Λ⁻¹φ, s = 1 + φᵀu, μ = Qᵀu, Σ = s·diag(noise_var),
/// writes log N(y; μ, Σ) into out[r].
void alpaca_predict_forward(const AlpacaDims &d, std::span<const double> linv,
                            std::span<const double> q,
                            std::span<const double> phi,
                            std::span<const double> y,
                            std::span<const double> noise_var,
                            std::span<double> out);

/// Accumulates into any non-empty gradient span.
void alpaca_predict_backward(const AlpacaDims &d, std::span<const double> linv,
                             std::span<const double> q,
                             std::span<const double> phi,
                             std::span<const double> y,
                             std::span<const double> noise_var,
                             std::span<const double> grad_out,
                             std::span<double> g_linv, std::span<double> g_q,
                             std::span<double> g_phi, std::span<double> g_y,
                             std::span<double> g_noise);

/// Predictive moments per hypothesis: mean (R × m) and variance (R × m).
void alpaca_predict_moments(const AlpacaDims &d, std::span<const double> linv,
                            std::span<const double> q,
                            std::span<const double> phi,
                            std::span<const double> noise_var,
                            std::span<double> mean, std::span<double> var);

/// out[0] = linv0; out[r+1] = sym(Λ⁻¹_r − u uᵀ / (1 + φᵀu)), u = Λ⁻¹_r φ.
/// `out` holds (R+1) × n × n.
void alpaca_grow_forward(const AlpacaDims &d, std::span<const double> linv0,
                         std::span<const double> linv,
                         std::span<const double> phi, std::span<double> out);

void alpaca_grow_backward(const AlpacaDims &d, std::span<const double> linv,
                          std::span<const double> phi,
                          std::span<const double> grad_out,
                          std::span<double> g_linv0, std::span<double> g_linv,
                          std::span<double> g_phi);

/// Bank of Gaussian discriminant statistics with diagonal covariances.
/// alpha: R × J, q and prec: R × J × k, noise_var: J × k, z: k.
struct PcocDims {
  std::size_t hypotheses = 0; // R
  std::size_t classes = 0;    // J
  std::size_t embed = 0;      // k
};

/// out[r, j] = log(α_j / Σα) + Σ_i log N(z_i; q_i/prec_i, 1/prec_i + σ²_ji).
void pcoc_joint_forward(const PcocDims &d, std::span<const double> alpha,
                        std::span<const double> q,
                        std::span<const double> prec,
                        std::span<const double> noise_var,
                        std::span<const double> z, std::span<double> out);

void pcoc_joint_backward(const PcocDims &d, std::span<const double> alpha,
                         std::span<const double> q,
                         std::span<const double> prec,
                         std::span<const double> noise_var,
                         std::span<const double> z,
                         std::span<const double> grad_out,
                         std::span<double> g_alpha, std::span<double> g_q,
                         std::span<double> g_prec, std::span<double> g_noise,
                         std::span<double> g_z);

namespace reference {

void alpaca_predict_forward(const AlpacaDims &d, std::span<const double> linv,
                            std::span<const double> q,
                            std::span<const double> phi,
                            std::span<const double> y,
                            std::span<const double> noise_var,
                            std::span<double> out);
void alpaca_grow_forward(const AlpacaDims &d, std::span<const double> linv0,
                         std::span<const double> linv,
                         std::span<const double> phi, std::span<double> out);
void pcoc_joint_forward(const PcocDims &d, std::span<const double> alpha,
                        std::span<const double> q,
                        std::span<const double> prec,
                        std::span<const double> noise_var,
                        std::span<const double> z, std::span<double> out);

} // namespace reference

// ---- autodiff wrappers ------------------------------------------------------

/// linv: R×n×n, q: R×n×m, phi: n, y: m, noise_var: m. Returns R log-densities.
ad::Var alpaca_log_predictive(const ad::Var &linv, const ad::Var &q,
                              const ad::Var &phi, const ad::Var &y,
                              const ad::Var &noise_var);

/// linv0: n×n, linv: R×n×n, phi: n. Returns (R+1)×n×n.
ad::Var alpaca_grow_linv(const ad::Var &linv0, const ad::Var &linv,
                         const ad::Var &phi);

/// alpha: R×J, q/prec: R×J×k, noise_var: J×k, z: k. Returns R×J.
ad::Var pcoc_joint_logpdf(const ad::Var &alpha, const ad::Var &q,
                          const ad::Var &prec, const ad::Var &noise_var,
                          const ad::Var &z);

/// Number of worker threads the kernels will use.
int kernel_threads();
void set_kernel_threads(int n);

} // namespace moca::kernels
