#include "moca/kernels.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "moca/errors.hpp"

namespace moca::kernels {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// Below this many hypotheses the fork/join overhead dominates.
constexpr std::ptrdiff_t kParallelThreshold = 32;

template <class T> T *ptr_or_null(std::span<T> s) {
  return s.empty() ? nullptr : s.data();
}

} // namespace

int kernel_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_kernel_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

// ---- ALPaCA predictive --------------------------------------------------------

void alpaca_predict_forward(const AlpacaDims &d, std::span<const double> linv,
                            std::span<const double> q,
                            std::span<const double> phi,
                            std::span<const double> y,
                            std::span<const double> noise_var,
                            std::span<double> out) {
  const std::size_t n = d.features, m = d.outputs;
  const auto R = static_cast<std::ptrdiff_t>(d.hypotheses);
#pragma omp parallel if (R > kParallelThreshold)
  {
    std::vector<double> u(n);
#pragma omp for schedule(static)
    for (std::ptrdiff_t r = 0; r < R; ++r) {
      const double *L = linv.data() + r * n * n;
      const double *Q = q.data() + r * n * m;
      double s = 1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double *Li = L + i * n;
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += Li[k] * phi[k];
        u[i] = acc;
        s += phi[i] * acc;
      }
      double lp = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += Q[i * m + j] * u[i];
        const double var = s * noise_var[j];
        const double e = y[j] - mu;
        lp += -0.5 * (kLog2Pi + std::log(var) + e * e / var);
      }
      out[r] = lp;
    }
  }
}

void alpaca_predict_backward(const AlpacaDims &d, std::span<const double> linv,
                             std::span<const double> q,
                             std::span<const double> phi,
                             std::span<const double> y,
                             std::span<const double> noise_var,
                             std::span<const double> grad_out,
                             std::span<double> g_linv, std::span<double> g_q,
                             std::span<double> g_phi, std::span<double> g_y,
                             std::span<double> g_noise) {
  const std::size_t n = d.features, m = d.outputs;
  const auto R = static_cast<std::ptrdiff_t>(d.hypotheses);
  double *gL = ptr_or_null(g_linv);
  double *gQ = ptr_or_null(g_q);
  // Per-hypothesis partials of shared inputs, reduced serially below.
  std::vector<double> part_phi(g_phi.empty() ? 0 : R * n, 0.0);
  std::vector<double> part_y(g_y.empty() ? 0 : R * m, 0.0);
  std::vector<double> part_noise(g_noise.empty() ? 0 : R * m, 0.0);

#pragma omp parallel if (R > kParallelThreshold)
  {
    std::vector<double> u(n), gu(n), gmu(m), gvar(m);
#pragma omp for schedule(static)
    for (std::ptrdiff_t r = 0; r < R; ++r) {
      const double g = grad_out[r];
      if (g == 0.0) continue;
      const double *L = linv.data() + r * n * n;
      const double *Q = q.data() + r * n * m;
      double s = 1.0;
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += L[i * n + k] * phi[k];
        u[i] = acc;
        s += phi[i] * acc;
      }
      double gs = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += Q[i * m + j] * u[i];
        const double var = s * noise_var[j];
        const double e = y[j] - mu;
        gmu[j] = g * e / var;
        gvar[j] = g * 0.5 * (e * e / (var * var) - 1.0 / var);
        gs += gvar[j] * noise_var[j];
        if (!part_y.empty()) part_y[r * m + j] = -g * e / var;
        if (!part_noise.empty()) part_noise[r * m + j] = gvar[j] * s;
      }
      for (std::size_t i = 0; i < n; ++i) {
        double acc = gs * phi[i];
        for (std::size_t j = 0; j < m; ++j) acc += gmu[j] * Q[i * m + j];
        gu[i] = acc;
      }
      if (gQ) {
        double *gq = gQ + r * n * m;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gq[i * m + j] += gmu[j] * u[i];
      }
      if (gL) {
        double *gl = gL + r * n * n;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t k = 0; k < n; ++k) gl[i * n + k] += gu[i] * phi[k];
      }
      if (!part_phi.empty()) {
        double *pp = part_phi.data() + r * n;
        for (std::size_t k = 0; k < n; ++k) pp[k] = gs * u[k];
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t k = 0; k < n; ++k) pp[k] += gu[i] * L[i * n + k];
      }
    }
  }
  for (std::ptrdiff_t r = 0; r < R; ++r) {
    if (!part_phi.empty())
      for (std::size_t k = 0; k < n; ++k) g_phi[k] += part_phi[r * n + k];
    if (!part_y.empty())
      for (std::size_t j = 0; j < m; ++j) g_y[j] += part_y[r * m + j];
    if (!part_noise.empty())
      for (std::size_t j = 0; j < m; ++j) g_noise[j] += part_noise[r * m + j];
  }
}

void alpaca_predict_moments(const AlpacaDims &d, std::span<const double> linv,
                            std::span<const double> q,
                            std::span<const double> phi,
                            std::span<const double> noise_var,
                            std::span<double> mean, std::span<double> var) {
  const std::size_t n = d.features, m = d.outputs;
  const auto R = static_cast<std::ptrdiff_t>(d.hypotheses);
#pragma omp parallel if (R > kParallelThreshold)
  {
    std::vector<double> u(n);
#pragma omp for schedule(static)
    for (std::ptrdiff_t r = 0; r < R; ++r) {
      const double *L = linv.data() + r * n * n;
      const double *Q = q.data() + r * n * m;
      double s = 1.0;
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += L[i * n + k] * phi[k];
        u[i] = acc;
        s += phi[i] * acc;
      }
      for (std::size_t j = 0; j < m; ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += Q[i * m + j] * u[i];
        mean[r * m + j] = mu;
        var[r * m + j] = s * noise_var[j];
      }
    }
  }
}

// ---- ALPaCA growth ------------------------------------------------------------

void alpaca_grow_forward(const AlpacaDims &d, std::span<const double> linv0,
                         std::span<const double> linv,
                         std::span<const double> phi, std::span<double> out) {
  const std::size_t n = d.features, nn = n * n;
  const auto R = static_cast<std::ptrdiff_t>(d.hypotheses);
  std::copy(linv0.begin(), linv0.end(), out.begin());
#pragma omp parallel if (R > kParallelThreshold)
  {
    std::vector<double> u(n);
#pragma omp for schedule(static)
    for (std::ptrdiff_t r = 0; r < R; ++r) {
      const double *L = linv.data() + r * nn;
      double *O = out.data() + (r + 1) * nn;
      double s = 1.0;
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += L[i * n + k] * phi[k];
        u[i] = acc;
        s += phi[i] * acc;
      }
      const double inv_s = 1.0 / s;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k)
          O[i * n + k] =
              0.5 * (L[i * n + k] + L[k * n + i]) - u[i] * u[k] * inv_s;
    }
  }
}

void alpaca_grow_backward(const AlpacaDims &d, std::span<const double> linv,
                          std::span<const double> phi,
                          std::span<const double> grad_out,
                          std::span<double> g_linv0, std::span<double> g_linv,
                          std::span<double> g_phi) {
  const std::size_t n = d.features, nn = n * n;
  const auto R = static_cast<std::ptrdiff_t>(d.hypotheses);
  if (!g_linv0.empty())
    for (std::size_t i = 0; i < nn; ++i) g_linv0[i] += grad_out[i];
  double *gL = ptr_or_null(g_linv);
  std::vector<double> part_phi(g_phi.empty() ? 0 : R * n, 0.0);

#pragma omp parallel if (R > kParallelThreshold)
  {
    std::vector<double> u(n), gs_u(n), v(n), gsym(nn);
#pragma omp for schedule(static)
    for (std::ptrdiff_t r = 0; r < R; ++r) {
      const double *L = linv.data() + r * nn;
      const double *G = grad_out.data() + (r + 1) * nn;
      double s = 1.0;
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += L[i * n + k] * phi[k];
        u[i] = acc;
        s += phi[i] * acc;
      }
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k)
          gsym[i * n + k] = 0.5 * (G[i * n + k] + G[k * n + i]);
      double ugu = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += gsym[i * n + k] * u[k];
        gs_u[i] = acc;
        ugu += u[i] * acc;
      }
      const double c = ugu / (s * s);
      for (std::size_t i = 0; i < n; ++i) v[i] = 2.0 * gs_u[i] / s;
      if (gL) {
        double *gl = gL + r * nn;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t k = 0; k < n; ++k)
            gl[i * n + k] +=
                gsym[i * n + k] - v[i] * phi[k] + c * phi[i] * phi[k];
      }
      if (!part_phi.empty()) {
        // ∂φ = −Lᵀv + c (Lᵀφ + u)
        double *pp = part_phi.data() + r * n;
        for (std::size_t k = 0; k < n; ++k) pp[k] = c * u[k];
        for (std::size_t i = 0; i < n; ++i) {
          const double coef_v = -v[i];
          const double coef_phi = c * phi[i];
          for (std::size_t k = 0; k < n; ++k)
            pp[k] += (coef_v + coef_phi) * L[i * n + k];
        }
      }
    }
  }
  for (std::ptrdiff_t r = 0; r < R && !part_phi.empty(); ++r)
    for (std::size_t k = 0; k < n; ++k) g_phi[k] += part_phi[r * n + k];
}

// ---- PCOC joint density -------------------------------------------------------

void pcoc_joint_forward(const PcocDims &d, std::span<const double> alpha,
                        std::span<const double> q,
                        std::span<const double> prec,
                        std::span<const double> noise_var,
                        std::span<const double> z, std::span<double> out) {
  const std::size_t J = d.classes, k = d.embed;
  const auto R = static_cast<std::ptrdiff_t>(d.hypotheses);
#pragma omp parallel for schedule(static) if (R > kParallelThreshold)
  for (std::ptrdiff_t r = 0; r < R; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < J; ++j) total += alpha[r * J + j];
    const double log_total = std::log(total);
    for (std::size_t j = 0; j < J; ++j) {
      const double *qj = q.data() + (r * J + j) * k;
      const double *pj = prec.data() + (r * J + j) * k;
      const double *nj = noise_var.data() + j * k;
      double lp = std::log(alpha[r * J + j]) - log_total;
      for (std::size_t i = 0; i < k; ++i) {
        const double var = 1.0 / pj[i] + nj[i];
        const double e = z[i] - qj[i] / pj[i];
        lp += -0.5 * (kLog2Pi + std::log(var) + e * e / var);
      }
      out[r * J + j] = lp;
    }
  }
}

void pcoc_joint_backward(const PcocDims &d, std::span<const double> alpha,
                         std::span<const double> q,
                         std::span<const double> prec,
                         std::span<const double> noise_var,
                         std::span<const double> z,
                         std::span<const double> grad_out,
                         std::span<double> g_alpha, std::span<double> g_q,
                         std::span<double> g_prec, std::span<double> g_noise,
                         std::span<double> g_z) {
  const std::size_t J = d.classes, k = d.embed;
  const auto R = static_cast<std::ptrdiff_t>(d.hypotheses);
  double *gA = ptr_or_null(g_alpha);
  double *gQ = ptr_or_null(g_q);
  double *gP = ptr_or_null(g_prec);
  std::vector<double> part_noise(g_noise.empty() ? 0 : R * J * k, 0.0);
  std::vector<double> part_z(g_z.empty() ? 0 : R * k, 0.0);

#pragma omp parallel for schedule(static) if (R > kParallelThreshold)
  for (std::ptrdiff_t r = 0; r < R; ++r) {
    const double *g = grad_out.data() + r * J;
    if (gA) {
      double total = 0.0, gsum = 0.0;
      for (std::size_t j = 0; j < J; ++j) {
        total += alpha[r * J + j];
        gsum += g[j];
      }
      for (std::size_t j = 0; j < J; ++j)
        gA[r * J + j] += g[j] / alpha[r * J + j] - gsum / total;
    }
    for (std::size_t j = 0; j < J; ++j) {
      if (g[j] == 0.0) continue;
      const std::size_t base = (r * J + j) * k;
      const double *nj = noise_var.data() + j * k;
      for (std::size_t i = 0; i < k; ++i) {
        const double p = prec[base + i];
        const double var = 1.0 / p + nj[i];
        const double e = z[i] - q[base + i] / p;
        const double gm = g[j] * e / var;
        const double gv = g[j] * 0.5 * (e * e / (var * var) - 1.0 / var);
        if (gQ) gQ[base + i] += gm / p;
        if (gP) gP[base + i] += -gm * q[base + i] / (p * p) - gv / (p * p);
        if (!part_noise.empty()) part_noise[base + i] = gv;
        if (!part_z.empty()) part_z[r * k + i] += -gm;
      }
    }
  }
  for (std::ptrdiff_t r = 0; r < R; ++r) {
    if (!part_noise.empty())
      for (std::size_t i = 0; i < J * k; ++i)
        g_noise[i] += part_noise[r * J * k + i];
    if (!part_z.empty())
      for (std::size_t i = 0; i < k; ++i) g_z[i] += part_z[r * k + i];
  }
}

// ---- serial reference ------------------------------------------------------------

namespace reference {

void alpaca_predict_forward(const AlpacaDims &d, std::span<const double> linv,
                            std::span<const double> q,
                            std::span<const double> phi,
                            std::span<const double> y,
                            std::span<const double> noise_var,
                            std::span<double> out) {
  const std::size_t n = d.features, m = d.outputs;
  for (std::size_t r = 0; r < d.hypotheses; ++r) {
    const double *L = linv.data() + r * n * n;
    const double *Q = q.data() + r * n * m;
    // K̄ = Λ⁻¹ Q, μ = K̄ᵀ φ, Σ = (1 + φᵀ Λ⁻¹ φ) Σ_ε
    std::vector<double> kbar(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t p = 0; p < n; ++p)
          kbar[i * m + j] += L[i * n + p] * Q[p * m + j];
    double quad = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < n; ++p) quad += phi[i] * L[i * n + p] * phi[p];
    double lp = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double mu = 0.0;
      for (std::size_t i = 0; i < n; ++i) mu += kbar[i * m + j] * phi[i];
      const double var = (1.0 + quad) * noise_var[j];
      lp += -0.5 * std::log(2.0 * std::numbers::pi * var) -
            0.5 * (y[j] - mu) * (y[j] - mu) / var;
    }
    out[r] = lp;
  }
}

void alpaca_grow_forward(const AlpacaDims &d, std::span<const double> linv0,
                         std::span<const double> linv,
                         std::span<const double> phi, std::span<double> out) {
  const std::size_t n = d.features, nn = n * n;
  for (std::size_t i = 0; i < nn; ++i) out[i] = linv0[i];
  for (std::size_t r = 0; r < d.hypotheses; ++r) {
    const double *L = linv.data() + r * nn;
    std::vector<double> lphi(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k) lphi[i] += L[i * n + k] * phi[k];
    double denom = 1.0;
    for (std::size_t i = 0; i < n; ++i) denom += phi[i] * lphi[i];
    std::vector<double> updated(nn);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k)
        updated[i * n + k] = L[i * n + k] - lphi[i] * lphi[k] / denom;
    double *O = out.data() + (r + 1) * nn;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k)
        O[i * n + k] = 0.5 * (updated[i * n + k] + updated[k * n + i]);
  }
}

void pcoc_joint_forward(const PcocDims &d, std::span<const double> alpha,
                        std::span<const double> q,
                        std::span<const double> prec,
                        std::span<const double> noise_var,
                        std::span<const double> z, std::span<double> out) {
  const std::size_t J = d.classes, k = d.embed;
  for (std::size_t r = 0; r < d.hypotheses; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < J; ++j) total += alpha[r * J + j];
    for (std::size_t j = 0; j < J; ++j) {
      double density = alpha[r * J + j] / total;
      double log_density = std::log(density);
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t idx = (r * J + j) * k + i;
        const double mu = q[idx] / prec[idx];
        const double var = 1.0 / prec[idx] + noise_var[j * k + i];
        log_density += -0.5 * std::log(2.0 * std::numbers::pi * var) -
                       0.5 * (z[i] - mu) * (z[i] - mu) / var;
      }
      out[r * J + j] = log_density;
    }
  }
}

} // namespace reference

// ---- autodiff wrappers ------------------------------------------------------------

ad::Var alpaca_log_predictive(const ad::Var &linv, const ad::Var &q,
                              const ad::Var &phi, const ad::Var &y,
                              const ad::Var &noise_var) {
  require(linv.shape().size() == 3 && q.shape().size() == 3,
          "alpaca_log_predictive: banks must be rank 3");
  const AlpacaDims d{linv.shape()[0], linv.shape()[1], q.shape()[2]};
  require(linv.shape()[2] == d.features && q.shape()[0] == d.hypotheses &&
              q.shape()[1] == d.features && phi.size() == d.features &&
              y.size() == d.outputs && noise_var.size() == d.outputs,
          "alpaca_log_predictive: inconsistent shapes linv " +
              shape_str(linv.shape()) + ", q " + shape_str(q.shape()) +
              ", phi " + shape_str(phi.shape()) + ", y " +
              shape_str(y.shape()));
  Tensor out({d.hypotheses});
  alpaca_predict_forward(d, linv.data(), q.data(), phi.data(), y.data(),
                         noise_var.data(), out.data);
  for (double v : out.data)
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
      throw NumericalError(
          "ALPaCA predictive covariance is not positive definite");
  return ad::make_result(
      std::move(out), {linv, q, phi, y, noise_var}, [d](ad::Node &self) {
        auto grad_of = [&](std::size_t i) -> std::span<double> {
          auto &p = *self.parents[i];
          if (!p.requires_grad) return {};
          return p.grad_buffer();
        };
        alpaca_predict_backward(
            d, self.parents[0]->value.data, self.parents[1]->value.data,
            self.parents[2]->value.data, self.parents[3]->value.data,
            self.parents[4]->value.data, self.grad, grad_of(0), grad_of(1),
            grad_of(2), grad_of(3), grad_of(4));
      });
}

ad::Var alpaca_grow_linv(const ad::Var &linv0, const ad::Var &linv,
                         const ad::Var &phi) {
  require(linv.shape().size() == 3 && linv.shape()[1] == linv.shape()[2],
          "alpaca_grow_linv: bank must be R x n x n");
  const AlpacaDims d{linv.shape()[0], linv.shape()[1], 0};
  require(linv0.size() == d.features * d.features && phi.size() == d.features,
          "alpaca_grow_linv: inconsistent shapes");
  Tensor out({d.hypotheses + 1, d.features, d.features});
  alpaca_grow_forward(d, linv0.data(), linv.data(), phi.data(), out.data);
  return ad::make_result(std::move(out), {linv0, linv, phi},
                         [d](ad::Node &self) {
                           auto grad_of = [&](std::size_t i) -> std::span<double> {
                             auto &p = *self.parents[i];
                             if (!p.requires_grad) return {};
                             return p.grad_buffer();
                           };
                           alpaca_grow_backward(
                               d, self.parents[1]->value.data,
                               self.parents[2]->value.data, self.grad,
                               grad_of(0), grad_of(1), grad_of(2));
                         });
}

ad::Var pcoc_joint_logpdf(const ad::Var &alpha, const ad::Var &q,
                          const ad::Var &prec, const ad::Var &noise_var,
                          const ad::Var &z) {
  require(alpha.shape().size() == 2 && q.shape().size() == 3,
          "pcoc_joint_logpdf: alpha must be R x J and q R x J x k");
  const PcocDims d{alpha.shape()[0], alpha.shape()[1], q.shape()[2]};
  require(q.shape()[0] == d.hypotheses && q.shape()[1] == d.classes &&
              prec.shape() == q.shape() &&
              noise_var.size() == d.classes * d.embed && z.size() == d.embed,
          "pcoc_joint_logpdf: inconsistent shapes");
  Tensor out({d.hypotheses, d.classes});
  pcoc_joint_forward(d, alpha.data(), q.data(), prec.data(), noise_var.data(),
                     z.data(), out.data);
  return ad::make_result(
      std::move(out), {alpha, q, prec, noise_var, z}, [d](ad::Node &self) {
        auto grad_of = [&](std::size_t i) -> std::span<double> {
          auto &p = *self.parents[i];
          if (!p.requires_grad) return {};
          return p.grad_buffer();
        };
        pcoc_joint_backward(d, self.parents[0]->value.data,
                            self.parents[1]->value.data,
                            self.parents[2]->value.data,
                            self.parents[3]->value.data,
                            self.parents[4]->value.data, self.grad, grad_of(0),
                            grad_of(1), grad_of(2), grad_of(3), grad_of(4));
      });
}

} // namespace moca::kernels
