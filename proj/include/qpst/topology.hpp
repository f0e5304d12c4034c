#pragma once

#include <cmath>
#include <string>

#include "qpst/types.hpp"

namespace qpst {

/// N oscillators with frequencies, a symmetric zero-diagonal coupling matrix
/// and a symmetric damping matrix, all in units of a reference coupling.
struct NetworkTopology {
  std::size_t n = 0;
  RVector omega;
  RMatrix lambda;
  RMatrix gamma;
  Warnings warnings;

  void validate() const {
    const auto nn = static_cast<Eigen::Index>(n);
    if (n < 2) throw Error("topology: a network needs at least 2 oscillators");
    if (omega.size() != nn) throw Error("topology: omega has " + std::to_string(omega.size()) + " entries, expected " + std::to_string(n));
    if (lambda.rows() != nn || lambda.cols() != nn) throw Error("topology: lambda must be " + std::to_string(n) + "x" + std::to_string(n));
    if (gamma.rows() != nn || gamma.cols() != nn) throw Error("topology: gamma must be " + std::to_string(n) + "x" + std::to_string(n));
    for (Eigen::Index m = 0; m < nn; ++m) {
      if (lambda(m, m) != 0.0) throw Error("topology: lambda has a nonzero diagonal entry at " + std::to_string(m + 1));
      if (gamma(m, m) < 0.0) throw Error("topology: negative damping rate at oscillator " + std::to_string(m + 1));
      for (Eigen::Index k = m + 1; k < nn; ++k) {
        if (lambda(m, k) != lambda(k, m)) throw Error("topology: lambda is not symmetric");
        if (gamma(m, k) != gamma(k, m)) throw Error("topology: gamma is not symmetric");
      }
    }
  }

  [[nodiscard]] bool ideal() const { return gamma.cwiseAbs().maxCoeff() == 0.0; }

  /// H_mm = omega_m, H_mn = lambda_mn.
  [[nodiscard]] RMatrix hamiltonian() const {
    RMatrix h = lambda;
    h.diagonal() = omega;
    return h;
  }
};

/// Sender (1) and receiver (N) at omega_end, transmitters 2..N-1 at
/// omega_mid with decay gamma_mid; end bonds lambda_end, interior bonds
/// epsilon * lambda_end.
struct ChainSpec {
  std::size_t n = 2;
  double omega_end = 0.0;
  double omega_mid = 0.0;
  double lambda_end = 1.0;
  double epsilon = 1.0;
  double gamma_mid = 0.0;

  /// Same chain with every rate divided by lambda_end (tau = lambda t).
  [[nodiscard]] ChainSpec scaled() const {
    if (!(lambda_end > 0.0)) throw Error("chain: lambda_end must be positive to rescale");
    ChainSpec s = *this;
    s.omega_end /= lambda_end;
    s.omega_mid /= lambda_end;
    s.gamma_mid /= lambda_end;
    s.lambda_end = 1.0;
    return s;
  }
};

struct RegimeThresholds {
  double mu = 0.1;
  double eta = 0.1;
  double eps_mu_sq = 0.1;
};

/// Dimensionless parameters of the tunneling regime.
struct ScaledParams {
  double mu = 0.0;           // lambda / (Omega - omega)
  double eta = 0.0;          // Gamma / lambda
  double varpi = 0.0;        // omega / lambda
  double delta_minus = 0.0;  // Omega - omega
  double delta_plus = 0.0;   // Omega + omega
  double epsilon = 0.0;
  bool mu_small = false;
  bool eta_small = false;
  bool eps_mu_sq_small = false;

  [[nodiscard]] bool perturbative() const { return mu_small && eta_small; }
};

/// H^D = i H + Gamma / 2.
struct DissipativeGenerator {
  CMatrix matrix;
  bool hermitian_part_ideal = false;

  [[nodiscard]] std::size_t n() const { return static_cast<std::size_t>(matrix.rows()); }
};

inline DissipativeGenerator build_general(const NetworkTopology& topology) {
  topology.validate();
  DissipativeGenerator gen;
  gen.matrix = kI * topology.hamiltonian().cast<cplx>() + 0.5 * topology.gamma.cast<cplx>();
  gen.hermitian_part_ideal = topology.ideal();
  return gen;
}

inline NetworkTopology build_chain(const ChainSpec& spec) {
  if (spec.n < 2) throw Error("chain: n must be at least 2, got " + std::to_string(spec.n));
  if (spec.epsilon < 0.0) throw Error("chain: epsilon must be non-negative");
  if (spec.gamma_mid < 0.0) throw Error("chain: transmitter decay must be non-negative");

  const auto n = static_cast<Eigen::Index>(spec.n);
  NetworkTopology t;
  t.n = spec.n;
  t.omega = RVector::Constant(n, spec.omega_mid);
  t.omega(0) = spec.omega_end;
  t.omega(n - 1) = spec.omega_end;
  t.lambda = RMatrix::Zero(n, n);
  t.gamma = RMatrix::Zero(n, n);
  for (Eigen::Index m = 0; m + 1 < n; ++m) {
    const bool end_bond = (m == 0) || (m + 2 == n);
    const double bond = end_bond ? spec.lambda_end : spec.epsilon * spec.lambda_end;
    t.lambda(m, m + 1) = bond;
    t.lambda(m + 1, m) = bond;
  }
  for (Eigen::Index m = 1; m + 1 < n; ++m) t.gamma(m, m) = spec.gamma_mid;

  if (spec.n == 2 && (spec.epsilon != 1.0 || spec.gamma_mid != 0.0 || spec.omega_mid != spec.omega_end)) {
    t.warnings.emplace_back("chain: n == 2 has no transmitters; epsilon, omega_mid and gamma_mid are ignored");
  }
  return t;
}

/// Mirror-symmetric chain with lambda_{m,m+1} = lambda * sqrt(m (N - m)) and a
/// common frequency; transfers perfectly at tau = pi / (2 lambda).
inline NetworkTopology build_pst_chain(std::size_t n, double lambda, double omega) {
  if (n < 2) throw Error("pst chain: n must be at least 2");
  if (!(lambda > 0.0)) throw Error("pst chain: lambda must be positive");
  const auto nn = static_cast<Eigen::Index>(n);
  NetworkTopology t;
  t.n = n;
  t.omega = RVector::Constant(nn, omega);
  t.lambda = RMatrix::Zero(nn, nn);
  t.gamma = RMatrix::Zero(nn, nn);
  for (Eigen::Index m = 1; m < nn; ++m) {
    const double bond = lambda * std::sqrt(static_cast<double>(m * (nn - m)));
    t.lambda(m - 1, m) = bond;
    t.lambda(m, m - 1) = bond;
  }
  return t;
}

inline ScaledParams scaled_params(const ChainSpec& spec, RegimeThresholds thresholds = {}) {
  const double delta_minus = spec.omega_mid - spec.omega_end;
  if (delta_minus == 0.0) throw Error("scaled params: Omega == omega, the tunneling regime is undefined on resonance");
  if (!(spec.lambda_end > 0.0)) throw Error("scaled params: lambda_end must be positive");
  ScaledParams p;
  p.delta_minus = delta_minus;
  p.delta_plus = spec.omega_mid + spec.omega_end;
  p.mu = spec.lambda_end / delta_minus;
  p.eta = spec.gamma_mid / spec.lambda_end;
  p.varpi = spec.omega_end / spec.lambda_end;
  p.epsilon = spec.epsilon;
  p.mu_small = std::abs(p.mu) < thresholds.mu;
  p.eta_small = std::abs(p.eta) < thresholds.eta;
  p.eps_mu_sq_small = (spec.epsilon * p.mu) * (spec.epsilon * p.mu) < thresholds.eps_mu_sq;
  return p;
}

}  // namespace qpst
