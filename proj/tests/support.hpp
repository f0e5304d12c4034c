#pragma once

#include <random>

#include "qpst/coherent.hpp"
#include "qpst/topology.hpp"

namespace qpst::gen {

inline CMatrix random_complex(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  CMatrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = cplx(g(rng), g(rng));
  return m;
}

inline RMatrix random_symmetric(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  RMatrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j) m(i, j) = m(j, i) = g(rng);
  return m;
}

/// Random network: frequencies in [-3, 3], symmetric couplings in [-1, 1]
/// with zero diagonal, diagonal damping in [0, gamma_max].
inline NetworkTopology random_topology(std::mt19937_64& rng, std::size_t n, double gamma_max = 0.5) {
  std::uniform_real_distribution<double> w(-3.0, 3.0);
  std::uniform_real_distribution<double> l(-1.0, 1.0);
  std::uniform_real_distribution<double> g(0.0, gamma_max);
  const auto nn = static_cast<Eigen::Index>(n);
  NetworkTopology t;
  t.n = n;
  t.omega.resize(nn);
  t.lambda = RMatrix::Zero(nn, nn);
  t.gamma = RMatrix::Zero(nn, nn);
  for (Eigen::Index i = 0; i < nn; ++i) {
    t.omega(i) = w(rng);
    t.gamma(i, i) = g(rng);
    for (Eigen::Index j = i + 1; j < nn; ++j) t.lambda(i, j) = t.lambda(j, i) = l(rng);
  }
  return t;
}

/// Random network whose damping matrix is a full positive semidefinite
/// B B^T (off-diagonal dissipation), scaled so its largest entry is <= gamma_max.
inline NetworkTopology random_dissipative_topology(std::mt19937_64& rng, std::size_t n, double gamma_max = 0.5) {
  NetworkTopology t = random_topology(rng, n, 0.0);
  const auto nn = static_cast<Eigen::Index>(n);
  std::normal_distribution<double> g(0.0, 1.0);
  RMatrix b(nn, nn);
  for (auto& x : b.reshaped()) x = g(rng);
  RMatrix gamma = b * b.transpose();
  gamma = 0.5 * (gamma + gamma.transpose()).eval();
  t.gamma = gamma * (gamma_max / gamma.cwiseAbs().maxCoeff());
  return t;
}

inline CoherentSuperposition random_superposition(std::mt19937_64& rng, std::size_t n, std::size_t q, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<Branch> b;
  for (std::size_t r = 0; r < q; ++r) {
    CVector beta(static_cast<Eigen::Index>(n));
    for (auto& x : beta) x = cplx(g(rng), g(rng));
    b.push_back({cplx(g(rng), g(rng)) + 0.5, beta});
  }
  return CoherentSuperposition(std::move(b));
}

}  // namespace qpst::gen
