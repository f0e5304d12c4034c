#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <utility>

#include <Eigen/LU>

#include "qpst/linalg/expm.hpp"
#include "qpst/linalg/jacobi.hpp"
#include "qpst/linalg/schur.hpp"
#include "qpst/topology.hpp"
#include "qpst/types.hpp"

namespace qpst {

/// |Im(W) tau| beyond which a phase is no longer trusted to 1e-6 rad.
inline constexpr double kPhaseBudget = 1e12;
/// ||H^D tau||_1 beyond which the scaling-and-squaring path loses ~1e-6.
inline constexpr double kExpmNormBudget = 1e9;

struct PhaseFactor {
  cplx value;
  double reduced_phase = 0.0;  // Im(W) tau mod 2 pi, in (-pi, pi]
  bool precise = true;
};

/// exp(-W tau) with the phase Im(W) tau formed exactly as a two-term product
/// (fma) and reduced modulo a double-double 2 pi before the trig calls.
inline PhaseFactor phase_accurate_exp(cplx eigenvalue, double tau) {
  constexpr double two_pi_hi = 6.283185307179586;
  constexpr double two_pi_lo = 2.4492935982947064e-16;

  const double w = eigenvalue.imag();
  const double hi = w * tau;
  const double lo = std::fma(w, tau, -hi);

  PhaseFactor out;
  out.precise = std::abs(hi) <= kPhaseBudget;

  double r = hi;
  if (std::abs(hi) > std::numbers::pi) {
    const double k = std::nearbyint(hi / two_pi_hi);
    const double p = k * two_pi_hi;
    const double p_err = std::fma(k, two_pi_hi, -p);
    r = hi - p;  // exact: hi and p agree to within a factor of two
    r -= p_err;
    r += lo;
    r -= k * two_pi_lo;
  } else {
    r += lo;
  }
  out.reduced_phase = r;
  const double magnitude = std::exp(-eigenvalue.real() * tau);
  out.value = cplx{magnitude * std::cos(r), -magnitude * std::sin(r)};
  return out;
}

/// H^D = D diag(W) D^-1.
struct SpectralDecomposition {
  CVector eigenvalues;
  CMatrix right_vectors;
  CMatrix inverse_vectors;
  double condition_estimate = 1.0;
  double residual = 0.0;
  bool ideal = false;
  bool mirror_split = false;

  [[nodiscard]] std::size_t n() const { return static_cast<std::size_t>(eigenvalues.size()); }
};

/// Theta(tau) = exp(-H^D tau).
struct Propagator {
  double time = 0.0;
  CMatrix matrix;
  bool precise = true;
};

namespace detail {

inline bool is_persymmetric(const CMatrix& a) {
  const Eigen::Index n = a.rows();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (a(i, j) != a(n - 1 - i, n - 1 - j)) return false;
  return true;
}

struct BlockEigen {
  CVector values;
  CMatrix vectors;
  CMatrix inverse;
};

inline BlockEigen block_eigen(const CMatrix& block, bool ideal) {
  BlockEigen out;
  if (block.rows() == 0) return out;
  if (ideal) {
    // block = i H_block with H_block real symmetric
    const RMatrix h = block.imag();
    const auto sym = linalg::jacobi_eigen(h);
    out.values = kI * sym.values.cast<cplx>();
    out.vectors = sym.vectors.cast<cplx>();
    out.inverse = sym.vectors.transpose().cast<cplx>();
  } else {
    const auto eig = linalg::complex_eigen(block);
    out.values = eig.values;
    out.vectors = eig.vectors;
    out.inverse = eig.vectors.partialPivLu().inverse();
  }
  return out;
}

}  // namespace detail

/// Eigensystem of the dissipative generator. Ideal generators go through the
/// real-symmetric Jacobi solver on H (W = i R, D orthogonal); damped ones
/// through the complex Schur solver. Mirror-symmetric generators (every chain)
/// are first split into their symmetric and antisymmetric blocks so that the
/// result keeps the mirror symmetry exactly.
///
/// Throws NearDefectiveError when the reconstruction residual exceeds 1e-10
/// or the eigenvector condition estimate exceeds 1e12; callers should then
/// use the expm path.
inline SpectralDecomposition decompose(const DissipativeGenerator& gen) {
  const CMatrix& a = gen.matrix;
  const Eigen::Index n = a.rows();
  if (a.cols() != n || n == 0) throw Error("decompose: generator must be a nonempty square matrix");

  SpectralDecomposition out;
  out.ideal = gen.hermitian_part_ideal;
  out.eigenvalues.resize(n);
  out.right_vectors = CMatrix::Zero(n, n);
  out.inverse_vectors = CMatrix::Zero(n, n);

  if (n >= 2 && detail::is_persymmetric(a)) {
    out.mirror_split = true;
    const Eigen::Index half = n / 2;
    const bool odd = (n % 2) == 1;
    const Eigen::Index ns = n - half;
    const double root2 = std::numbers::sqrt2;
    const double inv_root2 = 1.0 / root2;

    CMatrix hs(ns, ns);
    CMatrix ha(half, half);
    for (Eigen::Index i = 0; i < half; ++i) {
      for (Eigen::Index j = 0; j < half; ++j) {
        hs(i, j) = a(i, j) + a(i, n - 1 - j);
        ha(i, j) = a(i, j) - a(i, n - 1 - j);
      }
    }
    if (odd) {
      const Eigen::Index c = half;
      for (Eigen::Index i = 0; i < half; ++i) {
        hs(i, half) = root2 * a(i, c);
        hs(half, i) = root2 * a(c, i);
      }
      hs(half, half) = a(c, c);
    }
    const auto sym = detail::block_eigen(hs, out.ideal);
    const auto anti = detail::block_eigen(ha, out.ideal);

    out.eigenvalues.head(ns) = sym.values;
    out.eigenvalues.tail(half) = anti.values;
    // D = Q blockdiag(Ds, Da), D^-1 = blockdiag(Ds^-1, Da^-1) Q^T
    for (Eigen::Index i = 0; i < half; ++i) {
      for (Eigen::Index k = 0; k < ns; ++k) {
        const cplx v = sym.vectors(i, k) * inv_root2;
        out.right_vectors(i, k) = v;
        out.right_vectors(n - 1 - i, k) = v;
        const cplx w = sym.inverse(k, i) * inv_root2;
        out.inverse_vectors(k, i) = w;
        out.inverse_vectors(k, n - 1 - i) = w;
      }
      for (Eigen::Index k = 0; k < half; ++k) {
        const cplx v = anti.vectors(i, k) * inv_root2;
        out.right_vectors(i, ns + k) = v;
        out.right_vectors(n - 1 - i, ns + k) = -v;
        const cplx w = anti.inverse(k, i) * inv_root2;
        out.inverse_vectors(ns + k, i) = w;
        out.inverse_vectors(ns + k, n - 1 - i) = -w;
      }
    }
    if (odd) {
      for (Eigen::Index k = 0; k < ns; ++k) {
        out.right_vectors(half, k) = sym.vectors(half, k);
        out.inverse_vectors(k, half) = sym.inverse(k, half);
      }
    }
  } else {
    const auto whole = detail::block_eigen(a, out.ideal);
    out.eigenvalues = whole.values;
    out.right_vectors = whole.vectors;
    out.inverse_vectors = whole.inverse;
  }

  const double anorm = a.norm();
  const CMatrix rebuilt = out.right_vectors * out.eigenvalues.asDiagonal() * out.inverse_vectors;
  out.residual = anorm > 0.0 ? (a - rebuilt).norm() / anorm : (a - rebuilt).norm();
  auto norm1 = [](const CMatrix& m) { return m.cwiseAbs().colwise().sum().maxCoeff(); };
  out.condition_estimate = norm1(out.right_vectors) * norm1(out.inverse_vectors);

  if (!(out.residual <= 1e-10) || !(out.condition_estimate <= 1e12)) {
    throw NearDefectiveError("decompose: generator is near-defective (residual " + std::to_string(out.residual) +
                                 ", condition " + std::to_string(out.condition_estimate) + "); use the expm path",
                             out.residual, out.condition_estimate);
  }
  return out;
}

namespace detail {
inline void check_tau(double tau, bool ideal) {
  if (!std::isfinite(tau)) throw Error("propagator: tau must be finite");
  if (tau < 0.0 && !ideal) throw Error("propagator: negative tau is only defined for an undamped network");
}
}  // namespace detail

/// Scaling-and-squaring path.
inline Propagator theta_at(const DissipativeGenerator& gen, double tau) {
  detail::check_tau(tau, gen.hermitian_part_ideal);
  Propagator out;
  out.time = tau;
  const CMatrix scaled = -gen.matrix * tau;
  out.precise = scaled.cwiseAbs().colwise().sum().maxCoeff() <= kExpmNormBudget;
  out.matrix = linalg::expm(scaled);
  return out;
}

/// Spectral path: D exp(-W tau) D^-1.
inline Propagator theta_at(const SpectralDecomposition& spec, double tau) {
  detail::check_tau(tau, spec.ideal);
  const auto n = static_cast<Eigen::Index>(spec.n());
  CVector e(n);
  bool precise = true;
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto f = phase_accurate_exp(spec.eigenvalues(k), tau);
    e(k) = f.value;
    precise = precise && f.precise;
  }
  Propagator out;
  out.time = tau;
  out.precise = precise;
  out.matrix = spec.right_vectors * e.asDiagonal() * spec.inverse_vectors;
  return out;
}

inline CVector evolve_amplitudes(const Propagator& theta, const CVector& beta) {
  if (beta.size() != theta.matrix.cols()) {
    throw Error("evolve_amplitudes: amplitude vector has " + std::to_string(beta.size()) + " entries, propagator is " +
                std::to_string(theta.matrix.cols()) + "x" + std::to_string(theta.matrix.cols()));
  }
  return theta.matrix * beta;
}

/// Picks the spectral path when the generator decomposes cleanly and falls
/// back to scaling-and-squaring otherwise (e.g. near exceptional points).
class PropagatorEngine {
 public:
  explicit PropagatorEngine(DissipativeGenerator gen, bool allow_spectral = true) : gen_(std::move(gen)) {
    if (!allow_spectral) {
      fallback_reason_ = "spectral path disabled";
      return;
    }
    try {
      spectral_ = decompose(gen_);
    } catch (const NearDefectiveError& e) {
      fallback_reason_ = e.what();
    }
  }

  [[nodiscard]] const DissipativeGenerator& generator() const { return gen_; }
  [[nodiscard]] const SpectralDecomposition* spectral() const { return spectral_ ? &*spectral_ : nullptr; }
  [[nodiscard]] const std::string& fallback_reason() const { return fallback_reason_; }
  [[nodiscard]] std::size_t n() const { return gen_.n(); }

  [[nodiscard]] Propagator at(double tau) const { return spectral_ ? theta_at(*spectral_, tau) : theta_at(gen_, tau); }

 private:
  DissipativeGenerator gen_;
  std::optional<SpectralDecomposition> spectral_;
  std::string fallback_reason_;
};

/// Evolves a fixed set of initial amplitude vectors to arbitrary times. On
/// the spectral path the projections D^-1 beta are computed once, so each
/// sample costs O(N^2) per vector.
class AmplitudeFlow {
 public:
  struct Sample {
    std::vector<CVector> amplitudes;
    bool precise = true;
  };

  AmplitudeFlow(const PropagatorEngine& engine, std::vector<CVector> initial)
      : engine_(&engine), initial_(std::move(initial)) {
    for (const auto& b : initial_) {
      if (static_cast<std::size_t>(b.size()) != engine.n()) throw Error("AmplitudeFlow: amplitude dimension mismatch");
    }
    if (const auto* spec = engine.spectral()) {
      projected_.reserve(initial_.size());
      for (const auto& b : initial_) projected_.push_back(spec->inverse_vectors * b);
    }
  }

  [[nodiscard]] Sample at(double tau) const {
    Sample s;
    s.amplitudes.reserve(initial_.size());
    if (const auto* spec = engine_->spectral()) {
      detail::check_tau(tau, spec->ideal);
      const auto n = static_cast<Eigen::Index>(spec->n());
      CVector e(n);
      for (Eigen::Index k = 0; k < n; ++k) {
        const auto f = phase_accurate_exp(spec->eigenvalues(k), tau);
        e(k) = f.value;
        s.precise = s.precise && f.precise;
      }
      for (const auto& y : projected_) s.amplitudes.push_back(spec->right_vectors * e.cwiseProduct(y));
    } else {
      const Propagator theta = engine_->at(tau);
      s.precise = theta.precise;
      for (const auto& b : initial_) s.amplitudes.push_back(theta.matrix * b);
    }
    return s;
  }

  [[nodiscard]] const std::vector<CVector>& initial() const { return initial_; }

 private:
  const PropagatorEngine* engine_;
  std::vector<CVector> initial_;
  std::vector<CVector> projected_;
};

/// Weights c_k of Theta_{row,col}(tau) = sum_k c_k exp(-W_k tau).
inline CVector element_weights(const SpectralDecomposition& spec, Mode row, Mode col) {
  const auto r = static_cast<Eigen::Index>(row.index());
  const auto c = static_cast<Eigen::Index>(col.index());
  if (row.number == 0 || col.number == 0 || r >= static_cast<Eigen::Index>(spec.n()) || c >= static_cast<Eigen::Index>(spec.n()))
    throw Error("element_weights: mode out of range");
  return spec.right_vectors.row(r).transpose().cwiseProduct(spec.inverse_vectors.col(c));
}

}  // namespace qpst
