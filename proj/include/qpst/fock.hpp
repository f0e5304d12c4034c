#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "qpst/coherent.hpp"
#include "qpst/linalg/jacobi.hpp"
#include "qpst/topology.hpp"
#include "qpst/types.hpp"

namespace qpst::fock {

/// Oracle guardrails; larger problems need FockOptions::allow_slow.
inline constexpr std::size_t kMaxModes = 4;
inline constexpr std::size_t kMaxCutoff = 12;

/// Basis |n_1 ... n_N>, 0 <= n_m < d (d = cutoff levels per mode), flattened
/// mode-major: index = sum_m n_m d^(N-m), so mode 1 varies slowest.
struct FockBasis {
  std::size_t modes = 0;
  std::size_t cutoff = 0;

  [[nodiscard]] std::size_t levels() const { return cutoff; }
  [[nodiscard]] std::size_t dimension() const {
    std::size_t d = 1;
    for (std::size_t m = 0; m < modes; ++m) d *= levels();
    return d;
  }
  [[nodiscard]] std::size_t stride(Mode m) const {
    std::size_t s = 1;
    for (std::size_t k = m.number; k < modes; ++k) s *= levels();
    return s;
  }
  [[nodiscard]] std::size_t occupation(std::size_t index, Mode m) const { return (index / stride(m)) % levels(); }
};

struct FockDensity {
  FockBasis basis;
  CMatrix matrix;
  double truncation_defect = 0.0;

  [[nodiscard]] std::size_t n_modes() const { return basis.modes; }
  [[nodiscard]] std::size_t cutoff() const { return basis.cutoff; }
  [[nodiscard]] double trace() const { return matrix.trace().real(); }
  [[nodiscard]] double hermiticity_error() const { return (matrix - matrix.adjoint()).cwiseAbs().maxCoeff(); }
  [[nodiscard]] double purity() const { return (matrix * matrix).trace().real(); }
};

struct SingleModeDensity {
  std::size_t cutoff = 0;
  CMatrix matrix;
};

struct FockOptions {
  bool allow_slow = false;  // lift the N <= 4, cutoff <= 12 guardrails
  double step_norm = 0.05;  // step * ||H^D||_2 bound
  double trace_tol = 1e-8;
};

inline void check_guardrails(std::size_t modes, std::size_t cutoff, const FockOptions& opt) {
  if (opt.allow_slow) return;
  if (modes > kMaxModes || cutoff > kMaxCutoff)
    throw Error("fock oracle: N = " + std::to_string(modes) + ", cutoff = " + std::to_string(cutoff) +
                " exceeds the N <= 4, cutoff <= 12 guardrail; set allow_slow to override");
}

/// Weight of a coherent amplitude outside d = cutoff levels: e^{-|b|^2} sum_{k>=d} |b|^{2k}/k!.
inline double coherent_tail(cplx beta, std::size_t cutoff) {
  const double x = std::norm(beta);
  double term = std::exp(-x);
  for (std::size_t k = 0; k < cutoff; ++k) term *= x / static_cast<double>(k + 1);
  // Sum the tail directly so tiny defects are not lost to 1 - kept.
  double tail = 0.0;
  for (std::size_t k = cutoff; k < cutoff + 400 && term > 0.0; ++k) {
    tail += term;
    term *= x / static_cast<double>(k + 1);
    if (term < 1e-300) break;
  }
  return tail;
}

/// Truncated single-mode coherent vector e^{-|b|^2/2} b^k / sqrt(k!), k < cutoff.
inline CVector coherent_vector(cplx beta, std::size_t cutoff) {
  CVector v(static_cast<Eigen::Index>(cutoff));
  cplx c = std::exp(-0.5 * std::norm(beta));
  for (std::size_t k = 0; k < cutoff; ++k) {
    v(static_cast<Eigen::Index>(k)) = c;
    c *= beta / std::sqrt(static_cast<double>(k + 1));
  }
  return v;
}

/// Density matrix of a coherent superposition in the truncated basis,
/// renormalized to unit trace. Throws if any mode loses more than 1e-6.
inline FockDensity encode_coherent(const CoherentSuperposition& state, std::size_t cutoff, const FockOptions& opt = {}) {
  if (cutoff < 1) throw Error("encode_coherent: cutoff must be at least 1");
  FockDensity out;
  out.basis = {state.modes(), cutoff};
  check_guardrails(out.basis.modes, cutoff, opt);
  for (const auto& b : state.branches())
    for (Eigen::Index m = 0; m < b.beta.size(); ++m) out.truncation_defect = std::max(out.truncation_defect, coherent_tail(b.beta(m), cutoff));
  if (out.truncation_defect > 1e-6)
    throw Error("encode_coherent: truncation defect " + std::to_string(out.truncation_defect) +
                " exceeds 1e-6; raise the cutoff or lower the amplitudes");

  const auto dim = static_cast<Eigen::Index>(out.basis.dimension());
  CVector psi = CVector::Zero(dim);
  for (const auto& b : state.branches()) {
    CVector v = coherent_vector(b.beta(0), cutoff);
    for (Eigen::Index m = 1; m < b.beta.size(); ++m) {
      const CVector w = coherent_vector(b.beta(m), cutoff);
      CVector next(v.size() * w.size());
      for (Eigen::Index i = 0; i < v.size(); ++i) next.segment(i * w.size(), w.size()) = v(i) * w;
      v = std::move(next);
    }
    psi += b.amplitude * v;
  }
  out.matrix = psi * psi.adjoint();
  out.matrix /= out.matrix.trace().real();
  return out;
}

/// Right-hand side of the master equation for diagonal Gamma:
///   L(rho) = M + M^H + sum_m Gamma_m a_m rho a_m^H,  M = -i H_eff rho,
///   H_eff = H - (i/2) sum_m Gamma_m a_m^H a_m.
/// Every operator involved shifts the flattened index by a fixed stride, so
/// each term is applied as a scaled block copy rather than a matrix product.
class Liouvillian {
 public:
  Liouvillian(const NetworkTopology& topology, std::size_t cutoff) : basis_{topology.n, cutoff} {
    topology.validate();
    if (cutoff < 1) throw Error("fock oracle: cutoff must be at least 1");
    const auto n = static_cast<Eigen::Index>(topology.n);
    for (Eigen::Index m = 0; m < n; ++m)
      for (Eigen::Index k = 0; k < n; ++k)
        if (m != k && topology.gamma(m, k) != 0.0) throw Error("fock oracle: only diagonal damping is supported");

    const std::size_t dim = basis_.dimension();
    const auto d = static_cast<Eigen::Index>(dim);
    const std::size_t top = basis_.levels() - 1;
    diag_ = CVector::Zero(d);
    for (std::size_t i = 0; i < dim; ++i) {
      for (Eigen::Index m = 0; m < n; ++m) {
        const auto occ = static_cast<double>(basis_.occupation(i, Mode(static_cast<std::size_t>(m) + 1)));
        diag_(static_cast<Eigen::Index>(i)) += cplx(topology.omega(m), -0.5 * topology.gamma(m, m)) * occ;
      }
    }
    // lambda_mk a_m^H a_k moves one quantum from k to m: |l> -> |l - s_k + s_m>.
    for (Eigen::Index m = 0; m < n; ++m) {
      for (Eigen::Index k = 0; k < n; ++k) {
        if (m == k || topology.lambda(m, k) == 0.0) continue;
        const Mode to(static_cast<std::size_t>(m) + 1);
        const Mode from(static_cast<std::size_t>(k) + 1);
        Hop h;
        h.delta = static_cast<Eigen::Index>(basis_.stride(to)) - static_cast<Eigen::Index>(basis_.stride(from));
        h.coef = RVector::Zero(d);
        for (std::size_t l = 0; l < dim; ++l) {
          const std::size_t nk = basis_.occupation(l, from);
          const std::size_t nm = basis_.occupation(l, to);
          if (nk > 0 && nm < top)
            h.coef(static_cast<Eigen::Index>(l)) = topology.lambda(m, k) * std::sqrt(static_cast<double>(nk) * static_cast<double>(nm + 1));
        }
        hops_.push_back(std::move(h));
      }
      if (topology.gamma(m, m) > 0.0) {
        // (a rho a^H)(i, j) = u_i u_j rho(i + s, j + s), u_i = sqrt(n_i + 1) where n_i < top
        const Mode mode(static_cast<std::size_t>(m) + 1);
        Jump j;
        j.stride = static_cast<Eigen::Index>(basis_.stride(mode));
        j.rate = topology.gamma(m, m);
        j.u = RVector::Zero(d - j.stride);
        for (Eigen::Index i = 0; i < d - j.stride; ++i) {
          const std::size_t occ = basis_.occupation(static_cast<std::size_t>(i), mode);
          if (occ < top) j.u(i) = std::sqrt(static_cast<double>(occ + 1));
        }
        jumps_.push_back(std::move(j));
      }
    }

    // Spectral-radius bound of L from Gershgorin discs of H_eff.
    RVector radius = RVector::Zero(d);
    for (const auto& h : hops_) {
      for (Eigen::Index l = 0; l < d; ++l) radius(l) += std::abs(h.coef(l));
    }
    const double e_max = (diag_.real() + radius).maxCoeff();
    const double e_min = (diag_.real() - radius).minCoeff();
    const double decay = (-2.0 * diag_.imag()).maxCoeff();
    radius_bound_ = std::hypot(e_max - e_min, 2.0 * decay);

    const CMatrix hd = build_general(topology).matrix;
    generator_norm_ = std::sqrt(std::max(0.0, linalg::jacobi_eigen((hd.adjoint() * hd).real()).values.maxCoeff()));
  }

  /// out = L(rho) for Hermitian rho; `out` must not alias `rho`.
  /// Uses M^H = i rho H_eff^H, so both halves are column operations and
  /// each output column is produced in one pass. Loops run over interleaved
  /// re/im doubles to stay vectorizable.
  void apply(const CMatrix& rho, CMatrix& out) const {
    const Eigen::Index d = rho.rows();
    out.resize(d, d);
    hrho_.resize(2 * d);
    double* hr = hrho_.data();
    const double* dg = reinterpret_cast<const double*>(diag_.data());
    for (Eigen::Index j = 0; j < d; ++j) {
      const double* r = reinterpret_cast<const double*>(rho.col(j).data());
      double* o = reinterpret_cast<double*>(out.col(j).data());
      // hr = H_eff rho(., j)
      for (Eigen::Index i = 0; i < d; ++i) {
        hr[2 * i] = dg[2 * i] * r[2 * i] - dg[2 * i + 1] * r[2 * i + 1];
        hr[2 * i + 1] = dg[2 * i] * r[2 * i + 1] + dg[2 * i + 1] * r[2 * i];
      }
      for (const auto& h : hops_) {
        const Eigen::Index len = d - std::abs(h.delta);
        const Eigen::Index src = h.delta > 0 ? 0 : -h.delta;
        const Eigen::Index dst = h.delta > 0 ? h.delta : 0;
        const double* c = h.coef.data() + src;
        const double* rs = r + 2 * src;
        double* hd = hr + 2 * dst;
        for (Eigen::Index i = 0; i < len; ++i) {
          hd[2 * i] += c[i] * rs[2 * i];
          hd[2 * i + 1] += c[i] * rs[2 * i + 1];
        }
      }
      // o = -i hr + i conj(diag_j) rho(., j)
      const double dr = dg[2 * j], di = dg[2 * j + 1];
      for (Eigen::Index i = 0; i < d; ++i) {
        o[2 * i] = hr[2 * i + 1] + di * r[2 * i] - dr * r[2 * i + 1];
        o[2 * i + 1] = -hr[2 * i] + di * r[2 * i + 1] + dr * r[2 * i];
      }
      // (rho H_eff^H)(., j) = sum_k rho(., k) conj(H_eff(j, k)), k = j - delta
      for (const auto& h : hops_) {
        const Eigen::Index k = j - h.delta;
        if (k < 0 || k >= d) continue;
        const double c = h.coef(k);
        if (c == 0.0) continue;
        const double* rk = reinterpret_cast<const double*>(rho.col(k).data());
        for (Eigen::Index i = 0; i < d; ++i) {
          o[2 * i] -= c * rk[2 * i + 1];
          o[2 * i + 1] += c * rk[2 * i];
        }
      }
      // (a rho a^H)(i, j) = u_i u_j rho(i + s, j + s)
      for (const auto& jump : jumps_) {
        const Eigen::Index len = d - jump.stride;
        if (j >= len || jump.u(j) == 0.0) continue;
        const double w = jump.rate * jump.u(j);
        const double* rs = reinterpret_cast<const double*>(rho.col(j + jump.stride).data()) + 2 * jump.stride;
        const double* u = jump.u.data();
        for (Eigen::Index i = 0; i < len; ++i) {
          o[2 * i] += w * u[i] * rs[2 * i];
          o[2 * i + 1] += w * u[i] * rs[2 * i + 1];
        }
      }
    }
  }

  [[nodiscard]] CMatrix apply(const CMatrix& rho) const {
    CMatrix out;
    apply(rho, out);
    return out;
  }

  [[nodiscard]] const FockBasis& basis() const { return basis_; }
  /// ||H^D||_2 of the one-body generator.
  [[nodiscard]] double generator_norm() const { return generator_norm_; }
  /// Upper bound on the spectral radius of L.
  [[nodiscard]] double radius_bound() const { return radius_bound_; }

 private:
  struct Hop {
    Eigen::Index delta = 0;  // row offset: target = source + delta
    RVector coef;            // indexed by source row
  };
  struct Jump {
    Eigen::Index stride = 0;
    double rate = 0.0;
    RVector u;
  };

  FockBasis basis_;
  CVector diag_;
  std::vector<Hop> hops_;
  std::vector<Jump> jumps_;
  mutable std::vector<double> hrho_;
  double radius_bound_ = 0.0;
  double generator_norm_ = 0.0;
};

/// Classic RK4 with a fixed step no larger than step_norm / ||H^D||_2 and
/// inside the RK4 stability region of L. Each advance_to() splits the
/// interval into equal steps, so sampled trajectories are reproducible.
class LindbladIntegrator {
 public:
  LindbladIntegrator(const NetworkTopology& topology, FockDensity initial, const FockOptions& opt = {})
      : liouvillian_(topology, initial.cutoff()), rho_(std::move(initial)), opt_(opt) {
    check_guardrails(rho_.n_modes(), rho_.cutoff(), opt_);
    if (topology.n != rho_.n_modes()) throw Error("fock oracle: density and topology have different mode counts");
    const double g = liouvillian_.generator_norm();
    max_step_ = g > 0.0 ? opt_.step_norm / g : 1.0;
    if (liouvillian_.radius_bound() > 0.0) max_step_ = std::min(max_step_, 2.5 / liouvillian_.radius_bound());
    initial_trace_ = rho_.trace();
  }

  void advance_to(double t) {
    if (t < time_) throw Error("fock oracle: cannot integrate backwards");
    const double span = t - time_;
    if (span == 0.0) return;
    const auto steps = static_cast<std::size_t>(std::ceil(span / max_step_));
    const double h = span / static_cast<double>(steps);
    CMatrix& r = rho_.matrix;
    const Eigen::Index d = r.rows();
    CMatrix k(d, d), acc(d, d), stage(d, d);
    for (std::size_t s = 0; s < steps; ++s) {
      liouvillian_.apply(r, k);
      acc = k;
      stage = r + (0.5 * h) * k;
      liouvillian_.apply(stage, k);
      acc += 2.0 * k;
      stage = r + (0.5 * h) * k;
      liouvillian_.apply(stage, k);
      acc += 2.0 * k;
      stage = r + h * k;
      liouvillian_.apply(stage, k);
      acc += k;
      r += (h / 6.0) * acc;
    }
    r = (0.5 * (r + r.adjoint())).eval();
    steps_taken_ += steps;
    time_ = t;
    const double drift = std::abs(rho_.trace() - initial_trace_);
    if (drift > opt_.trace_tol)
      throw Error("fock oracle: trace drift " + std::to_string(drift) + " exceeds tolerance; reduce the step size");
  }

  [[nodiscard]] const FockDensity& state() const { return rho_; }
  [[nodiscard]] double time() const { return time_; }
  [[nodiscard]] double max_step() const { return max_step_; }
  [[nodiscard]] std::size_t steps_taken() const { return steps_taken_; }

 private:
  Liouvillian liouvillian_;
  FockDensity rho_;
  FockOptions opt_;
  double time_ = 0.0;
  double max_step_ = 0.0;
  double initial_trace_ = 1.0;
  std::size_t steps_taken_ = 0;
};

inline FockDensity lindblad_evolve(const FockDensity& rho, const NetworkTopology& topology, double t, const FockOptions& opt = {}) {
  LindbladIntegrator integ(topology, rho, opt);
  integ.advance_to(t);
  return integ.state();
}

/// Reduced density of one mode by index arithmetic over the flattened basis.
inline SingleModeDensity partial_trace(const FockDensity& rho, Mode mode) {
  const FockBasis& b = rho.basis;
  if (mode.number < 1 || mode.number > b.modes) throw Error("partial_trace: mode out of range");
  const std::size_t d = b.levels();
  const std::size_t s = b.stride(mode);
  const std::size_t dim = b.dimension();
  SingleModeDensity out;
  out.cutoff = b.cutoff;
  out.matrix = CMatrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < dim; ++i) {
    if (b.occupation(i, mode) != 0) continue;  // i enumerates the traced-out configurations
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < d; ++k)
        out.matrix(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) +=
            rho.matrix(static_cast<Eigen::Index>(i + j * s), static_cast<Eigen::Index>(i + k * s));
  }
  return out;
}

/// Tr[rho_a rho_b].
inline double fock_overlap(const SingleModeDensity& a, const SingleModeDensity& b) {
  if (a.cutoff != b.cutoff) throw Error("fock_overlap: cutoffs differ");
  return (a.matrix.cwiseProduct(b.matrix.transpose())).sum().real();
}

/// Smallest eigenvalue of a Hermitian matrix.
inline double min_eigenvalue(const CMatrix& hermitian) {
  const CMatrix h = 0.5 * (hermitian + hermitian.adjoint());
  return Eigen::SelfAdjointEigenSolver<CMatrix>(h, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

}  // namespace qpst::fock
