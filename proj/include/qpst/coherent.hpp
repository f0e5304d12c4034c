#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "qpst/propagator.hpp"
#include "qpst/types.hpp"

namespace qpst {

/// log <a|b> for single-mode coherent states.
inline cplx log_overlap(cplx a, cplx b) { return -0.5 * std::norm(a) - 0.5 * std::norm(b) + std::conj(a) * b; }

/// log <{a}|{b}> = sum_m (-|a_m|^2/2 - |b_m|^2/2 + a_m^* b_m).
inline cplx log_overlap(const CVector& a, const CVector& b) {
  if (a.size() != b.size()) throw Error("overlap: coherent amplitude vectors differ in length");
  ComplexCompensatedSum s;
  for (Eigen::Index m = 0; m < a.size(); ++m) s.add(log_overlap(a(m), b(m)));
  return s.value();
}

inline cplx multimode_overlap(const CVector& a, const CVector& b) { return std::exp(log_overlap(a, b)); }

/// One term Lambda_r |{beta^r}> of a superposition.
struct Branch {
  cplx amplitude{1.0, 0.0};
  CVector beta;
};

/// N^2 sum_{r,s} Lambda_r Lambda_s^* |{beta^r}><{beta^s}|, normalized.
class CoherentSuperposition {
 public:
  explicit CoherentSuperposition(std::vector<Branch> branches) : branches_(std::move(branches)) {
    if (branches_.empty()) throw Error("superposition: at least one branch is required");
    const Eigen::Index n = branches_.front().beta.size();
    for (const auto& b : branches_) {
      if (b.beta.size() != n) throw Error("superposition: branches have different mode counts");
    }
    ComplexCompensatedSum s;
    for (const auto& r : branches_)
      for (const auto& q : branches_) s.add(r.amplitude * std::conj(q.amplitude) * multimode_overlap(q.beta, r.beta));
    const cplx total = s.value();
    if (!(total.real() > 0.0) || std::abs(total.imag()) > 1e-10 * total.real())
      throw Error("superposition: state has zero or non-real norm");
    norm_sq_ = 1.0 / total.real();
  }

  [[nodiscard]] const std::vector<Branch>& branches() const { return branches_; }
  [[nodiscard]] std::size_t size() const { return branches_.size(); }
  [[nodiscard]] std::size_t modes() const { return static_cast<std::size_t>(branches_.front().beta.size()); }
  /// The squared normalization factor N^2.
  [[nodiscard]] double normalization_sq() const { return norm_sq_; }

  [[nodiscard]] std::vector<CVector> amplitude_vectors() const {
    std::vector<CVector> out;
    out.reserve(branches_.size());
    for (const auto& b : branches_) out.push_back(b.beta);
    return out;
  }

 private:
  std::vector<Branch> branches_;
  double norm_sq_ = 1.0;
};

/// N(|alpha> + |-alpha>) in `mode`, every other oscillator in |transmitter_beta>.
inline CoherentSuperposition make_cat(std::size_t n, Mode mode, cplx alpha, cplx transmitter_beta = 0.0) {
  if (mode.number < 1 || mode.number > n) throw Error("make_cat: mode " + std::to_string(mode.number) + " outside 1.." + std::to_string(n));
  const auto nn = static_cast<Eigen::Index>(n);
  Branch plus{1.0, CVector::Constant(nn, transmitter_beta)};
  Branch minus{1.0, CVector::Constant(nn, transmitter_beta)};
  plus.beta(static_cast<Eigen::Index>(mode.index())) = alpha;
  minus.beta(static_cast<Eigen::Index>(mode.index())) = -alpha;
  return CoherentSuperposition({std::move(plus), std::move(minus)});
}

/// The superposition after evolution: branches carried to zeta^r = Theta beta^r,
/// with weights N^2 Lambda_r Lambda_s^* <beta^s|beta^r> / <zeta^s|zeta^r>.
struct EvolvedState {
  double norm_sq = 1.0;
  std::vector<cplx> lambdas;
  std::vector<CVector> initial;
  std::vector<CVector> evolved;
  double time = 0.0;
  bool precise = true;

  [[nodiscard]] std::size_t size() const { return lambdas.size(); }
  [[nodiscard]] std::size_t modes() const { return evolved.empty() ? 0 : static_cast<std::size_t>(evolved.front().size()); }

  /// log of <beta^s|beta^r> / <zeta^s|zeta^r>.
  [[nodiscard]] cplx log_weight_factor(std::size_t r, std::size_t s) const {
    return log_overlap(initial[s], initial[r]) - log_overlap(evolved[s], evolved[r]);
  }

  [[nodiscard]] double trace() const {
    ComplexCompensatedSum sum;
    for (std::size_t r = 0; r < size(); ++r)
      for (std::size_t s = 0; s < size(); ++s)
        sum.add(norm_sq * lambdas[r] * std::conj(lambdas[s]) *
                std::exp(log_weight_factor(r, s) + log_overlap(evolved[s], evolved[r])));
    return sum.value().real();
  }
};

inline EvolvedState evolve(const CoherentSuperposition& state, std::vector<CVector> evolved, double tau, bool precise = true) {
  if (evolved.size() != state.size()) throw Error("evolve: branch count mismatch");
  EvolvedState out;
  out.norm_sq = state.normalization_sq();
  out.time = tau;
  out.precise = precise;
  for (std::size_t r = 0; r < state.size(); ++r) {
    if (evolved[r].size() != state.branches()[r].beta.size()) throw Error("evolve: dimension mismatch");
    out.lambdas.push_back(state.branches()[r].amplitude);
    out.initial.push_back(state.branches()[r].beta);
  }
  out.evolved = std::move(evolved);
  return out;
}

inline EvolvedState evolve(const CoherentSuperposition& state, const Propagator& theta) {
  if (static_cast<std::size_t>(theta.matrix.cols()) != state.modes())
    throw Error("evolve: propagator is " + std::to_string(theta.matrix.cols()) + "-dimensional, state has " +
                std::to_string(state.modes()) + " modes");
  std::vector<CVector> z;
  z.reserve(state.size());
  for (const auto& b : state.branches()) z.push_back(evolve_amplitudes(theta, b.beta));
  return evolve(state, std::move(z), theta.time, theta.precise);
}

/// Single-mode reduced density operator
///   rho_m = sum_{r,s} w_rs |zeta_m^r><zeta_m^s|,
///   w_rs = N^2 Lambda_r Lambda_s^* <{beta^s}|{beta^r}> / <zeta_m^s|zeta_m^r>.
/// Weights are kept as coef_rs * exp(log_factor_rs) so that e^{-2|alpha|^2}
/// sized factors never underflow before they meet their partner overlaps.
struct ReducedState {
  Mode mode{1};
  std::vector<cplx> zeta;
  CMatrix coef;
  CMatrix log_factor;

  [[nodiscard]] std::size_t size() const { return zeta.size(); }
  [[nodiscard]] cplx weight(std::size_t r, std::size_t s) const {
    const auto i = static_cast<Eigen::Index>(r);
    const auto j = static_cast<Eigen::Index>(s);
    return coef(i, j) * std::exp(log_factor(i, j));
  }
  [[nodiscard]] double trace() const {
    ComplexCompensatedSum sum;
    for (std::size_t r = 0; r < size(); ++r)
      for (std::size_t s = 0; s < size(); ++s) {
        const auto i = static_cast<Eigen::Index>(r);
        const auto j = static_cast<Eigen::Index>(s);
        sum.add(coef(i, j) * std::exp(log_factor(i, j) + log_overlap(zeta[s], zeta[r])));
      }
    return sum.value().real();
  }
};

inline ReducedState reduce(const EvolvedState& state, Mode mode) {
  if (mode.number < 1 || mode.number > state.modes())
    throw Error("reduce: mode " + std::to_string(mode.number) + " outside 1.." + std::to_string(state.modes()));
  const auto m = static_cast<Eigen::Index>(mode.index());
  const auto q = static_cast<Eigen::Index>(state.size());
  ReducedState out;
  out.mode = mode;
  out.coef.resize(q, q);
  out.log_factor.resize(q, q);
  for (const auto& z : state.evolved) out.zeta.push_back(z(m));
  for (Eigen::Index r = 0; r < q; ++r) {
    for (Eigen::Index s = 0; s < q; ++s) {
      const auto ru = static_cast<std::size_t>(r);
      const auto su = static_cast<std::size_t>(s);
      out.coef(r, s) = state.norm_sq * state.lambdas[ru] * std::conj(state.lambdas[su]);
      out.log_factor(r, s) = log_overlap(state.initial[su], state.initial[ru]) - log_overlap(out.zeta[su], out.zeta[ru]);
    }
  }
  return out;
}

/// Tr[rho_a rho_b] for two single-mode reduced states, using
/// Tr[|u><v| |x><y|] = <v|x><y|u>. One exponential per branch quadruple.
inline double reduced_overlap(const ReducedState& a, const ReducedState& b) {
  ComplexCompensatedSum sum;
  for (std::size_t r = 0; r < a.size(); ++r) {
    for (std::size_t s = 0; s < a.size(); ++s) {
      const auto ar = static_cast<Eigen::Index>(r);
      const auto as = static_cast<Eigen::Index>(s);
      const cplx ca = a.coef(ar, as);
      if (ca == 0.0) continue;
      for (std::size_t r2 = 0; r2 < b.size(); ++r2) {
        for (std::size_t s2 = 0; s2 < b.size(); ++s2) {
          const auto br = static_cast<Eigen::Index>(r2);
          const auto bs = static_cast<Eigen::Index>(s2);
          const cplx cb = b.coef(br, bs);
          if (cb == 0.0) continue;
          const cplx exponent = a.log_factor(ar, as) + b.log_factor(br, bs) + log_overlap(a.zeta[s], b.zeta[r2]) +
                                log_overlap(b.zeta[s2], a.zeta[r]);
          sum.add(ca * cb * std::exp(exponent));
        }
      }
    }
  }
  const cplx v = sum.value();
  if (std::abs(v.imag()) > 1e-8) throw ConsistencyError("reduced_overlap: imaginary residue " + std::to_string(v.imag()));
  return v.real();
}

/// Tr[rho_a rho_b] over the whole network (multimode overlaps).
inline double full_overlap(const EvolvedState& a, const EvolvedState& b) {
  if (a.modes() != b.modes()) throw Error("full_overlap: states have different mode counts");
  ComplexCompensatedSum sum;
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t s = 0; s < a.size(); ++s)
      for (std::size_t r2 = 0; r2 < b.size(); ++r2)
        for (std::size_t s2 = 0; s2 < b.size(); ++s2) {
          const cplx c = a.norm_sq * a.lambdas[r] * std::conj(a.lambdas[s]) * b.norm_sq * b.lambdas[r2] * std::conj(b.lambdas[s2]);
          if (c == 0.0) continue;
          const cplx exponent = a.log_weight_factor(r, s) + b.log_weight_factor(r2, s2) +
                                log_overlap(a.evolved[s], b.evolved[r2]) + log_overlap(b.evolved[s2], a.evolved[r]);
          sum.add(c * std::exp(exponent));
        }
  const cplx v = sum.value();
  if (std::abs(v.imag()) > 1e-8) throw ConsistencyError("full_overlap: imaginary residue " + std::to_string(v.imag()));
  return v.real();
}

/// Closed-form transfer probability Tr[rho_sender(0) rho_receiver(tau)]:
///   N^4 sum Lambda_r Lambda_s^* Lambda_r' Lambda_s'^* <beta^s|beta^r><beta^s'|beta^r'>
///       * exp{-[zeta_R^s' - beta_S^s]^* [zeta_R^r' - beta_S^r]}.
inline double transfer_probability_closed_form(const EvolvedState& state, Mode sender, Mode receiver) {
  if (sender.number < 1 || sender.number > state.modes() || receiver.number < 1 || receiver.number > state.modes())
    throw Error("transfer probability: mode out of range");
  const auto snd = static_cast<Eigen::Index>(sender.index());
  const auto rcv = static_cast<Eigen::Index>(receiver.index());
  const std::size_t q = state.size();
  ComplexCompensatedSum sum;
  for (std::size_t r = 0; r < q; ++r)
    for (std::size_t s = 0; s < q; ++s)
      for (std::size_t r2 = 0; r2 < q; ++r2)
        for (std::size_t s2 = 0; s2 < q; ++s2) {
          const cplx c = state.norm_sq * state.norm_sq * state.lambdas[r] * std::conj(state.lambdas[s]) * state.lambdas[r2] *
                         std::conj(state.lambdas[s2]);
          if (c == 0.0) continue;
          const cplx d_s = state.evolved[s2](rcv) - state.initial[s](snd);
          const cplx d_r = state.evolved[r2](rcv) - state.initial[r](snd);
          const cplx exponent = log_overlap(state.initial[s], state.initial[r]) + log_overlap(state.initial[s2], state.initial[r2]) -
                                std::conj(d_s) * d_r;
          sum.add(c * std::exp(exponent));
        }
  const cplx v = sum.value();
  if (std::abs(v.imag()) > 1e-8) throw ConsistencyError("transfer probability: imaginary residue " + std::to_string(v.imag()));
  return v.real();
}

}  // namespace qpst
