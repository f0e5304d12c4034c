#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "qpst/coherent.hpp"
#include "qpst/propagator.hpp"
#include "qpst/topology.hpp"
#include "qpst/types.hpp"

namespace qpst {

/// ||Theta H^D - H^D Theta||_F / ||H^D||_F.
inline double commutator_residual(const CMatrix& theta, const DissipativeGenerator& gen) {
  const CMatrix& h = gen.matrix;
  if (theta.rows() != h.rows() || theta.cols() != h.cols()) throw Error("commutator_residual: dimension mismatch");
  const double hn = h.norm();
  const double r = (theta * h - h * theta).norm();
  return hn > 0.0 ? r / hn : r;
}

inline double commutator_residual(const Propagator& theta, const DissipativeGenerator& gen) {
  return commutator_residual(theta.matrix, gen);
}

/// 0/1 permutation pattern that Theta(tau_ex) must match in magnitude.
struct PermutationTarget {
  RMatrix matrix;
  bool corner_only = true;

  void validate() const {
    if (matrix.rows() != matrix.cols() || matrix.rows() < 2) throw Error("permutation target: matrix must be square, n >= 2");
    for (Eigen::Index i = 0; i < matrix.rows(); ++i) {
      for (Eigen::Index j = 0; j < matrix.cols(); ++j) {
        if (matrix(i, j) != 0.0 && matrix(i, j) != 1.0) throw Error("permutation target: entries must be 0 or 1");
      }
      if (matrix.row(i).sum() != 1.0 || matrix.col(i).sum() != 1.0)
        throw Error("permutation target: need exactly one 1 per row and column");
    }
  }

  /// Mirror permutation; corner_only fixes just (1,N) and (N,1).
  static PermutationTarget anti_diagonal(std::size_t n, bool corner_only) {
    const auto nn = static_cast<Eigen::Index>(n);
    PermutationTarget t;
    t.matrix = RMatrix::Zero(nn, nn);
    for (Eigen::Index i = 0; i < nn; ++i) t.matrix(i, nn - 1 - i) = 1.0;
    t.corner_only = corner_only;
    return t;
  }
};

struct PstCheck {
  bool pass = false;
  double max_deviation = 0.0;
  /// | |Theta_ij| - P_ij | for the constrained entries, NaN where unconstrained.
  RMatrix deviations;
};

inline PstCheck check_pst_target(const Propagator& theta, const PermutationTarget& target, double tol) {
  target.validate();
  const Eigen::Index n = target.matrix.rows();
  if (theta.matrix.rows() != n) throw Error("check_pst_target: target and propagator sizes differ");
  PstCheck out;
  out.deviations = RMatrix::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const bool edge_row = (i == 0 || i == n - 1);
      if (target.corner_only && !edge_row) continue;
      const double d = std::abs(std::abs(theta.matrix(i, j)) - target.matrix(i, j));
      out.deviations(i, j) = d;
      out.max_deviation = std::max(out.max_deviation, d);
    }
  }
  out.pass = out.max_deviation <= tol;
  return out;
}

inline PstCheck check_pst_target(const PropagatorEngine& engine, double tau, const PermutationTarget& target, double tol) {
  if (tau < 0.0) throw Error("check_pst_target: tau must be non-negative");
  return check_pst_target(engine.at(tau), target, tol);
}

enum class ExchangeMethod { NumericPeak, Spectral, Analytic };

inline const char* to_string(ExchangeMethod m) {
  switch (m) {
    case ExchangeMethod::NumericPeak: return "numeric-peak";
    case ExchangeMethod::Spectral: return "spectral";
    case ExchangeMethod::Analytic: return "analytic";
  }
  return "?";
}

struct ExchangeReport {
  double tau_ex = 0.0;
  double peak_p = 0.0;  // |Theta_N1(tau_ex)|^2
  cplx theta_corner{0.0, 0.0};
  ExchangeMethod method = ExchangeMethod::NumericPeak;
  double ripple_bound = 0.0;  // weight left out of the envelope
  bool precise = true;
  Warnings warnings;
};

class NoTransferError : public Error {
 public:
  NoTransferError(const std::string& what, double best_tau, double best_value)
      : Error(what), best_tau(best_tau), best_value(best_value) {}
  double best_tau;
  double best_value;
};

namespace detail {

struct Extremum {
  double x = 0.0;
  double f = 0.0;
};

/// Golden-section maximization on [a, b]; ties go to the smaller abscissa.
template <class F>
Extremum golden_maximize(F&& f, double a, double b, double abs_tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  for (int guard = 0; b - a > abs_tol && guard < 300; ++guard) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  Extremum best{c, fc};
  const double m = 0.5 * (a + b);
  const double fm = f(m);
  if (fm > best.f || (fm == best.f && m < best.x)) best = {m, fm};
  if (fd > best.f) best = {d, fd};
  return best;
}

}  // namespace detail

/// Slow envelope |Theta_rc(tau)| restricted to its dominant eigen-components,
/// evaluated in a frame rotating with the heaviest component so that only
/// the frequency spread of the cluster sets the scan step.
class EnvelopeScanner {
 public:
  static constexpr double kClusterCut = 1e-6;
  static constexpr double kMustKeep = 1e-2;

  EnvelopeScanner(const PropagatorEngine& engine, Mode row, Mode col, double lo, double hi,
                  std::size_t budget = 4'000'000)
      : engine_(&engine), row_(row), col_(col), lo_(lo), hi_(hi) {
    if (!(hi > lo) || !std::isfinite(hi) || !std::isfinite(lo)) throw Error("exchange search: window must be finite with hi > lo");
    if (lo < 0.0) throw Error("exchange search: window must start at tau >= 0");
    if (row.number < 1 || row.number > engine.n() || col.number < 1 || col.number > engine.n())
      throw Error("exchange search: mode out of range");
    if (const auto* spec = engine.spectral()) {
      init_spectral(*spec, budget);
    } else {
      init_fallback(budget);
    }
  }

  [[nodiscard]] double value(double tau) const {
    if (!engine_->spectral()) return std::abs(engine_->at(tau).matrix(static_cast<Eigen::Index>(row_.index()), static_cast<Eigen::Index>(col_.index())));
    cplx s = 0.0;
    for (std::size_t j = 0; j < weights_.size(); ++j) s += weights_[j] * phase_accurate_exp(shifted_[j], tau).value;
    return std::abs(s);
  }

  [[nodiscard]] double step() const { return step_; }
  [[nodiscard]] double ripple_bound() const { return ripple_; }
  [[nodiscard]] double max_cluster_frequency() const { return max_frequency_; }
  /// |Im W| of the heaviest component, the fast phase removed by demodulation.
  [[nodiscard]] double carrier_frequency() const { return carrier_; }
  /// False when the beat frequencies of the dominant components are within
  /// three digits of the eigenvalue backward error eps * ||H^D||.
  [[nodiscard]] bool resolved() const { return resolved_; }
  [[nodiscard]] double lo() const { return lo_; }
  [[nodiscard]] double hi() const { return hi_; }

  /// First local maximum of the envelope at or after `from` whose refined
  /// value is >= threshold; golden-section refinement to |dtau| <= rel_tol * tau.
  /// `best` tracks the largest sample seen.
  std::optional<detail::Extremum> next_peak(double from, double threshold, double rel_tol, bool allow_left_edge,
                                            detail::Extremum* best = nullptr) const {
    const auto count = static_cast<std::size_t>(std::ceil((hi_ - from) / step_));
    auto grid = [&](std::size_t i) { return i >= count ? hi_ : from + static_cast<double>(i) * step_; };
    double prev = -std::numeric_limits<double>::infinity();
    double cur = value(grid(0));
    for (std::size_t i = 0; i <= count; ++i) {
      const double next = i < count ? value(grid(i + 1)) : -std::numeric_limits<double>::infinity();
      if (best && cur > best->f) *best = {grid(i), cur};
      const bool left_ok = i > 0 ? cur >= prev : allow_left_edge;
      // Grid maxima can sit below the true peak, so near-threshold ones are refined first.
      if (cur >= 0.9 * threshold && left_ok && cur >= next) {
        const double a = i > 0 ? grid(i - 1) : grid(0);
        const double b = i < count ? grid(i + 1) : hi_;
        const double centre = grid(i);
        const double tol = rel_tol * std::max(std::abs(centre), step_ * 1e-3);
        auto ext = detail::golden_maximize([&](double t) { return value(t); }, a, b, tol);
        if (ext.f < cur) ext = {centre, cur};
        if (best && ext.f > best->f) *best = ext;
        if (ext.f >= threshold) return ext;
      }
      prev = cur;
      cur = next;
    }
    return std::nullopt;
  }

 private:
  void init_spectral(const SpectralDecomposition& spec, std::size_t budget) {
    const CVector c = element_weights(spec, row_, col_);
    const Eigen::Index n = c.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index k = 0; k < n; ++k) order[static_cast<std::size_t>(k)] = k;
    std::sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return std::abs(c(x)) > std::abs(c(y)); });
    const double wmax = std::abs(c(order.front()));
    if (wmax == 0.0) throw NoTransferError("exchange search: Theta element vanishes identically", lo_, 0.0);

    std::vector<Eigen::Index> kept;
    for (auto k : order) {
      if (std::abs(c(k)) >= kClusterCut * wmax) {
        kept.push_back(k);
      } else {
        ripple_ += std::abs(c(k));
      }
    }
    const double ref = spec.eigenvalues(order.front()).imag();
    carrier_ = std::abs(ref);
    auto spread_of = [&](const std::vector<Eigen::Index>& ks) {
      double s = 0.0;
      for (auto k : ks) s = std::max(s, std::abs(spec.eigenvalues(k).imag() - ref));
      return s;
    };
    auto samples_for = [&](double spread) {
      return spread > 0.0 ? (hi_ - lo_) / (std::numbers::pi / (8.0 * spread)) : 16.0;
    };
    while (samples_for(spread_of(kept)) > static_cast<double>(budget)) {
      const auto k = kept.back();
      if (std::abs(c(k)) >= kMustKeep * wmax)
        throw Error("exchange search: window too long for an envelope scan within the sample budget");
      ripple_ += std::abs(c(k));
      kept.pop_back();
    }
    const double spread = spread_of(kept);
    step_ = spread > 0.0 ? std::numbers::pi / (8.0 * spread) : (hi_ - lo_) / 16.0;
    step_ = std::min(step_, (hi_ - lo_) / 16.0);
    for (auto k : kept) {
      weights_.push_back(c(k));
      shifted_.push_back(spec.eigenvalues(k) - kI * ref);
      max_frequency_ = std::max(max_frequency_, std::abs(spec.eigenvalues(k).imag()));
    }
    const double floor = 1e3 * std::numeric_limits<double>::epsilon() * engine_->generator().matrix.norm();
    for (std::size_t i = 0; i < kept.size(); ++i) {
      for (std::size_t j = i + 1; j < kept.size(); ++j) {
        if (std::abs(c(kept[i])) < kMustKeep * wmax || std::abs(c(kept[j])) < kMustKeep * wmax) continue;
        if (std::abs(spec.eigenvalues(kept[i]) - spec.eigenvalues(kept[j])) < floor) resolved_ = false;
      }
    }
  }

  void init_fallback(std::size_t budget) {
    // No spectral data: scan the exact element with a step set by ||H^D||.
    const double nu = std::max(engine_->generator().matrix.norm(), 1e-300);
    max_frequency_ = nu;
    carrier_ = nu;
    step_ = std::min(std::numbers::pi / (8.0 * nu), (hi_ - lo_) / 16.0);
    const double fallback_budget = std::min<double>(static_cast<double>(budget), 200'000.0);
    if ((hi_ - lo_) / step_ > fallback_budget)
      throw Error("exchange search: window too long for the expm path; spectral path unavailable (" +
                  engine_->fallback_reason() + ")");
  }

  const PropagatorEngine* engine_;
  Mode row_;
  Mode col_;
  double lo_;
  double hi_;
  double step_ = 0.0;
  double ripple_ = 0.0;
  double max_frequency_ = 0.0;
  double carrier_ = 0.0;
  bool resolved_ = true;
  std::vector<cplx> weights_;
  std::vector<cplx> shifted_;
};

struct ExchangeSearch {
  double lo = 0.0;
  double hi = 0.0;
  double refine_tol = 1e-6;  // relative, on tau
  double threshold = 0.5;    // on |Theta_rc|^2
  Mode row{0};               // 0 selects the receiver N
  Mode col{1};
};

namespace detail {
inline Mode resolve_row(const ExchangeSearch& s, std::size_t n) { return s.row.number == 0 ? Mode(n) : s.row; }
}  // namespace detail

/// Exchange time as the first envelope maximum of |Theta_N1|^2 >= threshold.
inline ExchangeReport exchange_time_numeric(const PropagatorEngine& engine, const ExchangeSearch& search) {
  const Mode row = detail::resolve_row(search, engine.n());
  const EnvelopeScanner scanner(engine, row, search.col, search.lo, search.hi);
  detail::Extremum best{search.lo, -1.0};
  const auto peak = scanner.next_peak(search.lo, std::sqrt(search.threshold), search.refine_tol, true, &best);
  if (!peak) {
    throw NoTransferError("no transfer in window [" + std::to_string(search.lo) + ", " + std::to_string(search.hi) +
                              "]: best |Theta|^2 = " + std::to_string(best.f * best.f) + " at tau = " + std::to_string(best.x) +
                              (scanner.resolved() ? "" : " (eigenvalue splitting below double-precision resolution)"),
                          best.x, best.f * best.f);
  }
  ExchangeReport out;
  out.method = ExchangeMethod::NumericPeak;
  out.tau_ex = peak->x;
  const Propagator theta = engine.at(out.tau_ex);
  out.theta_corner = theta.matrix(static_cast<Eigen::Index>(row.index()), static_cast<Eigen::Index>(search.col.index()));
  out.peak_p = std::norm(out.theta_corner);
  out.ripple_bound = scanner.ripple_bound();
  if (!engine.spectral()) out.warnings.push_back("expm path: " + engine.fallback_reason());
  if (!theta.precise) out.warnings.emplace_back("phase budget exceeded at tau_ex");
  if (!scanner.resolved()) out.warnings.emplace_back("eigenvalue splitting below double-precision resolution");
  out.precise = theta.precise && scanner.resolved();
  return out;
}

/// Exchange time from the ideal-network conditions
///   sum_m C_Nm sin(R_m tau) C^-1_m1 = 0,  sum_m C_Nm cos(R_m tau) C^-1_m1 = +-1.
/// Roots of the sine sum are bracketed only inside envelope regions where
/// |Theta_N1| >= 1 - region_drop; within the first region holding a root that
/// passes the cosine check to `tol`, the best-verified root is returned.
inline ExchangeReport exchange_time_spectral(const PropagatorEngine& engine, double lo, double hi, double tol = 1e-6,
                                             double region_drop = 1e-3) {
  const auto* spec = engine.spectral();
  if (!spec || !spec->ideal) throw Error("exchange_time_spectral: requires an undamped network with a spectral decomposition");
  const Mode row(engine.n());
  const Mode col(1);
  const EnvelopeScanner scanner(engine, row, col, lo, hi);
  const CVector c = element_weights(*spec, row, col);

  auto theta_rc = [&](double t) {
    cplx s = 0.0;
    for (Eigen::Index k = 0; k < c.size(); ++k) s += c(k) * phase_accurate_exp(spec->eigenvalues(k), t).value;
    return s;
  };
  auto sin_sum = [&](double t) { return -theta_rc(t).imag(); };

  const double threshold = 1.0 - region_drop;
  auto region_edge = [&](double inside, double outside) {
    if (scanner.value(outside) >= threshold) return outside;
    for (int it = 0; it < 80; ++it) {
      const double m = 0.5 * (inside + outside);
      (scanner.value(m) >= threshold ? inside : outside) = m;
    }
    return inside;
  };

  double from = lo;
  bool first = true;
  detail::Extremum best_env{lo, -1.0};
  while (from < hi) {
    const auto peak = scanner.next_peak(from, threshold, 1e-9, first, &best_env);
    first = false;
    if (!peak) break;
    const double a = region_edge(peak->x, std::max(lo, peak->x - scanner.step()));
    const double b = region_edge(peak->x, std::min(hi, peak->x + scanner.step()));
    const double width = b - a;
    double h = std::numbers::pi / (8.0 * std::max(scanner.max_cluster_frequency(), 1e-300));
    if (width > 0.0) h = std::min(h, width / 16.0);

    std::optional<std::pair<double, double>> chosen;  // (tau, deviation)
    auto consider = [&](double t) {
      const double dev = std::abs(std::abs(theta_rc(t).real()) - 1.0);
      if (dev > tol) return;
      if (!chosen || dev < chosen->second) chosen = {t, dev};
    };
    if (width <= 0.0) {
      if (std::abs(sin_sum(a)) <= tol) consider(a);
    } else {
      const auto steps = static_cast<std::size_t>(std::ceil(width / h));
      double t0 = a;
      double s0 = sin_sum(t0);
      if (s0 == 0.0) consider(t0);
      for (std::size_t i = 1; i <= steps; ++i) {
        const double t1 = i == steps ? b : a + static_cast<double>(i) * h;
        const double s1 = sin_sum(t1);
        if (s1 == 0.0) {
          consider(t1);
        } else if (s0 != 0.0 && (s0 < 0.0) != (s1 < 0.0)) {
          double l = t0, r = t1, sl = s0;
          for (int it = 0; it < 200 && r - l > 4.0 * std::numeric_limits<double>::epsilon() * std::abs(r); ++it) {
            const double m = 0.5 * (l + r);
            const double sm = sin_sum(m);
            if (sm == 0.0) {
              l = r = m;
              break;
            }
            if ((sm < 0.0) == (sl < 0.0)) {
              l = m;
              sl = sm;
            } else {
              r = m;
            }
          }
          consider(0.5 * (l + r));
        }
        t0 = t1;
        s0 = s1;
      }
    }
    if (chosen) {
      ExchangeReport out;
      out.method = ExchangeMethod::Spectral;
      out.tau_ex = chosen->first;
      out.theta_corner = engine.at(out.tau_ex).matrix(static_cast<Eigen::Index>(row.index()), 0);
      out.peak_p = std::norm(out.theta_corner);
      out.ripple_bound = scanner.ripple_bound();
      return out;
    }
    from = b + 0.5 * scanner.step();
  }
  throw NoTransferError("exchange_time_spectral: no tau in window satisfies both transfer conditions", best_env.x,
                        best_env.f * best_env.f);
}

enum class TauOrder { Leading, Corrected };

struct AnalyticTau {
  double value = 0.0;
  Warnings warnings;
};

/// tau_ex = pi / (2 eps^(N-3) mu^(N-2)) * {1 + [A + B eta^2 - C eps^2] mu^2},
/// A = N - 1, B = sum_{m=1}^{N-2} m, C = N - 3.
inline AnalyticTau analytic_tau_ex(std::size_t n, const ScaledParams& params, double epsilon,
                                   TauOrder order = TauOrder::Corrected) {
  if (n < 2) throw Error("analytic_tau_ex: n must be at least 2");
  AnalyticTau out;
  if (n == 2) {
    out.value = std::numbers::pi / 2.0;
    return out;
  }
  if (!params.perturbative())
    out.warnings.emplace_back("analytic_tau_ex: outside the tunneling regime (mu << 1, eta << 1 not satisfied)");
  if (order == TauOrder::Leading && !params.eps_mu_sq_small)
    out.warnings.emplace_back("analytic_tau_ex: (eps mu)^2 << 1 not satisfied for the leading-order value");
  if (n > 6) out.warnings.emplace_back("analytic_tau_ex: extrapolation beyond N = 6; use the numeric search");
  if (n > 3 && epsilon == 0.0) throw Error("analytic_tau_ex: epsilon = 0 decouples the chain");

  const double nn = static_cast<double>(n);
  const double mu = std::abs(params.mu);
  const double leading = std::numbers::pi / (2.0 * std::pow(epsilon, nn - 3.0) * std::pow(mu, nn - 2.0));
  if (order == TauOrder::Leading) {
    out.value = leading;
    return out;
  }
  const double a = nn - 1.0;
  const double b = (nn - 2.0) * (nn - 1.0) / 2.0;
  const double c = nn - 3.0;
  out.value = leading * (1.0 + (a + b * params.eta * params.eta - c * epsilon * epsilon) * mu * mu);
  if (!(out.value > 0.0)) out.warnings.emplace_back("analytic_tau_ex: correction term drives tau_ex non-positive");
  return out;
}

/// lambda_eff = pi / (2 tau_ex), in units of lambda.
inline double effective_coupling(std::size_t n, const ScaledParams& params, double epsilon, TauOrder order = TauOrder::Corrected) {
  if (n == 2) return 1.0;
  return std::numbers::pi / (2.0 * analytic_tau_ex(n, params, epsilon, order).value);
}

/// Second-order-in-mu propagator of the N = 4 tunneling chain, as a closed form
/// with prefactor exp(-i(varpi - mu) tau) exp(-eta mu^2 tau).
inline Propagator perturbative_theta4(const ScaledParams& params, double epsilon, double tau) {
  const double mu = params.mu;
  const double eta = params.eta;
  const double slow = epsilon * mu * mu * tau;
  const cplx fast = std::exp(-(eta + kI / mu) * tau);
  const cplx hc = fast * std::cos(epsilon * tau);
  const cplx hs = fast * std::sin(epsilon * tau);
  const cplx gc = mu * (std::cos(slow) - hc);
  const cplx gs = mu * (std::sin(slow) - hs);
  const cplx pre = std::exp(-kI * (params.varpi - mu) * tau) * std::exp(-eta * mu * mu * tau);

  CMatrix m(4, 4);
  m << std::cos(slow), -gc, kI * gs, -kI * std::sin(slow),
       -gc, hc, -kI * hs, kI * gs,
       kI * gs, -kI * hs, hc, -gc,
       -kI * std::sin(slow), kI * gs, -gc, std::cos(slow);
  Propagator out;
  out.time = tau;
  out.matrix = pre * m;
  out.precise = true;
  return out;
}

struct TransferSample {
  double tau = 0.0;
  double p_ex = 0.0;
  double p_rec = 0.0;
  bool precise = true;
};

struct TransferCurve {
  std::vector<double> tau;
  std::vector<double> p_ex;
  std::vector<double> p_rec;
  std::vector<bool> precise;
};

enum class Fidelity { Exchange, Recurrence };

/// p_ex(tau) = Tr[rho_S(0) rho_R(tau)], p_rec(tau) = Tr[rho_S(0) rho_S(tau)]
/// from single-mode reduced states.
class TransferEvaluator {
 public:
  TransferEvaluator(const PropagatorEngine& engine, CoherentSuperposition initial, Mode sender = Mode(1),
                    std::optional<Mode> receiver = std::nullopt)
      : engine_(&engine),
        initial_(std::move(initial)),
        sender_(sender),
        receiver_(receiver.value_or(Mode(engine.n()))),
        flow_(engine, initial_.amplitude_vectors()) {
    if (initial_.modes() != engine.n()) throw Error("transfer: initial state and network have different mode counts");
    if (sender_.number < 1 || sender_.number > engine.n() || receiver_.number < 1 || receiver_.number > engine.n())
      throw Error("transfer: sender or receiver out of range");
    sender_initial_ = reduce(evolve(initial_, initial_.amplitude_vectors(), 0.0), sender_);
    if (initial_.size() > 16)
      warnings_.push_back("transfer: " + std::to_string(initial_.size()) + " branches; overlap sums cost O(Q^4) per sample");
  }

  [[nodiscard]] const Warnings& warnings() const { return warnings_; }

  [[nodiscard]] EvolvedState state_at(double tau) const {
    auto sample = flow_.at(tau);
    return evolve(initial_, std::move(sample.amplitudes), tau, sample.precise);
  }

  [[nodiscard]] TransferSample at(double tau) const {
    const EvolvedState st = state_at(tau);
    TransferSample s;
    s.tau = tau;
    s.precise = st.precise;
    s.p_ex = checked(reduced_overlap(sender_initial_, reduce(st, receiver_)), tau);
    s.p_rec = checked(reduced_overlap(sender_initial_, reduce(st, sender_)), tau);
    return s;
  }

  [[nodiscard]] double probability(Fidelity which, double tau) const {
    const EvolvedState st = state_at(tau);
    return checked(reduced_overlap(sender_initial_, reduce(st, which == Fidelity::Exchange ? receiver_ : sender_)), tau);
  }

  /// Exchange probability by the explicit closed form (cross-check route).
  [[nodiscard]] double exchange_closed_form(double tau) const {
    return transfer_probability_closed_form(state_at(tau), sender_, receiver_);
  }

  /// Full-network Tr[rho(0) rho(tau)].
  [[nodiscard]] double full_trace_overlap(double tau) const {
    return full_overlap(evolve(initial_, initial_.amplitude_vectors(), 0.0), state_at(tau));
  }

  /// Largest probability in [lo, hi]: uniform grid, then golden section
  /// around the best sample.
  [[nodiscard]] detail::Extremum peak(Fidelity which, double lo, double hi, std::size_t samples = 400,
                                      double abs_tol = 1e-9) const {
    if (!(hi > lo) || samples < 2) throw Error("transfer peak: need hi > lo and at least 2 samples");
    const double h = (hi - lo) / static_cast<double>(samples - 1);
    detail::Extremum best{lo, -1.0};
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < samples; ++i) {
      const double t = lo + static_cast<double>(i) * h;
      const double p = probability(which, t);
      if (p > best.f) {
        best = {t, p};
        best_i = i;
      }
    }
    const double a = best_i > 0 ? best.x - h : lo;
    const double b = best_i + 1 < samples ? best.x + h : hi;
    auto ext = detail::golden_maximize([&](double t) { return probability(which, t); }, a, b, abs_tol);
    return ext.f >= best.f ? ext : best;
  }

  [[nodiscard]] const PropagatorEngine& engine() const { return *engine_; }
  [[nodiscard]] const CoherentSuperposition& initial() const { return initial_; }
  [[nodiscard]] Mode sender() const { return sender_; }
  [[nodiscard]] Mode receiver() const { return receiver_; }

 private:
  static double checked(double p, double tau) {
    if (p > 1.0 + 1e-9 || p < -1e-9)
      throw ConsistencyError("transfer: probability " + std::to_string(p) + " outside [0, 1] at tau = " + std::to_string(tau));
    return p;
  }

  const PropagatorEngine* engine_;
  CoherentSuperposition initial_;
  Mode sender_;
  Mode receiver_;
  AmplitudeFlow flow_;
  ReducedState sender_initial_;
  Warnings warnings_;
};

/// Samples p_ex and p_rec on `taus`. Work is split into contiguous blocks
/// over `threads` workers (0 = hardware concurrency); output order and values
/// do not depend on the thread count.
inline TransferCurve transfer_curve(const TransferEvaluator& evaluator, const std::vector<double>& taus, unsigned threads = 0) {
  const std::size_t n = taus.size();
  std::vector<TransferSample> samples(n);
  unsigned workers = threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : threads;
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(n, 1)));

  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        const std::size_t begin = n * w / workers;
        const std::size_t end = n * (w + 1) / workers;
        try {
          for (std::size_t i = begin; i < end; ++i) samples[i] = evaluator.at(taus[i]);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  TransferCurve curve;
  curve.tau = taus;
  curve.p_ex.reserve(n);
  curve.p_rec.reserve(n);
  curve.precise.reserve(n);
  for (const auto& s : samples) {
    curve.p_ex.push_back(s.p_ex);
    curve.p_rec.push_back(s.p_rec);
    curve.precise.push_back(s.precise);
  }
  return curve;
}

/// Uniform grid of `count` points on [lo, hi].
inline std::vector<double> linear_grid(double lo, double hi, std::size_t count) {
  if (count == 0) return {};
  if (count == 1) return {lo};
  std::vector<double> g(count);
  for (std::size_t i = 0; i < count; ++i) g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  g.back() = hi;
  return g;
}

/// Logarithmic grid of `count` points on [lo, hi], lo > 0.
inline std::vector<double> log_grid(double lo, double hi, std::size_t count) {
  if (!(lo > 0.0)) throw Error("log grid: lower bound must be positive");
  if (count == 0) return {};
  if (count == 1) return {lo};
  std::vector<double> g(count);
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (std::size_t i = 0; i < count; ++i) g[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  g.front() = lo;
  g.back() = hi;
  return g;
}

struct HeldSample {
  double tau = 0.0;
  double p = 0.0;
  bool precise = true;
};

/// Largest probability within one carrier period centred on `c`, clipped to [lo, hi].
inline HeldSample peak_hold(const TransferEvaluator& ev, Fidelity which, double c, double period, double lo, double hi) {
  const double a = std::max(lo, c - 0.5 * period);
  const double b = std::min(hi, c + 0.5 * period);
  constexpr int kProbe = 16;
  HeldSample best{a, -1.0, true};
  const double h = (b - a) / kProbe;
  for (int k = 0; k <= kProbe; ++k) {
    const double t = a + h * k;
    const double p = ev.probability(which, t);
    if (p > best.p) best = {t, p, true};
  }
  if (h > 0.0) {
    const auto ext = qpst::detail::golden_maximize([&](double t) { return ev.probability(which, t); }, std::max(a, best.tau - h),
                                                   std::min(b, best.tau + h), 1e-9 * std::max(1.0, best.tau));
    if (ext.f > best.p) best = {ext.x, ext.f, true};
  }
  best.precise = ev.engine().at(best.tau).precise;
  return best;
}

/// Peak of p over [lo, hi]: dense sampling at about an eighth of the carrier
/// period when affordable, otherwise a coarse peak-held pass to locate the best
/// region followed by dense sampling there. The dense step is an irrational
/// fraction of the period: cat states give crests at harmonics of the carrier,
/// and a commensurate step would sample every crest at the same phase.
inline HeldSample windowed_peak(const TransferEvaluator& ev, Fidelity which, double lo, double hi, double carrier) {
  constexpr double kDenseBudget = 2e5;
  constexpr double kStepFraction = 0.1180339887498949;  // (sqrt(5) - 2) / 2
  constexpr std::size_t kRefine = 16;
  const double width = hi - lo;
  const double period = carrier > 0.0 ? 2.0 * std::numbers::pi / carrier : width / 400.0;
  auto dense = [&](double a, double b) {
    const double step = std::max(period * kStepFraction, (b - a) / kDenseBudget);
    const auto count = static_cast<std::size_t>(std::ceil((b - a) / step));
    std::vector<HeldSample> samples(count + 1);
    for (std::size_t i = 0; i <= count; ++i) {
      const double t = std::min(b, a + step * static_cast<double>(i));
      samples[i] = {t, ev.probability(which, t), true};
    }
    const std::size_t k = std::min(kRefine, samples.size());
    std::partial_sort(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(k), samples.end(),
                      [](const HeldSample& x, const HeldSample& y) { return x.p > y.p; });
    HeldSample best = samples.front();
    for (std::size_t i = 0; i < k; ++i) {
      const auto ext = qpst::detail::golden_maximize([&](double t) { return ev.probability(which, t); }, std::max(a, samples[i].tau - step),
                                                     std::min(b, samples[i].tau + step), 1e-9 * std::max(1.0, samples[i].tau));
      if (ext.f > best.p) best = {ext.x, ext.f, true};
    }
    return best;
  };
  HeldSample out;
  if (width / (period * kStepFraction) <= kDenseBudget) {
    out = dense(lo, hi);
  } else {
    constexpr std::size_t kCells = 400;
    const double cell = width / kCells;
    HeldSample coarse{lo, -1.0, true};
    for (std::size_t i = 0; i < kCells; ++i) {
      const auto h = peak_hold(ev, which, lo + cell * (static_cast<double>(i) + 0.5), period, lo, hi);
      if (h.p > coarse.p) coarse = h;
    }
    out = dense(std::max(lo, coarse.tau - cell), std::min(hi, coarse.tau + cell));
    if (coarse.p > out.p) out = coarse;
  }
  out.precise = ev.engine().at(out.tau).precise;
  return out;
}

}  // namespace qpst
