#include "bladefl/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "bladefl/error.hpp"

namespace bladefl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// (eta L + 1)^x - 1 without cancellation for small eta L.
double growth_minus_one(double x, double eta_L) { return std::expm1(x * std::log1p(eta_L)); }

void check_bound_inputs(const SystemParams& p, const BoundConstants& c, const LazyTerms& lazy) {
  p.validate_static();
  c.validate();
  if (!(p.eta * c.L < 1.0)) throw Error(ErrorCode::InvalidParameter, "bound requires eta * L < 1");
  if (!(lazy.ratio >= 0.0 && lazy.ratio <= 1.0)) {
    throw Error(ErrorCode::InvalidParameter, "lazy ratio must lie in [0, 1]");
  }
  if (!(lazy.theta >= 0.0) || !(lazy.sigma2 >= 0.0)) {
    throw Error(ErrorCode::InvalidParameter, "theta and sigma2 must be >= 0");
  }
}

struct Allocation {
  double tau = 0.0;
  double gamma = 0.0;  // total local iterations K * tau
};

Allocation allocate(int k, const SystemParams& p, TauMode mode) {
  if (k < 1) throw Error(ErrorCode::InvalidParameter, "K must be >= 1");
  if (mode == TauMode::Floored) {
    const int tau = compute_tau(p.t_sum, k, p.alpha, p.beta);
    return {static_cast<double>(tau), static_cast<double>(k) * tau};
  }
  if (!(k * (p.alpha + p.beta) <= p.t_sum)) {
    throw Error(ErrorCode::InsufficientBudget, "tau < 1 at K=" + std::to_string(k));
  }
  const double gamma = (p.t_sum - k * p.beta) / p.alpha;
  return {gamma / k, gamma};
}

double evaluate(int k, const SystemParams& p, const BoundConstants& c, const LazyTerms& lazy,
                TauMode mode) {
  check_bound_inputs(p, c, lazy);
  const Allocation a = allocate(k, p, mode);
  const double K = k;
  const double eps2 = c.eps_sq();
  const double eta_L = p.eta * c.L;
  const double noise_coeff = std::sqrt(lazy.ratio / p.n_clients);  // sqrt(M) / N

  // Time-budget form: everything expressed through gamma and K.
  const double numer = c.delta * c.xi * K / c.L * growth_minus_one(a.gamma / K, eta_L) -
                       p.eta * c.xi * c.delta * a.gamma + K * c.xi * lazy.ratio * lazy.theta +
                       K * c.xi * noise_coeff * lazy.sigma2;
  const double bracket_budget = p.eta * c.phi - numer / (eps2 * a.gamma);

  // Per-round form: K rounds of tau iterations.
  const double per_round = h(a.tau, c.delta, c.L, p.eta) + lazy.ratio * lazy.theta +
                           noise_coeff * lazy.sigma2;
  const double bracket_round = p.eta * c.phi - c.xi * per_round / (a.tau * eps2);

  if (!(bracket_budget > 0.0) || !(bracket_round > 0.0)) {
    throw Error(ErrorCode::DivergentBound, "bracket is not positive at K=" + std::to_string(k));
  }
  const double g_budget = 1.0 / (a.gamma * bracket_budget);
  const double g_round = 1.0 / (K * a.tau * bracket_round);
  if (std::abs(g_budget - g_round) > 1e-9 * std::max(std::abs(g_budget), std::abs(g_round))) {
    throw std::logic_error("bound forms disagree at K=" + std::to_string(k));
  }
  return g_budget;
}

double value_or_inf(int k, const SystemParams& p, const BoundConstants& c, const LazyTerms& lazy,
                    TauMode mode) {
  try {
    return evaluate(k, p, c, lazy, mode);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DivergentBound) return kInf;
    throw;
  }
}

}  // namespace

double h(double x, double delta, double L, double eta) {
  return delta / L * growth_minus_one(x, eta * L) - eta * delta * x;
}

double bound_G(int k, const SystemParams& p, const BoundConstants& c, TauMode mode) {
  return evaluate(k, p, c, LazyTerms{}, mode);
}

double bound_G_lazy(int k, const SystemParams& p, const BoundConstants& c, double theta,
                    double sigma2, TauMode mode) {
  return evaluate(k, p, c, LazyTerms{p.lazy_ratio(), theta, sigma2}, mode);
}

double bound_G_lazy(int k, const SystemParams& p, const BoundConstants& c, const LazyTerms& lazy,
                    TauMode mode) {
  return evaluate(k, p, c, lazy, mode);
}

ClosedFormK optimal_k_closed(const SystemParams& p, const BoundConstants& c) {
  for (double v : {p.t_sum, p.alpha, p.beta, p.eta, c.L}) {
    if (!(v > 0.0)) throw Error(ErrorCode::NonPositiveParameter, "closed form needs t_sum, alpha, beta, eta, L > 0");
  }
  const double eta_L = p.eta * c.L;
  if (!(eta_L < 1.0)) throw Error(ErrorCode::InvalidParameter, "closed form requires eta * L < 1");
  ClosedFormK out;
  out.k_star = p.t_sum / std::sqrt(2.0 * p.alpha * p.beta / eta_L + p.alpha * p.beta + p.beta * p.beta);
  out.rounded = std::max(1L, std::lround(out.k_star));
  const double tau = (p.t_sum / static_cast<double>(out.rounded) - p.beta) / p.alpha;
  out.eta_L_tau = eta_L * tau;
  out.approximation_valid = tau >= 1.0 && out.eta_L_tau <= 0.1;
  return out;
}

NumericK optimal_k_numeric(const SystemParams& p, const BoundConstants& c, const OptimizeOptions& opts) {
  const KRange range = feasible_k_range(p.t_sum, p.alpha, p.beta);
  const LazyTerms lazy = opts.lazy.value_or(LazyTerms{});
  NumericK best{0, kInf};
  for (int k = std::max(range.k_min, opts.k_floor); k <= range.k_max; ++k) {
    const double v = value_or_inf(k, p, c, lazy, opts.mode);
    if (v < best.value) best = {k, v};
  }
  if (best.k == 0) throw Error(ErrorCode::NoFeasibleK, "bound diverges at every feasible K");
  return best;
}

BoundCurve bound_curve(const SystemParams& p, const BoundConstants& c, const OptimizeOptions& opts) {
  const KRange range = feasible_k_range(p.t_sum, p.alpha, p.beta);
  BoundCurve curve{{}, p, c, opts.lazy, opts.mode};
  const LazyTerms lazy = opts.lazy.value_or(LazyTerms{});
  for (int k = std::max(range.k_min, opts.k_floor); k <= range.k_max; ++k) {
    const Allocation a = allocate(k, p, opts.mode);
    curve.points.push_back({k, a.tau, a.gamma, value_or_inf(k, p, c, lazy, opts.mode)});
  }
  return curve;
}

ConvexityVerdict check_convexity(const BoundCurve& curve) {
  const auto& pts = curve.points;
  for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
    const auto& a = pts[i - 1];
    const auto& b = pts[i];
    const auto& d = pts[i + 1];
    if (b.k != a.k + 1 || d.k != b.k + 1) continue;
    if (!std::isfinite(a.value) || !std::isfinite(b.value) || !std::isfinite(d.value)) continue;
    const double second = a.value - 2.0 * b.value + d.value;
    if (second < -1e-9 * std::abs(b.value)) return {false, b.k, second};
  }
  return {};
}

ScanAxis parse_axis(const std::string& name) {
  if (name == "alpha") return ScanAxis::Alpha;
  if (name == "beta") return ScanAxis::Beta;
  if (name == "delta") return ScanAxis::Delta;
  if (name == "N" || name == "n" || name == "n_clients") return ScanAxis::N;
  if (name == "eta") return ScanAxis::Eta;
  if (name == "lazy_ratio") return ScanAxis::LazyRatio;
  if (name == "sigma2") return ScanAxis::Sigma2;
  throw Error(ErrorCode::InvalidParameter, "unknown scan axis '" + name + "'");
}

const char* to_string(ScanAxis axis) {
  switch (axis) {
    case ScanAxis::Alpha: return "alpha";
    case ScanAxis::Beta: return "beta";
    case ScanAxis::Delta: return "delta";
    case ScanAxis::N: return "N";
    case ScanAxis::Eta: return "eta";
    case ScanAxis::LazyRatio: return "lazy_ratio";
    case ScanAxis::Sigma2: return "sigma2";
  }
  return "unknown";
}

const char* to_string(Direction d) {
  return d == Direction::NonIncreasing ? "non-increasing" : "non-decreasing";
}

Direction expected_direction(ScanAxis axis) {
  switch (axis) {
    case ScanAxis::Delta:
    case ScanAxis::Eta:
      return Direction::NonDecreasing;
    default:
      return Direction::NonIncreasing;
  }
}

ScanResult scan_monotonicity(ScanAxis axis, const std::vector<double>& grid, const SystemParams& p,
                             const BoundConstants& c, const ScanOptions& opts) {
  if (grid.size() < 3) throw Error(ErrorCode::InvalidParameter, "scan grid needs at least 3 points");
  if (!std::is_sorted(grid.begin(), grid.end())) {
    throw Error(ErrorCode::InvalidParameter, "scan grid must be sorted ascending");
  }
  BoundConstants frozen = c;
  frozen.epsilon_sq = c.eps_sq();

  OptimizeOptions base_opts = opts.optimize;
  const bool lazy_axis = axis == ScanAxis::LazyRatio || axis == ScanAxis::Sigma2;
  if (lazy_axis && !base_opts.lazy) base_opts.lazy = LazyTerms{p.lazy_ratio(), c.theta, p.noise_var};

  ScanResult out;
  out.axis = axis;
  out.expected = expected_direction(axis);
  for (double v : grid) {
    SystemParams q = p;
    BoundConstants k = frozen;
    OptimizeOptions o = base_opts;
    switch (axis) {
      case ScanAxis::Alpha: q.alpha = v; break;
      case ScanAxis::Beta: q.beta = v; break;
      case ScanAxis::Delta: k.delta = v; break;
      case ScanAxis::N: {
        q.n_clients = static_cast<int>(std::lround(v));
        if (q.n_clients < 1) throw Error(ErrorCode::InvalidParameter, "N grid values must be >= 1");
        q.n_lazy = std::min(q.n_lazy, q.n_clients);
        k.delta = opts.delta_of_n ? opts.delta_of_n(q.n_clients)
                                  : c.delta * std::sqrt(static_cast<double>(p.n_clients) / q.n_clients);
        break;
      }
      case ScanAxis::Eta: q.eta = v; break;
      case ScanAxis::LazyRatio: o.lazy->ratio = v; break;
      case ScanAxis::Sigma2: o.lazy->sigma2 = v; break;
    }
    const NumericK best = optimal_k_numeric(q, k, o);
    out.rows.push_back({v, best.k, best.value});
  }
  for (std::size_t i = 1; i < out.rows.size(); ++i) {
    const int prev = out.rows[i - 1].k_star;
    const int cur = out.rows[i].k_star;
    const bool bad = out.expected == Direction::NonIncreasing ? cur > prev : cur < prev;
    out.inversions += bad;
  }
  out.holds = out.inversions == 0;
  return out;
}

}  // namespace bladefl
