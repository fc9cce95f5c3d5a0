#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bladefl/params.hpp"

namespace bladefl {

// h(x) = (delta / L) ((eta L + 1)^x - 1) - eta delta x
double h(double x, double delta, double L, double eta);

// How tau enters the bound: the relaxation tau = (t_sum / K - beta) / alpha
// used by the analysis, or the floored count the simulator runs.
enum class TauMode { Continuous, Floored };

// Extra bracket terms of the lazy-client bound. ratio is M / N; the noise
// term uses sqrt(M) / N = sqrt(ratio / N).
struct LazyTerms {
  double ratio = 0.0;
  double theta = 0.0;
  double sigma2 = 0.0;
};

// G(K). Evaluates the time-budget form and the per-round form
// 1 / (K tau (eta phi - xi h(tau) / (tau eps^2))) and requires them to agree
// to 1e-9 relative. Throws DivergentBound when the bracket is not positive,
// InsufficientBudget when tau < 1 and InvalidParameter when eta L >= 1.
double bound_G(int k, const SystemParams& p, const BoundConstants& c,
               TauMode mode = TauMode::Continuous);

// Lazy-client bound with M / N and sqrt(M) / N taken from p.
double bound_G_lazy(int k, const SystemParams& p, const BoundConstants& c, double theta,
                    double sigma2, TauMode mode = TauMode::Continuous);
double bound_G_lazy(int k, const SystemParams& p, const BoundConstants& c, const LazyTerms& lazy,
                    TauMode mode = TauMode::Continuous);

struct ClosedFormK {
  double k_star = 0.0;
  long rounded = 0;
  double eta_L_tau = 0.0;    // at the rounded K (continuous tau)
  bool approximation_valid = false;  // eta L tau <= 0.1
};

// K* = t_sum / sqrt(2 alpha beta / (eta L) + alpha beta + beta^2).
ClosedFormK optimal_k_closed(const SystemParams& p, const BoundConstants& c);

struct NumericK {
  int k = 0;
  double value = 0.0;
};

struct OptimizeOptions {
  std::optional<LazyTerms> lazy;
  TauMode mode = TauMode::Continuous;
  int k_floor = 1;  // smallest K considered
};

// Exhaustive scan over the feasible K; divergent points count as +inf and
// ties go to the smallest K. Throws NoFeasibleK.
NumericK optimal_k_numeric(const SystemParams& p, const BoundConstants& c,
                           const OptimizeOptions& opts = {});

struct BoundPoint {
  int k = 0;
  double tau = 0.0;
  double gamma = 0.0;
  double value = 0.0;  // +inf where the bound diverges
};

struct BoundCurve {
  std::vector<BoundPoint> points;
  SystemParams params;
  BoundConstants constants;
  std::optional<LazyTerms> lazy;
  TauMode mode = TauMode::Continuous;
};

BoundCurve bound_curve(const SystemParams& p, const BoundConstants& c,
                       const OptimizeOptions& opts = {});

struct ConvexityVerdict {
  bool ok = true;
  int violation_k = 0;
  double second_difference = 0.0;
};

// G(K-1) - 2 G(K) + G(K+1) >= -1e-9 |G(K)| on every interior run of
// consecutive finite points.
ConvexityVerdict check_convexity(const BoundCurve& curve);

enum class ScanAxis { Alpha, Beta, Delta, N, Eta, LazyRatio, Sigma2 };
enum class Direction { NonIncreasing, NonDecreasing };

ScanAxis parse_axis(const std::string& name);
const char* to_string(ScanAxis axis);
const char* to_string(Direction d);
// Direction of K* along the axis.
Direction expected_direction(ScanAxis axis);

struct ScanRow {
  double value = 0.0;
  int k_star = 0;
  double bound = 0.0;
};

struct ScanResult {
  ScanAxis axis = ScanAxis::Alpha;
  Direction expected = Direction::NonIncreasing;
  std::vector<ScanRow> rows;
  bool holds = true;
  int inversions = 0;
};

struct ScanOptions {
  OptimizeOptions optimize;
  // delta as a function of N for the N axis. Defaults to delta scaled by
  // sqrt(N_base / N).
  std::function<double(int)> delta_of_n;
};

// K* from optimal_k_numeric at each grid point, plus the monotone verdict.
// eps^2 is frozen at its base value so that moving delta along the delta and
// N axes is not cancelled by the default eps^2 = delta xi / phi.
ScanResult scan_monotonicity(ScanAxis axis, const std::vector<double>& grid, const SystemParams& p,
                             const BoundConstants& c, const ScanOptions& opts = {});

}  // namespace bladefl
