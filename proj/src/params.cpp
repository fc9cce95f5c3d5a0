#include "bladefl/params.hpp"

#include <cmath>
#include <string>

#include "bladefl/error.hpp"

namespace bladefl {

namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw Error(ErrorCode::NonPositiveParameter, std::string(name) + " must be > 0");
  }
}

bool fits(double t_sum, int k, double tau, double alpha, double beta) {
  return static_cast<double>(k) * (tau * alpha + beta) <= t_sum;
}

}  // namespace

void HardwareModel::validate() const {
  require_positive(mining_difficulty, "kappa");
  require_positive(avg_cycles_per_block, "chi");
  require_positive(cpu_rate, "f");
  require_positive(cycles_per_sample, "rho");
  require_positive(samples_per_client, "d_i");
}

Rates derive_rates(const HardwareModel& hw, int n_clients) {
  hw.validate();
  if (n_clients < 1) {
    throw Error(ErrorCode::NonPositiveParameter, "n_clients must be >= 1");
  }
  Rates r;
  r.beta = hw.mining_difficulty * hw.avg_cycles_per_block / (n_clients * hw.cpu_rate);
  r.alpha = hw.samples_per_client * hw.cycles_per_sample / hw.cpu_rate;
  return r;
}

int compute_tau(double t_sum, int k, double alpha, double beta) {
  require_positive(t_sum, "t_sum");
  require_positive(alpha, "alpha");
  require_positive(beta, "beta");
  if (k < 1) {
    throw Error(ErrorCode::NonPositiveParameter, "K must be >= 1");
  }
  double raw = std::floor((t_sum / k - beta) / alpha);
  if (raw < 0.0) {
    throw Error(ErrorCode::InsufficientBudget, "mining alone exceeds the per-round budget");
  }
  // The quotient can land one ulp on the wrong side of an integer; settle
  // the floor against the budget inequality itself.
  while (raw >= 0.0 && !fits(t_sum, k, raw, alpha, beta)) raw -= 1.0;
  while (fits(t_sum, k, raw + 1.0, alpha, beta)) raw += 1.0;
  if (raw < 1.0) {
    throw Error(ErrorCode::InsufficientBudget,
                "no training time left with K=" + std::to_string(k));
  }
  return static_cast<int>(raw);
}

KRange feasible_k_range(double t_sum, double alpha, double beta) {
  require_positive(t_sum, "t_sum");
  require_positive(alpha, "alpha");
  require_positive(beta, "beta");
  double k = std::floor(t_sum / (alpha + beta));
  while (k >= 1.0 && !fits(t_sum, static_cast<int>(k), 1.0, alpha, beta)) k -= 1.0;
  while (fits(t_sum, static_cast<int>(k) + 1, 1.0, alpha, beta)) k += 1.0;
  if (k < 1.0) {
    throw Error(ErrorCode::InsufficientBudget, "even K=1 leaves no training time");
  }
  return KRange{1, static_cast<int>(k)};
}

void SystemParams::validate_static() const {
  if (n_clients < 1) throw Error(ErrorCode::InvalidParameter, "n_clients must be >= 1");
  if (n_lazy < 0 || n_lazy > n_clients) {
    throw Error(ErrorCode::InvalidParameter, "n_lazy must lie in [0, n_clients]");
  }
  if (!(noise_var >= 0.0)) throw Error(ErrorCode::InvalidParameter, "noise_var must be >= 0");
  require_positive(eta, "eta");
  require_positive(alpha, "alpha");
  require_positive(beta, "beta");
  require_positive(t_sum, "t_sum");
}

void SystemParams::validate() const {
  validate_static();
  if (rounds < 1) throw Error(ErrorCode::InvalidParameter, "k must be >= 1");
  (void)local_iters();
}

double SystemParams::leftover() const {
  return t_sum - rounds * (local_iters() * alpha + beta);
}

void BoundConstants::validate() const {
  require_positive(xi, "xi");
  require_positive(L, "L");
  require_positive(delta, "delta");
  require_positive(phi, "phi");
  if (epsilon_sq) require_positive(*epsilon_sq, "epsilon_sq");
  if (!(theta >= 0.0)) throw Error(ErrorCode::InvalidParameter, "theta must be >= 0");
}

}  // namespace bladefl
