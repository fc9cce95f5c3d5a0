#pragma once

#include <optional>

namespace bladefl {

// Hardware description from which the per-iteration training time and the
// per-block mining time are derived.
struct HardwareModel {
  double mining_difficulty = 0.0;     // kappa
  double avg_cycles_per_block = 0.0;  // chi
  double cpu_rate = 0.0;              // f, cycles per second
  double cycles_per_sample = 0.0;     // rho
  double samples_per_client = 0.0;    // |D_i|

  void validate() const;
};

struct Rates {
  double alpha = 0.0;  // training time per local iteration
  double beta = 0.0;   // mining time per block
};

Rates derive_rates(const HardwareModel& hw, int n_clients);

// Local iterations per integrated round under the floor accounting
// K * (tau * alpha + beta) <= t_sum < K * ((tau + 1) * alpha + beta).
// Throws InsufficientBudget when fewer than one iteration fits.
int compute_tau(double t_sum, int k, double alpha, double beta);

struct KRange {
  int k_min = 1;
  int k_max = 1;
};

KRange feasible_k_range(double t_sum, double alpha, double beta);

struct SystemParams {
  int n_clients = 10;
  int n_lazy = 0;
  double noise_var = 0.0;  // sigma^2 of the lazy clients' masking noise
  double t_sum = 60.0;
  double alpha = 1.0;
  double beta = 4.0;
  double eta = 0.05;
  int rounds = 1;  // K

  // Checks everything except the budget; bound evaluation scans K itself.
  void validate_static() const;
  // validate_static() plus tau >= 1 for the configured K.
  void validate() const;

  int local_iters() const { return compute_tau(t_sum, rounds, alpha, beta); }
  // Time the floor in compute_tau leaves unused.
  double leftover() const;
  double lazy_ratio() const { return static_cast<double>(n_lazy) / n_clients; }
};

// Constants of the convergence bound. epsilon_sq falls back to delta*xi/phi.
struct BoundConstants {
  double xi = 1.0;      // Lipschitz constant of the loss
  double L = 1.0;       // smoothness
  double delta = 1.0;   // global gradient divergence
  double phi = 1.0;     // (1 - eta L / 2) / ||w0 - w*||
  std::optional<double> epsilon_sq;
  double theta = 0.0;   // lazy degradation

  double eps_sq() const { return epsilon_sq ? *epsilon_sq : delta * xi / phi; }
  void validate() const;
};

}  // namespace bladefl
