#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "bladefl/chain.hpp"
#include "bladefl/data.hpp"
#include "bladefl/learner.hpp"
#include "bladefl/params.hpp"

namespace bladefl {

enum class Role { Honest, Lazy };

struct ClientState {
  std::uint32_t id = 0;
  DatasetView shard;
  WeightVector weights;
  Role role = Role::Honest;
};

struct RoundRecord {
  int k = 0;
  int tau = 0;
  double clock_before = 0.0;
  double clock_after = 0.0;
  double mining_time = 0.0;
  std::uint64_t ledger_height = 0;
  std::uint32_t miner = 0;
  double loss = 0.0;       // F(w_bar^k) over all client shards
  double eval_loss = 0.0;  // on the evaluation set (or the pooled shards)
  double accuracy = 0.0;   // on the evaluation set (or the pooled shards)
  std::vector<double> client_losses;  // F_i(w_bar^k)
  double theta_hat = 0.0;  // mean ||plagiarized - honest counterfactual|| over lazy clients
  bool no_honest_victim = false;
};

struct SimulationConfig {
  SystemParams params;
  ModelSpec model;
  int batch = 0;  // 0 = full batch
  double dp_noise_var = 0.0;
  MiningMode mining = MiningMode::Deterministic;
  unsigned difficulty_bits = 8;
  std::uint64_t seed = 1;
  bool measure_theta = true;
  // Sees every round's signed uploads before verification. Test hook for
  // tampering in transit.
  std::function<void(std::vector<Transaction>&, int k)> upload_hook;
};

// Plagiarized upload: target + n, n ~ N(0, sigma2 I).
WeightVector lazy_update(const WeightVector& target, double sigma2, Rng& rng);
// Gaussian perturbation of an outgoing payload.
WeightVector apply_dp_noise(const WeightVector& w, double sigma2_dp, Rng& rng);

// Ids of the lazy clients: the first M entries of a seeded permutation, so
// the lazy set for M is contained in the set for M + 1.
std::vector<std::uint32_t> choose_lazy_clients(int n_clients, int n_lazy, std::uint64_t seed);

// One run of the five-step integrated round protocol on a single virtual
// clock. The dataset and partition must outlive the simulation.
class Simulation {
 public:
  Simulation(SimulationConfig cfg, const Dataset& train, const Partition& partition,
             const Dataset* eval = nullptr);

  // Steps: local training (or plagiarism), signed broadcast and verification,
  // mining, block validation by every client, aggregation by every client.
  RoundRecord run_integrated_round();

  int rounds_done() const { return rounds_done_; }
  int tau() const { return tau_; }
  const SimulationConfig& config() const { return cfg_; }
  const std::vector<ClientState>& clients() const { return clients_; }
  const Ledger& ledger() const { return ledger_; }
  const KeyRegistry& registry() const { return registry_; }
  const MiningClock& clock() const { return clock_; }
  const WeightVector& initial() const { return initial_; }
  // The model every client holds after the last completed round.
  const WeightVector& global() const { return global_; }
  const std::vector<std::uint32_t>& lazy_ids() const { return lazy_ids_; }
  bool flagged_all_lazy() const { return all_lazy_; }

  double global_loss(const WeightVector& w) const;

 private:
  SimulationConfig cfg_;
  const Dataset& train_;
  const Dataset* eval_;
  int tau_ = 0;
  int rounds_done_ = 0;
  std::vector<ClientState> clients_;
  std::vector<std::uint32_t> lazy_ids_;
  std::vector<std::uint32_t> honest_ids_;
  KeyRegistry registry_;
  Ledger ledger_;
  MiningClock clock_;
  WeightVector initial_;
  WeightVector global_;
  DatasetView eval_view_;
  bool all_lazy_ = false;
};

struct SimulationResult {
  std::vector<RoundRecord> rounds;
  WeightVector initial;
  WeightVector final_global;
  Ledger ledger;
  KeyRegistry registry;
  std::vector<std::uint32_t> lazy_ids;
  double final_clock = 0.0;
  double leftover = 0.0;
  bool all_lazy = false;
};

// Exactly K integrated rounds. Throws InsufficientBudget before any round
// when K is outside the feasible range. on_round sees every finished round.
SimulationResult run_simulation(
    const SimulationConfig& cfg, const Dataset& train, const Partition& partition,
    const Dataset* eval = nullptr,
    const std::function<void(const RoundRecord&, const Simulation&)>& on_round = {});

}  // namespace bladefl
