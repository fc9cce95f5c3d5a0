#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "bladefl/data.hpp"
#include "bladefl/protocol.hpp"
#include "support.hpp"

using namespace bladefl;

namespace {

struct Fixture {
  Dataset train;
  Dataset eval;
  Partition partition;

  Fixture(int n_clients, int per_client, std::uint64_t seed = 3) {
    const Dataset all = synth_generate(5, 8, n_clients * per_client + 200, seed);
    HoldoutSplit s = split_holdout(all, n_clients * per_client, seed);
    train = std::move(s.train);
    eval = std::move(s.eval);
    partition = partition_noniid(train, n_clients, 2, seed);
  }
};

SimulationConfig base_config(int n_clients, int k) {
  SimulationConfig cfg;
  cfg.params.n_clients = n_clients;
  cfg.params.rounds = k;
  cfg.difficulty_bits = 4;
  return cfg;
}

}  // namespace

TEST_CASE("honest clients agree bit for bit after every round") {
  Fixture fx(3, 40);
  Simulation sim(base_config(3, 4), fx.train, fx.partition, &fx.eval);
  for (int k = 1; k <= 4; ++k) {
    const RoundRecord r = sim.run_integrated_round();
    CHECK(r.ledger_height == static_cast<std::uint64_t>(k));
    for (const auto& c : sim.clients()) CHECK(c.weights.values == sim.global().values);
    CHECK(r.clock_after - r.clock_before == doctest::Approx(r.tau * 1.0 + r.mining_time));
  }
  CHECK_ERROR(sim.run_integrated_round(), ErrorCode::BudgetExceeded);
}

TEST_CASE("all-lazy round leaves the initial model") {
  Fixture fx(3, 40);
  SimulationConfig cfg = base_config(3, 1);
  cfg.params.n_lazy = 3;
  Simulation sim(cfg, fx.train, fx.partition);
  CHECK(sim.flagged_all_lazy());
  const double before = sim.global_loss(sim.initial());
  const RoundRecord r = sim.run_integrated_round();
  CHECK(r.no_honest_victim);
  CHECK(sim.global().values == sim.initial().values);
  CHECK(r.loss == before);
}

TEST_CASE("FedAvg trajectory matches a centralized replay") {
  Fixture fx(10, 40);
  SimulationConfig cfg = base_config(10, 5);
  const SimulationResult res = run_simulation(cfg, fx.train, fx.partition, &fx.eval);
  REQUIRE(res.rounds.size() == 5);

  // Replay: plain gradient descent per shard, then a coordinate mean,
  // without any of the chain machinery.
  const Topology t = res.initial.topology;
  std::vector<Objective> shards;
  for (std::size_t i = 0; i < 10; ++i) shards.push_back(shard_objective(fx.partition.view(fx.train, i), cfg.model, t));
  Eigen::VectorXd w = res.initial.values;
  const int tau = res.rounds.front().tau;
  double prev = INFINITY;
  for (const auto& r : res.rounds) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(w.size());
    for (const auto& f : shards) sum += gradient_descent(f, w, cfg.params.eta, tau);
    w = sum / 10.0;
    CHECK(r.loss <= prev);
    prev = r.loss;
  }
  CHECK((w - res.final_global.values).norm() <= 1e-12 * (1.0 + w.norm()));
  CHECK(validate_ledger(res.ledger, res.registry, cfg.difficulty_bits).ok);
}

TEST_CASE("budget accounting") {
  Fixture fx(4, 20);
  SimulationConfig cfg = base_config(4, 2);
  cfg.params.t_sum = 14;
  cfg.params.alpha = 1;
  cfg.params.beta = 6;
  const SimulationResult res = run_simulation(cfg, fx.train, fx.partition);
  CHECK(res.rounds.front().tau == 1);
  CHECK(res.ledger.height() == 2);
  CHECK(res.final_clock == 14.0);
  CHECK(res.leftover == 0.0);

  cfg.params.rounds = 3;
  int rounds_seen = 0;
  CHECK_ERROR(run_simulation(cfg, fx.train, fx.partition, nullptr,
                             [&](const RoundRecord&, const Simulation&) { ++rounds_seen; }),
              ErrorCode::InsufficientBudget);
  CHECK(rounds_seen == 0);
}

TEST_CASE("stochastic mining still validates") {
  Fixture fx(4, 20);
  SimulationConfig cfg = base_config(4, 3);
  cfg.mining = MiningMode::Stochastic;
  const SimulationResult res = run_simulation(cfg, fx.train, fx.partition);
  CHECK(res.ledger.height() == 3);
  CHECK(validate_ledger(res.ledger, res.registry, cfg.difficulty_bits).ok);
  double mined = 0.0;
  for (const auto& r : res.rounds) mined += r.mining_time;
  CHECK(res.final_clock == doctest::Approx(3 * res.rounds.front().tau * 1.0 + mined));
}

TEST_CASE("identical seeds give identical records") {
  Fixture fx(5, 40);
  SimulationConfig cfg = base_config(5, 3);
  cfg.params.n_lazy = 2;
  cfg.params.noise_var = 0.01;
  cfg.batch = 8;
  cfg.dp_noise_var = 1e-4;
  const SimulationResult a = run_simulation(cfg, fx.train, fx.partition, &fx.eval);
  const SimulationResult b = run_simulation(cfg, fx.train, fx.partition, &fx.eval);
  REQUIRE(a.rounds.size() == b.rounds.size());
  for (std::size_t i = 0; i < a.rounds.size(); ++i) {
    CHECK(a.rounds[i].loss == b.rounds[i].loss);
    CHECK(a.rounds[i].accuracy == b.rounds[i].accuracy);
    CHECK(a.rounds[i].theta_hat == b.rounds[i].theta_hat);
    CHECK(a.rounds[i].client_losses == b.rounds[i].client_losses);
  }
  CHECK(a.final_global.values == b.final_global.values);
  CHECK(a.ledger.tip().hash == b.ledger.tip().hash);

  cfg.seed = 2;
  const SimulationResult c = run_simulation(cfg, fx.train, fx.partition, &fx.eval);
  CHECK(c.final_global.values != a.final_global.values);
}

TEST_CASE("tampering in transit aborts the round") {
  Fixture fx(3, 20);
  SimulationConfig cfg = base_config(3, 2);
  cfg.upload_hook = [](std::vector<Transaction>& txs, int k) {
    if (k == 2) txs[1].payload[20] ^= 0x10;
  };
  Simulation sim(cfg, fx.train, fx.partition);
  CHECK_NOTHROW(sim.run_integrated_round());
  CHECK_ERROR(sim.run_integrated_round(), ErrorCode::VerificationFailure);
  CHECK(sim.ledger().height() == 1);
}

TEST_CASE("lazy clients") {
  SUBCASE("nested lazy sets") {
    const auto two = choose_lazy_clients(10, 2, 4);
    const auto five = choose_lazy_clients(10, 5, 4);
    CHECK(two.size() == 2);
    for (auto id : two) CHECK(std::find(five.begin(), five.end(), id) != five.end());
  }
  SUBCASE("theta is measured only with lazy clients") {
    Fixture fx(5, 40);
    SimulationConfig cfg = base_config(5, 2);
    CHECK(run_simulation(cfg, fx.train, fx.partition).rounds.back().theta_hat == 0.0);
    cfg.params.n_lazy = 2;
    const SimulationResult lazy = run_simulation(cfg, fx.train, fx.partition);
    CHECK(lazy.rounds.back().theta_hat > 0.0);
    CHECK(lazy.lazy_ids.size() == 2);
  }
}

TEST_CASE("lazy masking noise") {
  const Topology t{9999, 0, 2};  // 2 * 10000 coordinates
  WeightVector target = WeightVector::zeros(t);
  Rng fill(3);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < target.values.size(); ++i) target.values[i] = normal(fill);

  Rng rng(21);
  CHECK(lazy_update(target, 0.0, rng).values == target.values);
  CHECK(apply_dp_noise(target, 0.0, rng).values == target.values);

  const Eigen::VectorXd diff = lazy_update(target, 0.1, rng).values - target.values;
  const double mean = diff.mean();
  const double var = (diff.array() - mean).square().sum() / static_cast<double>(diff.size() - 1);
  CHECK(var >= 0.097);
  CHECK(var <= 0.103);

  const Topology small{4, 0, 2};  // 10 coordinates
  WeightVector tgt = WeightVector::zeros(small);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(tgt.values.size());
  for (int i = 0; i < 1000; ++i) acc += lazy_update(tgt, 0.1, rng).values - tgt.values;
  acc /= 1000.0;
  const double bound = 3.0 * std::sqrt(0.1) / std::sqrt(1000.0);
  for (Eigen::Index i = 0; i < acc.size(); ++i) CHECK(std::abs(acc[i]) <= bound);
}

TEST_CASE("DP noise lowers accuracy monotonically on a fixed seed") {
  Fixture fx(10, 40);
  std::vector<double> acc;
  for (double s : {0.0, 0.01, 0.1}) {
    SimulationConfig cfg = base_config(10, 4);
    cfg.dp_noise_var = s;
    acc.push_back(run_simulation(cfg, fx.train, fx.partition, &fx.eval).rounds.back().accuracy);
  }
  CHECK(acc[1] <= acc[0]);
  CHECK(acc[2] <= acc[1]);
}

TEST_CASE("construction errors") {
  Fixture fx(3, 20);
  SimulationConfig cfg = base_config(4, 1);
  CHECK_ERROR(Simulation(cfg, fx.train, fx.partition), ErrorCode::CountMismatch);
  cfg = base_config(3, 1);
  cfg.difficulty_bits = 21;
  CHECK_ERROR(Simulation(cfg, fx.train, fx.partition), ErrorCode::InvalidParameter);
  cfg = base_config(3, 1);
  cfg.params.n_lazy = 4;
  CHECK_ERROR(Simulation(cfg, fx.train, fx.partition), ErrorCode::InvalidParameter);
}
