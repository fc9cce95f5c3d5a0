#include "bladefl/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "bladefl/error.hpp"

namespace bladefl {

namespace {

WeightVector add_gaussian(const WeightVector& w, double var, Rng& rng) {
  if (!(var >= 0.0)) throw Error(ErrorCode::InvalidParameter, "noise variance must be >= 0");
  WeightVector out = w;
  if (var == 0.0) return out;
  std::normal_distribution<double> noise(0.0, std::sqrt(var));
  for (Eigen::Index i = 0; i < out.values.size(); ++i) out.values[i] += noise(rng);
  return out;
}

}  // namespace

WeightVector lazy_update(const WeightVector& target, double sigma2, Rng& rng) {
  return add_gaussian(target, sigma2, rng);
}

WeightVector apply_dp_noise(const WeightVector& w, double sigma2_dp, Rng& rng) {
  return add_gaussian(w, sigma2_dp, rng);
}

std::vector<std::uint32_t> choose_lazy_clients(int n_clients, int n_lazy, std::uint64_t seed) {
  if (n_lazy < 0 || n_lazy > n_clients) {
    throw Error(ErrorCode::InvalidParameter, "n_lazy must lie in [0, n_clients]");
  }
  std::vector<std::uint32_t> ids(static_cast<std::size_t>(n_clients));
  std::iota(ids.begin(), ids.end(), 0U);
  Rng rng = make_stream(seed, Stream::LazySelect);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(static_cast<std::size_t>(n_lazy));
  std::sort(ids.begin(), ids.end());
  return ids;
}

Simulation::Simulation(SimulationConfig cfg, const Dataset& train, const Partition& partition,
                       const Dataset* eval)
    : cfg_(std::move(cfg)),
      train_(train),
      eval_(eval),
      clock_(cfg_.mining, cfg_.params.beta, cfg_.seed) {
  const SystemParams& p = cfg_.params;
  p.validate();
  if (partition.n_clients() != static_cast<std::size_t>(p.n_clients)) {
    throw Error(ErrorCode::CountMismatch, "partition has " + std::to_string(partition.n_clients()) +
                                              " clients, config has " + std::to_string(p.n_clients));
  }
  if (cfg_.difficulty_bits > kMaxDifficultyBits) {
    throw Error(ErrorCode::InvalidParameter, "difficulty_bits above " + std::to_string(kMaxDifficultyBits));
  }
  tau_ = p.local_iters();

  const Topology topo =
      make_topology(cfg_.model, static_cast<int>(train.n_features()), train.n_classes);
  initial_ = initial_weights(topo, cfg_.seed);
  global_ = initial_;
  registry_ = KeyRegistry::generate(p.n_clients, cfg_.seed);
  lazy_ids_ = choose_lazy_clients(p.n_clients, p.n_lazy, cfg_.seed);
  all_lazy_ = p.n_lazy == p.n_clients;

  for (int i = 0; i < p.n_clients; ++i) {
    ClientState c;
    c.id = static_cast<std::uint32_t>(i);
    c.shard = partition.view(train, static_cast<std::size_t>(i));
    if (c.shard.empty()) throw Error(ErrorCode::EmptyShard, "client " + std::to_string(i) + " has no data");
    c.weights = initial_;
    c.role = std::binary_search(lazy_ids_.begin(), lazy_ids_.end(), c.id) ? Role::Lazy : Role::Honest;
    if (c.role == Role::Honest) honest_ids_.push_back(c.id);
    clients_.push_back(std::move(c));
  }
  eval_view_ = eval_ != nullptr ? DatasetView::all(*eval_) : DatasetView{};
}

double Simulation::global_loss(const WeightVector& w) const {
  double total = 0.0;
  double n = 0.0;
  for (const auto& c : clients_) {
    const auto m = static_cast<double>(c.shard.size());
    total += m * loss_value(w, c.shard, cfg_.model);
    n += m;
  }
  return total / n;
}

RoundRecord Simulation::run_integrated_round() {
  const SystemParams& p = cfg_.params;
  const int k = rounds_done_ + 1;
  if (k > p.rounds) throw Error(ErrorCode::BudgetExceeded, "all K rounds already ran");
  if (cfg_.mining == MiningMode::Deterministic &&
      clock_.now() + tau_ * p.alpha + p.beta > p.t_sum * (1.0 + 1e-12)) {
    throw Error(ErrorCode::BudgetExceeded, "round " + std::to_string(k) + " does not fit the remaining time");
  }

  RoundRecord rec;
  rec.k = k;
  rec.tau = tau_;
  rec.clock_before = clock_.now();
  const auto uk = static_cast<std::uint64_t>(k);

  // Step 1: honest clients train; lazy clients plagiarize an honest upload.
  std::vector<WeightVector> uploads(clients_.size());
  for (const auto& c : clients_) {
    if (c.role != Role::Honest) continue;
    Rng rng = make_stream(cfg_.seed, Stream::Minibatch, c.id, uk);
    uploads[c.id] = local_train(c.weights, c.shard, cfg_.model, p.eta, tau_, cfg_.batch, rng);
  }
  double theta_sum = 0.0;
  for (const auto& c : clients_) {
    if (c.role != Role::Lazy) continue;
    const WeightVector* target = &global_;
    if (!honest_ids_.empty()) {
      Rng pick = make_stream(cfg_.seed, Stream::Victim, c.id, uk);
      std::uniform_int_distribution<std::size_t> which(0, honest_ids_.size() - 1);
      target = &uploads[honest_ids_[which(pick)]];
    } else {
      rec.no_honest_victim = true;
    }
    if (cfg_.measure_theta) {
      Rng shadow = make_stream(cfg_.seed, Stream::Minibatch, c.id, uk);
      const WeightVector honest =
          local_train(c.weights, c.shard, cfg_.model, p.eta, tau_, cfg_.batch, shadow);
      theta_sum += (target->values - honest.values).norm();
    }
    Rng noise = make_stream(cfg_.seed, Stream::Lazy, c.id, uk);
    uploads[c.id] = lazy_update(*target, p.noise_var, noise);
  }
  if (!lazy_ids_.empty()) rec.theta_hat = theta_sum / static_cast<double>(lazy_ids_.size());
  if (cfg_.dp_noise_var > 0.0) {
    for (const auto& c : clients_) {
      Rng dp = make_stream(cfg_.seed, Stream::DpNoise, c.id, uk);
      uploads[c.id] = apply_dp_noise(uploads[c.id], cfg_.dp_noise_var, dp);
    }
  }
  clock_.advance(tau_ * p.alpha);

  // Step 2: signed broadcast; every transaction is checked against the registry.
  std::vector<Transaction> txs;
  txs.reserve(clients_.size());
  for (const auto& c : clients_) {
    txs.push_back(sign_tx(registry_, c.id, static_cast<std::uint32_t>(k), encode_weights(uploads[c.id])));
  }
  if (cfg_.upload_hook) cfg_.upload_hook(txs, k);
  for (const auto& tx : txs) {
    if (!verify_tx(tx, registry_)) {
      throw Error(ErrorCode::VerificationFailure, "client " + std::to_string(tx.client_id) +
                                                      " in round " + std::to_string(k));
    }
  }

  // Step 3: the round's winner mines a block holding all N uploads.
  const std::uint32_t miner = clock_.pick_miner(uk, static_cast<std::uint32_t>(clients_.size()));
  const double before_mining = clock_.now();
  Block block = mine_block(ledger_.tip(), std::move(txs), cfg_.difficulty_bits, miner, clock_,
                           clients_.size());
  rec.mining_time = clock_.now() - before_mining;
  rec.miner = miner;

  // Step 4: every client validates before appending.
  for (const auto& c : clients_) {
    const auto report = validate_block(ledger_.tip(), block, registry_, cfg_.difficulty_bits);
    if (!report.ok) {
      throw Error(ErrorCode::ValidationFailure, "client " + std::to_string(c.id) + " rejected height " +
                                                    std::to_string(report.height) + ": " +
                                                    to_string(report.reason));
    }
  }
  ledger_.append(std::move(block));

  // Step 5: every client aggregates the models recorded in the block.
  const Block& tip = ledger_.tip();
  for (auto& c : clients_) {
    std::vector<WeightVector> models;
    models.reserve(tip.txs.size());
    for (const auto& tx : tip.txs) models.push_back(decode_weights(tx.payload));
    c.weights = aggregate(models);
  }
  global_ = clients_.front().weights;
  rounds_done_ = k;

  rec.clock_after = clock_.now();
  rec.ledger_height = ledger_.height();
  double total = 0.0;
  double n = 0.0;
  for (const auto& c : clients_) {
    const double li = loss_value(global_, c.shard, cfg_.model);
    rec.client_losses.push_back(li);
    total += static_cast<double>(c.shard.size()) * li;
    n += static_cast<double>(c.shard.size());
  }
  rec.loss = total / n;
  if (eval_ != nullptr) {
    rec.eval_loss = loss_value(global_, eval_view_, cfg_.model);
    rec.accuracy = accuracy(global_, eval_view_, cfg_.model);
  } else {
    DatasetView pooled{&train_, {}};
    for (const auto& c : clients_) pooled.indices.insert(pooled.indices.end(), c.shard.indices.begin(), c.shard.indices.end());
    rec.eval_loss = loss_value(global_, pooled, cfg_.model);
    rec.accuracy = accuracy(global_, pooled, cfg_.model);
  }
  return rec;
}

SimulationResult run_simulation(const SimulationConfig& cfg, const Dataset& train,
                                const Partition& partition, const Dataset* eval,
                                const std::function<void(const RoundRecord&, const Simulation&)>& on_round) {
  const KRange range = feasible_k_range(cfg.params.t_sum, cfg.params.alpha, cfg.params.beta);
  if (cfg.params.rounds > range.k_max) {
    throw Error(ErrorCode::InsufficientBudget, "K=" + std::to_string(cfg.params.rounds) +
                                                   " exceeds the feasible maximum " +
                                                   std::to_string(range.k_max));
  }
  Simulation sim(cfg, train, partition, eval);
  SimulationResult result;
  for (int k = 1; k <= cfg.params.rounds; ++k) {
    result.rounds.push_back(sim.run_integrated_round());
    if (on_round) on_round(result.rounds.back(), sim);
  }
  result.initial = sim.initial();
  result.final_global = sim.global();
  result.ledger = sim.ledger();
  result.registry = sim.registry();
  result.lazy_ids = sim.lazy_ids();
  result.final_clock = sim.clock().now();
  result.leftover = cfg.params.t_sum - result.final_clock;
  result.all_lazy = sim.flagged_all_lazy();
  return result;
}

}  // namespace bladefl
