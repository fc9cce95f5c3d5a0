#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bladefl/bytes.hpp"
#include "bladefl/data.hpp"
#include "bladefl/params.hpp"
#include "bladefl/rng.hpp"

namespace bladefl {

enum class ModelKind { SoftmaxRegression, Mlp };

struct ModelSpec {
  ModelKind kind = ModelKind::SoftmaxRegression;
  int hidden_units = 256;
  double l2_reg = 1e-3;
};

// Shape of a flat parameter vector. hidden_dim == 0 means softmax regression.
//   softmax: W (classes x input) row-major, then b (classes)
//   mlp:     W1 (hidden x input), b1 (hidden), W2 (classes x hidden), b2 (classes)
struct Topology {
  int input_dim = 0;
  int hidden_dim = 0;
  int classes = 0;

  Eigen::Index size() const;
  bool operator==(const Topology&) const = default;
};

Topology make_topology(const ModelSpec& spec, int input_dim, int classes);

struct WeightVector {
  Topology topology;
  Eigen::VectorXd values;

  static WeightVector zeros(const Topology& t) {
    return WeightVector{t, Eigen::VectorXd::Zero(t.size())};
  }
};

// Zeros for softmax regression; scaled Gaussian (He) init for the MLP.
WeightVector initial_weights(const Topology& t, std::uint64_t seed);

struct LossGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

// Mean cross-entropy over the shard plus (l2_reg / 2) ||w||^2, with its exact
// gradient. Throws EmptyShard.
LossGrad loss_and_grad(const WeightVector& w, const DatasetView& shard, const ModelSpec& spec);
double loss_value(const WeightVector& w, const DatasetView& shard, const ModelSpec& spec);
double accuracy(const WeightVector& w, const DatasetView& shard, const ModelSpec& spec);

// Differentiable objective over a flat vector. Shards and closed-form
// surrogates both plug in here.
using Objective = std::function<LossGrad(const Eigen::VectorXd&)>;

// Gathers the shard once; the returned objective owns its copy.
Objective shard_objective(const DatasetView& shard, const ModelSpec& spec, const Topology& t);
// (curvature / 2) ||w - center||^2
Objective quadratic_objective(Eigen::VectorXd center, double curvature = 1.0);

// tau full-gradient steps w <- w - eta * grad(w).
Eigen::VectorXd gradient_descent(const Objective& f, Eigen::VectorXd w, double eta, int tau);

// tau sequential steps on the shard. batch == 0 or batch >= |shard| means
// full batch; otherwise each step draws `batch` samples without replacement.
WeightVector local_train(WeightVector w, const DatasetView& shard, const ModelSpec& spec,
                         double eta, int tau, int batch, Rng& rng);

// Coordinate-wise mean.
WeightVector aggregate(std::span<const WeightVector> models);

// delta_i = max over probes ||grad F_i(w) - grad F(w)||, grad F the
// size-weighted mean of the local gradients; returns the size-weighted mean
// of delta_i.
double estimate_delta(std::span<const Objective> clients, std::span<const double> sizes,
                      std::span<const Eigen::VectorXd> probes);
double estimate_delta(std::span<const DatasetView> shards, std::span<const WeightVector> probes,
                      const ModelSpec& spec);

struct SmoothnessEstimate {
  double L = 0.0;   // max ||grad F(w) - grad F(w')|| / ||w - w'||
  double xi = 0.0;  // max |F(w) - F(w')| / ||w - w'||
};

// Maximum over all probe pairs. Throws DegenerateProbe on coincident probes.
SmoothnessEstimate estimate_smoothness(const Objective& f, std::span<const Eigen::VectorXd> probes);

// Reference optimum: full-batch descent from w0 on the pooled data.
WeightVector centralized_optimum(const DatasetView& pooled, const ModelSpec& spec,
                                 const WeightVector& w0, double eta, int iters);

struct ConstantEstimate {
  double L = 0.0;
  double xi = 0.0;
  double phi = 0.0;
  double init_distance = 0.0;  // ||w0 - w*||
  WeightVector w_star;
};

inline constexpr int kOptimumIters = 2000;

// Probes are drawn around the segment from w0 to the reference optimum
// (which is run at eta / 2 for kOptimumIters iterations). The probe sequence
// is a prefix-stable function of rng, so more probes never lower an estimate.
ConstantEstimate estimate_constants(const DatasetView& pooled, const ModelSpec& spec,
                                    const WeightVector& w0, double eta, int probes, Rng& rng);

// Weight wire format (checkpoints and transaction payloads):
//   "BFLW" | u32 input_dim | u32 hidden_dim | u32 classes | u64 count | f64[count]
// all little-endian.
Bytes encode_weights(const WeightVector& w);
WeightVector decode_weights(std::span<const std::uint8_t> bytes);
void save_checkpoint(const WeightVector& w, const std::filesystem::path& path);
WeightVector load_checkpoint(const std::filesystem::path& path);

}  // namespace bladefl
