#include "bladefl/learner.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

#include "bladefl/error.hpp"

namespace bladefl {

Eigen::Index Topology::size() const {
  if (hidden_dim == 0) return Eigen::Index{classes} * (input_dim + 1);
  return Eigen::Index{hidden_dim} * (input_dim + 1) + Eigen::Index{classes} * (hidden_dim + 1);
}

Topology make_topology(const ModelSpec& spec, int input_dim, int classes) {
  if (input_dim < 1 || classes < 2) {
    throw Error(ErrorCode::InvalidParameter, "topology needs input_dim >= 1 and classes >= 2");
  }
  if (spec.kind == ModelKind::Mlp && spec.hidden_units < 1) {
    throw Error(ErrorCode::InvalidParameter, "mlp needs hidden_units >= 1");
  }
  return Topology{input_dim, spec.kind == ModelKind::Mlp ? spec.hidden_units : 0, classes};
}

WeightVector initial_weights(const Topology& t, std::uint64_t seed) {
  WeightVector w = WeightVector::zeros(t);
  if (t.hidden_dim == 0) return w;
  Rng rng = make_stream(seed, Stream::Init);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double s1 = std::sqrt(2.0 / t.input_dim);
  const double s2 = std::sqrt(2.0 / t.hidden_dim);
  const Eigen::Index w1 = Eigen::Index{t.hidden_dim} * t.input_dim;
  const Eigen::Index b1 = t.hidden_dim;
  const Eigen::Index w2 = Eigen::Index{t.classes} * t.hidden_dim;
  for (Eigen::Index i = 0; i < w1; ++i) w.values[i] = s1 * normal(rng);
  for (Eigen::Index i = 0; i < w2; ++i) w.values[w1 + b1 + i] = s2 * normal(rng);
  return w;
}

namespace {

struct Gathered {
  RowMatrix x;
  std::vector<int> y;
};

Gathered gather(const DatasetView& shard) {
  if (shard.data == nullptr || shard.empty()) throw Error(ErrorCode::EmptyShard, "shard has no samples");
  Gathered g;
  g.x.resize(static_cast<Eigen::Index>(shard.size()), shard.data->n_features());
  g.y.resize(shard.size());
  for (std::size_t r = 0; r < shard.size(); ++r) {
    const int idx = shard.indices[r];
    g.x.row(static_cast<Eigen::Index>(r)) = shard.data->features.row(idx);
    g.y[r] = shard.data->labels[static_cast<std::size_t>(idx)];
  }
  return g;
}

using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

// Logits -> (mean cross-entropy, dLoss/dLogits), in place on z.
double softmax_xent(RowMatrix& z, const std::vector<int>& y) {
  const auto m = static_cast<double>(z.rows());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double zmax = z.row(i).maxCoeff();
    z.row(i).array() -= zmax;
    const double lse = std::log(z.row(i).array().exp().sum());
    loss -= z(i, y[static_cast<std::size_t>(i)]) - lse;
    z.row(i) = (z.row(i).array() - lse).exp();
    z(i, y[static_cast<std::size_t>(i)]) -= 1.0;
  }
  z /= m;
  return loss / m;
}

LossGrad evaluate(const Eigen::VectorXd& w, const Topology& t, const Gathered& g,
                  const ModelSpec& spec) {
  if (w.size() != t.size()) throw Error(ErrorCode::TopologyMismatch, "weight length does not match topology");
  if (g.x.cols() != t.input_dim) throw Error(ErrorCode::TopologyMismatch, "feature width does not match topology");
  for (int y : g.y) {
    if (y < 0 || y >= t.classes) throw Error(ErrorCode::TopologyMismatch, "label exceeds class count");
  }
  LossGrad out;
  out.grad = Eigen::VectorXd::Zero(w.size());
  const int d = t.input_dim;
  const int c = t.classes;

  if (t.hidden_dim == 0) {
    ConstMap weight(w.data(), c, d);
    const auto bias = w.segment(Eigen::Index{c} * d, c);
    RowMatrix z = g.x * weight.transpose();
    z.rowwise() += bias.transpose();
    out.loss = softmax_xent(z, g.y);
    MutMap gw(out.grad.data(), c, d);
    gw.noalias() = z.transpose() * g.x;
    out.grad.segment(Eigen::Index{c} * d, c) = z.colwise().sum().transpose();
  } else {
    const int h = t.hidden_dim;
    const Eigen::Index off_b1 = Eigen::Index{h} * d;
    const Eigen::Index off_w2 = off_b1 + h;
    const Eigen::Index off_b2 = off_w2 + Eigen::Index{c} * h;
    ConstMap w1(w.data(), h, d);
    ConstMap w2(w.data() + off_w2, c, h);
    RowMatrix hidden = g.x * w1.transpose();
    hidden.rowwise() += w.segment(off_b1, h).transpose();
    hidden = hidden.cwiseMax(0.0);
    RowMatrix z = hidden * w2.transpose();
    z.rowwise() += w.segment(off_b2, c).transpose();
    out.loss = softmax_xent(z, g.y);

    MutMap gw2(out.grad.data() + off_w2, c, h);
    gw2.noalias() = z.transpose() * hidden;
    out.grad.segment(off_b2, c) = z.colwise().sum().transpose();
    RowMatrix dh = z * w2;
    dh = (hidden.array() > 0.0).select(dh, 0.0);
    MutMap gw1(out.grad.data(), h, d);
    gw1.noalias() = dh.transpose() * g.x;
    out.grad.segment(off_b1, h) = dh.colwise().sum().transpose();
  }

  if (spec.l2_reg > 0.0) {
    out.loss += 0.5 * spec.l2_reg * w.squaredNorm();
    out.grad += spec.l2_reg * w;
  }
  return out;
}

std::vector<int> argmax_rows(const Eigen::VectorXd& w, const Topology& t, const RowMatrix& x) {
  RowMatrix z;
  if (t.hidden_dim == 0) {
    ConstMap weight(w.data(), t.classes, t.input_dim);
    z = x * weight.transpose();
    z.rowwise() += w.segment(Eigen::Index{t.classes} * t.input_dim, t.classes).transpose();
  } else {
    const Eigen::Index off_b1 = Eigen::Index{t.hidden_dim} * t.input_dim;
    const Eigen::Index off_w2 = off_b1 + t.hidden_dim;
    const Eigen::Index off_b2 = off_w2 + Eigen::Index{t.classes} * t.hidden_dim;
    ConstMap w1(w.data(), t.hidden_dim, t.input_dim);
    ConstMap w2(w.data() + off_w2, t.classes, t.hidden_dim);
    RowMatrix hidden = x * w1.transpose();
    hidden.rowwise() += w.segment(off_b1, t.hidden_dim).transpose();
    hidden = hidden.cwiseMax(0.0);
    z = hidden * w2.transpose();
    z.rowwise() += w.segment(off_b2, t.classes).transpose();
  }
  std::vector<int> pred(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index arg = 0;
    z.row(i).maxCoeff(&arg);
    pred[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return pred;
}

}  // namespace

LossGrad loss_and_grad(const WeightVector& w, const DatasetView& shard, const ModelSpec& spec) {
  return evaluate(w.values, w.topology, gather(shard), spec);
}

double loss_value(const WeightVector& w, const DatasetView& shard, const ModelSpec& spec) {
  return loss_and_grad(w, shard, spec).loss;
}

double accuracy(const WeightVector& w, const DatasetView& shard, const ModelSpec&) {
  const Gathered g = gather(shard);
  const auto pred = argmax_rows(w.values, w.topology, g.x);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == g.y[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

Objective shard_objective(const DatasetView& shard, const ModelSpec& spec, const Topology& t) {
  auto g = std::make_shared<const Gathered>(gather(shard));
  return [g, spec, t](const Eigen::VectorXd& w) { return evaluate(w, t, *g, spec); };
}

Objective quadratic_objective(Eigen::VectorXd center, double curvature) {
  return [center = std::move(center), curvature](const Eigen::VectorXd& w) {
    const Eigen::VectorXd diff = w - center;
    return LossGrad{0.5 * curvature * diff.squaredNorm(), curvature * diff};
  };
}

Eigen::VectorXd gradient_descent(const Objective& f, Eigen::VectorXd w, double eta, int tau) {
  if (tau < 1) throw Error(ErrorCode::InvalidParameter, "tau must be >= 1");
  if (!(eta > 0.0)) throw Error(ErrorCode::NonPositiveParameter, "eta must be > 0");
  for (int s = 0; s < tau; ++s) w -= eta * f(w).grad;
  return w;
}

WeightVector local_train(WeightVector w, const DatasetView& shard, const ModelSpec& spec,
                         double eta, int tau, int batch, Rng& rng) {
  if (tau < 1) throw Error(ErrorCode::InvalidParameter, "tau must be >= 1");
  if (!(eta > 0.0)) throw Error(ErrorCode::NonPositiveParameter, "eta must be > 0");
  const Gathered full = gather(shard);
  const auto n = full.y.size();
  if (batch <= 0 || static_cast<std::size_t>(batch) >= n) {
    for (int s = 0; s < tau; ++s) w.values -= eta * evaluate(w.values, w.topology, full, spec).grad;
    return w;
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Gathered mb;
  mb.x.resize(batch, full.x.cols());
  mb.y.resize(static_cast<std::size_t>(batch));
  for (int s = 0; s < tau; ++s) {
    // Partial Fisher-Yates: the first `batch` entries become the minibatch.
    for (int i = 0; i < batch; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), n - 1);
      std::swap(order[static_cast<std::size_t>(i)], order[pick(rng)]);
      const int src = order[static_cast<std::size_t>(i)];
      mb.x.row(i) = full.x.row(src);
      mb.y[static_cast<std::size_t>(i)] = full.y[static_cast<std::size_t>(src)];
    }
    w.values -= eta * evaluate(w.values, w.topology, mb, spec).grad;
  }
  return w;
}

WeightVector aggregate(std::span<const WeightVector> models) {
  if (models.empty()) throw Error(ErrorCode::EmptyList, "nothing to aggregate");
  WeightVector out = WeightVector::zeros(models.front().topology);
  for (const auto& m : models) {
    if (!(m.topology == out.topology) || m.values.size() != out.values.size()) {
      throw Error(ErrorCode::TopologyMismatch, "models disagree on topology");
    }
    out.values += m.values;
  }
  out.values /= static_cast<double>(models.size());
  return out;
}

double estimate_delta(std::span<const Objective> clients, std::span<const double> sizes,
                      std::span<const Eigen::VectorXd> probes) {
  if (clients.empty()) throw Error(ErrorCode::EmptyShard, "no clients");
  if (sizes.size() != clients.size()) throw Error(ErrorCode::CountMismatch, "one size per client required");
  if (probes.empty()) throw Error(ErrorCode::InvalidParameter, "at least one probe weight required");
  const double total = std::accumulate(sizes.begin(), sizes.end(), 0.0);
  if (!(total > 0.0)) throw Error(ErrorCode::EmptyShard, "all shards are empty");

  std::vector<double> delta_i(clients.size(), 0.0);
  for (const auto& w : probes) {
    std::vector<Eigen::VectorXd> grads;
    grads.reserve(clients.size());
    Eigen::VectorXd global = Eigen::VectorXd::Zero(w.size());
    for (std::size_t i = 0; i < clients.size(); ++i) {
      grads.push_back(clients[i](w).grad);
      global += (sizes[i] / total) * grads.back();
    }
    for (std::size_t i = 0; i < clients.size(); ++i) {
      delta_i[i] = std::max(delta_i[i], (grads[i] - global).norm());
    }
  }
  double delta = 0.0;
  for (std::size_t i = 0; i < clients.size(); ++i) delta += sizes[i] * delta_i[i];
  return delta / total;
}

double estimate_delta(std::span<const DatasetView> shards, std::span<const WeightVector> probes,
                      const ModelSpec& spec) {
  if (shards.empty()) throw Error(ErrorCode::EmptyShard, "no clients");
  if (probes.empty()) throw Error(ErrorCode::InvalidParameter, "at least one probe weight required");
  std::vector<Objective> objectives;
  std::vector<double> sizes;
  for (const auto& s : shards) {
    objectives.push_back(shard_objective(s, spec, probes.front().topology));
    sizes.push_back(static_cast<double>(s.size()));
  }
  std::vector<Eigen::VectorXd> points;
  for (const auto& p : probes) points.push_back(p.values);
  return estimate_delta(objectives, sizes, points);
}

SmoothnessEstimate estimate_smoothness(const Objective& f, std::span<const Eigen::VectorXd> probes) {
  if (probes.size() < 2) throw Error(ErrorCode::InvalidParameter, "need at least two probes");
  std::vector<LossGrad> evals;
  evals.reserve(probes.size());
  for (const auto& p : probes) evals.push_back(f(p));
  SmoothnessEstimate est;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    for (std::size_t j = i + 1; j < probes.size(); ++j) {
      const double dist = (probes[i] - probes[j]).norm();
      if (!(dist > 0.0)) {
        throw Error(ErrorCode::DegenerateProbe,
                    "probes " + std::to_string(i) + " and " + std::to_string(j) + " coincide");
      }
      est.L = std::max(est.L, (evals[i].grad - evals[j].grad).norm() / dist);
      est.xi = std::max(est.xi, std::abs(evals[i].loss - evals[j].loss) / dist);
    }
  }
  return est;
}

WeightVector centralized_optimum(const DatasetView& pooled, const ModelSpec& spec,
                                 const WeightVector& w0, double eta, int iters) {
  const Objective f = shard_objective(pooled, spec, w0.topology);
  return WeightVector{w0.topology, gradient_descent(f, w0.values, eta, iters)};
}

ConstantEstimate estimate_constants(const DatasetView& pooled, const ModelSpec& spec,
                                    const WeightVector& w0, double eta, int probes, Rng& rng) {
  if (probes < 2) throw Error(ErrorCode::InvalidParameter, "need at least two probes");
  ConstantEstimate est;
  est.w_star = centralized_optimum(pooled, spec, w0, eta / 2.0, kOptimumIters);
  const Eigen::VectorXd span_dir = est.w_star.values - w0.values;
  est.init_distance = span_dir.norm();

  const auto dim = static_cast<double>(w0.values.size());
  const double jitter = (est.init_distance > 0.0 ? 0.1 * est.init_distance : 1.0) / std::sqrt(dim);
  std::uniform_real_distribution<double> along(0.0, 1.25);
  std::normal_distribution<double> normal(0.0, jitter);
  std::vector<Eigen::VectorXd> points;
  points.reserve(static_cast<std::size_t>(probes));
  for (int k = 0; k < probes; ++k) {
    Eigen::VectorXd p = w0.values + along(rng) * span_dir;
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += normal(rng);
    points.push_back(std::move(p));
  }

  const auto smooth = estimate_smoothness(shard_objective(pooled, spec, w0.topology), points);
  est.L = smooth.L;
  est.xi = smooth.xi;
  est.phi = est.init_distance > 0.0 ? (1.0 - eta * est.L / 2.0) / est.init_distance : 0.0;
  return est;
}

}  // namespace bladefl
