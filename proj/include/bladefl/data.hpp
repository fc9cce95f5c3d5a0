#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace bladefl {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Dataset {
  RowMatrix features;       // n_samples x n_features
  std::vector<int> labels;  // class index in [0, n_classes)
  int n_classes = 0;
  // Image geometry when loaded from IDX; zero for synthetic data.
  int image_rows = 0;
  int image_cols = 0;

  Eigen::Index n_samples() const { return features.rows(); }
  Eigen::Index n_features() const { return features.cols(); }

  void validate() const;
  // Samples at the given indices, in order.
  Dataset subset(std::span<const int> indices) const;
};

// Non-owning view of a subset of a dataset.
struct DatasetView {
  const Dataset* data = nullptr;
  std::vector<int> indices;

  static DatasetView all(const Dataset& ds);

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
};

struct Partition {
  std::vector<std::vector<int>> assignments;  // per-client indices into the parent

  std::size_t n_clients() const { return assignments.size(); }
  DatasetView view(const Dataset& ds, std::size_t client) const {
    return DatasetView{&ds, assignments.at(client)};
  }
};

// Gaussian class-conditional clusters with unit within-class variance. Class
// means are drawn from N(0, separation^2 I) using the seed.
Dataset synth_generate(int n_classes, int n_features, int n_samples, std::uint64_t seed,
                       double separation = 0.5);

// Label-sorted sharding: the samples are stably sorted by label, cut into
// N * shards_per_client equal contiguous shards, and the shards are dealt
// out in a seeded random order.
Partition partition_noniid(const Dataset& ds, int n_clients, int shards_per_client,
                           std::uint64_t seed);

// Uniform random split into equal-size client shards.
Partition partition_iid(const Dataset& ds, int n_clients, std::uint64_t seed);

struct HoldoutSplit {
  Dataset train;
  Dataset eval;
};

// Uniform sampling without replacement of n_train samples; the rest form the
// evaluation set.
HoldoutSplit split_holdout(const Dataset& ds, int n_train, std::uint64_t seed);

// IDX image/label pair. Pixels are scaled to [0, 1].
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
// Inverse of load_idx; pixels are rounded back to bytes.
void write_idx(const Dataset& ds, const std::filesystem::path& images,
               const std::filesystem::path& labels);

}  // namespace bladefl
