#include "bladefl/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>

#include "bladefl/error.hpp"
#include "bladefl/rng.hpp"

namespace bladefl {

void Dataset::validate() const {
  if (features.rows() < 1) throw Error(ErrorCode::InvalidParameter, "dataset is empty");
  if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
    throw Error(ErrorCode::CountMismatch, "feature rows and labels differ in count");
  }
  for (int y : labels) {
    if (y < 0 || y >= n_classes) throw Error(ErrorCode::InvalidParameter, "label out of range");
  }
  if (!features.allFinite()) throw Error(ErrorCode::InvalidParameter, "non-finite feature");
}

Dataset Dataset::subset(std::span<const int> indices) const {
  Dataset out;
  out.n_classes = n_classes;
  out.image_rows = image_rows;
  out.image_cols = image_cols;
  out.features.resize(static_cast<Eigen::Index>(indices.size()), features.cols());
  out.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    out.features.row(static_cast<Eigen::Index>(r)) = features.row(indices[r]);
    out.labels.push_back(labels[static_cast<std::size_t>(indices[r])]);
  }
  return out;
}

DatasetView DatasetView::all(const Dataset& ds) {
  DatasetView v{&ds, std::vector<int>(static_cast<std::size_t>(ds.n_samples()))};
  std::iota(v.indices.begin(), v.indices.end(), 0);
  return v;
}

Dataset synth_generate(int n_classes, int n_features, int n_samples, std::uint64_t seed,
                       double separation) {
  if (n_classes < 2) throw Error(ErrorCode::InvalidParameter, "n_classes must be >= 2");
  if (n_features < 1) throw Error(ErrorCode::InvalidParameter, "n_features must be >= 1");
  if (n_samples < 1) throw Error(ErrorCode::InvalidParameter, "n_samples must be >= 1");

  Rng rng = make_stream(seed, Stream::Data);
  std::normal_distribution<double> normal(0.0, 1.0);

  RowMatrix means(n_classes, n_features);
  for (Eigen::Index c = 0; c < means.rows(); ++c)
    for (Eigen::Index j = 0; j < means.cols(); ++j) means(c, j) = separation * normal(rng);

  Dataset ds;
  ds.n_classes = n_classes;
  ds.features.resize(n_samples, n_features);
  ds.labels.resize(static_cast<std::size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) {
    const int y = i % n_classes;
    ds.labels[static_cast<std::size_t>(i)] = y;
    for (int j = 0; j < n_features; ++j) ds.features(i, j) = means(y, j) + normal(rng);
  }
  return ds;
}

Partition partition_noniid(const Dataset& ds, int n_clients, int shards_per_client,
                           std::uint64_t seed) {
  if (n_clients < 1 || shards_per_client < 1) {
    throw Error(ErrorCode::InvalidParameter, "n_clients and shards_per_client must be >= 1");
  }
  const auto n = static_cast<std::size_t>(ds.n_samples());
  const auto n_shards = static_cast<std::size_t>(n_clients) * shards_per_client;
  if (n % n_shards != 0) {
    throw Error(ErrorCode::IndivisibleShards, std::to_string(n) + " samples cannot be cut into " +
                                                  std::to_string(n_shards) + " equal shards");
  }
  const std::size_t shard_size = n / n_shards;

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return ds.labels[static_cast<std::size_t>(a)] < ds.labels[static_cast<std::size_t>(b)];
  });

  std::vector<std::size_t> shard_ids(n_shards);
  std::iota(shard_ids.begin(), shard_ids.end(), 0);
  Rng rng = make_stream(seed, Stream::Partition);
  std::shuffle(shard_ids.begin(), shard_ids.end(), rng);

  Partition p;
  p.assignments.resize(static_cast<std::size_t>(n_clients));
  for (std::size_t s = 0; s < n_shards; ++s) {
    auto& dst = p.assignments[s / static_cast<std::size_t>(shards_per_client)];
    const auto begin = order.begin() + static_cast<std::ptrdiff_t>(shard_ids[s] * shard_size);
    dst.insert(dst.end(), begin, begin + static_cast<std::ptrdiff_t>(shard_size));
  }
  return p;
}

Partition partition_iid(const Dataset& ds, int n_clients, std::uint64_t seed) {
  if (n_clients < 1) throw Error(ErrorCode::InvalidParameter, "n_clients must be >= 1");
  const auto n = static_cast<std::size_t>(ds.n_samples());
  if (n % static_cast<std::size_t>(n_clients) != 0) {
    throw Error(ErrorCode::IndivisibleShards, "samples do not split evenly across clients");
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_stream(seed, Stream::Partition);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t per = n / static_cast<std::size_t>(n_clients);
  Partition p;
  p.assignments.resize(static_cast<std::size_t>(n_clients));
  for (std::size_t c = 0; c < p.assignments.size(); ++c) {
    const auto begin = order.begin() + static_cast<std::ptrdiff_t>(c * per);
    p.assignments[c].assign(begin, begin + static_cast<std::ptrdiff_t>(per));
  }
  return p;
}

HoldoutSplit split_holdout(const Dataset& ds, int n_train, std::uint64_t seed) {
  if (n_train < 1 || n_train > ds.n_samples()) {
    throw Error(ErrorCode::InvalidParameter, "n_train must lie in [1, n_samples]");
  }
  std::vector<int> order(static_cast<std::size_t>(ds.n_samples()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_stream(seed, Stream::Data, 1);
  std::shuffle(order.begin(), order.end(), rng);
  const auto cut = order.begin() + n_train;
  std::vector<int> train_idx(order.begin(), cut);
  std::vector<int> eval_idx(cut, order.end());
  // Keep the parent order inside each side so shards stay reproducible.
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(eval_idx.begin(), eval_idx.end());
  return HoldoutSplit{ds.subset(train_idx), ds.subset(eval_idx)};
}

// ---- IDX ------------------------------------------------------------------

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset,
                        const std::filesystem::path& path) {
  if (buf.size() < offset + 4) {
    throw Error(ErrorCode::TruncatedFile, path.string() + ": header is truncated");
  }
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                              static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), 4);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);

  if (read_be32(img, 0, images) != kImageMagic) {
    throw Error(ErrorCode::BadMagic, images.string() + ": expected 0x00000803");
  }
  if (read_be32(lab, 0, labels) != kLabelMagic) {
    throw Error(ErrorCode::BadMagic, labels.string() + ": expected 0x00000801");
  }
  const std::uint32_t n_images = read_be32(img, 4, images);
  const std::uint32_t rows = read_be32(img, 8, images);
  const std::uint32_t cols = read_be32(img, 12, images);
  const std::uint32_t n_labels = read_be32(lab, 4, labels);
  if (n_images != n_labels) {
    throw Error(ErrorCode::CountMismatch, std::to_string(n_images) + " images vs " +
                                              std::to_string(n_labels) + " labels");
  }
  const std::size_t pixels = std::size_t{rows} * cols;
  if (img.size() < 16 + n_images * pixels) {
    throw Error(ErrorCode::TruncatedFile, images.string() + ": payload shorter than header count");
  }
  if (lab.size() < 8 + std::size_t{n_labels}) {
    throw Error(ErrorCode::TruncatedFile, labels.string() + ": payload shorter than header count");
  }
  if (n_images == 0) throw Error(ErrorCode::InvalidParameter, "IDX file holds no samples");

  Dataset ds;
  ds.image_rows = static_cast<int>(rows);
  ds.image_cols = static_cast<int>(cols);
  ds.features.resize(n_images, static_cast<Eigen::Index>(pixels));
  ds.labels.resize(n_images);
  int max_label = 0;
  for (std::size_t i = 0; i < n_images; ++i) {
    for (std::size_t j = 0; j < pixels; ++j) {
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          img[16 + i * pixels + j] / 255.0;
    }
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.n_classes = std::max(2, max_label + 1);
  return ds;
}

void write_idx(const Dataset& ds, const std::filesystem::path& images,
               const std::filesystem::path& labels) {
  const auto n = static_cast<std::uint32_t>(ds.n_samples());
  std::uint32_t rows = static_cast<std::uint32_t>(ds.image_rows);
  std::uint32_t cols = static_cast<std::uint32_t>(ds.image_cols);
  if (rows * cols != static_cast<std::uint32_t>(ds.n_features())) {
    rows = 1;
    cols = static_cast<std::uint32_t>(ds.n_features());
  }

  std::ofstream img(images, std::ios::binary);
  std::ofstream lab(labels, std::ios::binary);
  if (!img || !lab) throw Error(ErrorCode::Io, "cannot open IDX output files");
  put_be32(img, kImageMagic);
  put_be32(img, n);
  put_be32(img, rows);
  put_be32(img, cols);
  for (Eigen::Index i = 0; i < ds.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < ds.features.cols(); ++j) {
      const double v = std::clamp(ds.features(i, j), 0.0, 1.0);
      img.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  put_be32(lab, kLabelMagic);
  put_be32(lab, n);
  for (int y : ds.labels) lab.put(static_cast<char>(static_cast<unsigned char>(y)));
}

}  // namespace bladefl
