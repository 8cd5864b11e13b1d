#pragma once

#include "mldr/tensor.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace mldr {

struct SynthSpec {
  std::size_t n_classes = 10;
  std::size_t samples_per_class = 200;
  /// Per-sample shape: [D] or [C, H, W].
  Shape input_shape{1, 16, 16};
  /// Symmetric, unit diagonal, entries in [0, 1]. Center distance = base_dist * (1 - similarity).
  Eigen::MatrixXd class_similarity;
  double base_dist = 6.0;
  double noise_sigma = 1.0;
  /// Fraction of each class tagged for evaluation.
  double eval_fraction = 0.2;
  /// Drives class-center placement and, combined with noise_stream, the sample noise.
  std::uint64_t seed = 1;
  /// Different streams give fresh samples around the same centers.
  std::uint64_t noise_stream = 0;

  void validate() const;
};

/// Pairs (0,1), (2,3), ... at `near`, every other pair at `far`.
Eigen::MatrixXd paired_similarity(std::size_t n_classes, double near, double far);
/// Every off-diagonal entry equal to `value`.
Eigen::MatrixXd uniform_similarity(std::size_t n_classes, double value);

enum class Split : std::uint8_t { Train = 0, Eval = 1 };

struct Dataset {
  Tensor inputs;  // [M, ...sample shape]
  std::vector<int> labels;
  std::vector<Split> splits;
  std::size_t n_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  Shape sample_shape() const { return Shape(inputs.shape().begin() + 1, inputs.shape().end()); }
  /// Samples tagged `split`, in original order, all tagged `split`.
  Dataset subset(Split split) const;
  /// Rows at `indices`, in that order.
  Tensor gather(std::span<const std::size_t> indices) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Class centers [N, prod(input_shape)] realizing the similarity-derived distances.
/// Uses classical multidimensional scaling; falls back to a random orthogonal
/// placement when the distance matrix is not Euclidean-embeddable.
Eigen::MatrixXd class_centers(const SynthSpec& spec);

/// Center + Gaussian noise per sample, classes interleaved in label order.
/// Deterministic for a fixed spec.
Dataset generate(const SynthSpec& spec);

// Dataset files:
//   "MLDS" | u32 version | u32 N | u64 M | u32 rank | rank x u64 dim |
//   M x u32 label | M * prod(dims) x f64 input | M x u8 split tag
inline constexpr std::uint32_t kDatasetVersion = 1;

std::vector<std::uint8_t> encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

struct Batch {
  Tensor inputs;
  std::vector<int> labels;
  std::vector<std::size_t> indices;  // positions in the source dataset
};

/// Epoch-wise batch iterator. Each epoch uses a permutation derived from
/// (seed, epoch); the final short batch is emitted as-is.
class BatchStream {
 public:
  BatchStream(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, bool shuffle);

  void start_epoch(std::size_t epoch);
  bool next(Batch& out);
  std::size_t batches_per_epoch() const;

 private:
  const Dataset* ds_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace mldr
