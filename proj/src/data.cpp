#include "mldr/data.hpp"

#include "mldr/binary_io.hpp"
#include "mldr/errors.hpp"
#include "mldr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace mldr {

void SynthSpec::validate() const {
  if (n_classes < 2) throw ConfigError("data: need at least 2 classes");
  if (samples_per_class == 0) throw ConfigError("data: samples_per_class must be positive");
  if (input_shape.empty() || numel(input_shape) == 0) throw ConfigError("data: empty input shape");
  if (!(noise_sigma > 0.0)) throw ConfigError("data: noise_sigma must be > 0");
  if (!(base_dist > 0.0)) throw ConfigError("data: base_dist must be > 0");
  if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) throw ConfigError("data: eval_fraction must be in [0, 1)");
  const auto n = static_cast<Eigen::Index>(n_classes);
  if (class_similarity.rows() != n || class_similarity.cols() != n) {
    throw ConfigError("data: class_similarity must be " + std::to_string(n_classes) + "x" + std::to_string(n_classes));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (class_similarity(i, i) != 1.0) throw ConfigError("data: class_similarity diagonal must be 1");
    for (Eigen::Index j = 0; j < n; ++j) {
      const double s = class_similarity(i, j);
      if (s != class_similarity(j, i)) throw ConfigError("data: class_similarity must be symmetric");
      if (!(s >= 0.0 && s <= 1.0)) throw ConfigError("data: class_similarity entries must lie in [0, 1]");
    }
  }
  if (numel(input_shape) + 1 < n_classes) {
    throw ConfigError("data: input dimension too small to place " + std::to_string(n_classes) + " classes");
  }
}

Eigen::MatrixXd paired_similarity(std::size_t n_classes, double near, double far) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n_classes), static_cast<Eigen::Index>(n_classes), far);
  for (std::size_t i = 0; i < n_classes; ++i) {
    const auto a = static_cast<Eigen::Index>(i);
    s(a, a) = 1.0;
    const std::size_t partner = i ^ 1U;
    if (partner < n_classes) s(a, static_cast<Eigen::Index>(partner)) = near;
  }
  return s;
}

Eigen::MatrixXd uniform_similarity(std::size_t n_classes, double value) {
  const auto n = static_cast<Eigen::Index>(n_classes);
  Eigen::MatrixXd s = Eigen::MatrixXd::Constant(n, n, value);
  s.diagonal().setOnes();
  return s;
}

namespace {

/// Orthonormal columns [dim, cols] from a seeded Gaussian matrix.
Eigen::MatrixXd random_orthonormal(Eigen::Index dim, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(dim, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < dim; ++i) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, cols);
  return q;
}

}  // namespace

Eigen::MatrixXd class_centers(const SynthSpec& spec) {
  spec.validate();
  const auto n = static_cast<Eigen::Index>(spec.n_classes);
  const auto dim = static_cast<Eigen::Index>(numel(spec.input_shape));
  auto rng = make_rng(spec.seed, Stream::ClassCenters);

  Eigen::MatrixXd d2 = (spec.base_dist * (Eigen::MatrixXd::Ones(n, n) - spec.class_similarity)).array().square();
  Eigen::MatrixXd centering = Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
  Eigen::MatrixXd gram = -0.5 * centering * d2 * centering;
  gram = 0.5 * (gram + gram.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const Eigen::VectorXd& values = eig.eigenvalues();
  const double top = values.maxCoeff();
  const bool embeddable = top > 0.0 && values.minCoeff() >= -1e-9 * top;

  if (!embeddable) {
    // Every pair at distance base_dist.
    Eigen::MatrixXd basis = random_orthonormal(dim, n, rng);
    return (spec.base_dist / std::sqrt(2.0)) * basis.transpose();
  }
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < n; ++i)
    if (values(i) > 1e-12 * top) keep.push_back(i);
  const auto rank = static_cast<Eigen::Index>(keep.size());
  Eigen::MatrixXd coords(n, rank);
  for (Eigen::Index k = 0; k < rank; ++k) coords.col(k) = eig.eigenvectors().col(keep[k]) * std::sqrt(values(keep[k]));
  Eigen::MatrixXd basis = random_orthonormal(dim, rank, rng);
  return coords * basis.transpose();
}

Dataset generate(const SynthSpec& spec) {
  const Eigen::MatrixXd centers = class_centers(spec);
  const std::size_t dim = numel(spec.input_shape);
  const std::size_t m = spec.n_classes * spec.samples_per_class;
  auto noise_rng = make_rng(spec.seed, Stream::SampleNoise, spec.noise_stream);
  auto split_rng = make_rng(spec.seed, Stream::SplitAssign, spec.noise_stream);
  std::normal_distribution<double> normal(0.0, spec.noise_sigma);

  Dataset ds;
  ds.n_classes = spec.n_classes;
  Shape shape{m};
  shape.insert(shape.end(), spec.input_shape.begin(), spec.input_shape.end());
  ds.inputs = Tensor(shape);
  ds.labels.resize(m);
  ds.splits.assign(m, Split::Train);

  // sample i belongs to class i % N, so any prefix is roughly balanced
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t c = i % spec.n_classes;
    ds.labels[i] = static_cast<int>(c);
    double* row = ds.inputs.data().data() + i * dim;
    for (std::size_t k = 0; k < dim; ++k) row[k] = centers(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(k)) + normal(noise_rng);
  }
  const auto n_eval = static_cast<std::size_t>(std::floor(spec.eval_fraction * static_cast<double>(spec.samples_per_class)));
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    std::vector<std::size_t> members(spec.samples_per_class);
    for (std::size_t j = 0; j < members.size(); ++j) members[j] = j * spec.n_classes + c;
    std::shuffle(members.begin(), members.end(), split_rng);
    for (std::size_t j = 0; j < n_eval; ++j) ds.splits[members[j]] = Split::Eval;
  }
  return ds;
}

Dataset Dataset::subset(Split split) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < size(); ++i)
    if (splits[i] == split) idx.push_back(i);
  Dataset out;
  out.n_classes = n_classes;
  out.inputs = gather(idx);
  for (std::size_t i : idx) out.labels.push_back(labels[i]);
  out.splits.assign(idx.size(), split);
  return out;
}

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
  Shape shape = inputs.shape();
  shape[0] = indices.size();
  const std::size_t dim = numel(sample_shape());
  Tensor out(shape);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(inputs.data().begin() + static_cast<std::ptrdiff_t>(indices[r] * dim), dim,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * dim));
  }
  return out;
}

// ---------------------------------------------------------------- files

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  ByteWriter w;
  w.bytes("MLDS");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.n_classes));
  w.u64(ds.size());
  const Shape sample = ds.sample_shape();
  w.u32(static_cast<std::uint32_t>(sample.size()));
  for (std::size_t d : sample) w.u64(d);
  for (int label : ds.labels) w.u32(static_cast<std::uint32_t>(label));
  for (double v : ds.inputs.data()) w.f64(v);
  for (Split s : ds.splits) w.u8(static_cast<std::uint8_t>(s));
  return w.buffer();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.bytes(4, "magic") != "MLDS") throw FormatError("not a dataset file: bad magic", 0);
  const std::uint64_t version_at = r.offset();
  const std::uint32_t version = r.u32("format version");
  if (version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(version), version_at);
  Dataset ds;
  ds.n_classes = r.u32("class count N");
  const std::uint64_t m = r.u64("sample count M");
  const std::uint32_t rank = r.u32("input rank");
  if (rank == 0 || rank > 8) r.fail("implausible input rank " + std::to_string(rank));
  Shape sample;
  for (std::uint32_t i = 0; i < rank; ++i) sample.push_back(r.u64("input dimension"));
  const std::uint64_t dim = numel(sample);
  const std::uint64_t body = m * 4 + m * dim * 8 + m;
  if (r.remaining() < body) {
    const char* missing = r.remaining() < m * 4 ? "labels" : r.remaining() < m * 4 + m * dim * 8 ? "inputs" : "split tags";
    throw FormatError(std::string("truncated file: missing ") + missing + " section (declared M=" + std::to_string(m) +
                          " and input shape " + to_string(sample) + " need " + std::to_string(body) +
                          " bytes after the header, file has " + std::to_string(r.remaining()) + ")",
                      r.offset());
  }
  if (r.remaining() != body) {
    throw FormatError("declared M=" + std::to_string(m) + " and input shape " + to_string(sample) + " need " +
                          std::to_string(body) + " bytes after the header, file has " + std::to_string(r.remaining()),
                      r.offset());
  }
  ds.labels.resize(m);
  for (auto& label : ds.labels) {
    const std::uint64_t at = r.offset();
    const std::uint32_t v = r.u32("labels");
    if (v >= ds.n_classes) throw FormatError("label " + std::to_string(v) + " outside [0, N)", at);
    label = static_cast<int>(v);
  }
  Shape shape{m};
  shape.insert(shape.end(), sample.begin(), sample.end());
  ds.inputs = Tensor(shape);
  for (double& v : ds.inputs.data()) v = r.f64("inputs");
  ds.splits.resize(m);
  for (auto& s : ds.splits) {
    const std::uint64_t at = r.offset();
    const std::uint8_t v = r.u8("split tags");
    if (v > 1) throw FormatError("unknown split tag " + std::to_string(v), at);
    s = static_cast<Split>(v);
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) { write_file(path, encode_dataset(ds)); }

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

// ---------------------------------------------------------------- batches

BatchStream::BatchStream(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, bool shuffle)
    : ds_(&ds), batch_size_(batch_size), seed_(seed), shuffle_(shuffle) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (batch_size > ds.size()) {
    throw ConfigError("batch size " + std::to_string(batch_size) + " exceeds dataset size " + std::to_string(ds.size()));
  }
  start_epoch(0);
}

void BatchStream::start_epoch(std::size_t epoch) {
  order_.resize(ds_->size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle_) {
    auto rng = make_rng(seed_, Stream::BatchOrder, epoch);
    std::shuffle(order_.begin(), order_.end(), rng);
  }
  cursor_ = 0;
}

bool BatchStream::next(Batch& out) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  out.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_), order_.begin() + static_cast<std::ptrdiff_t>(end));
  out.inputs = ds_->gather(out.indices);
  out.labels.clear();
  for (std::size_t i : out.indices) out.labels.push_back(ds_->labels[i]);
  cursor_ = end;
  return true;
}

std::size_t BatchStream::batches_per_epoch() const { return (ds_->size() + batch_size_ - 1) / batch_size_; }

}  // namespace mldr
