#pragma once

#include "mldr/autodiff.hpp"
#include "mldr/msdf.hpp"
#include "mldr/params.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace mldr {

/// Architecture of a stage-structured toy network.
///
/// Spatial: each stage merges 2x2 neighbourhoods (while the map is larger than
/// 1x1), applies a per-position linear map and GELU. Emits [B, C_i, H_i, W_i].
///
/// Token: the image is cut into `patch` x `patch` patches, embedded, and prefixed
/// with a learned class token. Each stage is a token-mixing linear (across
/// positions) and a channel MLP, both residual. Emits [B, 1 + L, D_i].
struct ModelSpec {
  ArchKind arch = ArchKind::Spatial;
  std::size_t n_stages = 4;
  std::vector<std::size_t> widths{16, 32, 32, 32};
  std::size_t n_classes = 10;
  /// Per-sample input shape: [C, H, W] or [D].
  Shape input_shape{1, 16, 16};
  std::size_t patch = 4;
  std::size_t mlp_ratio = 2;

  void validate() const;
  std::string serialize() const;
  static ModelSpec parse(const std::string& text);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct Model {
  ModelSpec spec;
  ParameterSet params;

  /// Centered uniform 1/sqrt(fan_in) weights, zero biases.
  static Model init(const ModelSpec& spec, std::mt19937_64& rng);
};

struct ForwardResult {
  Var logits;                       // [B, N]
  std::vector<StageOutput> stages;  // shallow to deep
};

/// Runs the network on `batch` ([B, ...input_shape]). Parameters enter the tape as leaves.
ForwardResult forward(Model& model, Tape& tape, const Tensor& batch);

/// Logits only, without keeping a tape around.
Tensor predict_logits(Model& model, const Tensor& batch);

std::size_t count_params(const Model& model);

/// Stage layout handed to the fusion module for the deepest `count` stages.
std::vector<StageShape> stage_shapes(const ModelSpec& spec, std::size_t count);

// ---- checkpoint files ----
//
//   "MLDR" | u32 version | u32 meta_len | meta (text) | u32 n_entries |
//   n_entries x (u32 name_len | name | u32 rank | rank x u64 dim | u64 byte_offset) |
//   u64 blob_bytes | blob (f64 little-endian, entries at their byte offsets)

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string meta;
  std::vector<Parameter> entries;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError (with byte offset) on any malformed or truncated input.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);
void save_parameters(const ParameterSet& params, const std::string& meta, const std::filesystem::path& path);

}  // namespace mldr
