#pragma once

#include "mldr/autodiff.hpp"
#include "mldr/losses.hpp"
#include "mldr/params.hpp"

#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mldr {

enum class ArchKind { Spatial, TokenBased };

/// "spatial" or "token"; anything else is a ConfigError.
ArchKind parse_arch_kind(std::string_view name);
std::string to_string(ArchKind kind);

/// Raw output of one network stage: [B, C, H, W] for spatial stages,
/// [B, 1 + L, D] with the class token at position 0 for token stages.
struct StageOutput {
  Var features;
  ArchKind kind;
  std::size_t stage_index;  // 1-based depth
};

/// What the fusion module needs to know about one consumed stage.
struct StageShape {
  ArchKind kind;
  /// Channels (spatial) or embedding width (token).
  std::size_t feature_dim;
};

struct MsdfLayout {
  std::vector<StageShape> stages;
  std::size_t token_dim = 32;
  /// Gate hidden width; 0 means "same as token_dim".
  std::size_t gate_hidden = 0;
  std::size_t n_classes = 10;

  std::size_t hidden() const { return gate_hidden == 0 ? token_dim : gate_hidden; }
};

/// Per-stage token maps and projectors, plus the two gate layers.
///
/// Parameter names, slot k = 0..S-1 in depth order:
///   msdf.s{k}.token.{w,b}   [C_k, D_tok]   spatial stages, and token stages with C_k != D_tok
///   msdf.s{k}.proj.{w,b}    [C_k, N]
///   msdf.gate1.{w,b}        [S * D_tok, H]
///   msdf.gate2.{w,b}        [H, S]
struct MsdfParams {
  MsdfLayout layout;
  ParameterSet params;

  /// Uniform(+-1/sqrt(fan_in)) weights, zero biases, and a zero final gate layer
  /// so fusion starts from uniform stage weights.
  static MsdfParams init(MsdfLayout layout, std::mt19937_64& rng);

  std::size_t stage_count() const { return layout.stages.size(); }
};

struct ExtractedToken {
  Var token;     // [B, D_tok]
  Var features;  // f-hat: remaining architecture-independent features
};

/// Splits a stage into its class token and the remaining features. Token stages
/// slice position 0; spatial stages synthesize Linear(GAP(features)).
ExtractedToken extract_token(Var stage_features, ArchKind kind, MsdfParams& params, std::size_t slot);

/// Pools f-hat (spatial mean or token mean) and maps it to N logits.
Var project_stage(Var features, ArchKind kind, MsdfParams& params, std::size_t slot);

/// X_token = per-sample concatenation of tokens; W = Softmax(Linear(GELU(Linear(X_token)))). Returns [B, S].
Var gate_weights(std::span<const Var> tokens, MsdfParams& params);

struct FusedLogit {
  Var values;        // [B, N]
  Var gate_weights;  // [B, S]
};

/// Per-sample convex combination sum_s W[b, s] * p_s[b].
FusedLogit fuse(std::span<const Var> stage_logits, Var weights);

/// Full fusion path. With `use_gate` off the stages are averaged uniformly.
FusedLogit msdf_forward(std::span<const StageOutput> stages, MsdfParams& params, bool use_gate = true);

/// DFRA between the fused logit and the (detached) teacher logits.
Var msdf_loss(std::span<const StageOutput> stages, Var teacher_logits, MsdfParams& params,
              const DistillHyperparams& hp);

}  // namespace mldr
