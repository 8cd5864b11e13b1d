#include "mldr/msdf.hpp"

#include "mldr/errors.hpp"

namespace mldr {

namespace {

std::string slot_name(std::size_t slot, const char* what) {
  return "msdf.s" + std::to_string(slot) + "." + what;
}

void require_slot(const MsdfParams& params, std::size_t slot) {
  if (slot >= params.stage_count()) {
    throw ConfigError("msdf: no projector for stage slot " + std::to_string(slot) + " (have " +
                      std::to_string(params.stage_count()) + ")");
  }
}

}  // namespace

ArchKind parse_arch_kind(std::string_view name) {
  if (name == "spatial") return ArchKind::Spatial;
  if (name == "token") return ArchKind::TokenBased;
  throw ConfigError("unknown arch kind '" + std::string(name) + "' (expected spatial or token)");
}

std::string to_string(ArchKind kind) { return kind == ArchKind::Spatial ? "spatial" : "token"; }

MsdfParams MsdfParams::init(MsdfLayout layout, std::mt19937_64& rng) {
  if (layout.stages.empty()) throw ConfigError("msdf: at least one stage is required");
  MsdfParams out;
  out.layout = std::move(layout);
  const auto& lay = out.layout;
  const std::size_t stages = lay.stages.size();
  for (std::size_t k = 0; k < stages; ++k) {
    const StageShape& st = lay.stages[k];
    // native class tokens of the right width are used as-is; everything else gets a linear map
    if (st.kind == ArchKind::Spatial || st.feature_dim != lay.token_dim) {
      out.params.add(slot_name(k, "token.w"), uniform_fan_in(st.feature_dim, lay.token_dim, rng));
      out.params.add(slot_name(k, "token.b"), Tensor(Shape{lay.token_dim}));
    }
    out.params.add(slot_name(k, "proj.w"), uniform_fan_in(st.feature_dim, lay.n_classes, rng));
    out.params.add(slot_name(k, "proj.b"), Tensor(Shape{lay.n_classes}));
  }
  out.params.add("msdf.gate1.w", uniform_fan_in(stages * lay.token_dim, lay.hidden(), rng));
  out.params.add("msdf.gate1.b", Tensor(Shape{lay.hidden()}));
  out.params.add("msdf.gate2.w", Tensor(Shape{lay.hidden(), stages}));
  out.params.add("msdf.gate2.b", Tensor(Shape{stages}));
  return out;
}

ExtractedToken extract_token(Var stage_features, ArchKind kind, MsdfParams& params, std::size_t slot) {
  require_slot(params, slot);
  const Shape& s = stage_features.shape();
  Tape& tape = stage_features.tape();
  if (kind == ArchKind::TokenBased) {
    if (s.size() != 3 || s[1] < 2) {
      throw DimensionError("extract_token: token stage must be [B, 1 + L, D] with L >= 1, got " + to_string(s));
    }
    Var token = reshape(narrow(stage_features, 1, 0, 1), Shape{s[0], s[2]});
    if (params.params.contains(slot_name(slot, "token.w"))) {
      token = linear(token, tape.leaf(params.params[slot_name(slot, "token.w")]),
                     tape.leaf(params.params[slot_name(slot, "token.b")]));
    } else if (s[2] != params.layout.token_dim) {
      throw ConfigError("extract_token: token width " + std::to_string(s[2]) + " != token_dim " +
                        std::to_string(params.layout.token_dim));
    }
    return {token, narrow(stage_features, 1, 1, s[1] - 1)};
  }
  if (s.size() != 4) throw DimensionError("extract_token: spatial stage must be [B, C, H, W], got " + to_string(s));
  Var pooled = global_avg_pool(stage_features);
  Var token = linear(pooled, tape.leaf(params.params[slot_name(slot, "token.w")]),
                     tape.leaf(params.params[slot_name(slot, "token.b")]));
  return {token, stage_features};
}

Var project_stage(Var features, ArchKind kind, MsdfParams& params, std::size_t slot) {
  require_slot(params, slot);
  Tape& tape = features.tape();
  const Shape& s = features.shape();
  Var pooled;
  if (kind == ArchKind::TokenBased) {
    if (s.size() != 3) throw DimensionError("project_stage: token features must be [B, L, D], got " + to_string(s));
    pooled = mean(features, 1);
  } else {
    if (s.size() != 4) throw DimensionError("project_stage: spatial features must be [B, C, H, W], got " + to_string(s));
    pooled = global_avg_pool(features);
  }
  Tensor& w = params.params[slot_name(slot, "proj.w")];
  if (pooled.shape().back() != w.dim(0)) {
    throw ConfigError("project_stage: stage " + std::to_string(slot) + " has " +
                      std::to_string(pooled.shape().back()) + " features, projector expects " +
                      std::to_string(w.dim(0)));
  }
  return linear(pooled, tape.leaf(w), tape.leaf(params.params[slot_name(slot, "proj.b")]));
}

Var gate_weights(std::span<const Var> tokens, MsdfParams& params) {
  if (tokens.empty()) throw ConfigError("gate_weights: no stage tokens");
  if (tokens.size() != params.stage_count()) {
    throw ConfigError("gate_weights: " + std::to_string(tokens.size()) + " tokens for a gate over " +
                      std::to_string(params.stage_count()) + " stages");
  }
  for (const Var& t : tokens) {
    if (t.shape() != tokens[0].shape() || t.shape().size() != 2 || t.shape()[1] != params.layout.token_dim) {
      throw ConfigError("gate_weights: token shape " + to_string(t.shape()) + " does not match [B, " +
                        std::to_string(params.layout.token_dim) + "]");
    }
  }
  Tape& tape = tokens[0].tape();
  const std::size_t batch = tokens[0].shape()[0];
  Var stacked = reshape(stack(tokens, 1), Shape{batch, tokens.size() * params.layout.token_dim});
  Var hidden = gelu(linear(stacked, tape.leaf(params.params["msdf.gate1.w"]), tape.leaf(params.params["msdf.gate1.b"])));
  Var scores = linear(hidden, tape.leaf(params.params["msdf.gate2.w"]), tape.leaf(params.params["msdf.gate2.b"]));
  return softmax(scores, -1);
}

FusedLogit fuse(std::span<const Var> stage_logits, Var weights) {
  const Shape& ws = weights.shape();
  if (stage_logits.empty() || ws.size() != 2 || ws[1] != stage_logits.size()) {
    throw DimensionError("fuse: weights " + to_string(ws) + " for " + std::to_string(stage_logits.size()) +
                         " stage logits");
  }
  const Shape& ls = stage_logits[0].shape();
  if (ls.size() != 2 || ls[0] != ws[0]) {
    throw DimensionError("fuse: stage logits " + to_string(ls) + " vs weights " + to_string(ws));
  }
  Var stacked = stack(stage_logits, 1);  // [B, S, N]
  Var w = reshape(weights, Shape{ws[0], 1, ws[1]});
  Var fused = reshape(matmul(w, stacked), Shape{ls[0], ls[1]});
  return {fused, weights};
}

FusedLogit msdf_forward(std::span<const StageOutput> stages, MsdfParams& params, bool use_gate) {
  if (stages.size() != params.stage_count()) {
    throw ConfigError("msdf: " + std::to_string(stages.size()) + " stages for params built for " +
                      std::to_string(params.stage_count()));
  }
  std::vector<Var> tokens;
  std::vector<Var> logits;
  for (std::size_t k = 0; k < stages.size(); ++k) {
    ExtractedToken ex = extract_token(stages[k].features, stages[k].kind, params, k);
    tokens.push_back(ex.token);
    logits.push_back(project_stage(ex.features, stages[k].kind, params, k));
  }
  Var weights;
  if (use_gate) {
    weights = gate_weights(tokens, params);
  } else {
    const std::size_t batch = logits[0].shape()[0];
    weights = logits[0].tape().constant(Tensor(Shape{batch, stages.size()}, 1.0 / static_cast<double>(stages.size())));
  }
  return fuse(logits, weights);
}

Var msdf_loss(std::span<const StageOutput> stages, Var teacher_logits, MsdfParams& params,
              const DistillHyperparams& hp) {
  FusedLogit fused = msdf_forward(stages, params);
  return dfra_loss(fused.values, teacher_logits, hp);
}

}  // namespace mldr
