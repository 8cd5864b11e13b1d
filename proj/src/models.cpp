#include "mldr/models.hpp"

#include "mldr/binary_io.hpp"
#include "mldr/errors.hpp"

#include <sstream>

namespace mldr {

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<std::size_t> split_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stoull(item));
  }
  return out;
}

std::string stage(std::size_t i, const char* what) { return "stage" + std::to_string(i) + "." + what; }

/// Spatial input as [C, H, W]; vectors become [D, 1, 1].
Shape spatial_input(const Shape& s) { return s.size() == 1 ? Shape{s[0], 1, 1} : s; }

bool mergeable(std::size_t h, std::size_t w) { return h >= 2 && w >= 2 && h % 2 == 0 && w % 2 == 0; }

std::size_t token_count(const ModelSpec& spec) {
  const Shape& s = spec.input_shape;
  if (s.size() == 1) return s[0] / spec.patch;
  return (s[1] / spec.patch) * (s[2] / spec.patch);
}

std::size_t patch_dim(const ModelSpec& spec) {
  const Shape& s = spec.input_shape;
  return s.size() == 1 ? spec.patch : s[0] * spec.patch * spec.patch;
}

void add_linear(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  ps.add(prefix + ".w", uniform_fan_in(in, out, rng));
  ps.add(prefix + ".b", Tensor(Shape{out}));
}

Var apply_linear(ParameterSet& ps, Tape& tape, Var x, const std::string& prefix) {
  return linear(x, tape.leaf(ps[prefix + ".w"]), tape.leaf(ps[prefix + ".b"]));
}

ForwardResult forward_spatial(Model& model, Tape& tape, Var x) {
  const ModelSpec& spec = model.spec;
  const std::size_t batch = x.shape()[0];
  const Shape in = spatial_input(spec.input_shape);
  // channels-last internally: [B, H, W, C]
  Var h = permute(reshape(x, Shape{batch, in[0], in[1], in[2]}), {0, 2, 3, 1});
  ForwardResult out;
  for (std::size_t i = 0; i < spec.n_stages; ++i) {
    const Shape s = h.shape();
    if (mergeable(s[1], s[2])) {
      h = reshape(h, Shape{batch, s[1] / 2, 2, s[2] / 2, 2, s[3]});
      h = permute(h, {0, 1, 3, 2, 4, 5});
      h = reshape(h, Shape{batch, s[1] / 2, s[2] / 2, 4 * s[3]});
    }
    h = gelu(apply_linear(model.params, tape, h, "stage" + std::to_string(i)));
    out.stages.push_back(StageOutput{permute(h, {0, 3, 1, 2}), ArchKind::Spatial, i + 1});
  }
  Var pooled = global_avg_pool(out.stages.back().features);
  out.logits = apply_linear(model.params, tape, pooled, "head");
  return out;
}

ForwardResult forward_token(Model& model, Tape& tape, Var x) {
  const ModelSpec& spec = model.spec;
  const std::size_t batch = x.shape()[0];
  const std::size_t p = spec.patch;
  const std::size_t tokens = token_count(spec);
  Var patches;
  if (spec.input_shape.size() == 1) {
    patches = reshape(x, Shape{batch, tokens, p});
  } else {
    const Shape& s = spec.input_shape;
    patches = reshape(x, Shape{batch, s[0], s[1] / p, p, s[2] / p, p});
    patches = permute(patches, {0, 2, 4, 1, 3, 5});
    patches = reshape(patches, Shape{batch, tokens, patch_dim(spec)});
  }
  Var h = apply_linear(model.params, tape, patches, "embed");
  Var cls = expand(tape.leaf(model.params["cls"]), Shape{batch, 1, spec.widths[0]});
  const Var parts[] = {cls, h};
  h = concat(parts, 1);

  ForwardResult out;
  for (std::size_t i = 0; i < spec.n_stages; ++i) {
    const std::string prefix = "stage" + std::to_string(i);
    if (i > 0 && spec.widths[i] != spec.widths[i - 1]) h = apply_linear(model.params, tape, h, prefix + ".proj");
    Var mixed = transpose(apply_linear(model.params, tape, transpose(h), prefix + ".mix"));
    h = h + gelu(mixed);
    Var mlp = apply_linear(model.params, tape, gelu(apply_linear(model.params, tape, h, prefix + ".mlp1")),
                           prefix + ".mlp2");
    h = h + mlp;
    out.stages.push_back(StageOutput{h, ArchKind::TokenBased, i + 1});
  }
  const std::size_t d = spec.widths.back();
  Var cls_out = reshape(narrow(h, 1, 0, 1), Shape{batch, d});
  out.logits = apply_linear(model.params, tape, cls_out, "head");
  return out;
}

}  // namespace

void ModelSpec::validate() const {
  if (n_stages < 1 || n_stages > 4) throw ConfigError("model: n_stages must be in [1, 4], got " + std::to_string(n_stages));
  if (widths.size() != n_stages) {
    throw ConfigError("model: " + std::to_string(widths.size()) + " widths for " + std::to_string(n_stages) + " stages");
  }
  for (std::size_t w : widths)
    if (w == 0) throw ConfigError("model: stage width must be positive");
  if (n_classes < 2) throw ConfigError("model: need at least 2 classes");
  if (input_shape.size() != 1 && input_shape.size() != 3) {
    throw ConfigError("model: input shape must be [D] or [C, H, W], got " + to_string(input_shape));
  }
  for (std::size_t d : input_shape)
    if (d == 0) throw ConfigError("model: zero-sized input dimension");
  if (arch == ArchKind::TokenBased) {
    if (patch == 0) throw ConfigError("model: patch must be positive");
    const bool fits = input_shape.size() == 1
                          ? input_shape[0] % patch == 0
                          : input_shape[1] % patch == 0 && input_shape[2] % patch == 0;
    if (!fits) throw ConfigError("model: patch " + std::to_string(patch) + " does not tile input " + to_string(input_shape));
    if (mlp_ratio == 0) throw ConfigError("model: mlp_ratio must be positive");
  }
}

std::string ModelSpec::serialize() const {
  std::ostringstream out;
  out << "arch=" << to_string(arch) << "\n"
      << "stages=" << n_stages << "\n"
      << "widths=" << join(widths) << "\n"
      << "classes=" << n_classes << "\n"
      << "input=" << join(input_shape) << "\n"
      << "patch=" << patch << "\n"
      << "mlp_ratio=" << mlp_ratio << "\n";
  return out.str();
}

ModelSpec ModelSpec::parse(const std::string& text) {
  ModelSpec spec;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("model spec: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "arch") {
        spec.arch = parse_arch_kind(value);
      } else if (key == "stages") {
        spec.n_stages = std::stoull(value);
      } else if (key == "widths") {
        spec.widths = split_sizes(value);
      } else if (key == "classes") {
        spec.n_classes = std::stoull(value);
      } else if (key == "input") {
        spec.input_shape = split_sizes(value);
      } else if (key == "patch") {
        spec.patch = std::stoull(value);
      } else if (key == "mlp_ratio") {
        spec.mlp_ratio = std::stoull(value);
      } else {
        throw ConfigError("model spec: unknown key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw ConfigError("model spec: bad value for '" + key + "': '" + value + "'");
    }
  }
  spec.validate();
  return spec;
}

Model Model::init(const ModelSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  Model model;
  model.spec = spec;
  ParameterSet& ps = model.params;
  if (spec.arch == ArchKind::Spatial) {
    Shape s = spatial_input(spec.input_shape);
    std::size_t channels = s[0];
    for (std::size_t i = 0; i < spec.n_stages; ++i) {
      std::size_t fan_in = channels;
      if (mergeable(s[1], s[2])) {
        fan_in *= 4;
        s[1] /= 2;
        s[2] /= 2;
      }
      add_linear(ps, "stage" + std::to_string(i), fan_in, spec.widths[i], rng);
      channels = spec.widths[i];
    }
    add_linear(ps, "head", channels, spec.n_classes, rng);
  } else {
    const std::size_t positions = token_count(spec) + 1;
    add_linear(ps, "embed", patch_dim(spec), spec.widths[0], rng);
    Tensor cls(Shape{1, 1, spec.widths[0]});
    std::uniform_real_distribution<double> dist(-0.1, 0.1);
    for (double& v : cls.data()) v = dist(rng);
    ps.add("cls", std::move(cls));
    for (std::size_t i = 0; i < spec.n_stages; ++i) {
      const std::size_t d = spec.widths[i];
      if (i > 0 && d != spec.widths[i - 1]) add_linear(ps, stage(i, "proj"), spec.widths[i - 1], d, rng);
      add_linear(ps, stage(i, "mix"), positions, positions, rng);
      add_linear(ps, stage(i, "mlp1"), d, d * spec.mlp_ratio, rng);
      add_linear(ps, stage(i, "mlp2"), d * spec.mlp_ratio, d, rng);
    }
    add_linear(ps, "head", spec.widths.back(), spec.n_classes, rng);
  }
  return model;
}

ForwardResult forward(Model& model, Tape& tape, const Tensor& batch) {
  const Shape& in = model.spec.input_shape;
  const Shape& s = batch.shape();
  if (s.size() != in.size() + 1 || !std::equal(in.begin(), in.end(), s.begin() + 1) || s[0] == 0) {
    throw DataError("forward: batch shape " + to_string(s) + " does not match model input " + to_string(in));
  }
  Var x = tape.constant(batch);
  return model.spec.arch == ArchKind::Spatial ? forward_spatial(model, tape, x) : forward_token(model, tape, x);
}

Tensor predict_logits(Model& model, const Tensor& batch) {
  Tape tape;
  return forward(model, tape, batch).logits.value();
}

std::size_t count_params(const Model& model) { return model.params.count(); }

std::vector<StageShape> stage_shapes(const ModelSpec& spec, std::size_t count) {
  if (count > spec.n_stages) {
    throw ConfigError("asked for " + std::to_string(count) + " stages of a " + std::to_string(spec.n_stages) +
                      "-stage model");
  }
  std::vector<StageShape> out;
  for (std::size_t i = spec.n_stages - count; i < spec.n_stages; ++i) out.push_back({spec.arch, spec.widths[i]});
  return out;
}

// ---------------------------------------------------------------- checkpoints

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.bytes("MLDR");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.meta.size()));
  w.bytes(ckpt.meta);
  w.u32(static_cast<std::uint32_t>(ckpt.entries.size()));
  std::uint64_t offset = 0;
  for (const Parameter& p : ckpt.entries) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) w.u64(d);
    w.u64(offset);
    offset += p.value.numel() * sizeof(double);
  }
  w.u64(offset);
  for (const Parameter& p : ckpt.entries)
    for (double v : p.value.data()) w.f64(v);
  return w.buffer();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.bytes(4, "magic") != "MLDR") throw FormatError("not a checkpoint: bad magic", 0);
  const std::uint64_t version_at = r.offset();
  const std::uint32_t version = r.u32("format version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  Checkpoint ckpt;
  const std::uint32_t meta_len = r.u32("metadata length");
  ckpt.meta = r.bytes(meta_len, "metadata");
  const std::uint32_t count = r.u32("manifest entry count");
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> manifest;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    const std::uint32_t name_len = r.u32("manifest name length");
    e.name = r.bytes(name_len, "manifest name");
    const std::uint32_t rank = r.u32("manifest rank");
    if (rank > 8) r.fail("manifest entry '" + e.name + "' has implausible rank " + std::to_string(rank));
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.u64("manifest dimension"));
    e.offset = r.u64("manifest byte offset");
    manifest.push_back(std::move(e));
  }
  const std::uint64_t blob_at = r.offset();
  const std::uint64_t blob_bytes = r.u64("blob size");
  if (blob_bytes != r.remaining()) {
    throw FormatError("blob section declares " + std::to_string(blob_bytes) + " bytes but " +
                          std::to_string(r.remaining()) + " remain",
                      blob_at);
  }
  const std::uint64_t blob_start = r.offset();
  std::uint64_t expected = 0;
  for (const Entry& e : manifest) {
    const std::uint64_t n = numel(e.shape);
    if (e.offset != expected || e.offset + n * sizeof(double) > blob_bytes) {
      throw FormatError("entry '" + e.name + "' has inconsistent byte offset " + std::to_string(e.offset),
                        blob_start + e.offset);
    }
    std::vector<double> values(n);
    for (double& v : values) v = r.f64("parameter data");
    ckpt.entries.push_back(Parameter{e.name, Tensor(e.shape, std::move(values))});
    expected += n * sizeof(double);
  }
  if (expected != blob_bytes) throw FormatError("trailing bytes after last parameter", blob_start + expected);
  return ckpt;
}

void save_parameters(const ParameterSet& params, const std::string& meta, const std::filesystem::path& path) {
  Checkpoint ckpt;
  ckpt.meta = meta;
  for (const Parameter& p : params.items()) ckpt.entries.push_back(Parameter{p.name, Tensor(p.value.shape(), p.value.values())});
  write_file(path, encode_checkpoint(ckpt));
}

void save_model(const Model& model, const std::filesystem::path& path) {
  save_parameters(model.params, model.spec.serialize(), path);
}

Model load_model(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  Checkpoint ckpt = decode_checkpoint(bytes);
  Model model;
  model.spec = ModelSpec::parse(ckpt.meta);
  std::mt19937_64 rng(0);
  Model reference = Model::init(model.spec, rng);
  if (reference.params.size() != ckpt.entries.size()) {
    throw FormatError("checkpoint holds " + std::to_string(ckpt.entries.size()) + " tensors, model needs " +
                          std::to_string(reference.params.size()),
                      0);
  }
  for (std::size_t i = 0; i < ckpt.entries.size(); ++i) {
    const Parameter& want = reference.params.items()[i];
    Parameter& got = ckpt.entries[i];
    if (got.name != want.name || got.value.shape() != want.value.shape()) {
      throw FormatError("checkpoint entry '" + got.name + "' " + to_string(got.value.shape()) + " does not match '" +
                            want.name + "' " + to_string(want.value.shape()),
                        0);
    }
    model.params.add(got.name, std::move(got.value));
  }
  return model;
}

}  // namespace mldr
