#include "headlamp/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace headlamp {

// ---------------------------------------------------------------------------
// Configuration

std::string_view to_string(ActivationPlan plan) {
  switch (plan) {
    case ActivationPlan::Dense: return "dense";
    case ActivationPlan::SparseEnc: return "sparse-enc";
    case ActivationPlan::SparseTL: return "sparse-tl";
    case ActivationPlan::SparseCH: return "sparse-ch";
    case ActivationPlan::SparseAll: return "sparse-all";
  }
  return "dense";
}

ActivationPlan plan_from_string(std::string_view name) {
  if (name == "dense") return ActivationPlan::Dense;
  if (name == "sparse-enc") return ActivationPlan::SparseEnc;
  if (name == "sparse-tl") return ActivationPlan::SparseTL;
  if (name == "sparse-ch") return ActivationPlan::SparseCH;
  if (name == "sparse-all") return ActivationPlan::SparseAll;
  throw ArgumentError("unknown activation plan '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (enc_layers == 0 || dec_layers == 0) throw ConfigurationError("model needs at least one encoder and decoder layer");
  if (heads_per_layer == 0 || head_dim == 0) throw ConfigurationError("heads_per_layer and head_dim must be positive");
  if (model_dim != heads_per_layer * head_dim) {
    throw ConfigurationError("model_dim " + std::to_string(model_dim) + " != heads_per_layer * head_dim (" +
                             std::to_string(heads_per_layer) + " * " + std::to_string(head_dim) + ")");
  }
  if (ffn_dim == 0) throw ConfigurationError("ffn_dim must be positive");
  if (vocab_size < Vocabulary::kReserved) throw ConfigurationError("vocab_size must cover the reserved symbols");
  if (max_src_len == 0 || max_tgt_len == 0) throw ConfigurationError("length limits must be positive");
}

AttentionKind ModelConfig::kind(AttentionSite site, std::size_t layer, std::size_t head) const {
  if (site == AttentionSite::DecoderSelf) return AttentionKind::Softmax;
  const bool top_decoder = site == AttentionSite::DecoderCross && layer + 1 == dec_layers;
  const bool copy = top_decoder && head == 0;
  bool sparse = false;
  switch (plan) {
    case ActivationPlan::Dense: sparse = false; break;
    case ActivationPlan::SparseEnc: sparse = site == AttentionSite::EncoderSelf; break;
    case ActivationPlan::SparseTL: sparse = !top_decoder; break;
    case ActivationPlan::SparseCH: sparse = !copy; break;
    case ActivationPlan::SparseAll: sparse = true; break;
  }
  return sparse ? AttentionKind::Sparsemax : AttentionKind::Softmax;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"enc_layers", c.enc_layers},   {"dec_layers", c.dec_layers},
                     {"heads_per_layer", c.heads_per_layer}, {"model_dim", c.model_dim},
                     {"head_dim", c.head_dim},       {"ffn_dim", c.ffn_dim},
                     {"vocab_size", c.vocab_size},   {"max_src_len", c.max_src_len},
                     {"max_tgt_len", c.max_tgt_len}, {"plan", to_string(c.plan)},
                     {"seed", c.seed},               {"duplicate_heads", c.duplicate_heads}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.enc_layers = j.at("enc_layers").get<std::size_t>();
  c.dec_layers = j.at("dec_layers").get<std::size_t>();
  c.heads_per_layer = j.at("heads_per_layer").get<std::size_t>();
  c.model_dim = j.at("model_dim").get<std::size_t>();
  c.head_dim = j.at("head_dim").get<std::size_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_src_len = j.at("max_src_len").get<std::size_t>();
  c.max_tgt_len = j.at("max_tgt_len").get<std::size_t>();
  c.plan = plan_from_string(j.at("plan").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.duplicate_heads = j.value("duplicate_heads", false);
}

// ---------------------------------------------------------------------------
// Parameters

std::size_t ParamStore::add(std::string name, Tensor value) {
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

std::size_t ParamStore::index(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw ConfigurationError("no parameter named '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - names_.begin());
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

Tensor ParamStore::flatten() const {
  std::vector<double> flat;
  flat.reserve(scalar_count());
  for (const auto& v : values_) flat.insert(flat.end(), v.raw().begin(), v.raw().end());
  const std::size_t n = flat.size();
  return Tensor({n}, std::move(flat));
}

void ParamStore::unflatten(const Tensor& flat) {
  if (flat.size() != scalar_count()) throw ArgumentError("unflatten: length mismatch");
  std::size_t offset = 0;
  for (auto& v : values_) {
    std::copy_n(flat.raw().begin() + static_cast<std::ptrdiff_t>(offset), v.size(), v.raw().begin());
    offset += v.size();
  }
}

namespace {

void add_block(ParamStore& p, const std::string& prefix, std::size_t d, Rng& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  p.add(prefix + ".wq", random_normal({d, d}, rng, scale));
  p.add(prefix + ".wk", random_normal({d, d}, rng, scale));
  p.add(prefix + ".wv", random_normal({d, d}, rng, scale));
  p.add(prefix + ".wo", random_normal({d, d}, rng, scale));
  p.add(prefix + ".bo", Tensor({d}, 0.0));
}

void add_norm(ParamStore& p, const std::string& prefix, std::size_t d) {
  p.add(prefix + ".g", Tensor({d}, 1.0));
  p.add(prefix + ".b", Tensor({d}, 0.0));
}

void add_ffn(ParamStore& p, const std::string& prefix, std::size_t d, std::size_t f, Rng& rng) {
  p.add(prefix + ".w1", random_normal({d, f}, rng, 1.0 / std::sqrt(static_cast<double>(d))));
  p.add(prefix + ".b1", Tensor({f}, 0.0));
  p.add(prefix + ".w2", random_normal({f, d}, rng, 1.0 / std::sqrt(static_cast<double>(f))));
  p.add(prefix + ".b2", Tensor({d}, 0.0));
}

void duplicate_block_heads(ParamStore& p, const std::string& prefix, std::size_t heads, std::size_t dk) {
  for (const char* w : {".wq", ".wk", ".wv"}) {
    Tensor& t = p.get(prefix + w);
    for (std::size_t r = 0; r < t.rows(); ++r)
      for (std::size_t h = 1; h < heads; ++h)
        for (std::size_t c = 0; c < dk; ++c) t.at(r, h * dk + c) = t.at(r, c);
  }
  Tensor& wo = p.get(prefix + ".wo");
  for (std::size_t h = 1; h < heads; ++h)
    for (std::size_t r = 0; r < dk; ++r)
      for (std::size_t c = 0; c < wo.cols(); ++c) wo.at(h * dk + r, c) = wo.at(r, c);
}

std::string enc_prefix(std::size_t l) { return "enc" + std::to_string(l); }
std::string dec_prefix(std::size_t l) { return "dec" + std::to_string(l); }

}  // namespace

Model Model::initialise(ModelConfig config, Vocabulary vocab) {
  if (config.vocab_size == 0) config.vocab_size = vocab.size();
  if (config.vocab_size != vocab.size()) {
    throw ConfigurationError("config vocab_size " + std::to_string(config.vocab_size) + " != vocabulary size " +
                             std::to_string(vocab.size()));
  }
  config.validate();
  Rng rng(config.seed);
  const std::size_t d = config.model_dim;
  Model m;
  m.config = config;
  m.vocab = std::move(vocab);
  auto& p = m.params;
  p.add("embed", random_normal({config.vocab_size, d}, rng, 1.0));
  for (std::size_t l = 0; l < config.enc_layers; ++l) {
    const auto pre = enc_prefix(l);
    add_norm(p, pre + ".ln1", d);
    add_block(p, pre + ".self", d, rng);
    add_norm(p, pre + ".ln2", d);
    add_ffn(p, pre + ".ffn", d, config.ffn_dim, rng);
  }
  add_norm(p, "enc.lnf", d);
  for (std::size_t l = 0; l < config.dec_layers; ++l) {
    const auto pre = dec_prefix(l);
    add_norm(p, pre + ".ln1", d);
    add_block(p, pre + ".self", d, rng);
    add_norm(p, pre + ".ln2", d);
    add_block(p, pre + ".cross", d, rng);
    add_norm(p, pre + ".ln3", d);
    add_ffn(p, pre + ".ffn", d, config.ffn_dim, rng);
  }
  add_norm(p, "dec.lnf", d);
  p.add("out.w", random_normal({d, config.vocab_size}, rng, 1.0 / std::sqrt(static_cast<double>(d))));
  p.add("out.b", Tensor({config.vocab_size}, 0.0));
  p.add("pgen.w", random_normal({d, 1}, rng, 1.0 / std::sqrt(static_cast<double>(d))));
  p.add("pgen.b", Tensor({1}, 0.0));

  if (config.duplicate_heads) {
    for (std::size_t l = 0; l < config.enc_layers; ++l)
      duplicate_block_heads(p, enc_prefix(l) + ".self", config.heads_per_layer, config.head_dim);
    for (std::size_t l = 0; l < config.dec_layers; ++l) {
      duplicate_block_heads(p, dec_prefix(l) + ".self", config.heads_per_layer, config.head_dim);
      duplicate_block_heads(p, dec_prefix(l) + ".cross", config.heads_per_layer, config.head_dim);
    }
  }
  m.gates = GateSet::open(config.gate_layout());
  return m;
}

GateSet Model::inference_gates() const {
  if (gates.mode() == GateMode::HardConcreteTraining) return infer_gates(*gates.params(), gates.layout());
  return gates;
}

// ---------------------------------------------------------------------------
// Graph construction

namespace {

struct BlockVars {
  Var wq, wk, wv, wo, bo;
};
struct NormVars {
  Var g, b;
};
struct FfnVars {
  Var w1, b1, w2, b2;
};

struct MultiHeadOut {
  Var output;
  std::vector<Var> weights;  // per head
};

MultiHeadOut multi_head_graph(Tape& tape, Var x_q, Var x_kv, const BlockVars& block,
                              std::span<const AttentionKind> kinds, std::span<const Var> gates, bool causal,
                              std::size_t head_dim) {
  const std::size_t heads = kinds.size();
  const Var q = tape.matmul(x_q, block.wq);
  const Var k = tape.matmul(x_kv, block.wk);
  const Var v = tape.matmul(x_kv, block.wv);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(head_dim));
  MultiHeadOut out;
  std::vector<Var> contexts;
  contexts.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = tape.slice_cols(q, h * head_dim, head_dim);
    const Var kh = tape.slice_cols(k, h * head_dim, head_dim);
    const Var vh = tape.slice_cols(v, h * head_dim, head_dim);
    const Var scores = tape.scale(tape.matmul_nt(qh, kh), inv_sqrt_dk);
    const Var weights = tape.attention(scores, kinds[h], causal);
    Var context = tape.matmul(weights, vh);
    if (!gates.empty()) context = tape.scale_by(context, gates[h]);
    contexts.push_back(context);
    out.weights.push_back(weights);
  }
  out.output = tape.add_bias(tape.matmul(tape.concat_cols(contexts), block.wo), block.bo);
  return out;
}

Tensor positional_encoding(std::size_t length, std::size_t dim) {
  Tensor pe({length, dim});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * rate;
      pe.at(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

// Mixes vocabulary probabilities with the copy distribution. The copy head's
// gate scales the copy mass: b_t = g * (1 - p_gen_t), P = (1 - b_t) vocab + b_t copy.
Var copy_mixture(Tape& tape, Var vocab_probs, Var copy_weights, Var p_gen, Var copy_gate,
                 const std::vector<std::size_t>& src_ext, std::size_t ext_size) {
  const Tensor& pv = tape.value(vocab_probs);
  const Tensor& cw = tape.value(copy_weights);
  const Tensor& pg = tape.value(p_gen);
  const double g = tape.value(copy_gate)[0];
  const std::size_t steps = pv.rows(), vocab = pv.cols();
  Tensor out({steps, ext_size}, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    const double p = pg[t];
    if (!std::isfinite(p)) throw EvaluationError("p_gen is not finite");
    const double b = g * (1.0 - p);
    for (std::size_t w = 0; w < vocab; ++w) out.at(t, w) = (1.0 - b) * pv.at(t, w);
    for (std::size_t i = 0; i < src_ext.size(); ++i) out.at(t, src_ext[i]) += b * cw.at(t, i);
  }
  return tape.push(std::move(out), [vocab_probs, copy_weights, p_gen, copy_gate, src_ext](Tape& tp, const Tensor& G) {
    const Tensor& pv = tp.value(vocab_probs);
    const Tensor& cw = tp.value(copy_weights);
    const Tensor& pg = tp.value(p_gen);
    const double g = tp.value(copy_gate)[0];
    auto& gv = tp.grad_mut(vocab_probs);
    auto& gc = tp.grad_mut(copy_weights);
    auto& gp = tp.grad_mut(p_gen);
    double dgate = 0.0;
    for (std::size_t t = 0; t < pv.rows(); ++t) {
      const double p = pg[t];
      const double b = g * (1.0 - p);
      double db = 0.0;
      for (std::size_t w = 0; w < pv.cols(); ++w) {
        gv.at(t, w) += (1.0 - b) * G.at(t, w);
        db -= pv.at(t, w) * G.at(t, w);
      }
      for (std::size_t i = 0; i < src_ext.size(); ++i) {
        gc.at(t, i) += b * G.at(t, src_ext[i]);
        db += cw.at(t, i) * G.at(t, src_ext[i]);
      }
      gp[t] += -g * db;
      dgate += (1.0 - p) * db;
    }
    tp.grad_mut(copy_gate)[0] += dgate;
  });
}

Var nll_graph(Tape& tape, Var probs, std::span<const std::size_t> targets) {
  const double value = mean_cross_entropy(tape.value(probs), targets);
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return tape.push(Tensor({1}, std::vector<double>{value}), [probs, tg](Tape& tp, const Tensor& G) {
    const Tensor& P = tp.value(probs);
    auto& gp = tp.grad_mut(probs);
    const double scale = G[0] / static_cast<double>(tg.size());
    for (std::size_t t = 0; t < tg.size(); ++t) {
      const double p = P.at(t, tg[t]);
      if (p > kProbabilityFloor) gp.at(t, tg[t]) += -scale / p;
    }
  });
}

class Graph {
 public:
  Graph(Tape& tape, const Model& model, const GateSet& gates, bool trace)
      : tape_(tape), model_(model), cfg_(model.config), trace_(trace) {
    if (!(gates.layout() == cfg_.gate_layout())) {
      throw ConfigurationError("gate set layout does not cover this model's gated heads");
    }
    param_vars_.reserve(model.params.size());
    for (std::size_t i = 0; i < model.params.size(); ++i) param_vars_.push_back(tape.leaf(model.params[i]));
    gate_vars_.reserve(gates.values().size());
    for (double g : gates.values()) gate_vars_.push_back(tape.leaf(Tensor({1}, std::vector<double>{g})));
  }

  const std::vector<Var>& param_vars() const { return param_vars_; }
  const std::vector<Var>& gate_vars() const { return gate_vars_; }
  std::vector<AttentionRecord>& records() { return records_; }

  Var encode(const std::vector<std::size_t>& ids) {
    Var x = embed(ids);
    for (std::size_t l = 0; l < cfg_.enc_layers; ++l) {
      const auto pre = enc_prefix(l);
      const Var h = norm(x, pre + ".ln1");
      auto attn = attention(h, h, pre + ".self", AttentionSite::EncoderSelf, l, false);
      x = tape_.add(x, attn.output);
      x = tape_.add(x, ffn(norm(x, pre + ".ln2"), pre + ".ffn"));
    }
    return norm(x, "enc.lnf");
  }

  Var decode(Var memory, const std::vector<std::size_t>& input_ids, const EncodedSource& src, std::size_t ext_size) {
    Var y = embed(input_ids);
    Var copy_weights;
    for (std::size_t l = 0; l < cfg_.dec_layers; ++l) {
      const auto pre = dec_prefix(l);
      const Var h1 = norm(y, pre + ".ln1");
      y = tape_.add(y, attention(h1, h1, pre + ".self", AttentionSite::DecoderSelf, l, true).output);
      const Var h2 = norm(y, pre + ".ln2");
      auto cross = attention(h2, memory, pre + ".cross", AttentionSite::DecoderCross, l, false);
      if (l + 1 == cfg_.dec_layers) copy_weights = cross.weights[0];
      y = tape_.add(y, cross.output);
      y = tape_.add(y, ffn(norm(y, pre + ".ln3"), pre + ".ffn"));
    }
    const Var h = norm(y, "dec.lnf");
    const Var vocab_probs = tape_.softmax_rows(tape_.add_bias(tape_.matmul(h, param("out.w")), param("out.b")));
    const Var p_gen = tape_.sigmoid(tape_.add_bias(tape_.matmul(h, param("pgen.w")), param("pgen.b")));
    const Var copy_gate = gate_vars_[cfg_.gate_layout().index(cfg_.copy_head())];
    return copy_mixture(tape_, vocab_probs, copy_weights, p_gen, copy_gate, src.extended_ids, ext_size);
  }

 private:
  Var param(const std::string& name) const { return param_vars_[model_.params.index(name)]; }

  Var embed(const std::vector<std::size_t>& ids) {
    const Var e = tape_.gather_rows(param("embed"), ids);
    return tape_.add(e, tape_.constant(positional_encoding(ids.size(), cfg_.model_dim)));
  }

  Var norm(Var x, const std::string& prefix) { return tape_.layer_norm(x, param(prefix + ".g"), param(prefix + ".b")); }

  Var ffn(Var x, const std::string& prefix) {
    const Var hidden = tape_.relu(tape_.add_bias(tape_.matmul(x, param(prefix + ".w1")), param(prefix + ".b1")));
    return tape_.add_bias(tape_.matmul(hidden, param(prefix + ".w2")), param(prefix + ".b2"));
  }

  MultiHeadOut attention(Var xq, Var xkv, const std::string& prefix, AttentionSite site, std::size_t layer,
                         bool causal) {
    BlockVars block{param(prefix + ".wq"), param(prefix + ".wk"), param(prefix + ".wv"), param(prefix + ".wo"),
                    param(prefix + ".bo")};
    const std::size_t heads = cfg_.heads_per_layer;
    std::vector<AttentionKind> kinds(heads);
    for (std::size_t h = 0; h < heads; ++h) kinds[h] = cfg_.kind(site, layer, h);
    std::vector<Var> gates;
    std::optional<Region> region;
    if (site == AttentionSite::EncoderSelf) region = Region::EncoderSelf;
    if (site == AttentionSite::DecoderCross) region = Region::DecoderCross;
    if (region) {
      for (std::size_t h = 0; h < heads; ++h)
        gates.push_back(gate_vars_[cfg_.gate_layout().index({*region, layer, h})]);
    }
    auto out = multi_head_graph(tape_, xq, xkv, block, kinds, gates, causal, cfg_.head_dim);
    if (trace_ && region) {
      for (std::size_t h = 0; h < heads; ++h)
        records_.push_back({{*region, layer, h}, tape_.value(out.weights[h])});
    }
    return out;
  }

  Tape& tape_;
  const Model& model_;
  const ModelConfig& cfg_;
  bool trace_;
  std::vector<Var> param_vars_;
  std::vector<Var> gate_vars_;
  std::vector<AttentionRecord> records_;
};

void check_source(const ModelConfig& cfg, const TaggedDocument& doc) {
  if (doc.tokens.empty()) throw ArgumentError("empty source document");
  if (doc.tokens.size() > cfg.max_src_len) {
    throw ArgumentError("source length " + std::to_string(doc.tokens.size()) + " exceeds max_src_len " +
                        std::to_string(cfg.max_src_len));
  }
}

std::vector<std::size_t> decoder_inputs(const Vocabulary& vocab, const std::vector<std::size_t>& targets) {
  std::vector<std::size_t> inputs;
  inputs.reserve(targets.size());
  inputs.push_back(Vocabulary::kBos);
  for (std::size_t t = 0; t + 1 < targets.size(); ++t) inputs.push_back(input_id(vocab, targets[t]));
  return inputs;
}

std::vector<std::size_t> checked_targets(const Model& model, const EncodedSource& src, const TaggedDocument& doc) {
  auto targets = encode_target(model.vocab, src, doc.summary);
  if (targets.size() > model.config.max_tgt_len) {
    throw ArgumentError("target length " + std::to_string(targets.size()) + " exceeds max_tgt_len " +
                        std::to_string(model.config.max_tgt_len));
  }
  return targets;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public entry points

AttendResult attend(const Tensor& q, const Tensor& k, const Tensor& v, AttentionKind kind) {
  if (q.cols() != k.cols()) throw ArgumentError("attend: query and key widths differ");
  if (k.rows() != v.rows()) throw ArgumentError("attend: key and value counts differ");
  Tape tape(false);
  const Var qv = tape.constant(q), kv = tape.constant(k), vv = tape.constant(v);
  const Var scores = tape.scale(tape.matmul_nt(qv, kv), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  const Var weights = tape.attention(scores, kind);
  const Var context = tape.matmul(weights, vv);
  return {tape.value(context), tape.value(weights)};
}

Tensor multi_head(const Tensor& x_q, const Tensor& x_kv, const AttentionBlock& block,
                  std::span<const AttentionKind> kinds, std::span<const double> gates, bool causal,
                  std::size_t head_dim) {
  if (!gates.empty() && gates.size() != kinds.size()) {
    throw ConfigurationError("multi_head: " + std::to_string(kinds.size()) + " heads but " +
                             std::to_string(gates.size()) + " gates");
  }
  if (kinds.size() * head_dim != block.wq.cols()) throw ArgumentError("multi_head: head count * head_dim != width");
  Tape tape(false);
  BlockVars vars{tape.constant(block.wq), tape.constant(block.wk), tape.constant(block.wv), tape.constant(block.wo),
                 tape.constant(block.bo)};
  std::vector<Var> gate_vars;
  for (double g : gates) gate_vars.push_back(tape.constant(Tensor({1}, std::vector<double>{g})));
  auto out = multi_head_graph(tape, tape.constant(x_q), tape.constant(x_kv), vars, kinds, gate_vars, causal, head_dim);
  return tape.value(out.output);
}

std::vector<double> extended_vocab_dist(std::span<const double> vocab_logits, std::span<const double> copy_attention,
                                        double p_gen, std::span<const std::size_t> source_extended_ids,
                                        std::size_t extended_size) {
  if (!(p_gen >= 0.0 && p_gen <= 1.0)) throw ArgumentError("p_gen must lie in [0, 1]");
  if (copy_attention.size() != source_extended_ids.size()) {
    throw ArgumentError("copy attention length differs from source length");
  }
  if (extended_size < vocab_logits.size()) throw ArgumentError("extended vocabulary smaller than vocabulary");
  const auto vocab = softmax(vocab_logits);
  std::vector<double> out(extended_size, 0.0);
  for (std::size_t w = 0; w < vocab.values.size(); ++w) out[w] = p_gen * vocab.values[w];
  for (std::size_t i = 0; i < source_extended_ids.size(); ++i) {
    if (source_extended_ids[i] >= extended_size) throw ArgumentError("source id outside extended vocabulary");
    out[source_extended_ids[i]] += (1.0 - p_gen) * copy_attention[i];
  }
  return out;
}

double mean_cross_entropy(const Tensor& distributions, std::span<const std::size_t> targets) {
  if (targets.empty()) throw ArgumentError("cross-entropy needs at least one target step");
  if (distributions.rows() != targets.size()) {
    throw ArgumentError("cross-entropy: " + std::to_string(distributions.rows()) + " distributions for " +
                        std::to_string(targets.size()) + " targets");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] >= distributions.cols()) {
      throw DataError("target id " + std::to_string(targets[t]) + " at step " + std::to_string(t) +
                      " outside the extended vocabulary of size " + std::to_string(distributions.cols()));
    }
    total += -std::log(std::max(distributions.at(t, targets[t]), kProbabilityFloor));
  }
  return total / static_cast<double>(targets.size());
}

TeacherForced forward_teacher(const Model& model, const GateSet& gates, const TaggedDocument& doc,
                              ForwardOptions options) {
  check_source(model.config, doc);
  const auto src = encode_source(model.vocab, doc.tokens);
  const auto targets = checked_targets(model, src, doc);
  Tape tape(false);
  Graph graph(tape, model, gates, options.trace);
  const Var memory = graph.encode(src.input_ids);
  const Var probs = graph.decode(memory, decoder_inputs(model.vocab, targets), src, src.extended_size(model.vocab));
  return {tape.value(probs), std::move(graph.records())};
}

Decoded greedy_decode(const Model& model, const GateSet& gates, const TaggedDocument& doc, ForwardOptions options) {
  check_source(model.config, doc);
  const auto src = encode_source(model.vocab, doc.tokens);
  const std::size_t ext_size = src.extended_size(model.vocab);
  Tape tape(false);
  Graph graph(tape, model, gates, options.trace);
  const Var memory = graph.encode(src.input_ids);
  std::vector<AttentionRecord> encoder_records = std::move(graph.records());
  graph.records().clear();

  Decoded out;
  std::vector<std::size_t> inputs{Vocabulary::kBos};
  std::vector<AttentionRecord> last_cross;
  while (true) {
    const Var probs = graph.decode(memory, inputs, src, ext_size);
    last_cross = std::move(graph.records());
    graph.records().clear();
    auto row = tape.value(probs).row(inputs.size() - 1);
    const std::size_t next = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (next == Vocabulary::kEos) break;
    out.ids.push_back(next);
    out.tokens.push_back(decode_token(model.vocab, src, next));
    if (out.ids.size() >= model.config.max_tgt_len) break;
    inputs.push_back(input_id(model.vocab, next));
  }
  out.records = std::move(encoder_records);
  out.records.insert(out.records.end(), std::make_move_iterator(last_cross.begin()),
                     std::make_move_iterator(last_cross.end()));
  return out;
}

ExampleGradient example_gradient(const Model& model, const GateSet& gates, const TaggedDocument& doc) {
  check_source(model.config, doc);
  const auto src = encode_source(model.vocab, doc.tokens);
  const auto targets = checked_targets(model, src, doc);
  Tape tape(true);
  Graph graph(tape, model, gates, false);
  const Var memory = graph.encode(src.input_ids);
  const Var probs = graph.decode(memory, decoder_inputs(model.vocab, targets), src, src.extended_size(model.vocab));
  const Var loss = nll_graph(tape, probs, targets);
  tape.backward(loss);

  ExampleGradient out;
  out.cross_entropy = tape.value(loss)[0];
  out.params.reserve(model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const Tensor& g = tape.grad(graph.param_vars()[i]);
    out.params.push_back(g.empty() ? Tensor(model.params[i].shape(), 0.0) : g);
  }
  out.gates.reserve(graph.gate_vars().size());
  for (Var v : graph.gate_vars()) {
    const Tensor& g = tape.grad(v);
    out.gates.push_back(g.empty() ? 0.0 : g[0]);
  }
  return out;
}

}  // namespace headlamp
