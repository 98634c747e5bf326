#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "headlamp/corpus.hpp"
#include "headlamp/evalstats.hpp"
#include "headlamp/io.hpp"
#include "headlamp/metrics.hpp"
#include "headlamp/model.hpp"
#include "headlamp/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace headlamp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

// Reads flags from JSON: top-level keys are global flags, nested objects
// are subcommands, e.g. {"train": {"plan": "dense", "seed": 3}}.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    throw CLI::ConversionError("writing JSON config files is not supported");
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::parse_error& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    collect(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

  static void collect(const json& obj, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : obj.items()) {
      if (value.is_object()) {
        auto nested = parents;
        nested.push_back(key);
        collect(value, nested, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      out.push_back(std::move(item));
    }
  }
};

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path ensure_dir(const fs::path& dir) {
  fs::create_directories(dir);
  return dir;
}

// Deterministic subset of `docs` of size `n` (all documents when n is 0 or
// exceeds the corpus), kept in corpus order.
std::vector<TaggedDocument> sample_docs(const std::vector<TaggedDocument>& docs, std::size_t n, std::uint64_t seed) {
  if (n == 0 || n >= docs.size()) return docs;
  std::vector<std::size_t> idx(docs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  std::vector<TaggedDocument> out;
  out.reserve(n);
  for (auto i : idx) out.push_back(docs[i]);
  return out;
}

Trace trace_model(const Model& model, const std::vector<TaggedDocument>& docs) {
  const GateSet gates = model.inference_gates();
  Trace trace(docs.size());
  for (std::size_t d = 0; d < docs.size(); ++d) trace[d] = greedy_decode(model, gates, docs[d], {.trace = true}).records;
  return trace;
}

std::vector<std::string> corpus_tags(const std::vector<TaggedDocument>& docs) {
  std::vector<std::string> tags = default_pos_tags();
  for (const auto& doc : docs)
    for (const auto& t : doc.pos)
      if (std::find(tags.begin(), tags.end(), t) == tags.end()) tags.push_back(t);
  return tags;
}

json metrics_json(const TaskMetrics& m) {
  return {{"token_accuracy", m.token_accuracy},
          {"rouge1", m.rouge.r1_f1},
          {"rouge2", m.rouge.r2_f1},
          {"rougeL", m.rouge.rl_f1}};
}

struct PlanOption {
  std::string plan;
  bool allow_override = false;

  LoadOptions load_options() const {
    LoadOptions o;
    if (!plan.empty()) o.plan = plan_from_string(plan);
    o.allow_plan_override = allow_override;
    return o;
  }
};

void add_plan_override(CLI::App* cmd, PlanOption& opt) {
  cmd->add_option("--plan", opt.plan, "Run the checkpoint under another activation plan (needs --allow-plan-override)");
  cmd->add_flag("--allow-plan-override", opt.allow_override, "Permit --plan to differ from the trained plan");
}

// gen ----------------------------------------------------------------------

struct GenArgs {
  std::string spec;
  std::string out;
  std::vector<std::string> set;
};

int run_gen(const GenArgs& a) {
  json j = json::object();
  if (!a.spec.empty()) {
    try {
      j = json::parse(read_text(a.spec));
    } catch (const json::parse_error& e) {
      throw SpecError(a.spec + ": " + e.what());
    }
  }
  for (const auto& kv : a.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw SpecError("--set expects key=value, got '" + kv + "'");
    const auto key = kv.substr(0, eq), value = kv.substr(eq + 1);
    j[key] = json::accept(value) ? json::parse(value) : json(value);
  }
  CorpusSpec spec;
  try {
    spec = j.get<CorpusSpec>();
  } catch (const json::exception& e) {
    throw SpecError(std::string("corpus spec: ") + e.what());
  }
  spec.validate();
  const auto docs = generate(spec);
  write_tagged(a.out, docs);
  std::cout << "wrote " << docs.size() << " documents to " << a.out << "\n";
  return kExitOk;
}

// train --------------------------------------------------------------------

struct TrainArgs {
  std::string corpus, out, plan = "dense", init_ckpt, loss_csv, optimizer = "sgd";
  double lambda = 0.0, lr = TrainConfig{}.learning_rate, grad_clip = TrainConfig{}.grad_clip;
  std::uint64_t seed = 0;
  std::size_t steps = TrainConfig{}.max_steps, batch = TrainConfig{}.batch_size;
  bool gates = false, no_decay = false, duplicate_heads = false;
  ModelConfig model;
  std::size_t max_vocab = 1000, min_count = 2;
};

int run_train(TrainArgs a) {
  const auto docs = load_tagged(a.corpus);
  TrainConfig tc;
  tc.lambda = a.lambda;
  tc.learning_rate = a.lr;
  tc.batch_size = a.batch;
  tc.max_steps = a.steps;
  tc.seed = a.seed;
  tc.grad_clip = a.grad_clip;
  tc.optimizer = optimizer_from_string(a.optimizer);
  tc.linear_decay = !a.no_decay;
  tc.prune = a.gates || a.lambda > 0.0;
  tc.validate();

  Model model;
  if (!a.init_ckpt.empty()) {
    model = load_checkpoint(a.init_ckpt);
  } else {
    auto vocab = Vocabulary::build(docs, a.max_vocab, a.min_count);
    ModelConfig mc = a.model;
    mc.vocab_size = vocab.size();
    mc.plan = plan_from_string(a.plan);
    mc.seed = a.seed;
    mc.duplicate_heads = a.duplicate_heads;
    std::size_t longest_src = 0, longest_tgt = 0;
    for (const auto& d : docs) {
      longest_src = std::max(longest_src, d.tokens.size());
      longest_tgt = std::max(longest_tgt, d.summary.size() + 1);
    }
    mc.max_src_len = std::max(mc.max_src_len, longest_src);
    mc.max_tgt_len = std::max(mc.max_tgt_len, longest_tgt);
    model = Model::initialise(mc, std::move(vocab));
  }
  model.train_seed = a.seed;

  auto result = train(std::move(model), docs, tc);
  save_checkpoint(result.model, a.out);
  const std::string loss_path = a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv;
  write_text(loss_path, loss_curve_csv(result.curve));
  const auto& last = result.curve.empty() ? LossPoint{} : result.curve.back();
  std::cout << "plan " << to_string(result.model.config.plan) << ", " << result.curve.size()
            << " steps, final cross-entropy " << last.cross_entropy << "\n";
  if (tc.prune) {
    const auto pruned = count_pruned(result.model.inference_gates());
    std::cout << "pruned heads (enc/dec): " << pruned.encoder << "/" << pruned.decoder << "\n";
  }
  std::cout << "wrote " << a.out << " and " << loss_path << "\n";
  return kExitOk;
}

// analyze ------------------------------------------------------------------

struct AnalyzeArgs {
  std::string ckpt, corpus, out, compare_ckpt;
  std::size_t sample = 0;
  std::uint64_t seed = 1;
  bool no_trace = false;
  PlanOption plan;
};

int run_analyze(const AnalyzeArgs& a) {
  const auto model = load_checkpoint(a.ckpt, a.plan.load_options());
  const auto docs = sample_docs(load_tagged(a.corpus), a.sample, a.seed);
  const auto dir = ensure_dir(a.out);
  const auto tags = corpus_tags(docs);

  const auto trace = trace_model(model, docs);
  const auto reports = analyze_heads(trace, docs, tags);
  write_text(dir / "heads.csv", head_report_csv(reports));
  write_json(dir / "heads.json", head_report_json(reports));
  if (!a.no_trace) write_trace(trace, dir / "trace");

  json sparsity;
  for (Region r : {Region::EncoderSelf, Region::DecoderCross}) {
    const auto s = zero_entries(trace, r);
    sparsity[std::string(to_string(r))] = {{"zeros", s.zeros}, {"total", s.total}, {"fraction", s.fraction()}};
  }
  write_json(dir / "sparsity.json", {{"v", 1}, {"plan", to_string(model.config.plan)}, {"regions", sparsity}});

  if (!a.compare_ckpt.empty()) {
    const auto other = load_checkpoint(a.compare_ckpt, a.plan.load_options());
    const auto other_reports = analyze_heads(trace_model(other, docs), docs, tags);
    write_json(dir / "comparison.json", comparison_json(compare_seeds(reports, other_reports)));
  }
  std::cout << "analyzed " << reports.size() << " heads over " << docs.size() << " documents; wrote " << dir << "\n";
  return kExitOk;
}

// ablate -------------------------------------------------------------------

struct AblateArgs {
  std::string ckpt, corpus, out;
  double alpha = 0.05;
  std::size_t sample = 0;
  std::uint64_t seed = 1;
  PlanOption plan;
};

int run_ablate(const AblateArgs& a) {
  if (!(a.alpha > 0.0 && a.alpha < 1.0)) throw ArgumentError("--alpha must lie in (0, 1)");
  const auto model = load_checkpoint(a.ckpt, a.plan.load_options());
  const auto docs = sample_docs(load_tagged(a.corpus), a.sample, a.seed);
  const auto results = ablate_heads(model, docs, model.config.gate_layout().all(), a.alpha);
  write_text(a.out, ablation_csv(results));
  const auto n_sig = std::count_if(results.begin(), results.end(), [](const auto& r) { return r.significant; });
  std::cout << "ablated " << results.size() << " heads on " << docs.size() << " documents; " << n_sig
            << " significant at alpha " << a.alpha << "; wrote " << a.out << "\n";
  return kExitOk;
}

// prune --------------------------------------------------------------------

struct PruneArgs {
  std::string ckpt, corpus, eval_corpus, out;
  std::vector<double> lambdas;
  std::size_t steps = 200, batch = TrainConfig{}.batch_size, sample = 100;
  double lr = TrainConfig{}.learning_rate;
  std::uint64_t seed = 1;
  double positional_threshold = 0.8;
};

int run_prune(const PruneArgs& a) {
  const auto base = load_checkpoint(a.ckpt);
  const auto train_docs = load_tagged(a.corpus);
  const auto eval_docs = a.eval_corpus.empty() ? train_docs : load_tagged(a.eval_corpus);
  const auto report_docs = sample_docs(eval_docs, a.sample, a.seed);
  const auto tags = corpus_tags(report_docs);
  const auto dir = ensure_dir(a.out);

  TrainConfig tc;
  tc.max_steps = a.steps;
  tc.batch_size = a.batch;
  tc.learning_rate = a.lr;
  tc.seed = a.seed;
  const auto points = lambda_sweep(base, train_docs, eval_docs, a.lambdas, tc);

  // Heads of the unpruned model that behave positionally.
  const auto base_reports = analyze_heads(trace_model(base, report_docs), report_docs, tags);
  std::vector<HeadAddress> positional;
  for (const auto& r : base_reports)
    if (r.rel_location.headline >= a.positional_threshold) positional.push_back(r.head);

  std::ostringstream sweep_csv, retained_csv;
  sweep_csv.precision(17);
  retained_csv.precision(17);
  sweep_csv << "lambda,pruned_encoder,pruned_decoder,pruned_total,token_accuracy,rouge1,rouge2,rougeL\n";
  retained_csv << "lambda,region,layer,head,metric,value\n";
  json items = json::array();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    sweep_csv << p.lambda << ',' << p.pruned.encoder << ',' << p.pruned.decoder << ',' << p.pruned.total() << ','
              << p.metrics.token_accuracy << ',' << p.metrics.rouge.r1_f1 << ',' << p.metrics.rouge.r2_f1 << ','
              << p.metrics.rouge.rl_f1 << '\n';
    const auto ckpt_name = "lambda_" + std::to_string(i) + ".ckpt";
    save_checkpoint(p.model, dir / ckpt_name);
    write_text(dir / ("lambda_" + std::to_string(i) + ".loss.csv"), loss_curve_csv(p.curve));

    const auto gates = p.model.inference_gates();
    const auto reports = analyze_heads(trace_model(p.model, report_docs), report_docs, tags);
    std::size_t positional_kept = 0;
    for (const auto& r : reports) {
      if (gates.value(r.head) == 0.0) continue;
      std::ostringstream prefix_stream;
      prefix_stream.precision(17);
      prefix_stream << p.lambda << ',' << to_string(r.head.region) << ',' << r.head.layer << ',' << r.head.head << ',';
      const std::string prefix = prefix_stream.str();
      retained_csv << prefix << "rel_location," << r.rel_location.headline << '\n'
                   << prefix << "confidence," << r.confidence << '\n'
                   << prefix << "pos_kl," << r.pos_kl << '\n'
                   << prefix << "ne_ratio," << r.ne_ratio << '\n';
      positional_kept += std::find(positional.begin(), positional.end(), r.head) != positional.end();
    }
    items.push_back({{"lambda", p.lambda},
                     {"pruned", {{"encoder", p.pruned.encoder}, {"decoder", p.pruned.decoder}}},
                     {"metrics", metrics_json(p.metrics)},
                     {"positional_heads_retained", positional_kept},
                     {"checkpoint", ckpt_name}});
  }
  write_text(dir / "sweep.csv", sweep_csv.str());
  write_text(dir / "retained_heads.csv", retained_csv.str());
  write_json(dir / "sweep.json", {{"v", 1},
                                  {"plan", to_string(base.config.plan)},
                                  {"positional_threshold", a.positional_threshold},
                                  {"positional_heads_before", positional.size()},
                                  {"points", items}});
  for (const auto& p : points)
    std::cout << "lambda " << p.lambda << ": pruned " << p.pruned.encoder << "/" << p.pruned.decoder
              << ", rouge1 " << p.metrics.rouge.r1_f1 << "\n";
  std::cout << "wrote " << dir << "\n";
  return kExitOk;
}

// rouge --------------------------------------------------------------------

std::vector<Tokens> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open " + path);
  std::vector<Tokens> out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream words(line);
    Tokens t;
    for (std::string w; words >> w;) t.push_back(w);
    out.push_back(std::move(t));
  }
  return out;
}

int run_rouge(const std::string& cand_path, const std::string& ref_path) {
  const auto cand = read_lines(cand_path), ref = read_lines(ref_path);
  if (cand.size() != ref.size()) {
    throw ArgumentError("candidate file has " + std::to_string(cand.size()) + " lines but reference file has " +
                        std::to_string(ref.size()));
  }
  json per = json::array();
  RougeScores mean;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    const auto s = rouge(cand[i], ref[i]);
    per.push_back({{"rouge1", s.r1_f1}, {"rouge2", s.r2_f1}, {"rougeL", s.rl_f1}});
    mean.r1_f1 += s.r1_f1;
    mean.r2_f1 += s.r2_f1;
    mean.rl_f1 += s.rl_f1;
  }
  const double n = cand.empty() ? 1.0 : static_cast<double>(cand.size());
  json out{{"v", 1},
           {"count", cand.size()},
           {"mean", {{"rouge1", mean.r1_f1 / n}, {"rouge2", mean.r2_f1 / n}, {"rougeL", mean.rl_f1 / n}}},
           {"per_line", per}};
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-head analysis, ablation and pruning on toy summarization corpora"};
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file supplying any flag; subcommand flags go under the subcommand name");
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic tagged corpus (JSONL)");
  gen_cmd->add_option("--spec", gen.spec, "Corpus spec JSON")->check(CLI::ExistingFile);
  gen_cmd->add_option("--set", gen.set, "Override a spec field, key=value (repeatable)");
  gen_cmd->add_option("--out", gen.out, "Output JSONL path")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint plus loss CSV");
  train_cmd->add_option("--corpus", tr.corpus, "Training corpus (JSONL)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--plan", tr.plan, "dense | sparse-enc | sparse-tl | sparse-ch | sparse-all");
  train_cmd->add_option("--lambda", tr.lambda, "L0 penalty weight; > 0 trains Hard-Concrete head gates");
  train_cmd->add_option("--seed", tr.seed, "Seed for initialisation, batching and gate sampling")->required();
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--steps", tr.steps, "Gradient steps");
  train_cmd->add_option("--lr", tr.lr, "Learning rate");
  train_cmd->add_option("--batch", tr.batch, "Batch size");
  train_cmd->add_option("--grad-clip", tr.grad_clip, "Global gradient-norm clip");
  train_cmd->add_option("--optimizer", tr.optimizer, "sgd | adam");
  train_cmd->add_flag("--no-decay", tr.no_decay, "Keep the learning rate constant");
  train_cmd->add_flag("--gates", tr.gates, "Train head gates even when --lambda is 0");
  train_cmd->add_option("--init-ckpt", tr.init_ckpt, "Continue from a checkpoint")->check(CLI::ExistingFile);
  train_cmd->add_option("--loss-csv", tr.loss_csv, "Loss curve path (default: <out>.loss.csv)");
  train_cmd->add_option("--enc-layers", tr.model.enc_layers);
  train_cmd->add_option("--dec-layers", tr.model.dec_layers);
  train_cmd->add_option("--heads", tr.model.heads_per_layer);
  train_cmd->add_option("--model-dim", tr.model.model_dim, "Must equal heads * head-dim");
  train_cmd->add_option("--head-dim", tr.model.head_dim);
  train_cmd->add_option("--ffn-dim", tr.model.ffn_dim);
  train_cmd->add_option("--max-vocab", tr.max_vocab, "Vocabulary size cap");
  train_cmd->add_option("--min-count", tr.min_count, "Minimum token frequency for the vocabulary");
  train_cmd->add_flag("--duplicate-heads", tr.duplicate_heads, "Initialise all heads of a block identically");

  AnalyzeArgs an;
  auto* analyze_cmd = app.add_subcommand("analyze", "Trace attention and compute per-head metrics");
  analyze_cmd->add_option("--ckpt", an.ckpt)->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("--corpus", an.corpus)->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("--out", an.out, "Output directory")->required();
  analyze_cmd->add_option("--sample", an.sample, "Random subset size (0 = all documents)");
  analyze_cmd->add_option("--seed", an.seed, "Seed for --sample");
  analyze_cmd->add_option("--compare-ckpt", an.compare_ckpt, "Second checkpoint for a seed comparison")
      ->check(CLI::ExistingFile);
  analyze_cmd->add_flag("--no-trace", an.no_trace, "Skip writing raw attention tensors");
  add_plan_override(analyze_cmd, an.plan);

  AblateArgs ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Zero each head in turn and test the ROUGE-1 change");
  ablate_cmd->add_option("--ckpt", ab.ckpt)->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--corpus", ab.corpus)->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--alpha", ab.alpha, "Significance level");
  ablate_cmd->add_option("--out", ab.out, "Output CSV")->required();
  ablate_cmd->add_option("--sample", ab.sample, "Random subset size (0 = all documents)");
  ablate_cmd->add_option("--seed", ab.seed, "Seed for --sample");
  add_plan_override(ablate_cmd, ab.plan);

  PruneArgs pr;
  auto* prune_cmd = app.add_subcommand("prune", "Fine-tune with L0 head gates for each lambda");
  prune_cmd->add_option("--ckpt", pr.ckpt)->required()->check(CLI::ExistingFile);
  prune_cmd->add_option("--corpus", pr.corpus, "Fine-tuning corpus")->required()->check(CLI::ExistingFile);
  prune_cmd->add_option("--eval-corpus", pr.eval_corpus, "Evaluation corpus (default: --corpus)")
      ->check(CLI::ExistingFile);
  prune_cmd->add_option("--lambda", pr.lambdas, "Lambda values")->required()->expected(1, -1);
  prune_cmd->add_option("--out", pr.out, "Output directory")->required();
  prune_cmd->add_option("--steps", pr.steps, "Fine-tuning steps per lambda");
  prune_cmd->add_option("--lr", pr.lr);
  prune_cmd->add_option("--batch", pr.batch);
  prune_cmd->add_option("--seed", pr.seed, "Seed for batching, gate sampling and --sample");
  prune_cmd->add_option("--sample", pr.sample, "Documents used for the retained-head report (0 = all)");
  prune_cmd->add_option("--positional-threshold", pr.positional_threshold);

  std::string cand, ref;
  auto* rouge_cmd = app.add_subcommand("rouge", "ROUGE-1/2/L F1 of line-aligned candidate and reference files");
  rouge_cmd->add_option("--cand", cand)->required()->check(CLI::ExistingFile);
  rouge_cmd->add_option("--ref", ref)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return run_gen(gen);
    if (*train_cmd) return run_train(tr);
    if (*analyze_cmd) return run_analyze(an);
    if (*ablate_cmd) return run_ablate(ab);
    if (*prune_cmd) return run_prune(pr);
    if (*rouge_cmd) return run_rouge(cand, ref);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigurationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
