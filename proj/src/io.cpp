#include "headlamp/io.hpp"

#include <bit>
#include <fstream>
#include <map>
#include <sstream>

#include "headlamp/corpus.hpp"

namespace headlamp {

namespace {

constexpr char kTensorMagic[4] = {'A', 'T', 'N', 'D'};
constexpr char kCheckpointMagic[4] = {'A', 'T', 'C', 'K'};

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  Reader(std::string_view bytes, std::string_view name) : bytes_(bytes), name_(name) {}

  void need(std::size_t n, std::string_view what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string(name_) + ": truncated " + std::string(what) + ": expected " +
                        std::to_string(n) + " bytes, found " + std::to_string(bytes_.size() - pos_));
    }
  }
  std::uint64_t uint(int width, std::string_view what) {
    need(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  double f64(std::string_view what) { return std::bit_cast<double>(uint(8, what)); }
  std::string_view take(std::size_t n, std::string_view what) {
    need(n, what);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& name() const { return name_; }

 private:
  std::string_view bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

std::string file_name(const HeadAddress& a, std::size_t doc) {
  return "doc" + std::to_string(doc) + "_" + std::string(to_string(a.region)) + "_L" + std::to_string(a.layer) +
         "_H" + std::to_string(a.head) + ".atnd";
}

}  // namespace

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string encode_tensor(const Tensor& tensor) {
  std::string out(kTensorMagic, 4);
  put_u8(out, kTensorFileVersion);
  put_u8(out, kDtypeFloat64);
  put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
  for (auto d : tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : tensor.values()) put_f64(out, v);
  return out;
}

Tensor decode_tensor(std::string_view bytes, std::string_view name) {
  Reader r(bytes, name);
  if (r.take(4, "magic") != std::string_view(kTensorMagic, 4)) throw FormatError(std::string(name) + ": bad magic");
  const auto version = r.uint(1, "version");
  if (version != kTensorFileVersion) {
    throw FormatError(std::string(name) + ": tensor file version " + std::to_string(version) + ", expected " +
                      std::to_string(kTensorFileVersion));
  }
  const auto dtype = r.uint(1, "dtype");
  if (dtype != kDtypeFloat64) throw FormatError(std::string(name) + ": unsupported dtype code " + std::to_string(dtype));
  const auto rank = r.uint(4, "rank");
  if (rank == 0) throw FormatError(std::string(name) + ": rank 0");
  std::vector<std::size_t> shape;
  std::size_t count = 1;
  for (std::uint64_t i = 0; i < rank; ++i) {
    shape.push_back(static_cast<std::size_t>(r.uint(4, "dims")));
    if (shape.back() == 0) throw FormatError(std::string(name) + ": zero extent");
    count *= shape.back();
  }
  if (r.remaining() != 8 * count) {
    throw FormatError(std::string(name) + ": payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                      std::to_string(8 * count));
  }
  std::vector<double> data(count);
  for (auto& v : data) v = r.f64("payload");
  return Tensor(std::move(shape), std::move(data));
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) { write_text(path, encode_tensor(tensor)); }

Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(read_text(path), path.string()); }

nlohmann::json write_trace(const Trace& trace, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t d = 0; d < trace.size(); ++d) {
    for (const auto& record : trace[d]) {
      const auto name = file_name(record.address, d);
      write_tensor(dir / name, record.rows);
      entries.push_back({{"doc", d},
                         {"region", to_string(record.address.region)},
                         {"layer", record.address.layer},
                         {"head", record.address.head},
                         {"file", name},
                         {"shape", record.rows.shape()}});
    }
  }
  nlohmann::json manifest{{"v", kTraceManifestVersion}, {"documents", trace.size()}, {"entries", entries}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

Trace read_trace(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("v", 0) != kTraceManifestVersion) {
    throw FormatError(manifest_path.string() + ": manifest version " + manifest.value("v", nlohmann::json()).dump() +
                      ", expected " + std::to_string(kTraceManifestVersion));
  }
  Trace trace(manifest.at("documents").get<std::size_t>());
  for (const auto& e : manifest.at("entries")) {
    const auto doc = e.at("doc").get<std::size_t>();
    if (doc >= trace.size()) throw FormatError(manifest_path.string() + ": entry for document out of range");
    AttentionRecord record;
    record.address = {region_from_string(e.at("region").get<std::string>()), e.at("layer").get<std::size_t>(),
                      e.at("head").get<std::size_t>()};
    record.rows = read_tensor(dir / e.at("file").get<std::string>());
    if (record.rows.shape() != e.at("shape").get<std::vector<std::size_t>>()) {
      throw FormatError(e.at("file").get<std::string>() + ": shape differs from manifest");
    }
    trace[doc].push_back(std::move(record));
  }
  return trace;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  nlohmann::json header;
  header["v"] = kCheckpointVersion;
  header["config"] = model.config;
  header["vocab"] = model.vocab.words();
  header["train_seed"] = model.train_seed;
  nlohmann::json params = nlohmann::json::array();
  for (std::size_t i = 0; i < model.params.size(); ++i)
    params.push_back({{"name", model.params.name(i)}, {"shape", model.params[i].shape()}});
  header["params"] = params;
  const auto& gates = model.gates;
  nlohmann::json g{{"mode", to_string(gates.mode())}, {"count", gates.values().size()}};
  if (gates.params()) {
    g["hard_concrete"] = {{"beta", gates.params()->beta},
                          {"epsilon", gates.params()->epsilon},
                          {"lambda", gates.params()->lambda}};
  }
  header["gates"] = g;

  const std::string header_text = header.dump();
  std::string out(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, header_text.size());
  out += header_text;
  for (std::size_t i = 0; i < model.params.size(); ++i)
    for (double v : model.params[i].values()) put_f64(out, v);
  for (double v : gates.values()) put_f64(out, v);
  if (gates.params())
    for (double v : gates.params()->log_alpha) put_f64(out, v);
  write_text(path, out);
}

Model load_checkpoint(const std::filesystem::path& path, const LoadOptions& options) {
  const std::string bytes = read_text(path);
  const std::string name = path.string();
  Reader r(bytes, name);
  if (r.take(4, "magic") != std::string_view(kCheckpointMagic, 4)) throw FormatError(name + ": not a checkpoint (bad magic)");
  const auto version = r.uint(4, "version");
  if (version != kCheckpointVersion) {
    throw FormatError(name + ": checkpoint version " + std::to_string(version) + " is not supported (this build reads version " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = r.uint(8, "header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.take(static_cast<std::size_t>(header_len), "header"));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(name + ": bad header: " + e.what());
  }

  Model model;
  try {
    model.config = header.at("config").get<ModelConfig>();
    model.vocab = Vocabulary(header.at("vocab").get<std::vector<std::string>>());
    model.train_seed = header.value("train_seed", std::uint64_t{0});
  } catch (const std::exception& e) {
    throw FormatError(name + ": bad header: " + e.what());
  }
  if (options.expected) {
    auto a = *options.expected, b = model.config;
    a.plan = b.plan;
    a.seed = b.seed;
    a.duplicate_heads = b.duplicate_heads;
    if (!(a == b)) throw FormatError(name + ": stored architecture does not match the expected configuration");
  }
  if (options.plan && *options.plan != model.config.plan) {
    if (!options.allow_plan_override) {
      throw ArgumentError(name + ": checkpoint was trained with plan " + std::string(to_string(model.config.plan)) +
                        "; running it as " + std::string(to_string(*options.plan)) + " needs an explicit override");
    }
    model.config.plan = *options.plan;
  }

  // Parameter shapes must match what the configuration builds.
  const Model reference = Model::initialise(model.config, model.vocab);
  const auto& entries = header.at("params");
  if (entries.size() != reference.params.size()) throw FormatError(name + ": parameter count does not match the configuration");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto pname = entries[i].at("name").get<std::string>();
    const auto shape = entries[i].at("shape").get<std::vector<std::size_t>>();
    if (pname != reference.params.name(i) || shape != reference.params[i].shape()) {
      throw FormatError(name + ": parameter '" + pname + "' does not match the configuration");
    }
    std::vector<double> data(reference.params[i].size());
    for (auto& v : data) v = r.f64("parameter payload");
    model.params.add(pname, Tensor(shape, std::move(data)));
  }

  const auto& g = header.at("gates");
  const auto mode = gate_mode_from_string(g.at("mode").get<std::string>());
  const auto count = g.at("count").get<std::size_t>();
  const auto layout = model.config.gate_layout();
  if (count != layout.count()) throw FormatError(name + ": gate count does not match the configuration");
  std::vector<double> values(count);
  for (auto& v : values) v = r.f64("gate payload");
  std::optional<HardConcreteParams> hc;
  if (g.contains("hard_concrete")) {
    hc = HardConcreteParams{};
    hc->beta = g["hard_concrete"].at("beta").get<double>();
    hc->epsilon = g["hard_concrete"].at("epsilon").get<double>();
    hc->lambda = g["hard_concrete"].at("lambda").get<double>();
    hc->log_alpha.resize(count);
    for (auto& v : hc->log_alpha) v = r.f64("log_alpha payload");
  }
  if (r.remaining() != 0) throw FormatError(name + ": " + std::to_string(r.remaining()) + " trailing bytes");
  switch (mode) {
    case GateMode::Binary: model.gates = GateSet::binary(layout, std::move(values)); break;
    case GateMode::HardConcreteTraining:
      if (!hc) throw FormatError(name + ": trainable gates without Hard-Concrete parameters");
      model.gates = GateSet::hard_concrete(layout, *hc, std::move(values));
      break;
    case GateMode::InferredFixed: model.gates = GateSet::inferred(layout, std::move(values), hc); break;
  }
  return model;
}

}  // namespace headlamp
