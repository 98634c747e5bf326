#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "headlamp/model.hpp"

namespace headlamp {

// TensorFile, little-endian:
//   "ATND" | version u8 = 1 | dtype u8 = 1 (f64) | rank u32 | dims u32 x rank | payload f64 x prod(dims)
inline constexpr std::uint8_t kTensorFileVersion = 1;
inline constexpr std::uint8_t kDtypeFloat64 = 1;

std::string encode_tensor(const Tensor& tensor);
/// `name` identifies the source in error messages.
Tensor decode_tensor(std::string_view bytes, std::string_view name = "tensor");
void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor(const std::filesystem::path& path);

/// traces[d] holds the records of document d.
using Trace = std::vector<std::vector<AttentionRecord>>;

inline constexpr int kTraceManifestVersion = 1;

/// One TensorFile per (document, region, layer, head) plus manifest.json
/// mapping addresses to files and shapes. Returns the manifest.
nlohmann::json write_trace(const Trace& trace, const std::filesystem::path& dir);
Trace read_trace(const std::filesystem::path& dir);

// Checkpoint, little-endian:
//   "ATCK" | version u32 | header length u64 | JSON header | f64 payload
// The header holds config, vocabulary, parameter names/shapes, gate mode and
// Hard-Concrete settings; the payload holds parameters, gate values and
// log_alpha in that order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path);

struct LoadOptions {
  /// Run the stored parameters under a different activation plan. Refused
  /// with ArgumentError unless allow_plan_override is set.
  std::optional<ActivationPlan> plan;
  bool allow_plan_override = false;
  /// Architecture the caller expects; any mismatch is refused.
  std::optional<ModelConfig> expected;
};

Model load_checkpoint(const std::filesystem::path& path, const LoadOptions& options = {});

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace headlamp
