#ifndef PICA_CHECKPOINT_HPP_
#define PICA_CHECKPOINT_HPP_

#include "pica/model.hpp"
#include "pica/model_config.hpp"
#include "pica/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

// PICAW001 container
// ------------------
//   bytes [0, 8)      magic "PICAW001"
//   bytes [8, 16)     header length H, uint64 little-endian
//   bytes [16, 16+H)  UTF-8 JSON header:
//                       {"format_version": 1,
//                        "model_config": {...},
//                        "tensors": [{"name", "shape", "dtype": "f32",
//                                     "offset", "length", "crc32"}, ...]}
//   zero padding up to the next multiple of 64 (start of the data section)
//   tensor payloads, little-endian float32, row-major; each "offset" is
//   relative to the data section and a multiple of 64, gaps zero-filled.
//
// "crc32" is the zlib CRC-32 of the tensor's payload bytes.

namespace pica {

inline constexpr char kCheckpointMagic[] = "PICAW001";
inline constexpr int kCheckpointVersion = 1;
inline constexpr std::size_t kCheckpointAlignment = 64;

struct TensorEntry {
  std::string name;
  std::vector<std::int64_t> shape;
  std::string dtype;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
  std::uint32_t crc32 = 0;
};

struct CheckpointHeader {
  int format_version = kCheckpointVersion;
  ModelConfig model_config;
  std::vector<TensorEntry> tensors;
};

// Names the model requires, in canonical file order.
std::vector<std::string> required_tensor_names(const ModelConfig& config);
std::vector<std::int64_t> expected_tensor_shape(const ModelConfig& config, const std::string& name);

// Parses and structurally checks the header (magic, version, index bounds,
// alignment, overlap, names, shapes). Throws CheckpointError.
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

// Loads every tensor and binds it to a Model. Nothing is returned unless
// the whole file validated.
Model load_checkpoint(const std::filesystem::path& path);

void write_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                      const std::map<std::string, Tensor>& tensors);

// Extracts the named tensors from an in-memory model (inverse of load).
std::map<std::string, Tensor> model_tensors(const Model& model);

struct TensorSummary {
  std::string name;
  std::vector<std::int64_t> shape;
  float min = 0.0f;
  float max = 0.0f;
  double mean = 0.0;
  bool ok = true;
  std::string problem;
};

struct ValidationReport {
  bool passed = false;
  std::string error;  // file-level failure, empty otherwise
  std::vector<TensorSummary> tensors;

  // One line per tensor, then PASS/FAIL.
  std::string format() const;
};

ValidationReport validate_checkpoint(const std::filesystem::path& path);

std::string file_crc32_hex(const std::filesystem::path& path);

}  // namespace pica

#endif  // PICA_CHECKPOINT_HPP_
