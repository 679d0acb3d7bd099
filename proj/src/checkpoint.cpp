#include "pica/checkpoint.hpp"

#include "pica/errors.hpp"

#include <json.hpp>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

namespace pica {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using Kind = CheckpointError::Kind;
using nlohmann::json;

namespace {

constexpr std::size_t kPreamble = 16;

std::size_t align_up(std::size_t n) { return (n + kCheckpointAlignment - 1) / kCheckpointAlignment * kCheckpointAlignment; }

std::string shape_string(const std::vector<std::int64_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

std::uint32_t crc_of(const void* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), static_cast<const Bytef*>(data),
                                            static_cast<uInt>(n)));
}

std::vector<char> read_bytes(const std::filesystem::path& path, std::size_t limit) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::kParse, "cannot open checkpoint " + path.string());
  std::vector<char> buf(limit);
  in.read(buf.data(), static_cast<std::streamsize>(limit));
  buf.resize(static_cast<std::size_t>(in.gcount()));
  return buf;
}

struct Parsed {
  CheckpointHeader header;
  std::size_t data_start = 0;
  std::uintmax_t file_size = 0;
};

Parsed parse_header(const std::filesystem::path& path) {
  std::error_code ec;
  const std::uintmax_t file_size = std::filesystem::file_size(path, ec);
  if (ec) throw CheckpointError(Kind::kParse, "cannot stat checkpoint " + path.string() + ": " + ec.message());
  if (file_size < kPreamble) {
    throw CheckpointError(Kind::kParse, "checkpoint " + path.string() + " is too short to hold a header (" +
                                            std::to_string(file_size) + " bytes)");
  }
  const std::vector<char> pre = read_bytes(path, kPreamble);
  if (std::memcmp(pre.data(), kCheckpointMagic, 8) != 0) {
    throw CheckpointError(Kind::kParse, "bad magic: not a PICAW001 checkpoint");
  }
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, pre.data() + 8, 8);
  if (header_len > file_size - kPreamble) {
    throw CheckpointError(Kind::kTruncated, "header declares " + std::to_string(header_len) +
                                                " bytes but the file ends first");
  }
  const std::vector<char> raw = read_bytes(path, kPreamble + header_len);
  json doc;
  try {
    doc = json::parse(raw.begin() + kPreamble, raw.end());
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::kParse, std::string("header is not valid JSON: ") + e.what());
  }

  Parsed out;
  out.file_size = file_size;
  out.data_start = align_up(kPreamble + header_len);
  CheckpointHeader& h = out.header;
  try {
    h.format_version = doc.at("format_version").get<int>();
    if (h.format_version != kCheckpointVersion) {
      throw CheckpointError(Kind::kUnknownVersion, "unknown format_version " + std::to_string(h.format_version));
    }
    h.model_config = doc.at("model_config").get<ModelConfig>();
    for (const auto& t : doc.at("tensors")) {
      TensorEntry e;
      t.at("name").get_to(e.name);
      t.at("shape").get_to(e.shape);
      t.at("dtype").get_to(e.dtype);
      t.at("offset").get_to(e.offset);
      t.at("length").get_to(e.length);
      t.at("crc32").get_to(e.crc32);
      h.tensors.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::kParse, std::string("malformed header: ") + e.what());
  }
  try {
    h.model_config.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::kParse, std::string("invalid model_config: ") + e.what());
  }

  const auto required = required_tensor_names(h.model_config);
  const std::set<std::string> known(required.begin(), required.end());
  std::set<std::string> seen;
  for (const TensorEntry& e : h.tensors) {
    if (!known.contains(e.name)) throw CheckpointError(Kind::kParse, "unexpected tensor " + e.name);
    if (!seen.insert(e.name).second) throw CheckpointError(Kind::kParse, "tensor " + e.name + " listed twice");
    if (e.dtype != "f32") throw CheckpointError(Kind::kParse, "tensor " + e.name + " has unsupported dtype " + e.dtype);
    const auto expected = expected_tensor_shape(h.model_config, e.name);
    if (e.shape != expected) {
      throw CheckpointError(Kind::kShapeMismatch, "tensor " + e.name + " has shape " + shape_string(e.shape) +
                                                      ", model_config requires " + shape_string(expected));
    }
    if (e.length != static_cast<std::uint64_t>(Tensor::count(e.shape)) * sizeof(float)) {
      throw CheckpointError(Kind::kShapeMismatch, "tensor " + e.name + " byte length " + std::to_string(e.length) +
                                                      " disagrees with shape " + shape_string(e.shape));
    }
    if (e.offset % kCheckpointAlignment != 0) {
      throw CheckpointError(Kind::kParse, "tensor " + e.name + " offset is not 64-byte aligned");
    }
  }
  for (const auto& name : required) {
    if (!seen.contains(name)) throw CheckpointError(Kind::kMissingTensor, "missing tensor " + name);
  }

  std::vector<const TensorEntry*> by_offset;
  for (const auto& e : h.tensors) by_offset.push_back(&e);
  std::sort(by_offset.begin(), by_offset.end(), [](auto* a, auto* b) { return a->offset < b->offset; });
  for (std::size_t i = 1; i < by_offset.size(); ++i) {
    if (by_offset[i - 1]->offset + by_offset[i - 1]->length > by_offset[i]->offset) {
      throw CheckpointError(Kind::kParse, "tensors " + by_offset[i - 1]->name + " and " + by_offset[i]->name + " overlap");
    }
  }
  for (const TensorEntry* e : by_offset) {
    if (out.data_start + e->offset + e->length > file_size) {
      throw CheckpointError(Kind::kTruncated, "file truncated inside tensor " + e->name);
    }
  }
  return out;
}

Tensor read_tensor(std::ifstream& in, std::size_t data_start, const TensorEntry& e) {
  std::vector<float> data(e.length / sizeof(float));
  in.seekg(static_cast<std::streamoff>(data_start + e.offset));
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(e.length));
  if (static_cast<std::uint64_t>(in.gcount()) != e.length) {
    throw CheckpointError(Kind::kTruncated, "file truncated inside tensor " + e.name);
  }
  if (crc_of(data.data(), e.length) != e.crc32) {
    throw CheckpointError(Kind::kChecksumMismatch, "checksum mismatch in tensor " + e.name);
  }
  return Tensor(e.shape, std::move(data));
}

RowMatrixXf to_matrix(const Tensor& t) { return t.matrix(); }
Eigen::VectorXf to_vector(const Tensor& t) { return t.vector(); }

Tensor from_matrix(const RowMatrixXf& m) {
  return Tensor({m.rows(), m.cols()}, std::vector<float>(m.data(), m.data() + m.size()));
}
Tensor from_vector(const Eigen::VectorXf& v) {
  return Tensor({v.size()}, std::vector<float>(v.data(), v.data() + v.size()));
}

}  // namespace

std::vector<std::string> required_tensor_names(const ModelConfig& config) {
  std::vector<std::string> names = {"tok_embeddings"};
  for (int i = 0; i < config.num_layers; ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    for (const char* leaf : {"attn_norm", "wq", "wk", "wv", "wo", "ffn_norm", "w1", "w3", "w2"}) names.push_back(p + leaf);
  }
  names.emplace_back("norm");
  names.emplace_back("output");
  return names;
}

std::vector<std::int64_t> expected_tensor_shape(const ModelConfig& c, const std::string& name) {
  const std::string leaf = name.substr(name.rfind('.') == std::string::npos ? 0 : name.rfind('.') + 1);
  const std::int64_t h = c.hidden_dim;
  const std::int64_t q = static_cast<std::int64_t>(c.num_heads) * c.head_dim;
  if (leaf == "tok_embeddings" || leaf == "output") return {c.vocab_size, h};
  if (leaf == "attn_norm" || leaf == "ffn_norm" || leaf == "norm") return {h};
  if (leaf == "wq") return {q, h};
  if (leaf == "wk" || leaf == "wv") return {c.kv_dim(), h};
  if (leaf == "wo") return {h, q};
  if (leaf == "w1" || leaf == "w3") return {c.mlp_hidden_dim, h};
  if (leaf == "w2") return {h, c.mlp_hidden_dim};
  throw CheckpointError(Kind::kParse, "unknown tensor name " + name);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) { return parse_header(path).header; }

Model load_checkpoint(const std::filesystem::path& path) {
  const Parsed parsed = parse_header(path);
  std::ifstream in(path, std::ios::binary);
  std::map<std::string, Tensor> tensors;
  for (const TensorEntry& e : parsed.header.tensors) {
    Tensor t = read_tensor(in, parsed.data_start, e);
    if (!t.all_finite()) throw CheckpointError(Kind::kNonFinite, "tensor " + e.name + " contains NaN or Inf");
    tensors.emplace(e.name, std::move(t));
  }

  const ModelConfig& cfg = parsed.header.model_config;
  ModelWeights w;
  w.tok_embeddings = to_matrix(tensors.at("tok_embeddings"));
  w.norm = to_vector(tensors.at("norm"));
  w.output = to_matrix(tensors.at("output"));
  for (int i = 0; i < cfg.num_layers; ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    LayerWeights l;
    l.attn_norm = to_vector(tensors.at(p + "attn_norm"));
    l.wq = to_matrix(tensors.at(p + "wq"));
    l.wk = to_matrix(tensors.at(p + "wk"));
    l.wv = to_matrix(tensors.at(p + "wv"));
    l.wo = to_matrix(tensors.at(p + "wo"));
    l.ffn_norm = to_vector(tensors.at(p + "ffn_norm"));
    l.w1 = to_matrix(tensors.at(p + "w1"));
    l.w3 = to_matrix(tensors.at(p + "w3"));
    l.w2 = to_matrix(tensors.at(p + "w2"));
    w.layers.push_back(std::move(l));
  }
  return Model(cfg, std::move(w), file_crc32_hex(path));
}

std::map<std::string, Tensor> model_tensors(const Model& model) {
  const ModelWeights& w = model.weights();
  std::map<std::string, Tensor> out;
  out.emplace("tok_embeddings", from_matrix(w.tok_embeddings));
  out.emplace("norm", from_vector(w.norm));
  out.emplace("output", from_matrix(w.output));
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    const LayerWeights& l = w.layers[i];
    out.emplace(p + "attn_norm", from_vector(l.attn_norm));
    out.emplace(p + "wq", from_matrix(l.wq));
    out.emplace(p + "wk", from_matrix(l.wk));
    out.emplace(p + "wv", from_matrix(l.wv));
    out.emplace(p + "wo", from_matrix(l.wo));
    out.emplace(p + "ffn_norm", from_vector(l.ffn_norm));
    out.emplace(p + "w1", from_matrix(l.w1));
    out.emplace(p + "w3", from_matrix(l.w3));
    out.emplace(p + "w2", from_matrix(l.w2));
  }
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                      const std::map<std::string, Tensor>& tensors) {
  json index = json::array();
  std::vector<const Tensor*> order;
  std::uint64_t offset = 0;
  for (const auto& name : required_tensor_names(config)) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError(Kind::kMissingTensor, "missing tensor " + name);
    const Tensor& t = it->second;
    const std::uint64_t length = t.size() * sizeof(float);
    index.push_back({{"name", name},
                     {"shape", t.shape()},
                     {"dtype", "f32"},
                     {"offset", offset},
                     {"length", length},
                     {"crc32", crc_of(t.data().data(), length)}});
    order.push_back(&t);
    offset = align_up(offset + length);
  }
  const std::string header =
      json{{"format_version", kCheckpointVersion}, {"model_config", config}, {"tensors", index}}.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(Kind::kParse, "cannot write " + path.string());
  const std::uint64_t header_len = header.size();
  out.write(kCheckpointMagic, 8);
  out.write(reinterpret_cast<const char*>(&header_len), 8);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  const std::string zeros(kCheckpointAlignment, '\0');
  std::size_t pos = kPreamble + header.size();
  auto pad_to = [&](std::size_t target) {
    out.write(zeros.data(), static_cast<std::streamsize>(target - pos));
    pos = target;
  };
  pad_to(align_up(pos));
  const std::size_t data_start = pos;
  for (std::size_t i = 0; i < order.size(); ++i) {
    pad_to(data_start + index[i]["offset"].get<std::size_t>());
    const auto bytes = order[i]->data();
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size_bytes()));
    pos += bytes.size_bytes();
  }
}

std::string ValidationReport::format() const {
  std::ostringstream os;
  for (const auto& t : tensors) {
    os << (t.ok ? "ok   " : "FAIL ") << t.name << ' ' << shape_string(t.shape);
    if (t.ok) {
      os << std::setprecision(6) << " min=" << t.min << " max=" << t.max << " mean=" << t.mean;
    } else {
      os << ' ' << t.problem;
    }
    os << '\n';
  }
  if (!error.empty()) os << "error: " << error << '\n';
  os << (passed ? "PASS" : "FAIL") << '\n';
  return os.str();
}

ValidationReport validate_checkpoint(const std::filesystem::path& path) {
  ValidationReport report;
  Parsed parsed;
  try {
    parsed = parse_header(path);
  } catch (const CheckpointError& e) {
    report.error = e.what();
    return report;
  }
  std::ifstream in(path, std::ios::binary);
  report.passed = true;
  for (const TensorEntry& e : parsed.header.tensors) {
    TensorSummary s;
    s.name = e.name;
    s.shape = e.shape;
    try {
      const Tensor t = read_tensor(in, parsed.data_start, e);
      const auto v = t.vector();
      if (!t.all_finite()) {
        s.ok = false;
        s.problem = "contains NaN or Inf";
      } else if (v.size() > 0) {
        s.min = v.minCoeff();
        s.max = v.maxCoeff();
        s.mean = v.cast<double>().mean();
      }
    } catch (const CheckpointError& err) {
      s.ok = false;
      s.problem = err.what();
    }
    report.passed = report.passed && s.ok;
    report.tensors.push_back(std::move(s));
  }
  return report;
}

std::string file_crc32_hex(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::kParse, "cannot open " + path.string());
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(in.gcount()));
  }
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << crc;
  return os.str();
}

}  // namespace pica
