#include "pica/dataset.hpp"

#include "pica/errors.hpp"

#include <json.hpp>

#include <fstream>

namespace pica {

namespace {

template <typename Fn>
void for_each_record(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(nlohmann::json::parse(line), lineno);
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

std::vector<Instance> load_dataset(const std::filesystem::path& path) {
  std::vector<Instance> out;
  for_each_record(path, [&](const nlohmann::json& j, int lineno) {
    Instance inst;
    if (j.contains("id")) {
      inst.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    } else {
      inst.id = std::to_string(lineno);
    }
    inst.query = j.at("query").get<std::string>();
    if (j.contains("reference_response") && !j["reference_response"].is_null()) {
      inst.reference_response = j["reference_response"].get<std::string>();
    }
    out.push_back(std::move(inst));
  });
  return out;
}

std::vector<Demonstration> load_demonstrations(const std::filesystem::path& path) {
  std::vector<Demonstration> out;
  for_each_record(path, [&](const nlohmann::json& j, int lineno) {
    Demonstration d{j.at("query").get<std::string>(), j.at("answer").get<std::string>()};
    if (d.query.empty() || d.answer.empty()) {
      throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": empty query or answer");
    }
    out.push_back(std::move(d));
  });
  return out;
}

}  // namespace pica
