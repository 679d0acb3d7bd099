#ifndef PICA_DATASET_HPP_
#define PICA_DATASET_HPP_

#include "pica/prompt.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pica {

// One JSON-lines record: {"id", "query", "reference_response"?}.
struct Instance {
  std::string id;
  std::string query;
  std::optional<std::string> reference_response;
};

std::vector<Instance> load_dataset(const std::filesystem::path& path);
// JSON-lines of {"query", "answer"}.
std::vector<Demonstration> load_demonstrations(const std::filesystem::path& path);

}  // namespace pica

#endif  // PICA_DATASET_HPP_
