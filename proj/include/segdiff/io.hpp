#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace segdiff::io {

using Json = nlohmann::json;

std::string read_file(const std::filesystem::path& path);
/// Write to a sibling temp file, then rename over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

/// One JSON object per line; blank lines are skipped.
std::vector<Json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records);
Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& value);

/// Throw on any key of j that reference lacks, recursing into objects.
void reject_unknown_keys(const Json& j, const Json& reference, const std::string& context);

/// Parse a config struct whose missing keys keep their defaults and whose
/// unknown keys are an error.
template <class T>
T parse_strict(const Json& j, const std::string& context) {
  reject_unknown_keys(j, Json(T{}), context);
  return j.get<T>();
}

}  // namespace segdiff::io
