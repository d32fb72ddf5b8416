#pragma once

// File helpers shared by the loaders and pipeline stages. Private to the
// library: it exposes nlohmann::json, which is not part of the public API.

#include <functional>
#include <string>

#include "json.hpp"
#include "seqxrec/common.hpp"

namespace SEQXREC_NS::io {

std::string read_file(const std::string& path);

// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& contents);

// Calls fn(record, line_number) for each non-blank line; parse errors name
// the file and line.
void for_each_jsonl(const std::string& path,
                    const std::function<void(const nlohmann::json&, std::size_t)>& fn);

}  // namespace SEQXREC_NS::io
