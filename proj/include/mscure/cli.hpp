#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace mscure {

/// 64-bit FNV-1a of a byte string, as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);
std::string hash_file(const std::string& path);

/// Entry point of the `mscure` tool. Returns the process exit code; errors are
/// written to `err` as a JSON document.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mscure
