#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace eirm {

// Everything that determines a command's outputs: the subcommand, tool
// version, fingerprints of input files, and the fully resolved option set.
// Outputs carry the manifest hash in their first line, so two runs with the
// same manifest can be checked for byte-identical results.
struct RunManifest {
  std::string command;
  std::string tool_version;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, fingerprint
  std::map<std::string, std::string> options;

  std::string canonical() const;  // stable text rendering, hashed below
  std::uint64_t hash() const;
};

// FNV fingerprint of a file's bytes, in fixed-width hex.
std::string file_fingerprint(const std::string& path);

// Atomic write with a leading comment line carrying the manifest hash.
// comment_prefix is "#" for delimited text and "//" for JSON (our readers
// skip both forms).
void write_with_manifest(const std::string& path, const RunManifest& m,
                         const std::string& body,
                         const std::string& comment_prefix);

}  // namespace eirm
