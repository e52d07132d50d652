#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace nmf::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

/// Parsed INI document: section -> ordered key/value pairs.
struct ConfigDocument {
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
  std::string directory;  // directory of the config file, for relative paths
};

ConfigDocument parse_config(const std::string& text, const std::string& directory = ".");
ConfigDocument load_config(const std::string& path);

/// Version string recorded next to every artifact.
std::string version();

/// Runs the `nmf` command line. Returns 0 on success, 1 on usage errors and
/// 2 on runtime or numerical failures.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace nmf::cli
