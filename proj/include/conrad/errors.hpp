#pragma once
// Error taxonomy shared by the library and the CLI. Each exception class
// maps to one process exit code so shell scripts can branch on failures.

#include <stdexcept>
#include <string>

namespace conrad {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kConfig = 2;           // unreadable or invalid config
inline constexpr int kMissingArtifact = 3;  // checkpoint or input file absent
inline constexpr int kNumeric = 4;          // non-finite value reached a sink
}  // namespace exit_code

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct MissingArtifactError : std::runtime_error {
  explicit MissingArtifactError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace conrad
