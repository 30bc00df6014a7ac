#pragma once

#include <chrono>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "opbn/config.hpp"

namespace opbn {

inline constexpr const char* kCodeVersion = "0.1.0";

/// Commands in pipeline order.
const std::vector<std::string>& command_names();

/// Runs one command, writing every artifact under `out` and a manifest to
/// `out/manifests/<command>.json`. Returns the process exit status; failures
/// that have a diagnostic (missing prerequisites, bad data, non-finite
/// training) are thrown as opbn::Error.
int run_command(const std::string& command, const RunConfig& config, const std::filesystem::path& out,
                std::ostream& log);

struct RunManifest {
  std::string command;
  std::vector<std::filesystem::path> artifacts;  // relative to the output directory
  double wall_clock_seconds = 0.0;
  std::string started_at;  // UTC, ISO 8601
};

/// Writes `out/manifests/<command>.json` with the config hash, seed, resolved
/// config, artifact list, timings and code version. Returns its path.
std::filesystem::path write_run_manifest(const RunConfig& config, const RunManifest& manifest,
                                         const std::filesystem::path& out);

}  // namespace opbn
