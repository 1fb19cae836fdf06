#pragma once

// Command-line front end. Jobs are JSON documents; see README.md for the
// schema. Subcommands: density, fiber, catalog, mc-check.

#include "json.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace coarea::cli {

enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kConfigError = 2,
    kNumericFailure = 3,
    kThresholdViolation = 4,
};

/// Applies "a.b.c=value" overrides. The value is parsed as JSON when
/// possible and kept as a string otherwise; numeric segments index arrays.
nlohmann::json apply_overrides(nlohmann::json config, const std::vector<std::string>& sets);

/// Runs one job: builds the density named by config["mode"], writes
/// <path>.csv and <path>.json, and for mc-check also <path>.mc.json.
/// Returns the report (also written as <path>.json). Throws on failure.
nlohmann::json run_density_job(const nlohmann::json& config, bool timing);
nlohmann::json run_mc_job(const nlohmann::json& config, bool timing, bool& thresholds_met);

/// Full command line; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace coarea::cli
