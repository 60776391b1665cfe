#pragma once

// Command-line pipeline: gen, train, eval, sim, report.

#include "grace/caresim.hpp"
#include "grace/evalharness.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace grace::cli {

inline constexpr const char* kVersion = "0.3.0";

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kIo = 3,
  kConvergence = 4,
  kLeakage = 5,
};

// Effective configuration of a run. Keys are "section.name"; see set().
struct RunConfig {
  std::string profile = "test";
  data::GeneratorConfig data;
  int grid_samples_per_dim = 12;
  ocsvm::FitParams ocsvm;
  model::ModelConfig model;
  std::vector<std::uint64_t> eval_seeds = {1, 2, 3, 4, 5};
  bool global_union = false;
  sim::SuiteConfig sim;
  std::vector<data::UserKey> held_out = {{1, 1}, {2, 2}, {3, 3}, {4, 4}, {5, 1}};
  std::vector<std::uint64_t> sim_seeds = {1, 2, 3, 4, 5};
  int workers = 1;

  // Throws ConfigError naming the key on an unknown key or a bad value.
  void set(std::string_view key, std::string_view value);
  void validate() const;
  nlohmann::json to_json() const;
};

// "test": 12 grid samples/dim, 500 samples/user. "paper": 40 and 2000.
RunConfig profile_config(std::string_view profile);

// Flat "key = value" lines; '#' starts a comment; "[section]" prefixes the
// keys that follow with "section.".
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

// Entry point of the grace executable. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace grace::cli
