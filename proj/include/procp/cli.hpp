#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "procp/methods.hpp"
#include "procp/simlab.hpp"

namespace procp {

struct PredictOptions {
  std::string input;
  std::string out;
  MethodConfig method;
  std::string propensity = "column";  // column | logistic | kernel | formula:<setting> | file:<path>
  std::vector<std::string> categorical;
  std::uint64_t seed = 1;
  double split_ratio = 0.5;
  std::optional<std::string> mean_model;  // skip fitting and use this model
  std::optional<std::string> save_model;
  std::optional<std::string> save_propensity;
};

struct SimulateOptions {
  std::string out;
  std::string setting = "1";
  StudyConfig study;
  std::size_t n = 500;
  std::size_t hist_bins = 20;
};

struct DiagnoseOptions {
  std::string input;
  std::optional<std::string> out;
  std::string truth = "column";
  std::string estimate = "logistic";
  std::vector<std::string> categorical;
  double alpha = 0.2;
  double epsilon = 0.1;
};

void cmd_predict(const PredictOptions& options, std::ostream& log);
void cmd_simulate(const SimulateOptions& options, std::ostream& log);
void cmd_diagnose(const DiagnoseOptions& options, std::ostream& log);

// Writes every file to a temporary sibling first and renames only once all
// writes succeeded; on failure no output is left behind.
void write_files_atomically(const std::vector<std::pair<std::string, std::string>>& files);

// Full command-line entry point; returns the process exit status.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace procp
