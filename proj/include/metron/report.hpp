#ifndef METRON_REPORT_HPP
#define METRON_REPORT_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "metron/bundle.hpp"
#include "metron/tolerances.hpp"

namespace metron::cli {

inline constexpr const char* kToolVersion = "0.1.0";

struct Diagnostic {
  std::string path;  // e.g. "connection[1][0]" or "" for the whole document
  std::string message;
  std::optional<std::size_t> line = std::nullopt;
  std::optional<std::size_t> column = std::nullopt;
  std::optional<std::size_t> offset = std::nullopt;  // byte offset inside an expression string
};

struct ProblemFile {
  int dim = 0;
  int rank = 0;
  ChartDomain domain;
  Connection connection;
  std::optional<MetricField> metric;
  std::optional<GaugeTransform> gauge;
  std::optional<Connection> dualConnection;
  Tolerances tol;
  std::uint64_t seed = 0;
  std::string canonical;  // canonical JSON of the semantic content
};

struct LoadResult {
  std::optional<ProblemFile> problem;
  std::vector<Diagnostic> diagnostics;
};

/// Parses and validates problem text; never throws on bad input.
LoadResult loadProblem(const std::string& text);
LoadResult loadProblemFile(const std::string& path);

/// Diagnostics for a problem file without running any analysis.
std::vector<Diagnostic> validate(const std::string& path);

/// Hex SHA-256 of a string.
std::string sha256Hex(const std::string& data);

struct RunOptions {
  std::string command;
  std::string problemPath;
  std::optional<std::string> outPath;
  bool quiet = false;
  bool timing = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> grid;
  std::optional<double> tolTransport;
  std::optional<double> tolKernel;
  std::optional<int> maxOrder;
  std::optional<std::string> alphas;  // CSV
  std::optional<std::string> family;
  std::optional<std::string> metricFamilyPath;
};

struct RunResult {
  int exitCode = 0;
  std::string json;     // report document, newline terminated
  std::string summary;  // human-readable lines
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitUncertified = 3;

const std::vector<std::string>& commands();

/// Runs one command; never throws.
RunResult run(const RunOptions& opts);

}  // namespace metron::cli

#endif  // METRON_REPORT_HPP
