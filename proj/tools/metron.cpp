#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "metron/report.hpp"

int main(int argc, char** argv) {
  using namespace metron::cli;
  CLI::App app{"metron: metricity analysis of connections on trivialised vector bundles"};
  app.set_version_flag("--version", std::string(kToolVersion));

  RunOptions o;
  std::string out;
  std::uint64_t seed = 0;
  int grid = 0;
  double tolTransport = 0;
  double tolKernel = 0;
  int maxOrder = 0;
  std::string alphas;
  std::string family;
  std::string metricFamily;

  app.add_option("command", o.command, "dual | curvature | solve-fe | metricity | index | alpha-scan | gauge-check | validate")
      ->required();
  app.add_option("problem", o.problemPath, "problem file (JSON); not used by alpha-scan");
  auto* outOpt = app.add_option("--out", out, "write the JSON report here instead of stdout");
  app.add_flag("--quiet", o.quiet, "no human-readable summary on stderr");
  app.add_flag("--timing", o.timing, "add timingMs to the report (breaks byte-for-byte reproducibility)");
  auto* seedOpt = app.add_option("--seed", seed, "seed for random draws and metric families");
  auto* gridOpt = app.add_option("--grid", grid, "extension grid nodes per axis")->check(CLI::Range(3, 65));
  auto* ttOpt = app.add_option("--tol-transport", tolTransport, "path-independence tolerance")
                    ->check(CLI::PositiveNumber);
  auto* tkOpt = app.add_option("--tol-kernel", tolKernel, "relative singular-value cutoff for constraint kernels")
                    ->check(CLI::PositiveNumber);
  auto* moOpt = app.add_option("--max-order", maxOrder, "prolongation depth")->check(CLI::Range(0, 8));
  auto* alOpt = app.add_option("--alphas", alphas, "comma-separated alpha values for alpha-scan");
  auto* faOpt = app.add_option("--family", family, "gaussian1d | bernoulli | poisson | exponential");
  auto* mfOpt = app.add_option("--metric-family", metricFamily, "JSON list of extra metrics for index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  if (*outOpt) o.outPath = out;
  if (*seedOpt) o.seed = seed;
  if (*gridOpt) o.grid = grid;
  if (*ttOpt) o.tolTransport = tolTransport;
  if (*tkOpt) o.tolKernel = tolKernel;
  if (*moOpt) o.maxOrder = maxOrder;
  if (*alOpt) o.alphas = alphas;
  if (*faOpt) o.family = family;
  if (*mfOpt) o.metricFamilyPath = metricFamily;
  if (o.problemPath.empty() && o.command != "alpha-scan") {
    std::cerr << "error: a problem file is required for '" << o.command << "'\n";
    return kExitInput;
  }

  const RunResult r = run(o);
  if (!o.quiet) std::cerr << r.summary;
  if (o.outPath) {
    std::ofstream f(*o.outPath, std::ios::binary);
    if (!f) {
      std::cerr << "error: cannot write " << *o.outPath << "\n";
      return kExitInput;
    }
    f << r.json;
  } else {
    std::cout << r.json;
  }
  return r.exitCode;
}
