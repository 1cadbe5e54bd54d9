#include "metron/report.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "metron/fe_solver.hpp"
#include "metron/linalg.hpp"
#include "metron/metricity.hpp"
#include "metron/stat_models.hpp"
#include "metron/transport.hpp"

namespace metron::cli {

using nlohmann::json;

namespace {

constexpr int kMaxRank = 4;

struct InputError : std::runtime_error {
  std::vector<Diagnostic> diagnostics;
  explicit InputError(std::vector<Diagnostic> d)
      : std::runtime_error(d.empty() ? "invalid input" : d.front().message), diagnostics(std::move(d)) {}
  explicit InputError(const std::string& message) : InputError(std::vector<Diagnostic>{{"", message}}) {}
};

std::pair<std::size_t, std::size_t> lineColumn(const std::string& text, std::size_t offset) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

std::string index(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

double round12(double v) {
  if (!std::isfinite(v)) return v;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  double out = std::strtod(buf, nullptr);
  return out == 0.0 ? 0.0 : out;  // no negative zero
}

json matrixJson(const Eigen::MatrixXd& m, bool rounded) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(rounded ? round12(m(i, j)) : m(i, j));
    rows.push_back(row);
  }
  return rows;
}

json vectorJson(const Eigen::VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json exprMatrixJson(const ExprMatrix& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(toString(m(i, j)));
    rows.push_back(row);
  }
  return rows;
}

json connectionJson(const Connection& c) {
  json a = json::array();
  for (const auto& g : c.gamma) a.push_back(exprMatrixJson(g));
  return a;
}

json tolerancesJson(const Tolerances& t) {
  return json{{"kernel", t.kernel},       {"transport", t.transport},       {"rank", t.rank},
              {"regularDet", t.regularDet}, {"regularCond", t.regularCond}, {"maxOrder", t.maxOrder},
              {"stepsPerEdge", t.stepsPerEdge}};
}

json diagnosticJson(const Diagnostic& d) {
  json j{{"path", d.path}, {"message", d.message}};
  if (d.line) j["line"] = *d.line;
  if (d.column) j["column"] = *d.column;
  if (d.offset) j["offset"] = *d.offset;
  return j;
}

// ---- problem loading ----

class Loader {
 public:
  std::vector<Diagnostic> diags;

  void error(const std::string& path, const std::string& message) { diags.push_back({path, message}); }

  std::optional<int> integer(const json& obj, const char* key, bool required, int lo, int hi) {
    if (!obj.contains(key)) {
      if (required) error(key, "missing required field");
      return std::nullopt;
    }
    const json& v = obj.at(key);
    if (!v.is_number_integer()) {
      error(key, "expected an integer");
      return std::nullopt;
    }
    const auto x = v.get<long long>();
    if (x < lo || x > hi) {
      error(key, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
      return std::nullopt;
    }
    return static_cast<int>(x);
  }

  std::optional<Expr> expression(const json& v, const std::string& path, int numVariables) {
    std::string text;
    if (v.is_string()) {
      text = v.get<std::string>();
    } else if (v.is_number()) {
      return Expr(v.get<double>());
    } else {
      error(path, "expected an expression string");
      return std::nullopt;
    }
    try {
      return parse(text, numVariables);
    } catch (const ParseError& e) {
      Diagnostic d{path, std::string(e.kind() == ParseError::Kind::UnknownIdentifier ? "unknown variable: " : "") +
                             e.what()};
      d.offset = e.offset();
      diags.push_back(std::move(d));
      return std::nullopt;
    }
  }

  std::optional<ExprMatrix> matrix(const json& v, const std::string& path, int r, int numVariables) {
    if (!v.is_array() || static_cast<int>(v.size()) != r) {
      error(path, "expected an array of " + std::to_string(r) + " rows" +
                      (v.is_array() ? ", got " + std::to_string(v.size()) : ""));
      return std::nullopt;
    }
    ExprMatrix m(r, r);
    bool ok = true;
    for (int a = 0; a < r; ++a) {
      const json& row = v[a];
      const std::string rp = index(path, a);
      if (!row.is_array() || static_cast<int>(row.size()) != r) {
        error(rp, "expected " + std::to_string(r) + " entries" +
                      (row.is_array() ? ", got " + std::to_string(row.size()) : ""));
        ok = false;
        continue;
      }
      for (int b = 0; b < r; ++b) {
        auto e = expression(row[b], index(rp, b), numVariables);
        if (e) {
          m(a, b) = *e;
        } else {
          ok = false;
        }
      }
    }
    if (!ok) return std::nullopt;
    return m;
  }

  std::optional<std::vector<ExprMatrix>> connection(const json& v, const std::string& path, int m, int r) {
    if (!v.is_array() || static_cast<int>(v.size()) != m) {
      error(path, "expected an array of " + std::to_string(m) + " coefficient matrices" +
                      (v.is_array() ? ", got " + std::to_string(v.size()) : ""));
      return std::nullopt;
    }
    std::vector<ExprMatrix> gamma;
    bool ok = true;
    for (int i = 0; i < m; ++i) {
      auto g = matrix(v[i], index(path, i), r, m);
      if (g) {
        gamma.push_back(std::move(*g));
      } else {
        ok = false;
      }
    }
    if (!ok) return std::nullopt;
    return gamma;
  }
};

// Evaluates every expression at every grid node; reports the first failure.
void checkEvaluable(Loader& L, const std::string& path, const std::vector<ExprMatrix>& ms, const ChartDomain& d,
                    bool perAxis = false) {
  const CompiledMatrices cm(ms);
  const SampleGrid grid = d.grid();
  std::vector<Eigen::MatrixXd> out;
  for (int n = 0; n < grid.size(); ++n) {
    const Eigen::VectorXd x = grid.point(n);
    try {
      cm.evaluate(std::span<const double>(x.data(), x.size()), out);
    } catch (const EvaluationError& e) {
      std::string where = path;
      std::string what = e.what();
      for (std::size_t k = 0; k < ms.size() && where == path; ++k) {
        for (int a = 0; a < ms[k].rows() && where == path; ++a) {
          for (int b = 0; b < ms[k].cols(); ++b) {
            try {
              evaluate(ms[k](a, b), std::span<const double>(x.data(), x.size()));
            } catch (const EvaluationError& inner) {
              where = path + (perAxis ? "[" + std::to_string(k) + "]" : "") + "[" + std::to_string(a) + "][" +
                      std::to_string(b) + "]";
              what = inner.what();
              break;
            }
          }
        }
      }
      std::ostringstream os;
      os << "cannot evaluate at (";
      for (int i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x(i);
      os << "): " << what;
      L.error(where, os.str());
      return;
    }
  }
}

const std::vector<std::string> kTopKeys = {"dim",    "rank",  "domain",         "connection", "metric",
                                           "metricRank", "gauge", "dualConnection", "tolerances", "seed"};

}  // namespace

const std::vector<std::string>& commands() {
  static const std::vector<std::string> c = {"dual",      "curvature",   "solve-fe", "metricity",
                                             "index",     "alpha-scan",  "gauge-check", "validate"};
  return c;
}

std::string sha256Hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

LoadResult loadProblem(const std::string& text) {
  LoadResult res;
  Loader L;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    Diagnostic d{"", std::string("malformed JSON: ") + e.what()};
    const std::size_t at = e.byte > 0 ? e.byte - 1 : 0;
    const auto [line, col] = lineColumn(text, at);
    d.line = line;
    d.column = col;
    res.diagnostics.push_back(std::move(d));
    return res;
  }
  if (!doc.is_object()) {
    res.diagnostics.push_back({"", "problem must be a JSON object"});
    return res;
  }
  for (const auto& [key, value] : doc.items()) {
    if (std::find(kTopKeys.begin(), kTopKeys.end(), key) == kTopKeys.end()) L.error(key, "unknown field");
  }

  ProblemFile p;
  const auto dim = L.integer(doc, "dim", true, 1, 9);
  const auto rank = L.integer(doc, "rank", true, 1, kMaxRank);
  if (!dim || !rank) {
    res.diagnostics = std::move(L.diags);
    return res;
  }
  p.dim = *dim;
  p.rank = *rank;

  bool domainOk = false;
  if (!doc.contains("domain") || !doc["domain"].is_object()) {
    L.error("domain", "missing or not an object");
  } else {
    const json& d = doc["domain"];
    domainOk = true;
    for (const char* key : {"lower", "upper"}) {
      const std::string path = std::string("domain.") + key;
      if (!d.contains(key) || !d[key].is_array() || static_cast<int>(d[key].size()) != p.dim) {
        L.error(path, "expected an array of " + std::to_string(p.dim) + " numbers");
        domainOk = false;
        continue;
      }
      std::vector<double> v;
      for (std::size_t i = 0; i < d[key].size(); ++i) {
        if (!d[key][i].is_number()) {
          L.error(index(path, i), "expected a number");
          domainOk = false;
        } else {
          v.push_back(d[key][i].get<double>());
        }
      }
      (key[0] == 'l' ? p.domain.lower : p.domain.upper) = v;
    }
    if (d.contains("gridPerAxis")) {
      const auto g = L.integer(d, "gridPerAxis", false, 3, 65);
      if (g) {
        p.domain.gridPerAxis = *g;
      } else {
        L.diags.back().path = "domain.gridPerAxis";
        domainOk = false;
      }
    }
    for (const auto& [key, value] : d.items()) {
      if (key != "lower" && key != "upper" && key != "gridPerAxis") L.error("domain." + key, "unknown field");
    }
    if (domainOk) {
      for (int i = 0; i < p.dim; ++i) {
        if (!(p.domain.lower[i] < p.domain.upper[i])) {
          L.error(index("domain.lower", i), "lower bound must be below the upper bound");
          domainOk = false;
        }
      }
    }
  }

  std::optional<std::vector<ExprMatrix>> gamma;
  if (!doc.contains("connection")) {
    L.error("connection", "missing required field");
  } else {
    gamma = L.connection(doc["connection"], "connection", p.dim, p.rank);
  }
  std::optional<ExprMatrix> metric;
  std::optional<int> metricRank;
  if (doc.contains("metric")) metric = L.matrix(doc["metric"], "metric", p.rank, p.dim);
  if (doc.contains("metricRank")) metricRank = L.integer(doc, "metricRank", false, 0, p.rank);
  std::optional<ExprMatrix> gauge;
  if (doc.contains("gauge")) gauge = L.matrix(doc["gauge"], "gauge", p.rank, p.dim);
  std::optional<std::vector<ExprMatrix>> dual;
  if (doc.contains("dualConnection")) dual = L.connection(doc["dualConnection"], "dualConnection", p.dim, p.rank);

  if (doc.contains("tolerances")) {
    const json& t = doc["tolerances"];
    if (!t.is_object()) {
      L.error("tolerances", "expected an object");
    } else {
      for (const auto& [key, value] : t.items()) {
        const std::string path = "tolerances." + key;
        double* target = key == "kernel"        ? &p.tol.kernel
                         : key == "transport"   ? &p.tol.transport
                         : key == "rank"        ? &p.tol.rank
                         : key == "regularDet"  ? &p.tol.regularDet
                         : key == "regularCond" ? &p.tol.regularCond
                                                : nullptr;
        if (target) {
          if (!value.is_number() || !(value.get<double>() > 0)) {
            L.error(path, "expected a positive number");
          } else {
            *target = value.get<double>();
          }
        } else if (key == "maxOrder" || key == "stepsPerEdge") {
          const auto v = L.integer(t, key.c_str(), false, key == "maxOrder" ? 0 : 8, key == "maxOrder" ? 8 : 4096);
          if (!v) {
            L.diags.back().path = path;
          } else {
            (key == "maxOrder" ? p.tol.maxOrder : p.tol.stepsPerEdge) = *v;
          }
        } else {
          L.error(path, "unknown tolerance");
        }
      }
    }
  }
  p.seed = MetricityOptions{}.seed;
  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_unsigned()) {
      L.error("seed", "expected a non-negative integer");
    } else {
      p.seed = doc["seed"].get<std::uint64_t>();
    }
  }

  if (domainOk && L.diags.empty()) {
    p.connection = Connection{p.domain, p.rank, std::move(*gamma)};
    checkEvaluable(L, "connection", p.connection.gamma, p.domain, true);
    if (metric) {
      p.metric = MetricField{p.domain, p.rank, *metric, metricRank.value_or(p.rank), FormSymmetry::Symmetric};
      checkEvaluable(L, "metric", {*metric}, p.domain);
      if (L.diags.empty()) {
        try {
          const ChartDomain& d = p.domain;
          for (int n = 0; n < d.grid().size(); ++n) {
            const Eigen::VectorXd x = d.grid().point(n);
            const Eigen::MatrixXd G = metric->evaluate(std::span<const double>(x.data(), x.size()));
            if (linalg::maxAbs(G - G.transpose()) > 1e-12 * std::max(1.0, linalg::maxAbs(G))) {
              L.error("metric", "metric is not symmetric");
              break;
            }
          }
          if (p.metric->regular()) {
            requireRegular(*p.metric, p.tol);
          } else {
            requireDeclaredRank(*p.metric, p.tol);
          }
        } catch (const GeometryError& e) {
          L.error("metric", e.what());
        }
      }
    }
    if (gauge) {
      p.gauge = GaugeTransform{p.domain, p.rank, *gauge};
      checkEvaluable(L, "gauge", {*gauge}, p.domain);
      if (L.diags.empty()) {
        try {
          requireInvertible(*p.gauge, p.tol);
        } catch (const GeometryError& e) {
          L.error("gauge", e.what());
        }
      }
    }
    if (dual) {
      p.dualConnection = Connection{p.domain, p.rank, std::move(*dual)};
      checkEvaluable(L, "dualConnection", p.dualConnection->gamma, p.domain, true);
    }
  }

  if (!L.diags.empty()) {
    res.diagnostics = std::move(L.diags);
    return res;
  }

  json canon{{"dim", p.dim},
             {"rank", p.rank},
             {"domain", {{"lower", p.domain.lower}, {"upper", p.domain.upper}, {"gridPerAxis", p.domain.gridPerAxis}}},
             {"connection", connectionJson(p.connection)},
             {"tolerances", tolerancesJson(p.tol)},
             {"seed", p.seed}};
  if (p.metric) {
    canon["metric"] = exprMatrixJson(p.metric->g);
    canon["metricRank"] = p.metric->declaredRank;
  }
  if (p.gauge) canon["gauge"] = exprMatrixJson(p.gauge->phi);
  if (p.dualConnection) canon["dualConnection"] = connectionJson(*p.dualConnection);
  p.canonical = canon.dump();
  res.problem = std::move(p);
  return res;
}

LoadResult loadProblemFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    LoadResult r;
    r.diagnostics.push_back({"", "cannot open problem file '" + path + "'"});
    return r;
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return loadProblem(ss.str());
}

std::vector<Diagnostic> validate(const std::string& path) { return loadProblemFile(path).diagnostics; }

namespace {

// ---- reports ----

struct Context {
  const RunOptions& opts;
  Tolerances tol;
  MetricityOptions mopts;
  std::ostringstream summary;
  bool certified = true;
};

void applyOverrides(Context& c, const ProblemFile* p) {
  if (p) {
    c.tol = p->tol;
    c.mopts.seed = p->seed;
  }
  if (c.opts.seed) c.mopts.seed = *c.opts.seed;
  if (c.opts.tolTransport) c.tol.transport = *c.opts.tolTransport;
  if (c.opts.tolKernel) c.tol.kernel = *c.opts.tolKernel;
  if (c.opts.maxOrder) c.tol.maxOrder = *c.opts.maxOrder;
  if (c.opts.grid) c.mopts.fe.gridPerAxis = *c.opts.grid;
  c.mopts.fe.tol = c.tol;
}

json settingsJson(const Context& c) {
  json s{{"tolerances", tolerancesJson(c.tol)}, {"seed", c.mopts.seed}};
  if (c.mopts.fe.gridPerAxis) s["gridPerAxis"] = *c.mopts.fe.gridPerAxis;
  return s;
}

std::string verdictLabel(const MetricityCertificate& c) {
  if (c.verdict == Verdict::SingularMetricOnly) return "SingularMetricOnly(" + std::to_string(c.maxRank) + ")";
  return verdictName(c.verdict);
}

json certificateJson(const MetricityCertificate& c) {
  json j{{"verdict", verdictName(c.verdict)},
         {"verdictLabel", verdictLabel(c)},
         {"maxRank", c.maxRank},
         {"dimS2", c.dimS2},
         {"dimOmega2", c.dimOmega2},
         {"dimJ", c.dimJ},
         {"exactSequence", c.exactSequence},
         {"residuals",
          {{"S2", c.residualS2}, {"Omega2", c.residualOmega2}, {"J", c.residualJ}, {"witness", c.witnessResidual}}},
         {"dimsPerOrderS2", c.dimsPerOrderS2},
         {"stabilized", c.stabilized},
         {"certified", c.certified},
         {"basePoint", vectorJson(c.basePoint)},
         {"toleranceProfile", tolerancesJson(c.tol)}};
  if (!c.note.empty()) j["note"] = c.note;
  json s2 = json::array();
  for (const auto& b : c.s2Basis) s2.push_back(matrixJson(b, true));
  json o2 = json::array();
  for (const auto& b : c.omega2Basis) o2.push_back(matrixJson(b, true));
  j["s2Basis"] = s2;
  j["omega2Basis"] = o2;
  if (c.witnessAtBase.size() > 0) {
    json w{{"atBase", matrixJson(c.witnessAtBase, true)},
           {"definite", c.witnessDefinite},
           {"rankConstant", c.witnessRankConstant},
           {"minAbsDet", c.witnessMinAbsDet},
           {"residual", c.witnessResidual}};
    w["closedForm"] = c.witness ? exprMatrixJson(c.witness->g) : json(nullptr);
    j["witness"] = w;
  } else {
    j["witness"] = nullptr;
  }
  return j;
}

json indexJson(const IndexReport& r) {
  return json{{"sbGivenG", r.sbGivenG},
              {"sb", r.sb},
              {"ind", indexDecisionName(r.ind)},
              {"maxParallelMetricRank", r.maxParallelMetricRank},
              {"sbPerMetric", r.sbPerMetric},
              {"emptyJPerMetric", r.emptyJPerMetric},
              {"familySize", r.familySize},
              {"certified", r.certified},
              {"certificate", certificateJson(r.certificate)}};
}

template <typename F>
double gridMax(const ChartDomain& d, std::optional<int> perAxis, F&& f) {
  const SampleGrid grid = d.grid(perAxis.value_or(d.gridPerAxis));
  double worst = 0.0;
  for (int n = 0; n < grid.size(); ++n) worst = std::max(worst, f(grid.point(n)));
  return worst;
}

std::span<const double> at(const Eigen::VectorXd& x) { return {x.data(), static_cast<std::size_t>(x.size())}; }

std::vector<MetricField> declaredFamily(Context& c, const ProblemFile& p) {
  std::vector<MetricField> family;
  if (p.metric && p.metric->regular()) family.push_back(*p.metric);
  if (!c.opts.metricFamilyPath) return family;
  std::ifstream in(*c.opts.metricFamilyPath, std::ios::binary);
  if (!in) throw InputError("cannot open metric family file '" + *c.opts.metricFamilyPath + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    Diagnostic d{"metric-family", std::string("malformed JSON: ") + e.what()};
    const auto [line, col] = lineColumn(text, e.byte > 0 ? e.byte - 1 : 0);
    d.line = line;
    d.column = col;
    throw InputError(std::vector<Diagnostic>{d});
  }
  const json& list = doc.is_object() && doc.contains("metrics") ? doc["metrics"] : doc;
  if (!list.is_array()) throw InputError("metric family must be an array of matrices or {\"metrics\": [...]}");
  Loader L;
  for (std::size_t k = 0; k < list.size(); ++k) {
    auto m = L.matrix(list[k], index("metrics", k), p.rank, p.dim);
    if (!m) continue;
    MetricField g{p.domain, p.rank, *m, p.rank, FormSymmetry::Symmetric};
    checkEvaluable(L, index("metrics", k), {*m}, p.domain);
    if (!L.diags.empty()) continue;
    try {
      requireRegular(g, c.tol);
    } catch (const GeometryError& e) {
      L.error(index("metrics", k), e.what());
      continue;
    }
    family.push_back(std::move(g));
  }
  if (!L.diags.empty()) throw InputError(L.diags);
  return family;
}

json cmdDual(Context& c, const ProblemFile& p) {
  if (!p.metric) throw InputError(std::vector<Diagnostic>{{"metric", "the dual command needs a metric"}});
  const Connection dual = amariDual(*p.metric, p.connection, c.tol);
  const Connection back = amariDual(*p.metric, dual, c.tol);
  const double inv = coefficientDistance(back, p.connection);
  const double self = coefficientDistance(dual, p.connection);
  const double metricRes = covariantDerivativeOfMetric(p.connection, *p.metric).residual;
  c.summary << "dual: involution residual " << inv << ", distance to original " << self << "\n";
  return json{{"dualConnection", connectionJson(dual)},
              {"involutionResidual", inv},
              {"distanceToOriginal", self},
              {"metricCovariantDerivativeResidual", metricRes},
              {"selfDual", self <= 1e-9}};
}

json cmdCurvature(Context& c, const ProblemFile& p) {
  const CurvatureField R = curvature(p.connection);
  json comps = json::array();
  std::vector<ExprMatrix> upper;
  for (int i = 0; i < p.dim; ++i) {
    for (int j = i + 1; j < p.dim; ++j) {
      comps.push_back(json{{"i", i + 1}, {"j", j + 1}, {"R", exprMatrixJson(R.at(i, j))}});
      upper.push_back(R.at(i, j));
    }
  }
  double worst = 0.0;
  if (!upper.empty()) {
    const CompiledMatrices cm(upper);
    worst = gridMax(p.domain, c.mopts.fe.gridPerAxis, [&](const Eigen::VectorXd& x) {
      double w = 0.0;
      for (const auto& m : cm.evaluate(at(x))) w = std::max(w, linalg::maxAbs(m));
      return w;
    });
  }
  const bool flat = worst <= 1e-9;
  c.summary << "curvature: max |R| on grid " << worst << (flat ? " (flat)" : "") << "\n";
  return json{{"components", comps}, {"maxAbsOnGrid", worst}, {"flat", flat}};
}

json cmdSolveFe(Context& c, const ProblemFile& p) {
  std::string targetName = "self";
  Connection target = p.connection;
  if (p.dualConnection) {
    target = *p.dualConnection;
    targetName = "dualConnection";
  } else if (p.metric) {
    target = amariDual(*p.metric, p.connection, c.tol);
    targetName = "metricDual";
  }
  const SolutionSpace s = solveFE(p.connection, target, c.mopts.fe);
  json basis = json::array();
  json subst = json::array();
  double worstSubst = 0.0;
  for (int k = 0; k < s.dimension; ++k) {
    basis.push_back(matrixJson(s.basis[k], true));
    const double r = substitutionResidual(p.connection, target, s.grid, s.extensions[k], c.tol.stepsPerEdge);
    subst.push_back(r);
    worstSubst = std::max(worstSubst, r);
  }
  c.certified = s.stabilized() && s.certifiedResidual <= c.tol.transport && worstSubst <= 1e-6 && s.rejected == 0;
  c.summary << "solve-fe: dim J = " << s.dimension << " (target " << targetName << "), residual "
            << s.certifiedResidual << (c.certified ? "" : " [uncertified]") << "\n";
  return json{{"target", targetName},
              {"dimension", s.dimension},
              {"basePoint", vectorJson(s.basePoint)},
              {"basis", basis},
              {"certifiedResidual", s.certifiedResidual},
              {"substitutionResiduals", subst},
              {"rejectedDirections", s.rejected},
              {"dimsPerOrder", s.constraints.dimsPerOrder},
              {"stabilized", s.stabilized()},
              {"stabilizedOrder", s.constraints.stabilizedOrder},
              {"certified", c.certified}};
}

json cmdMetricity(Context& c, const ProblemFile& p) {
  const MetricityCertificate cert = decideMetricity(p.connection, c.mopts);
  c.certified = cert.certified;
  c.summary << "metricity: " << verdictLabel(cert) << " (dimS2=" << cert.dimS2 << ", dimOmega2=" << cert.dimOmega2
            << ", dimJ=" << cert.dimJ << ")" << (cert.certified ? "" : " [uncertified: " + cert.note + "]") << "\n";
  return certificateJson(cert);
}

json cmdIndex(Context& c, const ProblemFile& p) {
  const IndexReport r = indexReport(p.connection, declaredFamily(c, p), c.mopts);
  c.certified = r.certified;
  c.summary << "index: s^b = " << r.sb << ", ind " << indexDecisionName(r.ind) << ", max parallel metric rank "
            << r.maxParallelMetricRank << (r.certified ? "" : " [uncertified]") << "\n";
  return indexJson(r);
}

json cmdGaugeCheck(Context& c, const ProblemFile& p) {
  if (!p.gauge) throw InputError(std::vector<Diagnostic>{{"gauge", "the gauge-check command needs a gauge"}});
  const Connection moved = gaugeAct(*p.gauge, p.connection, c.tol);
  const CurvatureField R = curvature(p.connection);
  const CurvatureField Rm = curvature(moved);
  std::vector<ExprMatrix> all = R.components;
  all.insert(all.end(), Rm.components.begin(), Rm.components.end());
  all.push_back(p.gauge->phi);
  const CompiledMatrices cm(all);
  const std::size_t nc = R.components.size();
  const double conj = gridMax(p.domain, c.mopts.fe.gridPerAxis, [&](const Eigen::VectorXd& x) {
    const auto v = cm.evaluate(at(x));
    const Eigen::MatrixXd& phi = v.back();
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(phi);
    double w = 0.0;
    for (std::size_t k = 0; k < nc; ++k) w = std::max(w, linalg::maxAbs(v[nc + k] - lu.solve(v[k] * phi)));
    return w;
  });
  json out{{"transformedConnection", connectionJson(moved)}, {"curvatureConjugationResidual", conj}};
  if (p.metric && p.metric->regular()) out["quasiCommutativityResidual"] =
      quasiCommutativityCheck(*p.gauge, *p.metric, p.connection, c.tol);

  const std::vector<MetricField> family = declaredFamily(c, p);
  std::vector<MetricField> movedFamily;
  for (const auto& g : family) movedFamily.push_back(pushforwardMetric(*p.gauge, g, c.tol));
  const IndexReport before = indexReport(p.connection, family, c.mopts);
  const IndexReport after = indexReport(moved, movedFamily, c.mopts);
  const bool invariant = before.sb == after.sb && before.ind == after.ind &&
                         before.maxParallelMetricRank == after.maxParallelMetricRank &&
                         before.certificate.verdict == after.certificate.verdict &&
                         before.certificate.dimJ == after.certificate.dimJ &&
                         before.certificate.dimS2 == after.certificate.dimS2 &&
                         before.certificate.dimOmega2 == after.certificate.dimOmega2;
  c.certified = before.certified && after.certified;
  out["before"] = indexJson(before);
  out["after"] = indexJson(after);
  out["invariant"] = invariant;
  c.summary << "gauge-check: integer invariants " << (invariant ? "unchanged" : "CHANGED")
            << ", curvature conjugation residual " << conj << "\n";
  return out;
}

std::vector<double> parseAlphas(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw InputError(std::vector<Diagnostic>{{"alphas", "empty entry in '" + csv + "'"}});
    const std::string t = item.substr(b, e - b + 1);
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size() || !std::isfinite(v)) {
      throw InputError(std::vector<Diagnostic>{{"alphas", "not a number: '" + t + "'"}});
    }
    out.push_back(v);
  }
  if (out.empty()) throw InputError(std::vector<Diagnostic>{{"alphas", "no values given"}});
  return out;
}

json cmdAlphaScan(Context& c, std::string& hash) {
  if (!c.opts.family) throw InputError(std::vector<Diagnostic>{{"family", "alpha-scan needs --family"}});
  StatisticalFamily f;
  try {
    f = StatisticalFamily::builtin(*c.opts.family);
  } catch (const std::invalid_argument& e) {
    throw InputError(std::vector<Diagnostic>{{"family", e.what()}});
  }
  std::vector<double> alphas = parseAlphas(c.opts.alphas.value_or("-1,-0.5,0,0.5,1"));
  std::sort(alphas.begin(), alphas.end());
  hash = sha256Hex(json{{"family", f.label()}, {"alphas", alphas}}.dump());
  const AlphaScanReport rep = alphaScan(f, alphas, c.mopts);
  json per = json::array();
  c.summary << "alpha-scan " << f.label() << ":\n";
  for (std::size_t i = 0; i < rep.alphas.size(); ++i) {
    per.push_back(json{{"alpha", rep.alphas[i]}, {"certificate", certificateJson(rep.perAlpha[i])}});
    c.certified = c.certified && rep.perAlpha[i].certified;
    c.summary << "  alpha " << rep.alphas[i] << ": " << verdictLabel(rep.perAlpha[i]) << "\n";
  }
  c.summary << "  theorem4Consistent " << (rep.theorem4Consistent ? "true" : "false") << "\n";
  json out{{"family", f.label()},
           {"parameterDomain", {{"lower", f.parameterDomain.lower}, {"upper", f.parameterDomain.upper}}},
           {"alphas", rep.alphas},
           {"perAlpha", per},
           {"theorem4Consistent", rep.theorem4Consistent}};
  out["counterWitness"] = rep.counterWitness ? json(*rep.counterWitness) : json(nullptr);
  return out;
}

}  // namespace

RunResult run(const RunOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  RunResult rr;
  Context c{opts, {}, {}, {}, true};
  json report{{"toolVersion", kToolVersion}, {"command", opts.command}};
  auto finish = [&](int code) {
    if (opts.timing) {
      report["timingMs"] =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    rr.exitCode = code;
    rr.json = report.dump(2) + "\n";
    rr.summary = c.summary.str();
    return rr;
  };
  auto inputFailure = [&](const std::vector<Diagnostic>& diags) {
    json list = json::array();
    for (const auto& d : diags) {
      list.push_back(diagnosticJson(d));
      c.summary << "error: " << (d.path.empty() ? "" : d.path + ": ") << d.message;
      if (d.line) c.summary << " (line " << *d.line << ", column " << *d.column << ")";
      if (d.offset) c.summary << " (offset " << *d.offset << ")";
      c.summary << "\n";
    }
    report["error"] = {{"kind", "input"}, {"diagnostics", list}};
    return finish(kExitInput);
  };

  if (std::find(commands().begin(), commands().end(), opts.command) == commands().end()) {
    return inputFailure({{"command", "unknown command '" + opts.command + "'"}});
  }

  try {
    if (opts.command == "alpha-scan") {
      applyOverrides(c, nullptr);
      std::string hash;
      json result = cmdAlphaScan(c, hash);
      report["problemEcho"] = {{"sha256", hash}};
      report["settings"] = settingsJson(c);
      report["result"] = std::move(result);
      return finish(c.certified ? kExitOk : kExitUncertified);
    }

    LoadResult loaded = loadProblemFile(opts.problemPath);
    if (opts.command == "validate") {
      json list = json::array();
      for (const auto& d : loaded.diagnostics) list.push_back(diagnosticJson(d));
      report["result"] = {{"diagnostics", list}, {"valid", loaded.diagnostics.empty()}};
      if (loaded.problem) report["problemEcho"] = {{"sha256", sha256Hex(loaded.problem->canonical)}};
      if (!loaded.diagnostics.empty()) return inputFailure(loaded.diagnostics);
      c.summary << "validate: ok\n";
      return finish(kExitOk);
    }
    if (!loaded.problem) return inputFailure(loaded.diagnostics);
    const ProblemFile& p = *loaded.problem;
    applyOverrides(c, &p);
    report["problemEcho"] = {{"sha256", sha256Hex(p.canonical)}};
    report["settings"] = settingsJson(c);

    json result;
    if (opts.command == "dual") {
      result = cmdDual(c, p);
    } else if (opts.command == "curvature") {
      result = cmdCurvature(c, p);
    } else if (opts.command == "solve-fe") {
      result = cmdSolveFe(c, p);
    } else if (opts.command == "metricity") {
      result = cmdMetricity(c, p);
    } else if (opts.command == "index") {
      result = cmdIndex(c, p);
    } else {
      result = cmdGaugeCheck(c, p);
    }
    report["result"] = std::move(result);
    return finish(c.certified ? kExitOk : kExitUncertified);
  } catch (const InputError& e) {
    return inputFailure(e.diagnostics);
  } catch (const ParseError& e) {
    Diagnostic d{"", e.what()};
    d.offset = e.offset();
    return inputFailure({d});
  } catch (const EvaluationError& e) {
    return inputFailure({{"", e.what()}});
  } catch (const GeometryError& e) {
    return inputFailure({{"", e.what()}});
  } catch (const TransportError& e) {
    return inputFailure({{"", e.what()}});
  } catch (const std::invalid_argument& e) {
    return inputFailure({{"", e.what()}});
  } catch (const std::exception& e) {
    report["error"] = {{"kind", "internal"}, {"message", e.what()}};
    c.summary << "internal error: " << e.what() << "\n";
    return finish(kExitInternal);
  }
}

}  // namespace metron::cli
