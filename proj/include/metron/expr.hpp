#ifndef METRON_EXPR_HPP
#define METRON_EXPR_HPP

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace metron {

enum class Op { Const, Var, Add, Sub, Mul, Div, Neg, Pow, Exp, Log, Sin, Cos, Sqrt };

struct ExprNode;
using NodePtr = std::shared_ptr<const ExprNode>;

struct ExprNode {
  Op op = Op::Const;
  double value = 0.0;  // Const only
  int var = -1;        // Var only, 0-based
  NodePtr a;
  NodePtr b;
};

/// Immutable closed-form real function of chart coordinates x1..x9.
///
/// Nodes are shared between expressions; every arithmetic helper folds
/// constants and drops additive/multiplicative identities, so derived
/// expressions (duals, curvatures) stay compact.
class Expr {
 public:
  Expr();  // the constant 0
  Expr(double c);  // NOLINT(google-explicit-constructor)
  explicit Expr(NodePtr node) : node_(std::move(node)) {}

  static Expr variable(int index);

  const ExprNode& node() const { return *node_; }
  const NodePtr& ptr() const { return node_; }
  Op op() const { return node_->op; }

  bool isConstant() const { return node_->op == Op::Const; }
  std::optional<double> constantValue() const;
  bool isZero() const { return isConstant() && node_->value == 0.0; }
  bool isOne() const { return isConstant() && node_->value == 1.0; }

 private:
  NodePtr node_;
};

Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator*(const Expr& a, const Expr& b);
Expr operator/(const Expr& a, const Expr& b);
Expr operator-(const Expr& a);
Expr pow(const Expr& base, const Expr& exponent);
Expr exp(const Expr& e);
Expr log(const Expr& e);
Expr sin(const Expr& e);
Expr cos(const Expr& e);
Expr sqrt(const Expr& e);

class ParseError : public std::runtime_error {
 public:
  enum class Kind { Syntax, UnknownIdentifier, Arity };
  ParseError(Kind kind, std::size_t offset, std::string message,
             std::vector<std::string> expected = {});
  Kind kind() const { return kind_; }
  std::size_t offset() const { return offset_; }
  const std::vector<std::string>& expected() const { return expected_; }

 private:
  Kind kind_;
  std::size_t offset_;
  std::vector<std::string> expected_;
};

class EvaluationError : public std::runtime_error {
 public:
  enum class Kind { DivisionByZero, LogDomain, SqrtDomain, PowDomain, NonFinite, BadPoint };
  EvaluationError(Kind kind, std::string subtree);
  Kind kind() const { return kind_; }
  const std::string& subtree() const { return subtree_; }

 private:
  Kind kind_;
  std::string subtree_;
};

/// Parses the coefficient grammar. Variables beyond `numVariables` are
/// reported as unknown identifiers.
Expr parse(std::string_view source, int numVariables = 9);

/// Text form accepted back by parse(); constants use 17 significant digits.
std::string toString(const Expr& e);

double evaluate(const Expr& e, std::span<const double> x);

/// Exact partial derivative with respect to the 0-based coordinate `index`.
Expr differentiate(const Expr& e, int index);

/// Differentiates several expressions at once, sharing work on common nodes.
std::vector<Expr> differentiate(std::span<const Expr> es, int index);

/// Largest 0-based variable index referenced, or -1.
int maxVariable(const Expr& e);

/// Number of distinct nodes reachable from e.
std::size_t nodeCount(const Expr& e);

/// Truncated multivariate Taylor polynomial in m variables of total degree
/// at most `degree`. Coefficients are indexed through a shared monomial table.
class TaylorPolynomial {
 public:
  struct Basis {
    int m = 0;
    int degree = 0;
    std::vector<std::vector<int>> exponents;
    std::vector<int> totalDegree;
    std::vector<std::vector<int>> product;  // product[i][j]: index or -1
    std::vector<std::vector<int>> raise;    // raise[i][k]: index of e_i + unit_k or -1
    int size() const { return static_cast<int>(exponents.size()); }
    int indexOf(const std::vector<int>& exps) const;
  };
  static std::shared_ptr<const Basis> makeBasis(int m, int degree);

  TaylorPolynomial() = default;
  explicit TaylorPolynomial(std::shared_ptr<const Basis> basis, double constant = 0.0);

  const Basis& basis() const { return *basis_; }
  const std::shared_ptr<const Basis>& basisPtr() const { return basis_; }
  double constant() const { return coeffs_[0]; }
  double coefficient(int idx) const { return coeffs_[idx]; }
  double& coefficient(int idx) { return coeffs_[idx]; }
  const std::vector<double>& coefficients() const { return coeffs_; }

  TaylorPolynomial& operator+=(const TaylorPolynomial& o);
  TaylorPolynomial& operator-=(const TaylorPolynomial& o);
  TaylorPolynomial& operator*=(double s);
  friend TaylorPolynomial operator+(TaylorPolynomial a, const TaylorPolynomial& b) { return a += b; }
  friend TaylorPolynomial operator-(TaylorPolynomial a, const TaylorPolynomial& b) { return a -= b; }
  friend TaylorPolynomial operator*(TaylorPolynomial a, double s) { return a *= s; }
  friend TaylorPolynomial operator*(const TaylorPolynomial& a, const TaylorPolynomial& b);

  /// Partial derivative; the top-degree coefficients become zero.
  TaylorPolynomial derivative(int k) const;
  bool isZero() const;

 private:
  std::shared_ptr<const Basis> basis_;
  std::vector<double> coeffs_;
};

/// A batch of expressions flattened into a topologically ordered program.
/// Shared subtrees are evaluated once per call.
class Tape {
 public:
  Tape() = default;
  explicit Tape(std::span<const Expr> outputs);

  std::size_t outputCount() const { return outputs_.size(); }
  std::size_t instructionCount() const { return code_.size(); }

  void evaluate(std::span<const double> x, std::span<double> out) const;
  std::vector<double> evaluate(std::span<const double> x) const;

  /// Taylor expansion of every output about x0, truncated at `degree`.
  std::vector<TaylorPolynomial> taylor(std::span<const double> x0, int degree) const;

 private:
  struct Instr {
    Op op;
    double value;
    int var;
    int a;
    int b;
  };
  std::vector<Instr> code_;
  std::vector<int> outputs_;
  std::vector<NodePtr> nodes_;  // for error reporting
  int maxVar_ = -1;

  [[noreturn]] void fail(EvaluationError::Kind kind, std::size_t instr) const;
};

}  // namespace metron

#endif  // METRON_EXPR_HPP
