#include "metron/expr.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <unordered_map>

namespace metron {

namespace {

NodePtr makeConst(double c) {
  auto n = std::make_shared<ExprNode>();
  n->op = Op::Const;
  n->value = c;
  return n;
}

NodePtr makeNode(Op op, NodePtr a, NodePtr b = nullptr) {
  auto n = std::make_shared<ExprNode>();
  n->op = op;
  n->a = std::move(a);
  n->b = std::move(b);
  return n;
}

bool isInteger(double v) { return std::isfinite(v) && v == std::floor(v); }

// Folds only when the result is an ordinary finite number.
std::optional<Expr> fold(double v) {
  if (std::isfinite(v)) return Expr(v);
  return std::nullopt;
}

}  // namespace

Expr::Expr() : node_(makeConst(0.0)) {}
Expr::Expr(double c) : node_(makeConst(c)) {}

Expr Expr::variable(int index) {
  if (index < 0) throw std::invalid_argument("variable index must be non-negative");
  auto n = std::make_shared<ExprNode>();
  n->op = Op::Var;
  n->var = index;
  return Expr(NodePtr(n));
}

std::optional<double> Expr::constantValue() const {
  if (isConstant()) return node_->value;
  return std::nullopt;
}

Expr operator+(const Expr& a, const Expr& b) {
  if (a.isConstant() && b.isConstant()) {
    if (auto f = fold(a.node().value + b.node().value)) return *f;
  }
  if (a.isZero()) return b;
  if (b.isZero()) return a;
  if (b.op() == Op::Neg) return a - Expr(b.node().a);
  return Expr(makeNode(Op::Add, a.ptr(), b.ptr()));
}

Expr operator-(const Expr& a, const Expr& b) {
  if (a.isConstant() && b.isConstant()) {
    if (auto f = fold(a.node().value - b.node().value)) return *f;
  }
  if (b.isZero()) return a;
  if (a.isZero()) return -b;
  if (a.ptr() == b.ptr()) return Expr(0.0);
  if (b.op() == Op::Neg) return a + Expr(b.node().a);
  return Expr(makeNode(Op::Sub, a.ptr(), b.ptr()));
}

Expr operator*(const Expr& a, const Expr& b) {
  if (a.isConstant() && b.isConstant()) {
    if (auto f = fold(a.node().value * b.node().value)) return *f;
  }
  if (a.isZero() || b.isZero()) return Expr(0.0);
  if (a.isOne()) return b;
  if (b.isOne()) return a;
  if (b.isConstant() && !a.isConstant()) return b * a;
  if (a.isConstant()) {
    const double c = a.node().value;
    if (c == -1.0) return -b;
    // c1 * (c2 * x) -> (c1 c2) * x
    if (b.op() == Op::Mul && b.node().a->op == Op::Const) {
      return Expr(c * b.node().a->value) * Expr(b.node().b);
    }
    if (b.op() == Op::Neg) return Expr(-c) * Expr(b.node().a);
  }
  if (a.op() == Op::Neg && b.op() == Op::Neg) return Expr(a.node().a) * Expr(b.node().a);
  if (a.op() == Op::Neg) return -(Expr(a.node().a) * b);
  if (b.op() == Op::Neg) return -(a * Expr(b.node().a));
  return Expr(makeNode(Op::Mul, a.ptr(), b.ptr()));
}

Expr operator/(const Expr& a, const Expr& b) {
  if (a.isConstant() && b.isConstant() && b.node().value != 0.0) {
    if (auto f = fold(a.node().value / b.node().value)) return *f;
  }
  if (a.isZero() && !(b.isConstant() && b.node().value == 0.0)) return Expr(0.0);
  if (b.isOne()) return a;
  if (a.op() == Op::Neg) return -(Expr(a.node().a) / b);
  return Expr(makeNode(Op::Div, a.ptr(), b.ptr()));
}

Expr operator-(const Expr& a) {
  if (a.isConstant()) return Expr(-a.node().value);
  if (a.op() == Op::Neg) return Expr(a.node().a);
  return Expr(makeNode(Op::Neg, a.ptr()));
}

Expr pow(const Expr& base, const Expr& exponent) {
  if (exponent.isZero()) return Expr(1.0);
  if (exponent.isOne()) return base;
  if (base.isOne()) return Expr(1.0);
  if (base.isConstant() && exponent.isConstant()) {
    const double x = base.node().value;
    const double y = exponent.node().value;
    if ((x > 0.0 || isInteger(y)) && !(x == 0.0 && y < 0.0)) {
      if (auto f = fold(std::pow(x, y))) return *f;
    }
  }
  return Expr(makeNode(Op::Pow, base.ptr(), exponent.ptr()));
}

Expr exp(const Expr& e) {
  if (e.isConstant()) {
    if (auto f = fold(std::exp(e.node().value))) return *f;
  }
  return Expr(makeNode(Op::Exp, e.ptr()));
}

Expr log(const Expr& e) {
  if (e.isConstant() && e.node().value > 0.0) return Expr(std::log(e.node().value));
  return Expr(makeNode(Op::Log, e.ptr()));
}

Expr sin(const Expr& e) {
  if (e.isConstant()) return Expr(std::sin(e.node().value));
  return Expr(makeNode(Op::Sin, e.ptr()));
}

Expr cos(const Expr& e) {
  if (e.isConstant()) return Expr(std::cos(e.node().value));
  return Expr(makeNode(Op::Cos, e.ptr()));
}

Expr sqrt(const Expr& e) {
  if (e.isConstant() && e.node().value >= 0.0) return Expr(std::sqrt(e.node().value));
  return Expr(makeNode(Op::Sqrt, e.ptr()));
}

// ---------------------------------------------------------------------------
// Errors

ParseError::ParseError(Kind kind, std::size_t offset, std::string message,
                       std::vector<std::string> expected)
    : std::runtime_error("offset " + std::to_string(offset) + ": " + message),
      kind_(kind),
      offset_(offset),
      expected_(std::move(expected)) {}

namespace {
const char* evalKindName(EvaluationError::Kind k) {
  switch (k) {
    case EvaluationError::Kind::DivisionByZero: return "division by zero";
    case EvaluationError::Kind::LogDomain: return "log of non-positive value";
    case EvaluationError::Kind::SqrtDomain: return "sqrt of negative value";
    case EvaluationError::Kind::PowDomain: return "non-integer power of negative value";
    case EvaluationError::Kind::NonFinite: return "non-finite result";
    case EvaluationError::Kind::BadPoint: return "point has too few coordinates";
  }
  return "evaluation error";
}
}  // namespace

EvaluationError::EvaluationError(Kind kind, std::string subtree)
    : std::runtime_error(std::string(evalKindName(kind)) + " in '" + subtree + "'"),
      kind_(kind),
      subtree_(std::move(subtree)) {}

// ---------------------------------------------------------------------------
// Parser

namespace {

class Parser {
 public:
  Parser(std::string_view src, int numVariables) : src_(src), numVariables_(numVariables) {}

  Expr run() {
    Expr e = expr();
    skipSpace();
    if (pos_ != src_.size()) {
      throw ParseError(ParseError::Kind::Syntax, pos_, "unexpected trailing input",
                       {"+", "-", "*", "/", "^", "end of input"});
    }
    return e;
  }

 private:
  std::string_view src_;
  int numVariables_;
  std::size_t pos_ = 0;

  void skipSpace() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skipSpace();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  Expr expr() {
    Expr lhs = term();
    for (;;) {
      if (accept('+')) {
        lhs = lhs + term();
      } else if (accept('-')) {
        lhs = lhs - term();
      } else {
        return lhs;
      }
    }
  }

  Expr term() {
    Expr lhs = factor();
    for (;;) {
      if (accept('*')) {
        lhs = lhs * factor();
      } else if (accept('/')) {
        lhs = lhs / factor();
      } else {
        return lhs;
      }
    }
  }

  Expr factor() {
    Expr b = base();
    if (accept('^')) return pow(b, factor());
    return b;
  }

  Expr base() {
    skipSpace();
    if (pos_ >= src_.size()) {
      throw ParseError(ParseError::Kind::Syntax, pos_, "unexpected end of input",
                       {"number", "identifier", "(", "-"});
    }
    const char c = src_[pos_];
    if (c == '-') {
      ++pos_;
      return -base();
    }
    if (c == '(') {
      ++pos_;
      Expr e = expr();
      if (!accept(')')) {
        throw ParseError(ParseError::Kind::Syntax, pos_, "expected ')'", {")"});
      }
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return identifier();
    throw ParseError(ParseError::Kind::Syntax, pos_, std::string("unexpected character '") + c + "'",
                     {"number", "identifier", "(", "-"});
  }

  Expr number() {
    const std::size_t start = pos_;
    while (pos_ < src_.size() && (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.')) {
      ++pos_;
    }
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      std::size_t p = pos_ + 1;
      if (p < src_.size() && (src_[p] == '+' || src_[p] == '-')) ++p;
      if (p < src_.size() && std::isdigit(static_cast<unsigned char>(src_[p]))) {
        while (p < src_.size() && std::isdigit(static_cast<unsigned char>(src_[p]))) ++p;
        pos_ = p;
      }
    }
    double v = 0.0;
    const auto* first = src_.data() + start;
    const auto* last = src_.data() + pos_;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
      throw ParseError(ParseError::Kind::Syntax, start, "malformed number", {"number"});
    }
    return Expr(v);
  }

  Expr identifier() {
    const std::size_t start = pos_;
    while (pos_ < src_.size() &&
           (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
      ++pos_;
    }
    const std::string name(src_.substr(start, pos_ - start));

    using Fn = Expr (*)(const Expr&);
    static const std::pair<const char*, Fn> funcs[] = {
        {"exp", static_cast<Fn>(&metron::exp)},   {"log", static_cast<Fn>(&metron::log)},
        {"sin", static_cast<Fn>(&metron::sin)},   {"cos", static_cast<Fn>(&metron::cos)},
        {"sqrt", static_cast<Fn>(&metron::sqrt)},
    };
    for (const auto& [fname, fn] : funcs) {
      if (name != fname) continue;
      if (!accept('(')) {
        throw ParseError(ParseError::Kind::Syntax, pos_, "expected '(' after " + name, {"("});
      }
      Expr arg = expr();
      skipSpace();
      if (pos_ < src_.size() && src_[pos_] == ',') {
        throw ParseError(ParseError::Kind::Arity, pos_, name + " takes exactly one argument", {")"});
      }
      if (!accept(')')) {
        throw ParseError(ParseError::Kind::Syntax, pos_, "expected ')'", {")"});
      }
      return fn(arg);
    }

    if (name.size() == 2 && name[0] == 'x' && name[1] >= '1' && name[1] <= '9') {
      const int idx = name[1] - '1';
      if (idx < numVariables_) return Expr::variable(idx);
    }
    throw ParseError(ParseError::Kind::UnknownIdentifier, start, "unknown identifier '" + name + "'",
                     {"x1..x" + std::to_string(std::clamp(numVariables_, 1, 9)), "exp", "log", "sin", "cos",
                      "sqrt"});
  }
};

}  // namespace

Expr parse(std::string_view source, int numVariables) {
  return Parser(source, numVariables).run();
}

// ---------------------------------------------------------------------------
// Printing

namespace {

std::string formatNumber(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool isAtomic(const ExprNode& n) {
  switch (n.op) {
    case Op::Const:  // negatives print parenthesised
    case Op::Neg:
    case Op::Var:
    case Op::Exp:
    case Op::Log:
    case Op::Sin:
    case Op::Cos:
    case Op::Sqrt: return true;
    default: return false;
  }
}

void print(const ExprNode& n, std::string& out);

void printAtom(const ExprNode& n, std::string& out) {
  if (isAtomic(n)) {
    print(n, out);
  } else {
    out += '(';
    print(n, out);
    out += ')';
  }
}

void print(const ExprNode& n, std::string& out) {
  switch (n.op) {
    case Op::Const:
      if (n.value < 0.0 || std::signbit(n.value)) {
        out += "(-" + formatNumber(-n.value) + ")";
      } else {
        out += formatNumber(n.value);
      }
      return;
    case Op::Var:
      out += 'x';
      out += std::to_string(n.var + 1);
      return;
    case Op::Add:
    case Op::Sub:
      print(*n.a, out);
      out += n.op == Op::Add ? " + " : " - ";
      if (n.b->op == Op::Add || n.b->op == Op::Sub) {
        printAtom(*n.b, out);
      } else {
        print(*n.b, out);
      }
      return;
    case Op::Mul:
    case Op::Div: {
      const auto operand = [&](const ExprNode& c, bool right) {
        const bool sum = c.op == Op::Add || c.op == Op::Sub;
        const bool prod = c.op == Op::Mul || c.op == Op::Div;
        if (sum || (right && prod)) {
          printAtom(c, out);
        } else {
          print(c, out);
        }
      };
      operand(*n.a, false);
      out += n.op == Op::Mul ? "*" : "/";
      operand(*n.b, true);
      return;
    }
    case Op::Neg:
      out += "(-";
      printAtom(*n.a, out);
      out += ')';
      return;
    case Op::Pow:
      printAtom(*n.a, out);
      out += '^';
      printAtom(*n.b, out);
      return;
    case Op::Exp:
    case Op::Log:
    case Op::Sin:
    case Op::Cos:
    case Op::Sqrt: {
      static const char* names[] = {"exp", "log", "sin", "cos", "sqrt"};
      out += names[static_cast<int>(n.op) - static_cast<int>(Op::Exp)];
      out += '(';
      print(*n.a, out);
      out += ')';
      return;
    }
  }
}

}  // namespace

std::string toString(const Expr& e) {
  std::string out;
  print(e.node(), out);
  return out;
}

double evaluate(const Expr& e, std::span<const double> x) {
  const Expr outs[] = {e};
  Tape tape(outs);
  double v = 0.0;
  tape.evaluate(x, std::span<double>(&v, 1));
  return v;
}

// ---------------------------------------------------------------------------
// Symbolic differentiation

namespace {

class Differentiator {
 public:
  explicit Differentiator(int index) : index_(index) {}

  Expr operator()(const Expr& e) {
    auto it = memo_.find(e.ptr().get());
    if (it != memo_.end()) return it->second;
    Expr d = compute(e);
    memo_.emplace(e.ptr().get(), d);
    return d;
  }

 private:
  int index_;
  std::unordered_map<const ExprNode*, Expr> memo_;

  Expr compute(const Expr& e) {
    const ExprNode& n = e.node();
    const Expr a = n.a ? Expr(n.a) : Expr();
    const Expr b = n.b ? Expr(n.b) : Expr();
    switch (n.op) {
      case Op::Const: return Expr(0.0);
      case Op::Var: return Expr(n.var == index_ ? 1.0 : 0.0);
      case Op::Add: return (*this)(a) + (*this)(b);
      case Op::Sub: return (*this)(a) - (*this)(b);
      case Op::Mul: return (*this)(a) * b + a * (*this)(b);
      case Op::Div: {
        const Expr da = (*this)(a);
        const Expr db = (*this)(b);
        if (db.isZero()) return da / b;
        return (da * b - a * db) / (b * b);
      }
      case Op::Neg: return -(*this)(a);
      case Op::Pow: {
        const Expr da = (*this)(a);
        if (b.isConstant()) {
          const double c = b.node().value;
          return Expr(c) * pow(a, Expr(c - 1.0)) * da;
        }
        const Expr db = (*this)(b);
        return e * (db * log(a) + b * da / a);
      }
      case Op::Exp: return e * (*this)(a);
      case Op::Log: return (*this)(a) / a;
      case Op::Sin: return cos(a) * (*this)(a);
      case Op::Cos: return -(sin(a) * (*this)(a));
      case Op::Sqrt: return (*this)(a) / (Expr(2.0) * e);
    }
    return Expr(0.0);
  }
};

}  // namespace

Expr differentiate(const Expr& e, int index) {
  Differentiator d(index);
  return d(e);
}

std::vector<Expr> differentiate(std::span<const Expr> es, int index) {
  Differentiator d(index);
  std::vector<Expr> out;
  out.reserve(es.size());
  for (const auto& e : es) out.push_back(d(e));
  return out;
}

namespace {
template <typename F>
void visitUnique(const Expr& e, F&& f) {
  std::unordered_map<const ExprNode*, bool> seen;
  std::vector<const ExprNode*> stack{&e.node()};
  while (!stack.empty()) {
    const ExprNode* n = stack.back();
    stack.pop_back();
    if (!seen.emplace(n, true).second) continue;
    f(*n);
    if (n->a) stack.push_back(n->a.get());
    if (n->b) stack.push_back(n->b.get());
  }
}
}  // namespace

int maxVariable(const Expr& e) {
  int m = -1;
  visitUnique(e, [&](const ExprNode& n) {
    if (n.op == Op::Var) m = std::max(m, n.var);
  });
  return m;
}

std::size_t nodeCount(const Expr& e) {
  std::size_t c = 0;
  visitUnique(e, [&](const ExprNode&) { ++c; });
  return c;
}

// ---------------------------------------------------------------------------
// Taylor polynomials

int TaylorPolynomial::Basis::indexOf(const std::vector<int>& exps) const {
  for (int i = 0; i < size(); ++i) {
    if (exponents[i] == exps) return i;
  }
  return -1;
}

std::shared_ptr<const TaylorPolynomial::Basis> TaylorPolynomial::makeBasis(int m, int degree) {
  auto basis = std::make_shared<Basis>();
  basis->m = m;
  basis->degree = degree;
  // graded order: degree 0 first so the constant term sits at index 0
  std::vector<int> cur(m, 0);
  std::function<void(int, int)> gen = [&](int pos, int remaining) {
    if (pos == m) {
      if (remaining == 0) basis->exponents.push_back(cur);
      return;
    }
    for (int e = remaining; e >= 0; --e) {
      cur[pos] = e;
      gen(pos + 1, remaining - e);
    }
    cur[pos] = 0;
  };
  for (int d = 0; d <= degree; ++d) gen(0, d);
  if (m == 0) basis->exponents = {{}};

  const int n = basis->size();
  const int radix = degree + 1;
  std::vector<int> lookup;
  auto code = [&](const std::vector<int>& e) {
    int c = 0;
    for (int k = 0; k < m; ++k) c = c * radix + e[k];
    return c;
  };
  int total = 1;
  for (int k = 0; k < m; ++k) total *= radix;
  lookup.assign(static_cast<std::size_t>(total), -1);
  basis->totalDegree.resize(n);
  for (int i = 0; i < n; ++i) {
    lookup[code(basis->exponents[i])] = i;
    int t = 0;
    for (int v : basis->exponents[i]) t += v;
    basis->totalDegree[i] = t;
  }
  basis->product.assign(n, std::vector<int>(n, -1));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (basis->totalDegree[i] + basis->totalDegree[j] > degree) continue;
      std::vector<int> s(m);
      for (int k = 0; k < m; ++k) s[k] = basis->exponents[i][k] + basis->exponents[j][k];
      basis->product[i][j] = lookup[code(s)];
    }
  }
  basis->raise.assign(n, std::vector<int>(m, -1));
  for (int i = 0; i < n; ++i) {
    if (basis->totalDegree[i] + 1 > degree) continue;
    for (int k = 0; k < m; ++k) {
      std::vector<int> s = basis->exponents[i];
      ++s[k];
      basis->raise[i][k] = lookup[code(s)];
    }
  }
  return basis;
}

TaylorPolynomial::TaylorPolynomial(std::shared_ptr<const Basis> basis, double constant)
    : basis_(std::move(basis)), coeffs_(basis_->size(), 0.0) {
  coeffs_[0] = constant;
}

TaylorPolynomial& TaylorPolynomial::operator+=(const TaylorPolynomial& o) {
  for (std::size_t i = 0; i < coeffs_.size(); ++i) coeffs_[i] += o.coeffs_[i];
  return *this;
}

TaylorPolynomial& TaylorPolynomial::operator-=(const TaylorPolynomial& o) {
  for (std::size_t i = 0; i < coeffs_.size(); ++i) coeffs_[i] -= o.coeffs_[i];
  return *this;
}

TaylorPolynomial& TaylorPolynomial::operator*=(double s) {
  for (double& c : coeffs_) c *= s;
  return *this;
}

TaylorPolynomial operator*(const TaylorPolynomial& a, const TaylorPolynomial& b) {
  TaylorPolynomial out(a.basis_);
  const auto& prod = a.basis_->product;
  const int n = a.basis_->size();
  for (int i = 0; i < n; ++i) {
    const double ai = a.coeffs_[i];
    if (ai == 0.0) continue;
    for (int j = 0; j < n; ++j) {
      const int k = prod[i][j];
      if (k < 0 || b.coeffs_[j] == 0.0) continue;
      out.coeffs_[k] += ai * b.coeffs_[j];
    }
  }
  return out;
}

TaylorPolynomial TaylorPolynomial::derivative(int k) const {
  TaylorPolynomial out(basis_);
  for (int i = 0; i < basis_->size(); ++i) {
    const int up = basis_->raise[i][k];
    if (up < 0) continue;
    out.coeffs_[i] = (basis_->exponents[i][k] + 1) * coeffs_[up];
  }
  return out;
}

bool TaylorPolynomial::isZero() const {
  return std::all_of(coeffs_.begin(), coeffs_.end(), [](double c) { return c == 0.0; });
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape(std::span<const Expr> outputs) {
  std::unordered_map<const ExprNode*, int> slot;
  for (const Expr& out : outputs) {
    // iterative post-order
    std::vector<std::pair<const ExprNode*, NodePtr>> stack;
    if (!slot.count(&out.node())) stack.emplace_back(&out.node(), out.ptr());
    while (!stack.empty()) {
      auto [n, owner] = stack.back();
      if (slot.count(n)) {
        stack.pop_back();
        continue;
      }
      bool ready = true;
      if (n->b && !slot.count(n->b.get())) {
        stack.emplace_back(n->b.get(), n->b);
        ready = false;
      }
      if (n->a && !slot.count(n->a.get())) {
        stack.emplace_back(n->a.get(), n->a);
        ready = false;
      }
      if (!ready) continue;
      stack.pop_back();
      Instr ins{n->op, n->value, n->var, n->a ? slot.at(n->a.get()) : -1, n->b ? slot.at(n->b.get()) : -1};
      if (n->op == Op::Var) maxVar_ = std::max(maxVar_, n->var);
      slot.emplace(n, static_cast<int>(code_.size()));
      code_.push_back(ins);
      nodes_.push_back(owner);
    }
    outputs_.push_back(slot.at(&out.node()));
  }
}

void Tape::fail(EvaluationError::Kind kind, std::size_t instr) const {
  throw EvaluationError(kind, toString(Expr(nodes_[instr])));
}

void Tape::evaluate(std::span<const double> x, std::span<double> out) const {
  if (maxVar_ >= static_cast<int>(x.size())) {
    throw EvaluationError(EvaluationError::Kind::BadPoint,
                          "x" + std::to_string(maxVar_ + 1) + " requested from a " +
                              std::to_string(x.size()) + "-dimensional point");
  }
  thread_local std::vector<double> v;
  v.resize(code_.size());
  for (std::size_t i = 0; i < code_.size(); ++i) {
    const Instr& in = code_[i];
    double r = 0.0;
    switch (in.op) {
      case Op::Const: r = in.value; break;
      case Op::Var: r = x[in.var]; break;
      case Op::Add: r = v[in.a] + v[in.b]; break;
      case Op::Sub: r = v[in.a] - v[in.b]; break;
      case Op::Mul: r = v[in.a] * v[in.b]; break;
      case Op::Div:
        if (v[in.b] == 0.0) fail(EvaluationError::Kind::DivisionByZero, i);
        r = v[in.a] / v[in.b];
        break;
      case Op::Neg: r = -v[in.a]; break;
      case Op::Pow: {
        const double base = v[in.a];
        const double ex = v[in.b];
        if (base < 0.0 && !isInteger(ex)) fail(EvaluationError::Kind::PowDomain, i);
        if (base == 0.0 && ex < 0.0) fail(EvaluationError::Kind::DivisionByZero, i);
        r = std::pow(base, ex);
        break;
      }
      case Op::Exp: r = std::exp(v[in.a]); break;
      case Op::Log:
        if (v[in.a] <= 0.0) fail(EvaluationError::Kind::LogDomain, i);
        r = std::log(v[in.a]);
        break;
      case Op::Sin: r = std::sin(v[in.a]); break;
      case Op::Cos: r = std::cos(v[in.a]); break;
      case Op::Sqrt:
        if (v[in.a] < 0.0) fail(EvaluationError::Kind::SqrtDomain, i);
        r = std::sqrt(v[in.a]);
        break;
    }
    if (!std::isfinite(r)) fail(EvaluationError::Kind::NonFinite, i);
    v[i] = r;
  }
  for (std::size_t k = 0; k < outputs_.size(); ++k) out[k] = v[outputs_[k]];
}

std::vector<double> Tape::evaluate(std::span<const double> x) const {
  std::vector<double> out(outputs_.size());
  evaluate(x, out);
  return out;
}

namespace {

// sum_k c[k] h^k where h has no constant term
TaylorPolynomial composeSeries(const TaylorPolynomial& h, const std::vector<double>& c) {
  TaylorPolynomial out(h.basisPtr(), c[0]);
  TaylorPolynomial power(h.basisPtr(), 1.0);
  for (std::size_t k = 1; k < c.size(); ++k) {
    power = power * h;
    if (power.isZero()) break;
    TaylorPolynomial term = power;
    term *= c[k];
    out += term;
  }
  return out;
}

TaylorPolynomial shifted(const TaylorPolynomial& a) {
  TaylorPolynomial h = a;
  h.coefficient(0) = 0.0;
  return h;
}

double binomial(double c, int k) {
  double b = 1.0;
  for (int j = 0; j < k; ++j) b *= (c - j) / (j + 1);
  return b;
}

}  // namespace

std::vector<TaylorPolynomial> Tape::taylor(std::span<const double> x0, int degree) const {
  if (maxVar_ >= static_cast<int>(x0.size())) {
    throw EvaluationError(EvaluationError::Kind::BadPoint, "taylor expansion point too short");
  }
  const int m = static_cast<int>(x0.size());
  const auto basis = TaylorPolynomial::makeBasis(m, degree);
  std::vector<TaylorPolynomial> v;
  v.reserve(code_.size());

  auto reciprocal = [&](const TaylorPolynomial& a, std::size_t i) {
    const double a0 = a.constant();
    if (a0 == 0.0) fail(EvaluationError::Kind::DivisionByZero, i);
    std::vector<double> c(degree + 1);
    for (int k = 0; k <= degree; ++k) c[k] = ((k % 2) ? -1.0 : 1.0) / std::pow(a0, k + 1);
    return composeSeries(shifted(a), c);
  };
  auto realPower = [&](const TaylorPolynomial& a, double p, std::size_t i) {
    const double a0 = a.constant();
    if (a0 <= 0.0) fail(EvaluationError::Kind::PowDomain, i);
    std::vector<double> c(degree + 1);
    for (int k = 0; k <= degree; ++k) c[k] = binomial(p, k) * std::pow(a0, p - k);
    return composeSeries(shifted(a), c);
  };
  auto logSeries = [&](const TaylorPolynomial& a, std::size_t i) {
    const double a0 = a.constant();
    if (a0 <= 0.0) fail(EvaluationError::Kind::LogDomain, i);
    std::vector<double> c(degree + 1);
    c[0] = std::log(a0);
    for (int k = 1; k <= degree; ++k) c[k] = ((k % 2) ? 1.0 : -1.0) / (k * std::pow(a0, k));
    return composeSeries(shifted(a), c);
  };
  auto expSeries = [&](const TaylorPolynomial& a) {
    const double e0 = std::exp(a.constant());
    std::vector<double> c(degree + 1);
    double fact = 1.0;
    for (int k = 0; k <= degree; ++k) {
      if (k > 0) fact *= k;
      c[k] = e0 / fact;
    }
    return composeSeries(shifted(a), c);
  };

  for (std::size_t i = 0; i < code_.size(); ++i) {
    const Instr& in = code_[i];
    switch (in.op) {
      case Op::Const: v.emplace_back(basis, in.value); break;
      case Op::Var: {
        TaylorPolynomial p(basis, x0[in.var]);
        std::vector<int> e(m, 0);
        e[in.var] = 1;
        if (degree >= 1) p.coefficient(basis->indexOf(e)) = 1.0;
        v.push_back(std::move(p));
        break;
      }
      case Op::Add: v.push_back(v[in.a] + v[in.b]); break;
      case Op::Sub: v.push_back(v[in.a] - v[in.b]); break;
      case Op::Mul: v.push_back(v[in.a] * v[in.b]); break;
      case Op::Div: v.push_back(v[in.a] * reciprocal(v[in.b], i)); break;
      case Op::Neg: v.push_back(v[in.a] * -1.0); break;
      case Op::Pow: {
        const TaylorPolynomial& a = v[in.a];
        if (code_[in.b].op == Op::Const) {
          const double p = code_[in.b].value;
          if (isInteger(p) && std::abs(p) <= 64) {
            const int n = static_cast<int>(std::abs(p));
            TaylorPolynomial base = p < 0 ? reciprocal(a, i) : a;
            TaylorPolynomial acc(basis, 1.0);
            for (int k = 0; k < n; ++k) acc = acc * base;
            v.push_back(std::move(acc));
          } else {
            v.push_back(realPower(a, p, i));
          }
        } else {
          v.push_back(expSeries(v[in.b] * logSeries(a, i)));
        }
        break;
      }
      case Op::Exp: v.push_back(expSeries(v[in.a])); break;
      case Op::Log: v.push_back(logSeries(v[in.a], i)); break;
      case Op::Sin:
      case Op::Cos: {
        const double a0 = v[in.a].constant();
        std::vector<double> c(degree + 1);
        double fact = 1.0;
        for (int k = 0; k <= degree; ++k) {
          if (k > 0) fact *= k;
          // k-th derivative of sin at a0 is sin(a0 + k pi/2); cos shifts by one more
          const int phase = (k + (in.op == Op::Cos ? 1 : 0)) % 4;
          const double d = phase == 0 ? std::sin(a0) : phase == 1 ? std::cos(a0)
                         : phase == 2 ? -std::sin(a0) : -std::cos(a0);
          c[k] = d / fact;
        }
        v.push_back(composeSeries(shifted(v[in.a]), c));
        break;
      }
      case Op::Sqrt: {
        const double a0 = v[in.a].constant();
        if (a0 < 0.0 || (a0 == 0.0 && degree > 0)) fail(EvaluationError::Kind::SqrtDomain, i);
        v.push_back(degree == 0 ? TaylorPolynomial(basis, std::sqrt(a0)) : realPower(v[in.a], 0.5, i));
        break;
      }
    }
    for (double c : v.back().coefficients()) {
      if (!std::isfinite(c)) fail(EvaluationError::Kind::NonFinite, i);
    }
  }
  std::vector<TaylorPolynomial> out;
  out.reserve(outputs_.size());
  for (int o : outputs_) out.push_back(v[o]);
  return out;
}

}  // namespace metron
