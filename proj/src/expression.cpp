#include "kfplab/expression.hpp"

#include <cctype>
#include <cmath>
#include <numbers>
#include <vector>

namespace kfp {

struct Expression::Node {
  enum class Op { num, var_x, var_t, add, sub, mul, div, pow, neg, call } op = Op::num;
  double value = 0.0;
  int index = 0;
  std::string fn;
  std::vector<std::shared_ptr<const Node>> kids;

  double eval(const Vec& x, double t) const {
    switch (op) {
      case Op::num: return value;
      case Op::var_x: return x(index);
      case Op::var_t: return t;
      case Op::add: return kids[0]->eval(x, t) + kids[1]->eval(x, t);
      case Op::sub: return kids[0]->eval(x, t) - kids[1]->eval(x, t);
      case Op::mul: return kids[0]->eval(x, t) * kids[1]->eval(x, t);
      case Op::div: return kids[0]->eval(x, t) / kids[1]->eval(x, t);
      case Op::pow: return std::pow(kids[0]->eval(x, t), kids[1]->eval(x, t));
      case Op::neg: return -kids[0]->eval(x, t);
      case Op::call: break;
    }
    double u = kids[0]->eval(x, t);
    if (fn == "sin") return std::sin(u);
    if (fn == "cos") return std::cos(u);
    if (fn == "exp") return std::exp(u);
    if (fn == "log") return std::log(u);
    if (fn == "abs") return std::abs(u);
    if (fn == "sqrt") return std::sqrt(u);
    if (fn == "step") return u >= 0.0 ? 1.0 : 0.0;
    return std::exp(-u * u);  // gauss
  }
};

namespace {

using NodeP = std::shared_ptr<const Expression::Node>;
using Op = Expression::Node::Op;

class Parser {
 public:
  Parser(const std::string& s, int dim, const std::string& field) : s_(s), dim_(dim), field_(field) {}

  NodeP run() {
    NodeP n = expr();
    skip();
    if (pos_ != s_.size()) fail("unexpected '" + std::string(1, s_[pos_]) + "'");
    return n;
  }
  bool uses_x = false;

 private:
  const std::string& s_;
  int dim_;
  std::string field_;
  std::size_t pos_ = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError(field_, what + " at column " + std::to_string(pos_ + 1) + " in \"" + s_ + "\"");
  }
  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool eat(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  static NodeP make(Op op, std::vector<NodeP> kids, double v = 0.0) {
    auto n = std::make_shared<Expression::Node>();
    n->op = op;
    n->kids = std::move(kids);
    n->value = v;
    return n;
  }

  NodeP expr() {
    NodeP a = term();
    for (;;) {
      if (eat('+')) a = make(Op::add, {a, term()});
      else if (eat('-')) a = make(Op::sub, {a, term()});
      else return a;
    }
  }
  NodeP term() {
    NodeP a = unary();
    for (;;) {
      if (eat('*')) a = make(Op::mul, {a, unary()});
      else if (eat('/')) a = make(Op::div, {a, unary()});
      else return a;
    }
  }
  NodeP unary() {
    if (eat('-')) return make(Op::neg, {unary()});
    if (eat('+')) return unary();
    NodeP base = primary();
    if (eat('^')) return make(Op::pow, {base, unary()});  // right associative
    return base;
  }
  NodeP primary() {
    skip();
    if (pos_ >= s_.size()) fail("unexpected end");
    char c = s_[pos_];
    if (c == '(') {
      ++pos_;
      NodeP n = expr();
      if (!eat(')')) fail("missing ')'");
      return n;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      const char* begin = s_.c_str() + pos_;
      char* end = nullptr;
      double v = std::strtod(begin, &end);
      if (end == begin) fail("bad number");
      pos_ += static_cast<std::size_t>(end - begin);
      return make(Op::num, {}, v);
    }
    if (!std::isalpha(static_cast<unsigned char>(c))) fail("unexpected '" + std::string(1, c) + "'");
    std::size_t start = pos_;
    while (pos_ < s_.size() && std::isalnum(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    std::string id = s_.substr(start, pos_ - start);
    if (id == "t") return make(Op::var_t, {});
    if (id == "pi") return make(Op::num, {}, std::numbers::pi);
    if (id == "e") return make(Op::num, {}, std::numbers::e);
    if (id.size() > 1 && id[0] == 'x' && id.find_first_not_of("0123456789", 1) == std::string::npos) {
      int k = std::stoi(id.substr(1));
      if (k < 1 || k > dim_) {
        pos_ = start;
        fail("variable " + id + " outside x1..x" + std::to_string(dim_));
      }
      auto n = std::make_shared<Expression::Node>();
      n->op = Op::var_x;
      n->index = k - 1;
      uses_x = true;
      return n;
    }
    static const char* fns[] = {"sin", "cos", "exp", "log", "abs", "sqrt", "step", "gauss"};
    for (const char* f : fns) {
      if (id != f) continue;
      if (!eat('(')) fail("expected '(' after " + id);
      NodeP arg = expr();
      if (!eat(')')) fail("missing ')'");
      auto n = std::make_shared<Expression::Node>();
      n->op = Op::call;
      n->fn = id;
      n->kids = {arg};
      return n;
    }
    pos_ = start;
    fail("unknown name '" + id + "'");
  }
};

}  // namespace

Expression Expression::parse(const std::string& text, int dim, const std::string& field) {
  Parser p(text, dim, field);
  Expression e;
  e.root_ = p.run();
  e.text_ = text;
  e.uses_x_ = p.uses_x;
  return e;
}

double Expression::operator()(const Vec& x, double t) const { return root_->eval(x, t); }

}  // namespace kfp
