#pragma once

#include <memory>
#include <string>

#include "kfplab/types.hpp"

namespace kfp {

// Whitelisted scalar expressions in x1..xN and t.
//   numbers, pi, e, + - * / ^, parentheses
//   sin cos exp log abs sqrt, step(u) = [u >= 0], gauss(u) = exp(-u^2)
// Parse errors are ConfigError with the given field name and a column.
class Expression {
 public:
  static Expression parse(const std::string& text, int dim, const std::string& field = "expression");

  double operator()(const Vec& x, double t) const;
  const std::string& text() const { return text_; }
  // True when the text mentions no x variable.
  bool constant_in_x() const { return !uses_x_; }

  struct Node;

 private:
  std::shared_ptr<const Node> root_;
  std::string text_;
  bool uses_x_ = false;
};

}  // namespace kfp
