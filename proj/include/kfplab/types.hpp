#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace kfp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Schema or argument problem in user-supplied configuration. `field` names the
// offending JSON path when known.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : std::runtime_error(field.empty() ? what : field + ": " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class QuadratureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kfp
