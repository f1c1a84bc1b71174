#pragma once

#include <stdexcept>
#include <string>

namespace draftrec {

// Base for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor op received operands of incompatible shape.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN reached an op input, a gradient, or the loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Input data violates a record invariant. `rule()` names the violated rule.
class DataError : public Error {
 public:
  DataError(std::string rule, const std::string& what)
      : Error(what), rule_(std::move(rule)) {}
  const std::string& rule() const noexcept { return rule_; }

 private:
  std::string rule_;
};

// A draft action is not allowed at the current moment (banned, taken, ...).
class LegalityError : public Error {
 public:
  LegalityError(std::string rule, const std::string& what)
      : Error(what), rule_(std::move(rule)) {}
  const std::string& rule() const noexcept { return rule_; }

 private:
  std::string rule_;
};

}  // namespace draftrec
