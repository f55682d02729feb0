#pragma once

#include <stdexcept>
#include <string>

namespace ctxgen {

// Process exit codes used by the command-line front end.
enum class exit_code : int {
  ok = 0,
  failure = 1,
  config = 2,
  dependency = 3,
  numeric = 4,
};

class error : public std::runtime_error {
 public:
  explicit error(const std::string& what, exit_code code = exit_code::failure)
      : std::runtime_error(what), code_(code) {}
  exit_code code() const noexcept { return code_; }

 private:
  exit_code code_;
};

class config_error : public error {
 public:
  config_error(const std::string& field, const std::string& what)
      : error(field.empty() ? what : field + ": " + what, exit_code::config), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class dependency_error : public error {
 public:
  dependency_error(const std::string& stage, const std::string& what)
      : error(what + " (rerun stage '" + stage + "')", exit_code::dependency), stage_(stage) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

class numeric_error : public error {
 public:
  explicit numeric_error(const std::string& what) : error(what, exit_code::numeric) {}
};

class bounds_error : public error {
 public:
  explicit bounds_error(const std::string& what) : error(what) {}
};

class decoding_error : public error {
 public:
  explicit decoding_error(const std::string& what) : error(what) {}
};

// A sentence with no usable tokens for the requested computation.
class degenerate_sentence : public error {
 public:
  explicit degenerate_sentence(const std::string& what) : error(what) {}
};

class zero_vector_error : public error {
 public:
  zero_vector_error() : error("cosine of a zero-norm vector is undefined") {}
};

class format_error : public error {
 public:
  explicit format_error(const std::string& what) : error(what, exit_code::dependency) {}
};

}  // namespace ctxgen
