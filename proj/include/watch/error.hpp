#pragma once

#include <stdexcept>
#include <string>

namespace watch {

// Every error raised by the library derives from watch::error so callers can
// catch one type at the boundary (the CLI maps these onto exit codes).
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class invalid_input : public error {
 public:
  using error::error;
};

class invalid_state : public error {
 public:
  using error::error;
};

class invalid_weights : public error {
 public:
  using error::error;
};

class config_error : public error {
 public:
  using error::error;
};

class sequencing_error : public error {
 public:
  using error::error;
};

class numeric_error : public error {
 public:
  using error::error;
};

class complexity_error : public error {
 public:
  using error::error;
};

class restore_error : public error {
 public:
  using error::error;
};

}  // namespace watch
