#pragma once

#include <stdexcept>
#include <string>

namespace somnus {

// Error categories mirror the status codes of the public C API.
enum class ErrorCode {
  invalid_argument,
  io_error,
  corrupt_data,
  missing_dependency,
  contract_violation,
  internal,
};

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void throw_invalid(const std::string& msg) {
  throw Error(ErrorCode::invalid_argument, msg);
}
[[noreturn]] inline void throw_io(const std::string& msg) {
  throw Error(ErrorCode::io_error, msg);
}
[[noreturn]] inline void throw_corrupt(const std::string& msg) {
  throw Error(ErrorCode::corrupt_data, msg);
}
[[noreturn]] inline void throw_missing(const std::string& msg) {
  throw Error(ErrorCode::missing_dependency, msg);
}
[[noreturn]] inline void throw_contract(const std::string& msg) {
  throw Error(ErrorCode::contract_violation, msg);
}
[[noreturn]] inline void throw_internal(const std::string& msg) {
  throw Error(ErrorCode::internal, msg);
}

}  // namespace somnus
