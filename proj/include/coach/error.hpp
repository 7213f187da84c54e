#ifndef COACH_ERROR_HPP
#define COACH_ERROR_HPP

#include <stdexcept>
#include <string>

namespace coach {

/// Failure categories. The numeric values double as CLI exit statuses.
enum class ErrorKind {
  input = 2,       ///< malformed or inconsistent input documents
  infeasible = 3,  ///< no plan satisfies the constraints
  invariant = 4,   ///< internal invariant violated
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_status() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void input_error(const std::string& what) { throw Error(ErrorKind::input, what); }

[[noreturn]] inline void infeasible_error(const std::string& what) {
  throw Error(ErrorKind::infeasible, what);
}

inline void ensure(bool condition, const std::string& what) {
  if (!condition) throw Error(ErrorKind::invariant, what);
}

}  // namespace coach

#endif  // COACH_ERROR_HPP
