#pragma once

#include <stdexcept>
#include <string>

namespace pma {

// Error classes map 1:1 onto CLI exit codes.
enum class ErrorCode { config = 1, io = 2, numeric = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Training aborts carry the epoch at which the loss became non-finite.
class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, const std::string& msg)
      : Error(ErrorCode::numeric, msg), epoch_(epoch) {}

  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

}  // namespace pma
