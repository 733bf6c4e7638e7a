#ifndef IOD_ERROR_H_
#define IOD_ERROR_H_

#include <stdexcept>
#include <string>

namespace iod {

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kParse,
  kNotFound,
  kIo,
};

// Domain error raised by every module. The CLI maps it to exit status 1.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void Require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) throw Error(code, what);
}

}  // namespace iod

#endif  // IOD_ERROR_H_
