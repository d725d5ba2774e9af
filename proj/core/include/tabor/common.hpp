#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tabor {

// Base type for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Distinguishable failure modes for the binary container formats.  The CLI
// maps these onto their own exit code, so keep the enum stable.
enum class IoCode {
  BadMagic,
  Truncated,
  VersionMismatch,
  CrcMismatch,
  Malformed,
};

class IoError : public Error {
 public:
  IoError(IoCode code, const std::string& what) : Error(what), code_(code) {}
  IoCode code() const { return code_; }

 private:
  IoCode code_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace tabor
