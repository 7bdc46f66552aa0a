#pragma once

#include <stdexcept>
#include <string>

namespace rsdg {

// Single exception type for the whole library. Messages are meant to be
// actionable ("signal too short", "sample-rate mismatch", ...).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

}  // namespace rsdg
