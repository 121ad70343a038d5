#pragma once

#include <stdexcept>
#include <string>

namespace hf {

// Error taxonomy shared by the library and the CLI front-ends. The CLI maps
// codes to exit statuses (config -> 2, divergence -> 4, everything else -> 3).
enum class ErrorCode {
  config,        // invalid configuration, arguments or preconditions
  io,            // filesystem / format problems other than the named ones below
  bad_magic,     // volume file does not start with "HFV1"
  dim_overflow,  // header dims are non-positive or exceed the sanity cap
  truncated,     // payload shorter than the header promises
  geometry,      // mismatched dims/spacing between paired grids
  empty_mask,    // operation undefined on an empty mask / empty foreground
  numeric,       // NaN/Inf where finite values are required
  divergence,    // training aborted on a non-finite loss
};

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool ok, ErrorCode code, const std::string& msg) {
  if (!ok) fail(code, msg);
}

}  // namespace hf
