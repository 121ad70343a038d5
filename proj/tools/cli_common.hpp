#pragma once

#include <cstdio>
#include <exception>

#include "hf/common.hpp"

namespace hf::cli {

// Exit codes: 0 ok, 2 config error, 3 runtime error, 4 divergence.
inline int exit_code(const Error& e) {
  switch (e.code()) {
    case ErrorCode::config: return 2;
    case ErrorCode::divergence: return 4;
    default: return 3;
  }
}

template <typename F>
int run_guarded(F&& body) {
  try {
    body();
    return 0;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}

}  // namespace hf::cli
