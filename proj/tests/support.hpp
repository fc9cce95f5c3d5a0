#pragma once

#include <optional>

#include "bladefl/error.hpp"

// Code of the bladefl::Error thrown by f, or nullopt when nothing was thrown.
template <typename F>
std::optional<bladefl::ErrorCode> error_code_of(F&& f) {
  try {
    f();
  } catch (const bladefl::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

#define CHECK_ERROR(expr, code) CHECK(error_code_of([&] { (void)(expr); }) == std::optional(code))
