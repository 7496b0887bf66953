#pragma once

#include <ostream>
#include <span>
#include <string>

namespace crashseq::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsageError = 1;
inline constexpr int kRuntimeError = 2;

// args excludes the program name. Results go to `out`, logs and errors to `err`.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace crashseq::cli
