#pragma once

#include <stdexcept>
#include <string>

namespace vtforge {

enum class ErrKind {
    kShape,    // operand shapes do not conform
    kConfig,   // invalid configuration or malformed input file content
    kIo,       // filesystem / format failures
    kNumeric,  // non-finite values, domain violations
};

class Error : public std::runtime_error {
   public:
    Error(ErrKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrKind kind() const { return kind_; }

   private:
    ErrKind kind_;
};

[[noreturn]] inline void fail(ErrKind kind, const std::string& msg) { throw Error(kind, msg); }

}  // namespace vtforge
