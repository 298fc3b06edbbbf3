#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace podo {

enum class Errc {
  InvalidArgument,
  EmptyForeground,
  DegeneratePose,
  NoOverlap,
  RegistrationRejected,
  OutsideFoot,
  IllegalTransition,
  Unauthorized,
  Unauthenticated,
  BadCredentials,
  UnregisteredScan,
  EmptyRange,
  UnknownDevice,
  UnknownJob,
  NotFound,
  AlreadyExists,
  DeviceTimeout,
  DecodeError,
  StorageFull,
  CorruptRecord,
  Io,
};

std::string_view errc_name(Errc code) noexcept;

// Domain error carried through every layer; the CLI maps it to exit code 1
// and the server maps it to an HTTP status plus the error envelope.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace podo
