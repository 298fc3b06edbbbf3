#include "podo/error.hpp"

namespace podo {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::EmptyForeground: return "EmptyForeground";
    case Errc::DegeneratePose: return "DegeneratePose";
    case Errc::NoOverlap: return "NoOverlap";
    case Errc::RegistrationRejected: return "RegistrationRejected";
    case Errc::OutsideFoot: return "OutsideFoot";
    case Errc::IllegalTransition: return "IllegalTransition";
    case Errc::Unauthorized: return "Unauthorized";
    case Errc::Unauthenticated: return "Unauthenticated";
    case Errc::BadCredentials: return "BadCredentials";
    case Errc::UnregisteredScan: return "UnregisteredScan";
    case Errc::EmptyRange: return "EmptyRange";
    case Errc::UnknownDevice: return "UnknownDevice";
    case Errc::UnknownJob: return "UnknownJob";
    case Errc::NotFound: return "NotFound";
    case Errc::AlreadyExists: return "AlreadyExists";
    case Errc::DeviceTimeout: return "DeviceTimeout";
    case Errc::DecodeError: return "DecodeError";
    case Errc::StorageFull: return "StorageFull";
    case Errc::CorruptRecord: return "CorruptRecord";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace podo
