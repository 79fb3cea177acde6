#include "tdxsim/common.hpp"

namespace tdxsim {

std::string_view to_string(PageSize s) {
  switch (s) {
    case PageSize::k4K: return "4K";
    case PageSize::k2M: return "2M";
    case PageSize::k1G: return "1G";
  }
  return "?";
}

std::string_view to_string(Status s) {
  switch (s) {
    case Status::Success: return "SUCCESS";
    case Status::AlreadyConfigured: return "ALREADY_CONFIGURED";
    case Status::InvalidBits: return "INVALID_BITS";
    case Status::NotConfigured: return "NOT_CONFIGURED";
    case Status::HkidOutOfRange: return "HKID_OUT_OF_RANGE";
    case Status::PrivateHkidFromNonSeam: return "PRIVATE_HKID_FROM_NON_SEAM";
    case Status::AlreadyBound: return "ALREADY_BOUND";
    case Status::HkidNotBound: return "HKID_NOT_BOUND";
    case Status::Unaligned: return "UNALIGNED";
    case Status::CiDisabled: return "CI_DISABLED";
    case Status::BadSignature: return "BAD_SIGNATURE";
    case Status::SvnDowngrade: return "SVN_DOWNGRADE";
    case Status::ReentrantSession: return "REENTRANT_SESSION";
    case Status::BadParams: return "BAD_PARAMS";
    case Status::VmFailInvalid: return "VMFAIL_INVALID";
    case Status::UnknownLeaf: return "UNKNOWN_LEAF";
    case Status::InvalidLp: return "INVALID_LP";
    case Status::HkidNotPrivate: return "HKID_NOT_PRIVATE";
    case Status::TdmrInvalid: return "TDMR_INVALID";
    case Status::OutOfOrderCall: return "OUT_OF_ORDER_CALL";
    case Status::KeyNotConfigured: return "KEY_NOT_CONFIGURED";
    case Status::Misaligned: return "MISALIGNED";
    case Status::Overlap: return "OVERLAP";
    case Status::NotConvertible: return "NOT_CONVERTIBLE";
    case Status::ReservedAreaMisaligned: return "RESERVED_AREA_MISALIGNED";
    case Status::OutsideTdmr: return "OUTSIDE_TDMR";
    case Status::ReservedArea: return "RESERVED_AREA";
    case Status::Uninitialized: return "UNINITIALIZED";
    case Status::AlreadyOwned: return "ALREADY_OWNED";
    case Status::WrongOwner: return "WRONG_OWNER";
    case Status::SizeMismatch: return "SIZE_MISMATCH";
    case Status::KeyholesExhausted: return "KEYHOLES_EXHAUSTED";
    case Status::NotMapped: return "NOT_MAPPED";
    case Status::AlreadyMapped: return "ALREADY_MAPPED";
    case Status::SharedBitMismatch: return "SHARED_BIT_MISMATCH";
    case Status::PamtOwnerMismatch: return "PAMT_OWNER_MISMATCH";
    case Status::PamtSizeMismatch: return "PAMT_SIZE_MISMATCH";
    case Status::HkidInUse: return "HKID_IN_USE";
    case Status::PageNotFree: return "PAGE_NOT_FREE";
    case Status::NotBuilding: return "NOT_BUILDING";
    case Status::SharedGpa: return "SHARED_GPA";
    case Status::NotPending: return "NOT_PENDING";
    case Status::TdFatal: return "TD_FATAL";
    case Status::NotFinalized: return "NOT_FINALIZED";
    case Status::UnsupportedExitClass: return "UNSUPPORTED_EXIT_CLASS";
    case Status::TdNotFound: return "TD_NOT_FOUND";
    case Status::VcpuNotFound: return "VCPU_NOT_FOUND";
    case Status::BadIndex: return "BAD_INDEX";
    case Status::BadLength: return "BAD_LENGTH";
    case Status::BadManifestSignature: return "BAD_MANIFEST_SIGNATURE";
    case Status::TcbOutOfDate: return "TCB_OUT_OF_DATE";
    case Status::NotRegistered: return "NOT_REGISTERED";
    case Status::ReportHmacInvalid: return "REPORT_HMAC_INVALID";
    case Status::UnknownPlatform: return "UNKNOWN_PLATFORM";
    case Status::NotInitialized: return "NOT_INITIALIZED";
  }
  return "UNKNOWN_STATUS";
}

std::string to_hex(ByteSpan b) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(b.size() * 2);
  for (auto c : b) {
    s.push_back(kDigits[c >> 4]);
    s.push_back(kDigits[c & 0xf]);
  }
  return s;
}

std::optional<Bytes> from_hex(std::string_view hex) {
  if (hex.starts_with("0x") || hex.starts_with("0X")) hex.remove_prefix(2);
  if (hex.size() % 2 != 0) return std::nullopt;
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  Bytes out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    int hi = nibble(hex[i]);
    int lo = nibble(hex[i + 1]);
    if (hi < 0 || lo < 0) return std::nullopt;
    out.push_back(static_cast<std::uint8_t>((hi << 4) | lo));
  }
  return out;
}

}  // namespace tdxsim
