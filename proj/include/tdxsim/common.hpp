#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace tdxsim {

using Bytes = std::vector<std::uint8_t>;
using ByteSpan = std::span<const std::uint8_t>;
using Digest48 = std::array<std::uint8_t, 48>;
using Digest32 = std::array<std::uint8_t, 32>;
using Line = std::array<std::uint8_t, 64>;

inline constexpr std::uint64_t kLineSize = 64;
inline constexpr std::uint64_t kPage4K = 4096;
inline constexpr std::uint64_t kPage2M = 2ull << 20;
inline constexpr std::uint64_t kPage1G = 1ull << 30;
inline constexpr std::uint64_t kLinesPerPage = kPage4K / kLineSize;

enum class PageSize : std::uint8_t { k4K = 0, k2M = 1, k1G = 2 };

constexpr std::uint64_t page_bytes(PageSize s) {
  switch (s) {
    case PageSize::k4K: return kPage4K;
    case PageSize::k2M: return kPage2M;
    case PageSize::k1G: return kPage1G;
  }
  return 0;
}

std::string_view to_string(PageSize s);

// Completion status of every simulated operation. Success is the only
// non-error value.
enum class Status : std::uint16_t {
  Success = 0,
  // mem-engine
  AlreadyConfigured,
  InvalidBits,
  NotConfigured,
  HkidOutOfRange,
  PrivateHkidFromNonSeam,
  AlreadyBound,
  HkidNotBound,
  Unaligned,
  CiDisabled,
  // seam-core
  BadSignature,
  SvnDowngrade,
  ReentrantSession,
  BadParams,
  VmFailInvalid,
  UnknownLeaf,
  InvalidLp,
  HkidNotPrivate,
  TdmrInvalid,
  OutOfOrderCall,
  KeyNotConfigured,
  // mem-mgmt
  Misaligned,
  Overlap,
  NotConvertible,
  ReservedAreaMisaligned,
  OutsideTdmr,
  ReservedArea,
  Uninitialized,
  AlreadyOwned,
  WrongOwner,
  SizeMismatch,
  KeyholesExhausted,
  NotMapped,
  AlreadyMapped,
  SharedBitMismatch,
  PamtOwnerMismatch,
  PamtSizeMismatch,
  // td-lifecycle
  HkidInUse,
  PageNotFree,
  NotBuilding,
  SharedGpa,
  NotPending,
  TdFatal,
  NotFinalized,
  UnsupportedExitClass,
  TdNotFound,
  VcpuNotFound,
  // measure-report
  BadIndex,
  BadLength,
  // quote-attest
  BadManifestSignature,
  TcbOutOfDate,
  NotRegistered,
  ReportHmacInvalid,
  UnknownPlatform,
  // cli-harness
  NotInitialized,
};

std::string_view to_string(Status s);

template <class T>
class [[nodiscard]] Result {
 public:
  Result(T value) : v_(std::move(value)) {}  // NOLINT(google-explicit-constructor)
  Result(Status s) : v_(s) {}                // NOLINT(google-explicit-constructor)

  bool ok() const { return std::holds_alternative<T>(v_); }
  explicit operator bool() const { return ok(); }
  Status status() const { return ok() ? Status::Success : std::get<Status>(v_); }

  T& value() & { return std::get<T>(v_); }
  const T& value() const& { return std::get<T>(v_); }
  T&& value() && { return std::get<T>(std::move(v_)); }
  T& operator*() & { return value(); }
  const T& operator*() const& { return value(); }
  T* operator->() { return &value(); }
  const T* operator->() const { return &value(); }

 private:
  std::variant<T, Status> v_;
};

#define TDXSIM_TRY(expr)                                   \
  do {                                                     \
    if (::tdxsim::Status s_ = (expr); s_ != ::tdxsim::Status::Success) \
      return s_;                                           \
  } while (0)

// Little-endian serialization helpers shared by every hash/MAC transcript.
inline void put_le(Bytes& out, std::uint64_t v, std::size_t width) {
  for (std::size_t i = 0; i < width; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_le64(Bytes& out, std::uint64_t v) { put_le(out, v, 8); }
inline void put_bytes(Bytes& out, ByteSpan b) { out.insert(out.end(), b.begin(), b.end()); }
inline void put_ascii(Bytes& out, std::string_view s) { out.insert(out.end(), s.begin(), s.end()); }

inline std::uint64_t get_le(ByteSpan in, std::size_t offset, std::size_t width) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < width; ++i) v |= std::uint64_t{in[offset + i]} << (8 * i);
  return v;
}

std::string to_hex(ByteSpan b);
std::optional<Bytes> from_hex(std::string_view hex);

template <std::size_t N>
std::optional<std::array<std::uint8_t, N>> array_from_hex(std::string_view hex) {
  auto b = from_hex(hex);
  if (!b || b->size() != N) return std::nullopt;
  std::array<std::uint8_t, N> a{};
  std::copy(b->begin(), b->end(), a.begin());
  return a;
}

}  // namespace tdxsim
