#pragma once

// TD report: REPORTMACSTRUCT, TEE_TCB_INFO and TD_INFO in a fixed canonical
// byte layout (field order as declared, integers little-endian, digests
// raw).

#include "tdxsim/crypto.hpp"

namespace tdxsim {

using ReportData = std::array<std::uint8_t, 64>;
using CpuSvn = std::array<std::uint8_t, 16>;

inline constexpr std::array<std::uint8_t, 8> kReportHeaderTdx = {'T', 'D', 'X', 'R', 1, 0, 0, 0};

struct TeeTcbInfo {
  std::uint16_t module_svn = 0;
  Digest48 module_measurement{};

  static constexpr std::size_t kSize = 2 + 48;
  Bytes serialize() const;
  bool operator==(const TeeTcbInfo&) const = default;
};

struct TdInfo {
  std::uint64_t attributes = 0;
  Digest48 mrtd{};
  std::array<Digest48, 4> rtmr{};

  static constexpr std::size_t kSize = 8 + 48 + 4 * 48;
  Bytes serialize() const;
  bool operator==(const TdInfo&) const = default;
};

struct ReportMacStruct {
  std::array<std::uint8_t, 8> header = kReportHeaderTdx;
  CpuSvn cpu_svn{};
  Digest48 tee_tcb_info_hash{};
  Digest48 td_info_hash{};
  ReportData reportdata{};
  Digest48 hmac{};

  static constexpr std::size_t kMacInputSize = 8 + 16 + 48 + 48 + 64;
  static constexpr std::size_t kSize = kMacInputSize + 48;
  // Every field except the hmac itself.
  Bytes mac_input() const;
  bool operator==(const ReportMacStruct&) const = default;
};

struct TdReport {
  ReportMacStruct mac;
  TeeTcbInfo tcb;
  TdInfo td;

  static constexpr std::size_t kSize = ReportMacStruct::kSize + TeeTcbInfo::kSize + TdInfo::kSize;
  static constexpr std::size_t kHmacOffset = ReportMacStruct::kMacInputSize;

  Bytes serialize() const;
  static std::optional<TdReport> parse(ByteSpan bytes);
  // The report with the hmac field removed: what a quote signs.
  Bytes body() const;
  bool operator==(const TdReport&) const = default;
};

// Fills in the two component hashes and the HMAC.
void seal_report(TdReport& r, ByteSpan hmac_key);
// Component hashes match and the HMAC verifies under hmac_key.
bool check_report(const TdReport& r, ByteSpan hmac_key);

// Layout of a quote body: TdReport::body().
inline constexpr std::size_t kReportBodySize = TdReport::kSize - 48;
std::optional<TdReport> parse_report_body(ByteSpan body);

}  // namespace tdxsim
