#include "tdxsim/report.hpp"

#include <algorithm>

#include <openssl/crypto.h>

namespace tdxsim {
namespace {

template <std::size_t N>
void take(ByteSpan in, std::size_t& off, std::array<std::uint8_t, N>& out) {
  std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(off), N, out.begin());
  off += N;
}

void parse_tail(ByteSpan in, std::size_t off, TdReport& r) {
  r.tcb.module_svn = static_cast<std::uint16_t>(get_le(in, off, 2));
  off += 2;
  take(in, off, r.tcb.module_measurement);
  r.td.attributes = get_le(in, off, 8);
  off += 8;
  take(in, off, r.td.mrtd);
  for (auto& m : r.td.rtmr) take(in, off, m);
}

std::size_t parse_head(ByteSpan in, TdReport& r) {
  std::size_t off = 0;
  take(in, off, r.mac.header);
  take(in, off, r.mac.cpu_svn);
  take(in, off, r.mac.tee_tcb_info_hash);
  take(in, off, r.mac.td_info_hash);
  take(in, off, r.mac.reportdata);
  return off;
}

}  // namespace

Bytes TeeTcbInfo::serialize() const {
  Bytes out;
  put_le(out, module_svn, 2);
  put_bytes(out, module_measurement);
  return out;
}

Bytes TdInfo::serialize() const {
  Bytes out;
  put_le64(out, attributes);
  put_bytes(out, mrtd);
  for (const auto& r : rtmr) put_bytes(out, r);
  return out;
}

Bytes ReportMacStruct::mac_input() const {
  Bytes out;
  put_bytes(out, header);
  put_bytes(out, cpu_svn);
  put_bytes(out, tee_tcb_info_hash);
  put_bytes(out, td_info_hash);
  put_bytes(out, reportdata);
  return out;
}

Bytes TdReport::serialize() const {
  Bytes out = mac.mac_input();
  put_bytes(out, mac.hmac);
  put_bytes(out, tcb.serialize());
  put_bytes(out, td.serialize());
  return out;
}

Bytes TdReport::body() const {
  Bytes out = mac.mac_input();
  put_bytes(out, tcb.serialize());
  put_bytes(out, td.serialize());
  return out;
}

std::optional<TdReport> TdReport::parse(ByteSpan bytes) {
  if (bytes.size() != kSize) return std::nullopt;
  TdReport r;
  std::size_t off = parse_head(bytes, r);
  take(bytes, off, r.mac.hmac);
  parse_tail(bytes, off, r);
  return r;
}

std::optional<TdReport> parse_report_body(ByteSpan body) {
  if (body.size() != kReportBodySize) return std::nullopt;
  TdReport r;
  parse_tail(body, parse_head(body, r), r);
  return r;
}

void seal_report(TdReport& r, ByteSpan hmac_key) {
  r.mac.tee_tcb_info_hash = crypto::sha384(r.tcb.serialize());
  r.mac.td_info_hash = crypto::sha384(r.td.serialize());
  r.mac.hmac = crypto::hmac_sha384(hmac_key, r.mac.mac_input());
}

bool check_report(const TdReport& r, ByteSpan hmac_key) {
  if (r.mac.header != kReportHeaderTdx) return false;
  if (crypto::sha384(r.tcb.serialize()) != r.mac.tee_tcb_info_hash) return false;
  if (crypto::sha384(r.td.serialize()) != r.mac.td_info_hash) return false;
  const Digest48 want = crypto::hmac_sha384(hmac_key, r.mac.mac_input());
  return CRYPTO_memcmp(want.data(), r.mac.hmac.data(), want.size()) == 0;
}

}  // namespace tdxsim
