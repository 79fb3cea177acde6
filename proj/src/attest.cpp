#include "tdxsim/attest.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

namespace tdxsim {
namespace {

constexpr std::string_view kCertMagic = "TDXCERT1";
constexpr std::string_view kQuoteMagic = "TDXQUOT1";
constexpr std::string_view kCollateralMagic = "TDXCOLL1";
constexpr std::string_view kManifestMagic = "TDXMANF1";
constexpr std::string_view kManifestRecordMagic = "TDXMREC1";
constexpr std::string_view kRootName = "SimulatedIntelRoot";

// Bounds-checked little-endian reader; any overrun poisons the reader.
class Reader {
 public:
  explicit Reader(ByteSpan in) : in_(in) {}

  bool ok() const { return ok_; }
  bool done() const { return ok_ && off_ == in_.size(); }

  std::uint64_t le(std::size_t width) {
    if (!need(width)) return 0;
    const std::uint64_t v = get_le(in_, off_, width);
    off_ += width;
    return v;
  }
  ByteSpan take(std::size_t n) {
    if (!need(n)) return {};
    ByteSpan s = in_.subspan(off_, n);
    off_ += n;
    return s;
  }
  template <std::size_t N>
  std::array<std::uint8_t, N> arr() {
    std::array<std::uint8_t, N> a{};
    ByteSpan s = take(N);
    if (ok_) std::copy(s.begin(), s.end(), a.begin());
    return a;
  }
  bool magic(std::string_view m) {
    ByteSpan s = take(m.size());
    if (ok_ && !std::equal(s.begin(), s.end(), m.begin())) ok_ = false;
    return ok_;
  }
  std::string str16() {
    const auto n = static_cast<std::size_t>(le(2));
    ByteSpan s = take(n);
    return std::string(s.begin(), s.end());
  }

 private:
  bool need(std::size_t n) {
    if (!ok_ || in_.size() - off_ < n) ok_ = false;
    return ok_;
  }
  ByteSpan in_;
  std::size_t off_ = 0;
  bool ok_ = true;
};

void put_str16(Bytes& out, std::string_view s) {
  put_le(out, s.size(), 2);
  put_ascii(out, s);
}

std::string hex_id(const CpuId& id) { return to_hex(id); }

}  // namespace

// ---------------------------------------------------------------- certificates

Bytes Cert::tbs_bytes() const {
  Bytes out;
  put_ascii(out, kCertMagic);
  put_le64(out, serial);
  put_str16(out, subject);
  put_str16(out, issuer);
  put_bytes(out, pubkey);
  put_le(out, claims.size(), 2);
  for (const auto& [k, v] : claims) {
    put_str16(out, k);
    put_le(out, v.size(), 4);
    put_bytes(out, v);
  }
  return out;
}

Bytes Cert::serialize() const {
  Bytes out = tbs_bytes();
  put_bytes(out, signature);
  return out;
}

std::optional<Cert> Cert::parse(ByteSpan bytes) {
  Reader r(bytes);
  Cert c;
  if (!r.magic(kCertMagic)) return std::nullopt;
  c.serial = r.le(8);
  c.subject = r.str16();
  c.issuer = r.str16();
  c.pubkey = r.arr<65>();
  const auto n = r.le(2);
  for (std::uint64_t i = 0; i < n && r.ok(); ++i) {
    std::string k = r.str16();
    ByteSpan v = r.take(static_cast<std::size_t>(r.le(4)));
    if (!r.ok()) break;
    if (!c.claims.emplace(std::move(k), Bytes(v.begin(), v.end())).second) return std::nullopt;
  }
  c.signature = r.arr<64>();
  if (!r.done()) return std::nullopt;
  // Claims are serialized in key order; anything else is not canonical.
  if (c.serialize() != Bytes(bytes.begin(), bytes.end())) return std::nullopt;
  return c;
}

Cert issue_cert(std::uint64_t serial, std::string subject, std::string issuer, const crypto::EcPublicKey& pub,
                std::map<std::string, Bytes> claims, const crypto::EcPrivateKey& issuer_key) {
  Cert c;
  c.serial = serial;
  c.subject = std::move(subject);
  c.issuer = std::move(issuer);
  c.pubkey = pub;
  c.claims = std::move(claims);
  c.signature = crypto::ecdsa_sign(issuer_key, c.tbs_bytes());
  return c;
}

bool cert_signed_by(const Cert& c, const crypto::EcPublicKey& issuer_pub) {
  return crypto::ecdsa_verify(issuer_pub, c.tbs_bytes(), c.signature);
}

bool svn_at_least(const CpuSvn& a, const CpuSvn& min) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] < min[i]) return false;
  return true;
}

// ---------------------------------------------------------------- manifest

Bytes ManifestRecord::signed_bytes(const crypto::EcPublicKey& pck_pub) const {
  Bytes out;
  put_ascii(out, kManifestRecordMagic);
  put_bytes(out, cpu_id);
  put_bytes(out, cpu_svn);
  put_le(out, hw_tcb, 4);
  put_bytes(out, pck_pub);
  return out;
}

Bytes PlatformManifest::serialize() const {
  Bytes out;
  put_ascii(out, kManifestMagic);
  put_bytes(out, pck_pub);
  put_le(out, packages.size(), 2);
  for (const auto& p : packages) {
    put_bytes(out, p.cpu_id);
    put_bytes(out, p.cpu_svn);
    put_le(out, p.hw_tcb, 4);
    put_bytes(out, p.signature);
  }
  return out;
}

std::optional<PlatformManifest> PlatformManifest::parse(ByteSpan bytes) {
  Reader r(bytes);
  PlatformManifest m;
  if (!r.magic(kManifestMagic)) return std::nullopt;
  m.pck_pub = r.arr<65>();
  const auto n = r.le(2);
  for (std::uint64_t i = 0; i < n && r.ok(); ++i) {
    ManifestRecord rec;
    rec.cpu_id = r.arr<16>();
    rec.cpu_svn = r.arr<16>();
    rec.hw_tcb = static_cast<std::uint32_t>(r.le(4));
    rec.signature = r.arr<64>();
    m.packages.push_back(rec);
  }
  if (!r.done()) return std::nullopt;
  return m;
}

// ---------------------------------------------------------------- collateral

Bytes Collateral::tbs_bytes() const {
  Bytes out;
  put_ascii(out, kCollateralMagic);
  put_le64(out, version);
  put_le(out, tcb.size(), 4);
  for (const auto& [id, level] : tcb) {
    put_bytes(out, id);
    put_bytes(out, level.min_cpu_svn);
    put_le(out, level.min_module_svn, 4);
  }
  put_le(out, revoked.size(), 4);
  for (auto s : revoked) put_le64(out, s);
  return out;
}

Bytes Collateral::serialize() const {
  Bytes out = tbs_bytes();
  put_bytes(out, signature);
  return out;
}

std::optional<Collateral> Collateral::parse(ByteSpan bytes) {
  Reader r(bytes);
  Collateral c;
  if (!r.magic(kCollateralMagic)) return std::nullopt;
  c.version = r.le(8);
  const auto n = r.le(4);
  for (std::uint64_t i = 0; i < n && r.ok(); ++i) {
    const CpuId id = r.arr<16>();
    TcbLevel level;
    level.min_cpu_svn = r.arr<16>();
    level.min_module_svn = static_cast<std::uint32_t>(r.le(4));
    c.tcb[id] = level;
  }
  const auto nr = r.le(4);
  for (std::uint64_t i = 0; i < nr && r.ok(); ++i) c.revoked.insert(r.le(8));
  c.signature = r.arr<64>();
  if (!r.done()) return std::nullopt;
  return c;
}

// ---------------------------------------------------------------- PCS / PCCS

Pcs::Pcs(std::uint64_t seed) {
  crypto::Rng rng(seed);
  root_ = crypto::EcKeyPair::generate(rng);
  root_cert_ = issue_cert(1, std::string(kRootName), std::string(kRootName), root_.pub, {}, root_.priv);
  resign();
}

void Pcs::resign() {
  ++collateral_.version;
  collateral_.signature = crypto::ecdsa_sign(root_.priv, collateral_.tbs_bytes());
}

void Pcs::enroll_hardware(const CpuId& cpu_id, const crypto::EcPublicKey& hw_pub) { hardware_[cpu_id] = hw_pub; }

void Pcs::set_tcb(const CpuId& platform_id, TcbLevel level) {
  collateral_.tcb[platform_id] = level;
  resign();
}

void Pcs::revoke(std::uint64_t serial) {
  collateral_.revoked.insert(serial);
  resign();
}

Result<Cert> Pcs::register_platform(const PlatformManifest& m) {
  if (m.packages.empty()) return Status::BadParams;
  for (const auto& p : m.packages) {
    auto hw = hardware_.find(p.cpu_id);
    if (hw == hardware_.end()) return Status::UnknownPlatform;
    if (!crypto::ecdsa_verify(hw->second, p.signed_bytes(m.pck_pub), p.signature))
      return Status::BadManifestSignature;
  }
  const CpuId id = m.platform_id();
  auto level = collateral_.tcb.find(id);
  if (level == collateral_.tcb.end()) {
    set_tcb(id, TcbLevel{});
    level = collateral_.tcb.find(id);
  }
  for (const auto& p : m.packages)
    if (!svn_at_least(p.cpu_svn, level->second.min_cpu_svn)) return Status::TcbOutOfDate;
  if (auto it = issued_.find(id); it != issued_.end() && it->second.pubkey == m.pck_pub) return it->second;
  Cert c = issue_cert(next_serial_++, "PCK " + hex_id(id), std::string(kRootName), m.pck_pub,
                      {{"platform_id", Bytes(id.begin(), id.end())},
                       {"tcb", Bytes(m.packages.front().cpu_svn.begin(), m.packages.front().cpu_svn.end())}},
                      root_.priv);
  issued_[id] = c;
  return c;
}

Result<Cert> Pcs::pck_cert(const CpuId& platform_id) const {
  auto it = issued_.find(platform_id);
  if (it == issued_.end()) return Status::NotRegistered;
  return it->second;
}

Result<Cert> Pccs::register_platform(const PlatformManifest& m) {
  auto c = pcs_.register_platform(m);
  if (c) store(m.platform_id(), *c);
  return c;
}

std::optional<Cert> Pccs::lookup(const CpuId& platform_id) {
  auto it = cache_.find(platform_id);
  if (it == cache_.end()) {
    ++misses_;
    if (trace_ != nullptr) trace_->emit("pccs", "miss", {{"platform", hex_id(platform_id)}});
    return std::nullopt;
  }
  ++hits_;
  if (trace_ != nullptr) trace_->emit("pccs", "hit", {{"platform", hex_id(platform_id)}});
  return it->second;
}

Result<Cert> Pccs::pck_cert(const CpuId& platform_id) {
  if (auto c = lookup(platform_id)) return *c;
  pcs_.count_fetch();
  auto c = pcs_.pck_cert(platform_id);
  if (trace_ != nullptr)
    trace_->emit("pcs", "fetch", {{"platform", hex_id(platform_id)}, {"result", std::string(to_string(c.status()))}});
  if (c) store(platform_id, *c);
  return c;
}

Collateral Pccs::collateral() { return pcs_.collateral(); }

// ---------------------------------------------------------------- quotes

Bytes Quote::serialize() const {
  Bytes out;
  put_ascii(out, kQuoteMagic);
  put_le(out, body.size(), 4);
  put_bytes(out, body);
  put_bytes(out, signature);
  put_le(out, chain.size(), 2);
  for (const auto& c : chain) {
    const Bytes b = c.serialize();
    put_le(out, b.size(), 4);
    put_bytes(out, b);
  }
  return out;
}

std::optional<Quote> Quote::parse(ByteSpan bytes) {
  Reader r(bytes);
  Quote q;
  if (!r.magic(kQuoteMagic)) return std::nullopt;
  ByteSpan body = r.take(static_cast<std::size_t>(r.le(4)));
  q.body.assign(body.begin(), body.end());
  q.signature = r.arr<64>();
  const auto n = r.le(2);
  for (std::uint64_t i = 0; i < n && r.ok(); ++i) {
    ByteSpan cb = r.take(static_cast<std::size_t>(r.le(4)));
    if (!r.ok()) break;
    auto c = Cert::parse(cb);
    if (!c) return std::nullopt;
    q.chain.push_back(std::move(*c));
  }
  if (!r.done()) return std::nullopt;
  return q;
}

// ---------------------------------------------------------------- PCE / QE

QuotingEnclave::QuotingEnclave(Platform& platform, std::uint64_t seed) : platform_(platform), rng_(seed) {
  for (unsigned i = 0; i < platform.config().package_count; ++i) {
    cpu_ids_.push_back(rng_.bytes<16>());
    hw_keys_.push_back(crypto::EcKeyPair::generate(rng_));
  }
  pck_ = crypto::EcKeyPair::generate(rng_);
}

PlatformManifest QuotingEnclave::manifest(std::optional<CpuSvn> cpu_svn) const {
  PlatformManifest m;
  m.pck_pub = pck_.pub;
  for (std::size_t i = 0; i < cpu_ids_.size(); ++i) {
    ManifestRecord rec;
    rec.cpu_id = cpu_ids_[i];
    rec.cpu_svn = cpu_svn.value_or(platform_.config().cpu_svn);
    rec.hw_tcb = 1;
    rec.signature = crypto::ecdsa_sign(hw_keys_[i].priv, rec.signed_bytes(m.pck_pub));
    m.packages.push_back(rec);
  }
  return m;
}

Result<Cert> QuotingEnclave::qe_init() {
  if (!pck_cert_ || !root_cert_) return Status::NotRegistered;
  att_key_ = crypto::EcKeyPair::generate(rng_);
  // The PCE's legitimacy check on the QE is a local identity comparison in
  // this model; it then certifies the attestation key with the PCK.
  att_cert_ = issue_cert(next_att_serial_++, "QE attestation key", pck_cert_->subject, att_key_->pub,
                         {{"qe", Bytes{'T', 'D', 'Q', 'E'}}}, pck_.priv);
  return *att_cert_;
}

Result<Quote> QuotingEnclave::sign_report(const TdReport& report) const {
  if (!att_key_ || !att_cert_) return Status::NotRegistered;
  if (!platform_.everifyreport2(report)) return Status::ReportHmacInvalid;
  Quote q;
  q.body = report.body();
  q.signature = crypto::ecdsa_sign(att_key_->priv, q.body);
  q.chain = {*att_cert_, *pck_cert_, *root_cert_};
  return q;
}

void enroll_platform(const QuotingEnclave& qe, Pcs& pcs) {
  for (std::size_t i = 0; i < qe.cpu_ids().size(); ++i) pcs.enroll_hardware(qe.cpu_ids()[i], qe.hardware_pub(i));
}

Status provision_platform(QuotingEnclave& qe, Pccs& pccs) {
  enroll_platform(qe, pccs.upstream());
  auto pck = pccs.register_platform(qe.manifest());
  if (!pck) return pck.status();
  qe.install_certs(*pck, pccs.upstream().root_cert());
  return qe.qe_init().status();
}

// ---------------------------------------------------------------- policy

Result<ReferencePolicy> ReferencePolicy::parse(std::string_view text) {
  ReferencePolicy p;
  std::istringstream in{std::string(text)};
  std::string line;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) return Status::BadParams;
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "mrtd") {
      auto d = array_from_hex<48>(val);
      if (!d) return Status::BadParams;
      p.mrtd = *d;
    } else if (key.size() == 5 && key.starts_with("rtmr") && key[4] >= '0' && key[4] <= '3') {
      auto d = array_from_hex<48>(val);
      if (!d) return Status::BadParams;
      p.rtmr[static_cast<std::size_t>(key[4] - '0')] = *d;
    } else if (key == "module_svn") {
      std::uint32_t v = 0;
      auto [ptr, ec] = std::from_chars(val.data(), val.data() + val.size(), v, 16);
      if (ec != std::errc{} || ptr != val.data() + val.size()) return Status::BadParams;
      p.module_svn = v;
    } else if (key == "min_cpu_svn") {
      auto d = array_from_hex<16>(val);
      if (!d) return Status::BadParams;
      p.min_cpu_svn = *d;
    } else {
      return Status::BadParams;
    }
  }
  return p;
}

std::string ReferencePolicy::to_text() const {
  std::ostringstream o;
  if (mrtd) o << "mrtd = " << to_hex(*mrtd) << '\n';
  for (std::size_t i = 0; i < rtmr.size(); ++i)
    if (rtmr[i]) o << "rtmr" << i << " = " << to_hex(*rtmr[i]) << '\n';
  if (module_svn) o << "module_svn = " << std::hex << *module_svn << std::dec << '\n';
  if (min_cpu_svn) o << "min_cpu_svn = " << to_hex(*min_cpu_svn) << '\n';
  return o.str();
}

// ---------------------------------------------------------------- verification

std::string_view to_string(VerifyCheck c) {
  switch (c) {
    case VerifyCheck::Freshness: return "freshness";
    case VerifyCheck::Signature: return "signature";
    case VerifyCheck::Revoked: return "revoked";
    case VerifyCheck::Tcb: return "tcb";
    case VerifyCheck::Measurement: return "measurement";
  }
  return "?";
}

ReportData nonce_to_reportdata(ByteSpan nonce) {
  ReportData rd{};
  std::copy_n(nonce.begin(), std::min(nonce.size(), rd.size()), rd.begin());
  return rd;
}

Verdict verify_quote(const Quote& quote, const crypto::EcPublicKey& trust_root, const Collateral& collateral,
                     const ReferencePolicy& policy, ByteSpan nonce) {
  auto report = quote.report();
  if (!report) return Verdict::fail(VerifyCheck::Signature, "malformed body");

  // 1. freshness
  if (nonce.size() > report->mac.reportdata.size() || report->mac.reportdata != nonce_to_reportdata(nonce))
    return Verdict::fail(VerifyCheck::Freshness, "reportdata does not carry the nonce");

  // 2. signature chain: root -> PCK -> attestation key -> quote
  if (quote.chain.size() != 3) return Verdict::fail(VerifyCheck::Signature, "chain length");
  const Cert& att = quote.chain[0];
  const Cert& pck = quote.chain[1];
  const Cert& root = quote.chain[2];
  if (root.pubkey != trust_root || root.issuer != root.subject || !cert_signed_by(root, trust_root))
    return Verdict::fail(VerifyCheck::Signature, "root");
  if (pck.issuer != root.subject || !cert_signed_by(pck, root.pubkey))
    return Verdict::fail(VerifyCheck::Signature, "pck certificate");
  if (att.issuer != pck.subject || !cert_signed_by(att, pck.pubkey))
    return Verdict::fail(VerifyCheck::Signature, "attestation key certificate");
  if (!crypto::ecdsa_verify(att.pubkey, quote.body, quote.signature))
    return Verdict::fail(VerifyCheck::Signature, "quote signature");
  if (!crypto::ecdsa_verify(trust_root, collateral.tbs_bytes(), collateral.signature))
    return Verdict::fail(VerifyCheck::Signature, "collateral");

  // 3. revocation
  for (const Cert* c : {&pck, &att})
    if (collateral.revoked.contains(c->serial))
      return Verdict::fail(VerifyCheck::Revoked, "serial " + std::to_string(c->serial));

  // 4. TCB
  auto pid = pck.claims.find("platform_id");
  if (pid == pck.claims.end() || pid->second.size() != 16) return Verdict::fail(VerifyCheck::Tcb, "no platform id");
  CpuId id{};
  std::copy(pid->second.begin(), pid->second.end(), id.begin());
  auto level = collateral.tcb.find(id);
  if (level == collateral.tcb.end()) return Verdict::fail(VerifyCheck::Tcb, "platform not in tcb info");
  if (!svn_at_least(report->mac.cpu_svn, level->second.min_cpu_svn))
    return Verdict::fail(VerifyCheck::Tcb, "cpu_svn below minimum");
  if (report->tcb.module_svn < level->second.min_module_svn)
    return Verdict::fail(VerifyCheck::Tcb, "module_svn below minimum");
  if (policy.min_cpu_svn && !svn_at_least(report->mac.cpu_svn, *policy.min_cpu_svn))
    return Verdict::fail(VerifyCheck::Tcb, "cpu_svn below policy minimum");

  // 5. measurements
  if (policy.mrtd && report->td.mrtd != *policy.mrtd) return Verdict::fail(VerifyCheck::Measurement, "mrtd");
  for (std::size_t i = 0; i < policy.rtmr.size(); ++i)
    if (policy.rtmr[i] && report->td.rtmr[i] != *policy.rtmr[i])
      return Verdict::fail(VerifyCheck::Measurement, "rtmr" + std::to_string(i));
  if (policy.module_svn && report->tcb.module_svn != *policy.module_svn)
    return Verdict::fail(VerifyCheck::Measurement, "module_svn");
  return Verdict::pass();
}

Verdict verify_quote_bytes(ByteSpan quote, const crypto::EcPublicKey& trust_root, const Collateral& collateral,
                           const ReferencePolicy& policy, ByteSpan nonce) {
  auto q = Quote::parse(quote);
  if (!q) return Verdict::fail(VerifyCheck::Signature, "malformed quote");
  return verify_quote(*q, trust_root, collateral, policy, nonce);
}

// ---------------------------------------------------------------- agent

Result<TdReport> agent_report(const AgentTd& agent, const ReportData& reportdata) {
  GuestOp op;
  op.kind = GuestOp::Kind::Report;
  op.data.assign(reportdata.begin(), reportdata.end());
  TDXSIM_TRY(agent.platform->load_guest(agent.tdr, agent.vcpu, {op}));
  auto exit = agent.platform->td_enter(agent.lp, agent.tdr, agent.vcpu);
  if (!exit) return exit.status();
  if (exit->kind != TdExit::Kind::Report || !exit->report)
    return exit->status != Status::Success ? exit->status : Status::BadParams;
  return *exit->report;
}

// ---------------------------------------------------------------- bus

void Bus::send(Message m) {
  if (trace_ != nullptr) {
    trace_->emit(m.from, "send", {{"to", m.to}, {"kind", m.kind}, {"len", std::to_string(m.payload.size())}});
    trace_->dump(m.from, m.kind, m.payload);
  }
  queue_.push_back(std::move(m));
}

std::size_t Bus::run(std::size_t max_steps) {
  std::size_t steps = 0;
  while (!queue_.empty() && steps < max_steps) {
    Message m = std::move(queue_.front());
    queue_.pop_front();
    ++steps;
    auto it = actors_.find(m.to);
    if (it == actors_.end()) {
      if (trace_ != nullptr) trace_->emit("bus", "drop", {{"to", m.to}, {"kind", m.kind}});
      continue;
    }
    it->second(m, *this);
  }
  return steps;
}

// ---------------------------------------------------------------- RA flow

RaOutcome ra_flow(AgentTd agent, QuotingEnclave& qe, Pccs& pccs, const crypto::EcPublicKey& trust_root,
                  const ReferencePolicy& policy, crypto::Rng& rng, Trace* trace, std::optional<Bytes> replay_nonce) {
  RaOutcome out;
  Bus bus(trace);
  Pccs* pccs_ptr = &pccs;
  Pcs& pcs = pccs.upstream();

  const Bytes nonce = [&] {
    Bytes n(32);
    rng.fill(n);
    return n;
  }();
  std::optional<Cert> fetched_pck;
  std::optional<Collateral> collateral;
  bool finished = false;

  auto finish = [&](Verdict v) {
    out.verdict = std::move(v);
    finished = true;
    if (trace != nullptr)
      trace->emit("challenger", "verdict",
                  {{"ok", out.verdict.ok ? "true" : "false"}, {"reason", out.verdict.reason()}});
  };
  auto try_verify = [&](Bus&) {
    if (!out.quote || !fetched_pck || !collateral) return;
    if (out.quote->chain.size() != 3 || out.quote->chain[1] != *fetched_pck) {
      finish(Verdict::fail(VerifyCheck::Signature, "pck certificate differs from pccs copy"));
      return;
    }
    finish(verify_quote(*out.quote, trust_root, *collateral, policy, nonce));  // step 7
  };

  bus.attach("challenger", [&](const Message& m, Bus& b) {
    if (m.kind == "quote") {
      auto q = Quote::parse(m.payload);
      if (!q) return finish(Verdict::fail(VerifyCheck::Signature, "malformed quote"));
      out.quote = std::move(*q);
      if (out.quote->chain.size() < 2) return finish(Verdict::fail(VerifyCheck::Signature, "chain length"));
      const Cert& pck = out.quote->chain[1];
      auto pid = pck.claims.find("platform_id");
      const Bytes id = pid == pck.claims.end() ? Bytes(16, 0) : pid->second;
      b.send({"challenger", "pccs", "pck-request", id});  // step 5
      b.send({"challenger", "pccs", "collateral-request", {}});
    } else if (m.kind == "pck-cert") {
      fetched_pck = Cert::parse(m.payload);
      if (!fetched_pck) return finish(Verdict::fail(VerifyCheck::Signature, "pck certificate unavailable"));
      try_verify(b);
    } else if (m.kind == "collateral") {
      collateral = Collateral::parse(m.payload);
      if (!collateral) return finish(Verdict::fail(VerifyCheck::Signature, "collateral unavailable"));
      try_verify(b);
    } else if (m.kind == "error") {
      finish(Verdict::fail(VerifyCheck::Signature, std::string(m.payload.begin(), m.payload.end())));
    }
  });

  bus.attach("agent", [&](const Message& m, Bus& b) {
    if (m.kind == "attest-request") {
      const Bytes& seen = replay_nonce ? *replay_nonce : m.payload;
      auto report = agent_report(agent, nonce_to_reportdata(seen));  // step 2
      if (!report) {
        const auto s = to_string(report.status());
        return b.send({"agent", "challenger", "error", Bytes(s.begin(), s.end())});
      }
      b.send({"agent", "qe", "sign-request", report->serialize()});  // step 3
    } else if (m.kind == "quote") {
      b.send({"agent", "challenger", "quote", m.payload});  // step 4
    } else if (m.kind == "error") {
      b.send({"agent", "challenger", "error", m.payload});
    }
  });

  bus.attach("qe", [&](const Message& m, Bus& b) {
    auto report = TdReport::parse(m.payload);
    Result<Quote> q = report ? qe.sign_report(*report) : Result<Quote>(Status::BadLength);
    if (!q) {
      const auto s = to_string(q.status());
      return b.send({"qe", "agent", "error", Bytes(s.begin(), s.end())});
    }
    b.send({"qe", "agent", "quote", q->serialize()});
  });

  bus.attach("pccs", [&](const Message& m, Bus& b) {
    if (m.kind == "pck-request" && m.from == "challenger") {
      CpuId id{};
      std::copy_n(m.payload.begin(), std::min<std::size_t>(16, m.payload.size()), id.begin());
      if (auto c = pccs_ptr->lookup(id)) {
        out.pccs_hit = true;
        return b.send({"pccs", "challenger", "pck-cert", c->serialize()});
      }
      b.send({"pccs", "pcs", "pck-request", m.payload});  // step 6
    } else if (m.kind == "pck-cert" && m.from == "pcs") {
      if (auto c = Cert::parse(m.payload)) {
        CpuId id{};
        auto pid = c->claims.find("platform_id");
        if (pid != c->claims.end() && pid->second.size() == 16) std::copy_n(pid->second.begin(), 16, id.begin());
        pccs_ptr->store(id, *c);
      }
      b.send({"pccs", "challenger", "pck-cert", m.payload});
    } else if (m.kind == "collateral-request") {
      b.send({"pccs", "pcs", "collateral-request", {}});
    } else if (m.kind == "collateral") {
      b.send({"pccs", "challenger", "collateral", m.payload});
    } else if (m.kind == "error") {
      b.send({"pccs", "challenger", "error", m.payload});
    }
  });

  bus.attach("pcs", [&](const Message& m, Bus& b) {
    auto [kind, payload] = pcs_handle(pcs, m.kind == "pck-request" ? "pck" : "collateral", m.payload);
    if (m.kind == "pck-request") pcs.count_fetch();
    b.send({"pcs", "pccs", kind, payload});
  });

  bus.send({"challenger", "agent", "attest-request", nonce});  // step 1
  bus.run();
  if (!finished) finish(Verdict::fail(VerifyCheck::Signature, "flow did not complete"));
  return out;
}

// ---------------------------------------------------------------- secure channel

ReportData key_binding_reportdata(const crypto::EcPublicKey& pub) {
  const Digest48 h = crypto::sha384(pub);
  return nonce_to_reportdata(h);
}

Result<ChannelServer> channel_server_hello(const AgentTd& agent, const QuotingEnclave& qe, crypto::Rng& rng) {
  ChannelServer s;
  s.ephemeral = crypto::EcKeyPair::generate(rng);
  auto report = agent_report(agent, key_binding_reportdata(s.ephemeral.pub));
  if (!report) return report.status();
  auto quote = qe.sign_report(*report);
  if (!quote) return quote.status();
  s.hello.cert = issue_cert(rng.next_u64(), "td-server", "td-server", s.ephemeral.pub, {{"quote", quote->serialize()}},
                            s.ephemeral.priv);
  return s;
}

ServerHello relay_hello(const ServerHello& genuine, const crypto::EcKeyPair& attacker) {
  ServerHello h;
  h.cert = issue_cert(genuine.cert.serial, genuine.cert.subject, genuine.cert.issuer, attacker.pub,
                      genuine.cert.claims, attacker.priv);
  return h;
}

std::string_view to_string(ChannelFailure f) {
  switch (f) {
    case ChannelFailure::Quote: return "quote";
    case ChannelFailure::KeyBinding: return "key-binding";
    case ChannelFailure::Certificate: return "certificate";
  }
  return "?";
}

ChannelResult channel_client_verify(const ServerHello& hello, const crypto::EcPublicKey& trust_root,
                                    const Collateral& collateral, const ReferencePolicy& policy, crypto::Rng& rng) {
  ChannelResult r;
  auto fail = [&](ChannelFailure f) {
    r.ok = false;
    r.failure = f;
    return r;
  };
  if (!cert_signed_by(hello.cert, hello.cert.pubkey)) return fail(ChannelFailure::Certificate);
  auto qb = hello.cert.claims.find("quote");
  if (qb == hello.cert.claims.end()) return fail(ChannelFailure::Certificate);
  auto quote = Quote::parse(qb->second);
  if (!quote) {
    r.quote_verdict = Verdict::fail(VerifyCheck::Signature, "malformed quote");
    return fail(ChannelFailure::Quote);
  }
  auto report = quote->report();
  if (!report) {
    r.quote_verdict = Verdict::fail(VerifyCheck::Signature, "malformed body");
    return fail(ChannelFailure::Quote);
  }
  // The binding to the presented key is what makes the quote fresh here.
  r.quote_verdict = verify_quote(*quote, trust_root, collateral, policy, report->mac.reportdata);
  if (!r.quote_verdict.ok) return fail(ChannelFailure::Quote);
  const ReportData want = key_binding_reportdata(hello.cert.pubkey);
  if (report->mac.reportdata != want) return fail(ChannelFailure::KeyBinding);
  const auto client = crypto::EcKeyPair::generate(rng);
  auto secret = crypto::ecdh_shared_secret(client.priv, hello.cert.pubkey);
  if (!secret) return fail(ChannelFailure::Certificate);
  r.ok = true;
  r.client_secret = *secret;
  r.client_pub = client.pub;
  return r;
}

HandshakeResult secure_channel_handshake(const AgentTd& agent, const QuotingEnclave& qe,
                                         const crypto::EcPublicKey& trust_root, const Collateral& collateral,
                                         const ReferencePolicy& policy, crypto::Rng& rng) {
  HandshakeResult h;
  auto server = channel_server_hello(agent, qe, rng);
  if (!server) {
    h.client.failure = ChannelFailure::Quote;
    h.client.quote_verdict = Verdict::fail(VerifyCheck::Signature, std::string(to_string(server.status())));
    return h;
  }
  h.client = channel_client_verify(server->hello, trust_root, collateral, policy, rng);
  if (!h.client.ok) return h;
  auto secret = crypto::ecdh_shared_secret(server->ephemeral.priv, h.client.client_pub);
  if (!secret) return h;
  h.session = Session{*secret, h.client.client_secret};
  return h;
}

// ---------------------------------------------------------------- key release

KeyReleaseResult key_release(const KeyReleaseServer& server, const Collateral& collateral, const Quote& quote,
                             ByteSpan nonce) {
  KeyReleaseResult r;
  r.verdict = verify_quote(quote, server.trust_root, collateral, server.policy, nonce);
  r.released = r.verdict.ok;
  if (r.released) r.key = server.partition_key;
  return r;
}

Bytes seal_partition(const crypto::GcmKey& key, const crypto::GcmNonce& nonce, ByteSpan plaintext) {
  Bytes out(nonce.begin(), nonce.end());
  put_bytes(out, crypto::aes256_gcm_seal(key, nonce, plaintext));
  return out;
}

std::optional<Bytes> open_partition(const crypto::GcmKey& key, ByteSpan blob) {
  crypto::GcmNonce nonce{};
  if (blob.size() < nonce.size()) return std::nullopt;
  std::copy_n(blob.begin(), nonce.size(), nonce.begin());
  return crypto::aes256_gcm_open(key, nonce, blob.subspan(nonce.size()));
}

EncryptedBootOutcome encrypted_boot(const AgentTd& agent, const QuotingEnclave& qe, Pccs& pccs,
                                    const KeyReleaseServer& server, ByteSpan partition_blob, crypto::Rng& rng,
                                    Trace* trace) {
  EncryptedBootOutcome out;
  auto emit = [&](std::string_view actor, std::string_view event, std::vector<TraceField> f) {
    if (trace != nullptr) trace->emit(actor, event, std::move(f));
  };
  auto deny = [&](Verdict v) {
    out.verdict = std::move(v);
    emit("kbs", "verdict", {{"ok", "false"}, {"reason", out.verdict.reason()}});
    emit("agent", "boot", {{"key_released", "false"}});
    return out;
  };

  // The release server's view of the platform collateral.
  const Collateral collateral = pccs.collateral();
  if (qe.pck_cert()) (void)pccs.pck_cert(qe.platform_id());

  auto hs = secure_channel_handshake(agent, qe, server.trust_root, collateral, server.policy, rng);
  emit("kbs", "channel",
       {{"ok", hs.session ? "true" : "false"},
        {"failure", hs.client.failure ? std::string(to_string(*hs.client.failure)) : std::string("none")}});
  if (!hs.session) return deny(hs.client.quote_verdict.ok ? Verdict::fail(VerifyCheck::Signature, "channel")
                                                          : hs.client.quote_verdict);
  out.channel_ok = true;

  Bytes nonce(32);
  rng.fill(nonce);
  emit("kbs", "nonce", {{"hex", to_hex(nonce)}});
  auto report = agent_report(agent, nonce_to_reportdata(nonce));
  if (!report) return deny(Verdict::fail(VerifyCheck::Signature, std::string(to_string(report.status()))));
  auto quote = qe.sign_report(*report);
  if (!quote) return deny(Verdict::fail(VerifyCheck::Signature, std::string(to_string(quote.status()))));
  emit("agent", "quote", {{"len", std::to_string(quote->serialize().size())}});

  auto kr = key_release(server, collateral, *quote, nonce);
  if (!kr.released) return deny(kr.verdict);
  out.verdict = kr.verdict;
  emit("kbs", "verdict", {{"ok", "true"}, {"reason", "none"}});

  // Key travels sealed under the channel secret.
  crypto::GcmKey wrap{};
  std::copy(hs.session->client_secret.begin(), hs.session->client_secret.end(), wrap.begin());
  const auto wnonce = rng.bytes<12>();
  const Bytes sealed = crypto::aes256_gcm_seal(wrap, wnonce, kr.key);
  crypto::GcmKey unwrap{};
  std::copy(hs.session->server_secret.begin(), hs.session->server_secret.end(), unwrap.begin());
  auto key = crypto::aes256_gcm_open(unwrap, wnonce, sealed);
  if (!key || key->size() != 32) return deny(Verdict::fail(VerifyCheck::Signature, "key unwrap"));
  crypto::GcmKey pkey{};
  std::copy(key->begin(), key->end(), pkey.begin());
  out.plaintext = open_partition(pkey, partition_blob);
  out.key_released = out.plaintext.has_value();
  emit("agent", "boot",
       {{"partition", out.plaintext ? "mounted" : "corrupt"}, {"key_released", out.key_released ? "true" : "false"}});
  return out;
}

// ---------------------------------------------------------------- line protocol

std::string encode_line(std::string_view kind, ByteSpan payload) {
  std::string s(kind);
  s += ' ';
  s += std::to_string(payload.size());
  s += ' ';
  s += payload.empty() ? std::string("-") : to_hex(payload);
  return s;
}

std::optional<std::pair<std::string, Bytes>> decode_line(std::string_view line) {
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.remove_suffix(1);
  const auto a = line.find(' ');
  if (a == std::string_view::npos || a == 0) return std::nullopt;
  const auto b = line.find(' ', a + 1);
  if (b == std::string_view::npos) return std::nullopt;
  std::size_t len = 0;
  const std::string_view ls = line.substr(a + 1, b - a - 1);
  auto [ptr, ec] = std::from_chars(ls.data(), ls.data() + ls.size(), len);
  if (ec != std::errc{} || ptr != ls.data() + ls.size()) return std::nullopt;
  const std::string_view hex = line.substr(b + 1);
  Bytes payload;
  if (hex != "-") {
    auto p = from_hex(hex);
    if (!p) return std::nullopt;
    payload = std::move(*p);
  }
  if (payload.size() != len) return std::nullopt;
  return std::make_pair(std::string(line.substr(0, a)), std::move(payload));
}

std::pair<std::string, Bytes> pcs_handle(Pcs& pcs, std::string_view kind, ByteSpan payload) {
  auto error = [](Status s) {
    const auto n = to_string(s);
    return std::make_pair(std::string("error"), Bytes(n.begin(), n.end()));
  };
  if (kind == "register") {
    auto m = PlatformManifest::parse(payload);
    if (!m) return error(Status::BadParams);
    auto c = pcs.register_platform(*m);
    if (!c) return error(c.status());
    return {"pck-cert", c->serialize()};
  }
  if (kind == "pck") {
    if (payload.size() != 16) return error(Status::BadParams);
    CpuId id{};
    std::copy(payload.begin(), payload.end(), id.begin());
    auto c = pcs.pck_cert(id);
    if (!c) return error(c.status());
    return {"pck-cert", c->serialize()};
  }
  if (kind == "collateral") return {"collateral", pcs.collateral().serialize()};
  if (kind == "root") return {"root-cert", pcs.root_cert().serialize()};
  return error(Status::UnknownLeaf);
}

}  // namespace tdxsim
