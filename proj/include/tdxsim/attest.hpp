#pragma once

// Quote infrastructure: minimal certificates, the PCS and its caching proxy,
// the PCE/QE pair that turns reports into quotes, quote verification, and
// the flows built on top (remote attestation, RA-bound channel, key release).

#include <deque>
#include <functional>

#include "tdxsim/platform.hpp"

namespace tdxsim {

// Self-describing certificate record. The signature covers tbs_bytes().
struct Cert {
  std::uint64_t serial = 0;
  std::string subject;
  std::string issuer;
  crypto::EcPublicKey pubkey{};
  std::map<std::string, Bytes> claims;
  crypto::EcSignature signature{};

  Bytes tbs_bytes() const;
  Bytes serialize() const;
  static std::optional<Cert> parse(ByteSpan bytes);
  bool operator==(const Cert&) const = default;
};

Cert issue_cert(std::uint64_t serial, std::string subject, std::string issuer, const crypto::EcPublicKey& pub,
                std::map<std::string, Bytes> claims, const crypto::EcPrivateKey& issuer_key);
bool cert_signed_by(const Cert& c, const crypto::EcPublicKey& issuer_pub);

using CpuId = std::array<std::uint8_t, 16>;

// Every byte of a is at least the matching byte of min.
bool svn_at_least(const CpuSvn& a, const CpuSvn& min);

struct ManifestRecord {
  CpuId cpu_id{};
  CpuSvn cpu_svn{};
  std::uint32_t hw_tcb = 0;
  crypto::EcSignature signature{};  // by the package's hardware key

  Bytes signed_bytes(const crypto::EcPublicKey& pck_pub) const;
};

struct PlatformManifest {
  crypto::EcPublicKey pck_pub{};
  std::vector<ManifestRecord> packages;

  Bytes serialize() const;
  static std::optional<PlatformManifest> parse(ByteSpan bytes);
  // Platform identity used for PCK lookups: the first package's CPU ID.
  CpuId platform_id() const { return packages.empty() ? CpuId{} : packages.front().cpu_id; }
};

struct TcbLevel {
  CpuSvn min_cpu_svn{};
  std::uint32_t min_module_svn = 0;
};

// TCB info and the PCK revocation list, versioned and signed by the root.
struct Collateral {
  std::uint64_t version = 0;
  std::map<CpuId, TcbLevel> tcb;
  std::set<std::uint64_t> revoked;
  crypto::EcSignature signature{};

  Bytes tbs_bytes() const;
  Bytes serialize() const;
  static std::optional<Collateral> parse(ByteSpan bytes);
};

// The simulated provisioning certification service.
class Pcs {
 public:
  explicit Pcs(std::uint64_t seed);

  const Cert& root_cert() const { return root_cert_; }
  const crypto::EcPublicKey& root_pub() const { return root_.pub; }

  // Manufacturing: records a genuine package hardware key.
  void enroll_hardware(const CpuId& cpu_id, const crypto::EcPublicKey& hw_pub);
  void set_tcb(const CpuId& platform_id, TcbLevel level);
  void revoke(std::uint64_t serial);

  Result<Cert> register_platform(const PlatformManifest& m);
  Result<Cert> pck_cert(const CpuId& platform_id) const;
  const Collateral& collateral() const { return collateral_; }

  std::size_t fetches() const { return fetches_; }
  void count_fetch() { ++fetches_; }

 private:
  void resign();

  crypto::EcKeyPair root_;
  Cert root_cert_;
  std::map<CpuId, crypto::EcPublicKey> hardware_;
  std::map<CpuId, Cert> issued_;
  Collateral collateral_;
  std::uint64_t next_serial_ = 2;
  std::size_t fetches_ = 0;
};

// Caching proxy in front of the PCS. Collateral is fetched fresh each time;
// PCK certificates are cached after the first fetch.
class Pccs {
 public:
  explicit Pccs(Pcs& pcs, Trace* trace = nullptr) : pcs_(pcs), trace_(trace) {}

  // Registration passes straight through; the issued certificate is cached.
  Result<Cert> register_platform(const PlatformManifest& m);
  // Cache first, then the PCS.
  Result<Cert> pck_cert(const CpuId& platform_id);
  Collateral collateral();
  // Split halves of pck_cert for message-driven flows.
  std::optional<Cert> lookup(const CpuId& platform_id);
  void store(const CpuId& platform_id, Cert c) { cache_[platform_id] = std::move(c); }
  Pcs& upstream() { return pcs_; }
  bool cached(const CpuId& platform_id) const { return cache_.contains(platform_id); }
  void clear() { cache_.clear(); }
  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }
  void set_trace(Trace* t) { trace_ = t; }

 private:
  Pcs& pcs_;
  Trace* trace_;
  std::map<CpuId, Cert> cache_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

struct Quote {
  Bytes body;  // TdReport::body()
  crypto::EcSignature signature{};
  std::vector<Cert> chain;  // attestation key cert, PCK cert, root cert

  Bytes serialize() const;
  static std::optional<Quote> parse(ByteSpan bytes);
  std::optional<TdReport> report() const { return parse_report_body(body); }
};

// Per-platform attestation identity: package hardware keys, the PCK held by
// the PCE, and the QE's attestation key. Keys come from their own RNG so the
// module's key schedule is undisturbed.
class QuotingEnclave {
 public:
  QuotingEnclave(Platform& platform, std::uint64_t seed);

  CpuId platform_id() const { return cpu_ids_.front(); }
  const std::vector<CpuId>& cpu_ids() const { return cpu_ids_; }
  const crypto::EcPublicKey& hardware_pub(std::size_t package) const { return hw_keys_.at(package).pub; }
  const crypto::EcPublicKey& pck_pub() const { return pck_.pub; }

  // The PCK Cert ID retrieval tool's output. cpu_svn defaults to the
  // platform config.
  PlatformManifest manifest(std::optional<CpuSvn> cpu_svn = std::nullopt) const;
  void install_certs(Cert pck, Cert root) {
    pck_cert_ = std::move(pck);
    root_cert_ = std::move(root);
  }
  const std::optional<Cert>& pck_cert() const { return pck_cert_; }

  // Generates the attestation key; the PCE certifies it with the PCK.
  Result<Cert> qe_init();
  const std::optional<Cert>& att_cert() const { return att_cert_; }
  Result<Quote> sign_report(const TdReport& report) const;

  Platform& platform() { return platform_; }

 private:
  Platform& platform_;
  crypto::Rng rng_;
  std::vector<CpuId> cpu_ids_;
  std::vector<crypto::EcKeyPair> hw_keys_;
  crypto::EcKeyPair pck_;
  std::optional<Cert> pck_cert_;
  std::optional<Cert> root_cert_;
  std::optional<crypto::EcKeyPair> att_key_;
  std::optional<Cert> att_cert_;
  std::uint64_t next_att_serial_ = 1ull << 32;
};

// Manufacturing step: the PCS learns each package's hardware key.
void enroll_platform(const QuotingEnclave& qe, Pcs& pcs);
// Enrolls, registers through the PCCS and runs qe_init.
Status provision_platform(QuotingEnclave& qe, Pccs& pccs);

struct ReferencePolicy {
  std::optional<Digest48> mrtd;
  std::array<std::optional<Digest48>, 4> rtmr;
  std::optional<std::uint32_t> module_svn;
  std::optional<CpuSvn> min_cpu_svn;

  // `key = hex-value` lines; keys mrtd, rtmr0..rtmr3, module_svn, min_cpu_svn.
  static Result<ReferencePolicy> parse(std::string_view text);
  std::string to_text() const;
};

enum class VerifyCheck : std::uint8_t { Freshness, Signature, Revoked, Tcb, Measurement };
std::string_view to_string(VerifyCheck c);

struct Verdict {
  bool ok = true;
  std::optional<VerifyCheck> failed;
  std::string detail;

  static Verdict pass() { return {}; }
  static Verdict fail(VerifyCheck c, std::string detail = {}) { return {false, c, std::move(detail)}; }
  std::string reason() const { return failed ? std::string(to_string(*failed)) : std::string("none"); }
};

// Checks, first failure wins: freshness, signature chain (from trust_root,
// including the collateral signature), revocation, TCB, measurements.
Verdict verify_quote(const Quote& quote, const crypto::EcPublicKey& trust_root, const Collateral& collateral,
                     const ReferencePolicy& policy, ByteSpan nonce);
Verdict verify_quote_bytes(ByteSpan quote, const crypto::EcPublicKey& trust_root, const Collateral& collateral,
                           const ReferencePolicy& policy, ByteSpan nonce);

// A TD running an attestation agent.
struct AgentTd {
  Platform* platform = nullptr;
  std::uint64_t tdr = 0;
  unsigned vcpu = 0;
  unsigned lp = 0;
};

// Runs TDG.MR.REPORT inside the TD with the given reportdata.
Result<TdReport> agent_report(const AgentTd& agent, const ReportData& reportdata);

ReportData nonce_to_reportdata(ByteSpan nonce);

// --- message bus for multi-actor flows ---

struct Message {
  std::string from;
  std::string to;
  std::string kind;
  Bytes payload;
};

// FIFO delivery between named actors; every send and delivery is traced.
class Bus {
 public:
  using Handler = std::function<void(const Message&, Bus&)>;
  explicit Bus(Trace* trace = nullptr) : trace_(trace) {}

  void attach(std::string actor, Handler h) { actors_[std::move(actor)] = std::move(h); }
  void send(Message m);
  // Delivers until the queue drains; returns the number of deliveries.
  std::size_t run(std::size_t max_steps = 1000);

 private:
  Trace* trace_;
  std::map<std::string, Handler> actors_;
  std::deque<Message> queue_;
};

struct RaOutcome {
  Verdict verdict;
  bool pccs_hit = false;
  std::optional<Quote> quote;
};

// Steps 1-7: challenger nonce, report, QE signature, quote back to the
// challenger, PCK certificate from the PCCS (falling back to the PCS),
// verification. replay_nonce substitutes the nonce the agent sees.
RaOutcome ra_flow(AgentTd agent, QuotingEnclave& qe, Pccs& pccs, const crypto::EcPublicKey& trust_root,
                  const ReferencePolicy& policy, crypto::Rng& rng, Trace* trace = nullptr,
                  std::optional<Bytes> replay_nonce = std::nullopt);

// --- RA-bound secure channel ---

struct ServerHello {
  Cert cert;  // self-signed; claims["quote"] carries the quote
};

struct ChannelServer {
  crypto::EcKeyPair ephemeral;
  ServerHello hello;
};

ReportData key_binding_reportdata(const crypto::EcPublicKey& pub);

Result<ChannelServer> channel_server_hello(const AgentTd& agent, const QuotingEnclave& qe, crypto::Rng& rng);
// Swaps in another key and re-signs the certificate around the same quote:
// a relay attempt.
ServerHello relay_hello(const ServerHello& genuine, const crypto::EcKeyPair& attacker);

enum class ChannelFailure : std::uint8_t { Quote, KeyBinding, Certificate };
std::string_view to_string(ChannelFailure f);

struct ChannelResult {
  bool ok = false;
  std::optional<ChannelFailure> failure;
  Verdict quote_verdict;
  Digest32 client_secret{};
  crypto::EcPublicKey client_pub{};
};

ChannelResult channel_client_verify(const ServerHello& hello, const crypto::EcPublicKey& trust_root,
                                    const Collateral& collateral, const ReferencePolicy& policy, crypto::Rng& rng);

struct Session {
  Digest32 server_secret{};
  Digest32 client_secret{};
};

struct HandshakeResult {
  ChannelResult client;
  std::optional<Session> session;
};

HandshakeResult secure_channel_handshake(const AgentTd& agent, const QuotingEnclave& qe,
                                         const crypto::EcPublicKey& trust_root, const Collateral& collateral,
                                         const ReferencePolicy& policy, crypto::Rng& rng);

// --- encrypted boot ---

struct KeyReleaseServer {
  ReferencePolicy policy;
  crypto::GcmKey partition_key{};
  crypto::EcPublicKey trust_root{};
};

struct KeyReleaseResult {
  bool released = false;
  Verdict verdict;
  crypto::GcmKey key{};
};

KeyReleaseResult key_release(const KeyReleaseServer& server, const Collateral& collateral, const Quote& quote,
                             ByteSpan nonce);

// Partition image: nonce || AES-256-GCM(key, plaintext).
Bytes seal_partition(const crypto::GcmKey& key, const crypto::GcmNonce& nonce, ByteSpan plaintext);
std::optional<Bytes> open_partition(const crypto::GcmKey& key, ByteSpan blob);

struct EncryptedBootOutcome {
  bool channel_ok = false;
  bool key_released = false;
  Verdict verdict;
  std::optional<Bytes> plaintext;
};

// Handshake with the release server, a fresh nonce, a second quote over that
// nonce, key release sealed under the session secret, partition decrypt.
EncryptedBootOutcome encrypted_boot(const AgentTd& agent, const QuotingEnclave& qe, Pccs& pccs,
                                    const KeyReleaseServer& server, ByteSpan partition_blob, crypto::Rng& rng,
                                    Trace* trace = nullptr);

// --- line protocol: `<kind> <len> <hex>` per message ---

std::string encode_line(std::string_view kind, ByteSpan payload);
std::optional<std::pair<std::string, Bytes>> decode_line(std::string_view line);

// PCS request handler behind the line protocol. Kinds: register (manifest),
// pck (platform id), collateral, root. Errors answer `error` with the
// status name.
std::pair<std::string, Bytes> pcs_handle(Pcs& pcs, std::string_view kind, ByteSpan payload);

}  // namespace tdxsim
