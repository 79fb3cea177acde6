#include "tdxsim/scenario.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace tdxsim {
namespace {

constexpr std::uint64_t kSourceBase = 0x10000000;
constexpr std::uint64_t kDefaultTdmrBase = kPage1G;
constexpr std::uint64_t kDefaultTdmrSize = kPage1G;

enum class Kind { Int, Hex, Name, Text, Enum };

struct KeySpec {
  std::string key;
  Kind kind = Kind::Int;
  bool required = false;
  std::vector<std::string> choices;  // Enum only
};

struct VerbSpec {
  std::string verb;
  std::vector<KeySpec> keys;
};

KeySpec req(std::string k, Kind kind) { return {std::move(k), kind, true, {}}; }
KeySpec opt(std::string k, Kind kind) { return {std::move(k), kind, false, {}}; }
KeySpec one_of(std::string k, std::vector<std::string> c, bool required = false) {
  return {std::move(k), Kind::Enum, required, std::move(c)};
}

const std::vector<VerbSpec>& verb_table() {
  static const std::vector<VerbSpec> t = {
      {"platform",
       {opt("seed", Kind::Int), opt("lps", Kind::Int), opt("packages", Kind::Int), opt("keyid_bits", Kind::Int),
        opt("reserved_bits", Kind::Int), opt("ci", Kind::Int), opt("cpu_svn", Kind::Hex),
        opt("td_attributes", Kind::Int)}},
      {"install", {opt("svn", Kind::Int), opt("variant", Kind::Int)}},
      {"init", {opt("hkid", Kind::Int), opt("tdmr_base", Kind::Int), opt("tdmr_size", Kind::Int)}},
      {"td-create", {req("name", Kind::Name), opt("hkid", Kind::Int), opt("vcpus", Kind::Int), opt("lp", Kind::Int)}},
      {"td-add-page",
       {req("td", Kind::Name), req("gpa", Kind::Int), opt("pattern", Kind::Int), opt("data", Kind::Hex),
        opt("extend", Kind::Int)}},
      {"td-extend", {req("td", Kind::Name), req("gpa", Kind::Int)}},
      {"td-finalize", {req("td", Kind::Name)}},
      {"td-aug", {req("td", Kind::Name), req("gpa", Kind::Int)}},
      {"td-guest",
       {req("td", Kind::Name),
        one_of("op", {"read", "write", "accept", "extend", "report", "cpuid", "hlt", "portio"}, true),
        opt("vcpu", Kind::Int), opt("gpa", Kind::Int), opt("data", Kind::Hex), opt("index", Kind::Int),
        opt("leaf", Kind::Int), opt("subleaf", Kind::Int), opt("port", Kind::Int), opt("size", Kind::Int),
        opt("direction", Kind::Int), opt("value", Kind::Int)}},
      {"td-run",
       {req("td", Kind::Name), opt("vcpu", Kind::Int), opt("lp", Kind::Int),
        one_of("expect", {"done", "fatal", "fault"})}},
      {"td-teardown", {req("td", Kind::Name)}},
      {"td-report", {req("td", Kind::Name), opt("data", Kind::Hex)}},
      {"report-verify", {req("td", Kind::Name), opt("tamper", Kind::Int), one_of("expect", {"ok", "fail"})}},
      {"host-write", {req("data", Kind::Hex), opt("pa", Kind::Int), opt("td", Kind::Name), opt("gpa", Kind::Int)}},
      {"pcs-register", {opt("cpu_svn", Kind::Hex), opt("min_cpu_svn", Kind::Hex)}},
      {"qe-init", {}},
      {"quote", {req("td", Kind::Name), opt("nonce", Kind::Hex), opt("nonce-hex", Kind::Hex)}},
      {"verify",
       {opt("policy", Kind::Text), opt("nonce", Kind::Hex),
        one_of("expect", {"ok", "freshness", "signature", "revoked", "tcb", "measurement"})}},
      {"policy",
       {opt("from", Kind::Name), opt("file", Kind::Text), opt("mrtd", Kind::Hex), opt("rtmr0", Kind::Hex),
        opt("rtmr1", Kind::Hex), opt("rtmr2", Kind::Hex), opt("rtmr3", Kind::Hex), opt("module_svn", Kind::Int),
        opt("min_cpu_svn", Kind::Hex)}},
      {"revoke", {one_of("which", {"pck", "att"}, true)}},
      {"ra-flow",
       {req("td", Kind::Name), opt("replay", Kind::Hex), opt("cold", Kind::Int),
        one_of("expect", {"ok", "freshness", "signature", "revoked", "tcb", "measurement"})}},
      {"encrypted-boot-demo",
       {req("td", Kind::Name), opt("plaintext", Kind::Text), one_of("expect", {"released", "denied"})}},
      {"pamt-walk", {req("pa", Kind::Int)}},
      {"keyhole-stats", {opt("lp", Kind::Int)}},
      {"td-state", {req("td", Kind::Name)}},
      {"module-state", {}},
  };
  return t;
}

const VerbSpec* find_verb(std::string_view v) {
  for (const auto& s : verb_table())
    if (s.verb == v) return &s;
  return nullptr;
}

std::optional<std::uint64_t> parse_int(std::string_view s) {
  int base = 10;
  if (s.starts_with("0x") || s.starts_with("0X")) {
    s.remove_prefix(2);
    base = 16;
  }
  if (s.empty()) return std::nullopt;
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

bool valid_name(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
  return true;
}

std::optional<std::string> check_value(const KeySpec& k, const std::string& v) {
  switch (k.kind) {
    case Kind::Int:
      if (!parse_int(v)) return "'" + k.key + "' needs an integer, got '" + v + "'";
      break;
    case Kind::Hex:
      if (!from_hex(v)) return "'" + k.key + "' needs hex bytes, got '" + v + "'";
      break;
    case Kind::Name:
      if (!valid_name(v)) return "'" + k.key + "' needs a name, got '" + v + "'";
      break;
    case Kind::Text:
      if (v.empty()) return "'" + k.key + "' is empty";
      break;
    case Kind::Enum:
      if (std::find(k.choices.begin(), k.choices.end(), v) == k.choices.end())
        return "'" + k.key + "' does not accept '" + v + "'";
      break;
  }
  return std::nullopt;
}

std::uint64_t int_arg(const Command& c, const std::string& k, std::uint64_t dflt) {
  auto it = c.args.find(k);
  return it == c.args.end() ? dflt : *parse_int(it->second);
}

Bytes hex_arg(const Command& c, const std::string& k) {
  auto it = c.args.find(k);
  return it == c.args.end() ? Bytes{} : *from_hex(it->second);
}

std::string str_arg(const Command& c, const std::string& k, std::string dflt = {}) {
  auto it = c.args.find(k);
  return it == c.args.end() ? dflt : it->second;
}

template <std::size_t N>
std::optional<std::array<std::uint8_t, N>> fixed_hex(const Command& c, const std::string& k) {
  if (!c.has(k)) return std::nullopt;
  const Bytes b = hex_arg(c, k);
  if (b.size() != N) return std::nullopt;
  std::array<std::uint8_t, N> a{};
  std::copy(b.begin(), b.end(), a.begin());
  return a;
}

std::string yes_no(bool b) { return b ? "true" : "false"; }

// Trace values are single tokens.
std::string token(std::string s) {
  if (s.empty()) return "-";
  std::replace(s.begin(), s.end(), ' ', '_');
  return s;
}

}  // namespace

Bytes pattern_page(std::uint8_t seed) {
  Bytes b(kPage4K);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<std::uint8_t>(seed * 31 + i * 7 + (i >> 8));
  return b;
}

const std::vector<std::string>& scenario_verbs() {
  static const std::vector<std::string> v = [] {
    std::vector<std::string> out;
    for (const auto& s : verb_table()) out.push_back(s.verb);
    return out;
  }();
  return v;
}

bool is_inspect_verb(std::string_view verb) {
  return verb == "pamt-walk" || verb == "keyhole-stats" || verb == "td-state" || verb == "module-state";
}

std::variant<Scenario, ParseError> parse_scenario(std::string_view text) {
  Scenario s;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream words(raw);
    std::string verb;
    if (!(words >> verb)) continue;
    const VerbSpec* spec = find_verb(verb);
    if (spec == nullptr) return ParseError{lineno, "unknown verb '" + verb + "'"};
    Command c;
    c.line = lineno;
    c.verb = verb;
    std::string tok;
    while (words >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos || eq == 0) return ParseError{lineno, "expected key=value, got '" + tok + "'"};
      std::string k = tok.substr(0, eq);
      std::string v = tok.substr(eq + 1);
      auto ks = std::find_if(spec->keys.begin(), spec->keys.end(), [&](const KeySpec& x) { return x.key == k; });
      if (ks == spec->keys.end()) return ParseError{lineno, verb + ": unknown key '" + k + "'"};
      if (auto err = check_value(*ks, v)) return ParseError{lineno, verb + ": " + *err};
      if (!c.args.emplace(std::move(k), std::move(v)).second)
        return ParseError{lineno, verb + ": duplicate key '" + tok.substr(0, eq) + "'"};
    }
    for (const auto& k : spec->keys)
      if (k.required && !c.has(k.key)) return ParseError{lineno, verb + ": missing '" + k.key + "'"};
    if (verb == "platform" && !s.commands.empty())
      return ParseError{lineno, "platform must be the first command"};
    if (verb == "host-write" && c.has("pa") == (c.has("td") || c.has("gpa")))
      return ParseError{lineno, "host-write: give either pa or td with gpa"};
    if (verb == "host-write" && c.has("td") != c.has("gpa"))
      return ParseError{lineno, "host-write: td and gpa go together"};
    if (verb == "quote" && c.has("nonce") && c.has("nonce-hex"))
      return ParseError{lineno, "quote: nonce given twice"};
    s.commands.push_back(std::move(c));
  }
  return s;
}

// ---------------------------------------------------------------- runner

Runner::Runner(RunOptions opts) : opts_(std::move(opts)) { trace_.set_verbose(opts_.verbose); }
Runner::~Runner() = default;

std::optional<std::uint64_t> Runner::tdr_of(const std::string& name) const {
  auto it = tds_.find(name);
  if (it == tds_.end()) return std::nullopt;
  return it->second.tdr;
}

void Runner::ensure_platform(const Command* pc) {
  if (platform_) return;
  HarnessConfig cfg;
  std::optional<std::uint64_t> scenario_seed;
  if (pc != nullptr) {
    if (pc->has("seed")) scenario_seed = int_arg(*pc, "seed", 1);
    cfg.lp_count = static_cast<unsigned>(int_arg(*pc, "lps", cfg.lp_count));
    cfg.package_count = static_cast<unsigned>(int_arg(*pc, "packages", cfg.package_count));
    cfg.keys.total_keyid_bits = static_cast<unsigned>(int_arg(*pc, "keyid_bits", cfg.keys.total_keyid_bits));
    cfg.keys.reserved_keyid_bits = static_cast<unsigned>(int_arg(*pc, "reserved_bits", cfg.keys.reserved_keyid_bits));
    cfg.keys.ci_enabled = int_arg(*pc, "ci", 0) != 0;
    if (auto svn = fixed_hex<16>(*pc, "cpu_svn")) cfg.cpu_svn = *svn;
    cfg.td_attributes = int_arg(*pc, "td_attributes", 0);
  }
  seed_ = opts_.seed.value_or(scenario_seed.value_or(opts_.fallback_seed.value_or(1)));
  cfg.rng_seed = seed_;
  platform_ = std::make_unique<Platform>(cfg, &trace_);
  rng_ = std::make_unique<crypto::Rng>(seed_ ^ 0x68617272657373ull);
}

std::uint64_t Runner::alloc_page() {
  const std::uint64_t pa = next_page_;
  next_page_ += kPage4K;
  return pa;
}

Result<Runner::TdEntry*> Runner::td_arg(const Command& c) {
  auto it = tds_.find(str_arg(c, "td"));
  if (it == tds_.end()) return Status::TdNotFound;
  return &it->second;
}

AgentTd Runner::agent_for(const TdEntry& td) const { return AgentTd{platform_.get(), td.tdr, 0, 0}; }

Status Runner::ensure_attestation() {
  if (!pcs_) {
    pcs_ = std::make_unique<Pcs>(seed_ + 100);
    pccs_ = std::make_unique<Pccs>(*pcs_, &trace_);
    qe_ = std::make_unique<QuotingEnclave>(*platform_, seed_ + 200);
    enroll_platform(*qe_, *pcs_);
  }
  return Status::Success;
}

Runner::Outcome Runner::expect_verdict(const Command& c, const Verdict& v) {
  const std::string want = str_arg(c, "expect", "ok");
  const std::string got = v.ok ? "ok" : v.reason();
  emit("verdict", {{"line", std::to_string(c.line)},
                   {"ok", yes_no(v.ok)},
                   {"reason", v.reason()},
                   {"detail", token(v.detail)},
                   {"expected", want}});
  if (got != want) return verify_failure("expected " + want + ", got " + got);
  return {};
}

int Runner::run(const Scenario& s) {
  int code = kExitOk;
  for (const auto& c : s.commands) {
    Outcome o = execute(c);
    if (o.code == kExitOk) continue;
    std::vector<TraceField> f{{"line", std::to_string(c.line)}, {"verb", c.verb}, {"exit", std::to_string(o.code)}};
    if (o.status != Status::Success) f.push_back({"status", std::string(to_string(o.status))});
    if (!o.detail.empty()) f.push_back({"detail", token(o.detail)});
    emit("failure", std::move(f));
    if (code == kExitOk) code = o.code;
    if (!opts_.keep_going) break;
  }
  return code;
}

Runner::Outcome Runner::execute(const Command& c) {
  ensure_platform(c.verb == "platform" ? &c : nullptr);
  Platform& p = *platform_;
  const std::string& v = c.verb;
  emit("cmd", {{"line", std::to_string(c.line)}, {"verb", v}});

  if (v == "platform") {
    emit("platform", {{"seed", std::to_string(seed_)},
                      {"lps", std::to_string(p.config().lp_count)},
                      {"packages", std::to_string(p.config().package_count)},
                      {"boot", std::string(to_string(p.boot_status()))}});
    if (p.boot_status() != Status::Success) return exec_failure(p.boot_status());
    return {};
  }
  if (is_inspect_verb(v)) return inspect(c);

  if (v == "install") {
    const Bytes image = sample_module_image(static_cast<std::uint32_t>(int_arg(c, "variant", 0)));
    const Status s = install_module(p, image, vendor_sign_module(image, static_cast<std::uint32_t>(int_arg(c, "svn", 1))));
    if (s != Status::Success) return exec_failure(s);
    return {};
  }
  if (v == "init") {
    const std::uint64_t base = int_arg(c, "tdmr_base", kDefaultTdmrBase);
    const std::vector<Tdmr> tdmrs{Tdmr{base, int_arg(c, "tdmr_size", kDefaultTdmrSize), {}}};
    auto n = platform_init_sequence(p, static_cast<std::uint32_t>(int_arg(c, "hkid", 4)), tdmrs);
    if (!n) return exec_failure(n.status());
    initialized_ = true;
    next_page_ = base + 0x100000;
    emit("initialized", {{"tdmr_init_calls", std::to_string(*n)}});
    return {};
  }
  if (v == "td-create") {
    const std::string name = str_arg(c, "name");
    if (tds_.contains(name)) return exec_failure(Status::BadParams, "name in use");
    const unsigned lp = static_cast<unsigned>(int_arg(c, "lp", 0));
    TdEntry td;
    td.hkid = static_cast<std::uint32_t>(int_arg(c, "hkid", 5));
    td.vcpus = static_cast<unsigned>(int_arg(c, "vcpus", 1));
    td.tdr = alloc_page();
    std::vector<std::uint64_t> tdcx;
    for (std::size_t i = 0; i < kTdcxPages; ++i) tdcx.push_back(alloc_page());
    if (Status s = p.td_create(lp, td.hkid, td.tdr, tdcx); s != Status::Success) return exec_failure(s);
    for (unsigned i = 0; i < td.vcpus; ++i) {
      const std::uint64_t tdvpr = alloc_page();
      std::vector<std::uint64_t> tdvpx;
      for (std::size_t j = 0; j + 1 < kTdvpsPages; ++j) tdvpx.push_back(alloc_page());
      if (auto r = p.vp_create(lp, td.tdr, tdvpr, tdvpx); !r) return exec_failure(r.status());
    }
    emit("td-created", {{"name", name}, {"tdr", hex_u64(td.tdr)}, {"hkid", std::to_string(td.hkid)}});
    tds_.emplace(name, std::move(td));
    return {};
  }

  if (v == "pcs-register") {
    ensure_attestation();
    if (auto min = fixed_hex<16>(c, "min_cpu_svn")) {
      TcbLevel level;
      level.min_cpu_svn = *min;
      pcs_->set_tcb(qe_->platform_id(), level);
    }
    std::optional<CpuSvn> svn = fixed_hex<16>(c, "cpu_svn");
    auto pck = pccs_->register_platform(qe_->manifest(svn));
    if (!pck) return exec_failure(pck.status());
    qe_->install_certs(*pck, pcs_->root_cert());
    emit("pck-issued", {{"platform", to_hex(qe_->platform_id())}, {"serial", std::to_string(pck->serial)}});
    return {};
  }
  if (v == "qe-init") {
    if (!qe_) return exec_failure(Status::NotRegistered);
    auto att = qe_->qe_init();
    if (!att) return exec_failure(att.status());
    emit("att-key", {{"serial", std::to_string(att->serial)}, {"pub", to_hex(ByteSpan(att->pubkey).first(8))}});
    return {};
  }
  if (v == "revoke") {
    if (!qe_ || !qe_->pck_cert()) return exec_failure(Status::NotRegistered);
    const bool pck = str_arg(c, "which") == "pck";
    if (!pck && !qe_->att_cert()) return exec_failure(Status::NotRegistered);
    const std::uint64_t serial = pck ? qe_->pck_cert()->serial : qe_->att_cert()->serial;
    pcs_->revoke(serial);
    emit("revoked", {{"which", str_arg(c, "which")}, {"serial", std::to_string(serial)}});
    return {};
  }
  if (v == "policy") {
    ReferencePolicy pol;
    if (c.has("file")) {
      std::ifstream f(opts_.base_dir / str_arg(c, "file"));
      if (!f) return exec_failure(Status::BadParams, "cannot read policy file");
      std::stringstream ss;
      ss << f.rdbuf();
      auto parsed = ReferencePolicy::parse(ss.str());
      if (!parsed) return exec_failure(parsed.status(), "policy file");
      pol = *parsed;
    }
    if (c.has("from")) {
      auto it = tds_.find(str_arg(c, "from"));
      if (it == tds_.end()) return exec_failure(Status::TdNotFound);
      const TdState* t = p.td(it->second.tdr);
      if (t == nullptr) return exec_failure(Status::TdNotFound);
      pol.mrtd = t->mrtd;
      for (std::size_t i = 0; i < 4; ++i) pol.rtmr[i] = t->rtmr[i];
      if (p.module_identity()) pol.module_svn = p.module_identity()->svn;
    }
    if (c.has("mrtd") && !(pol.mrtd = fixed_hex<48>(c, "mrtd"))) return exec_failure(Status::BadLength, "mrtd");
    for (int i = 0; i < 4; ++i) {
      const std::string k = "rtmr" + std::to_string(i);
      if (c.has(k) && !(pol.rtmr[static_cast<std::size_t>(i)] = fixed_hex<48>(c, k)))
        return exec_failure(Status::BadLength, k);
    }
    if (c.has("module_svn")) pol.module_svn = static_cast<std::uint32_t>(int_arg(c, "module_svn", 0));
    if (c.has("min_cpu_svn") && !(pol.min_cpu_svn = fixed_hex<16>(c, "min_cpu_svn")))
      return exec_failure(Status::BadLength, "min_cpu_svn");
    policy_ = pol;
    emit("policy", {{"mrtd", pol.mrtd ? to_hex(*pol.mrtd) : "-"},
                    {"rtmr1", pol.rtmr[1] ? to_hex(*pol.rtmr[1]) : "-"}});
    return {};
  }
  if (v == "verify") {
    if (!quote_) return exec_failure(Status::BadParams, "no quote");
    ReferencePolicy pol = policy_.value_or(ReferencePolicy{});
    if (c.has("policy")) {
      std::ifstream f(opts_.base_dir / str_arg(c, "policy"));
      if (!f) return exec_failure(Status::BadParams, "cannot read policy file");
      std::stringstream ss;
      ss << f.rdbuf();
      auto parsed = ReferencePolicy::parse(ss.str());
      if (!parsed) return exec_failure(parsed.status(), "policy file");
      pol = *parsed;
    }
    const Bytes nonce = c.has("nonce") ? hex_arg(c, "nonce") : quote_nonce_;
    return expect_verdict(c, verify_quote(*quote_, pcs_->root_pub(), pccs_->collateral(), pol, nonce));
  }

  // Everything below names a TD.
  auto tdr = td_arg(c);
  if (v == "host-write" && c.has("pa")) {
    const Bytes data = hex_arg(c, "data");
    if (Status s = p.host_write(int_arg(c, "pa", 0), data); s != Status::Success) return exec_failure(s);
    return {};
  }
  if (!tdr) return exec_failure(tdr.status(), "no td named '" + str_arg(c, "td") + "'");
  TdEntry& td = **tdr;

  if (v == "td-add-page") {
    const std::uint64_t gpa = int_arg(c, "gpa", 0);
    Bytes content = c.has("data") ? hex_arg(c, "data")
                                  : pattern_page(static_cast<std::uint8_t>(int_arg(c, "pattern", gpa >> 12)));
    if (content.size() > kPage4K) return exec_failure(Status::BadLength, "data");
    content.resize(kPage4K, 0);
    const std::uint64_t src = kSourceBase + (gpa & 0xfffffff);
    if (Status s = p.host_write(src, content); s != Status::Success) return exec_failure(s);
    const std::uint64_t hpa = alloc_page();
    if (Status s = p.page_add(0, td.tdr, gpa, hpa, src); s != Status::Success) return exec_failure(s);
    td.gpa_to_hpa[gpa] = hpa;
    if (int_arg(c, "extend", 1) != 0)
      for (std::uint64_t off = 0; off < kPage4K; off += 256)
        if (Status s = p.mr_extend(0, td.tdr, gpa + off); s != Status::Success) return exec_failure(s);
    return {};
  }
  if (v == "td-extend") {
    if (Status s = p.mr_extend(0, td.tdr, int_arg(c, "gpa", 0)); s != Status::Success) return exec_failure(s);
    return {};
  }
  if (v == "td-finalize") {
    if (Status s = p.mr_finalize(0, td.tdr); s != Status::Success) return exec_failure(s);
    emit("finalized", {{"td", str_arg(c, "td")}, {"mrtd", to_hex(p.td(td.tdr)->mrtd)}});
    return {};
  }
  if (v == "td-aug") {
    const std::uint64_t gpa = int_arg(c, "gpa", 0);
    const std::uint64_t hpa = alloc_page();
    if (Status s = p.page_aug(0, td.tdr, gpa, hpa); s != Status::Success) return exec_failure(s);
    td.gpa_to_hpa[gpa] = hpa;
    return {};
  }
  if (v == "td-guest") {
    static const std::map<std::string, GuestOp::Kind> kinds = {
        {"read", GuestOp::Kind::Read},     {"write", GuestOp::Kind::Write},   {"accept", GuestOp::Kind::Accept},
        {"extend", GuestOp::Kind::RtmrExtend}, {"report", GuestOp::Kind::Report}, {"cpuid", GuestOp::Kind::Cpuid},
        {"hlt", GuestOp::Kind::Hlt},       {"portio", GuestOp::Kind::PortIo}};
    GuestOp op;
    op.kind = kinds.at(str_arg(c, "op"));
    op.gpa = int_arg(c, "gpa", 0);
    op.index = static_cast<std::uint32_t>(int_arg(c, "index", 0));
    op.data = hex_arg(c, "data");
    if (op.kind == GuestOp::Kind::Cpuid) {
      op.params["leaf"] = int_arg(c, "leaf", 0);
      op.params["subleaf"] = int_arg(c, "subleaf", 0);
    } else if (op.kind == GuestOp::Kind::PortIo) {
      for (const char* k : {"port", "size", "direction", "value"}) op.params[k] = int_arg(c, k, 0);
    }
    td.pending.push_back(std::move(op));
    return {};
  }
  if (v == "td-run") {
    const unsigned vcpu = static_cast<unsigned>(int_arg(c, "vcpu", 0));
    const unsigned lp = static_cast<unsigned>(int_arg(c, "lp", 0));
    if (Status s = p.load_guest(td.tdr, vcpu, std::move(td.pending)); s != Status::Success) {
      td.pending.clear();
      return exec_failure(s);
    }
    td.pending.clear();
    const std::string want = str_arg(c, "expect", "done");
    std::string ended = "done";
    Status last = Status::Success;
    for (int guard = 0; guard < 10000; ++guard) {
      auto e = p.td_enter(lp, td.tdr, vcpu);
      if (!e) {
        ended = e.status() == Status::TdFatal ? "fatal" : "fault";
        last = e.status();
        break;
      }
      if (e->kind == TdExit::Kind::Done) break;
      if (e->kind == TdExit::Kind::Report) {
        td.report = e->report;
        continue;
      }
      if (e->kind == TdExit::Kind::VmCall) continue;
      ended = e->kind == TdExit::Kind::Fatal ? "fatal" : "fault";
      last = e->status == Status::Success ? Status::NotMapped : e->status;
      break;
    }
    if (ended != want) return exec_failure(last, "guest ended " + ended + ", expected " + want);
    return {};
  }
  if (v == "td-teardown") {
    if (Status s = p.td_teardown(0, td.tdr); s != Status::Success) return exec_failure(s);
    tds_.erase(str_arg(c, "td"));
    return {};
  }
  if (v == "td-report") {
    Bytes rd = hex_arg(c, "data");
    if (rd.size() > 64) return exec_failure(Status::BadLength, "data");
    auto rep = agent_report(agent_for(td), nonce_to_reportdata(rd));
    if (!rep) return exec_failure(rep.status());
    td.report = *rep;
    emit("report", {{"td", str_arg(c, "td")},
                    {"mrtd", to_hex(rep->td.mrtd)},
                    {"rtmr1", to_hex(rep->td.rtmr[1])},
                    {"hmac", to_hex(rep->mac.hmac)}});
    return {};
  }
  if (v == "report-verify") {
    if (!td.report) return exec_failure(Status::BadParams, "no report");
    Bytes bytes = td.report->serialize();
    if (c.has("tamper")) {
      const std::uint64_t off = int_arg(c, "tamper", 0);
      if (off >= bytes.size()) return exec_failure(Status::BadParams, "tamper offset");
      bytes[off] ^= 0x01;
    }
    auto rep = TdReport::parse(bytes);
    const bool ok = rep && p.everifyreport2(*rep);
    const std::string want = str_arg(c, "expect", "ok");
    emit("report-verify", {{"td", str_arg(c, "td")}, {"ok", yes_no(ok)}, {"expected", want}});
    if ((want == "ok") != ok) return verify_failure("everifyreport2 " + yes_no(ok));
    return {};
  }
  if (v == "host-write") {
    const std::uint64_t gpa = int_arg(c, "gpa", 0);
    auto it = td.gpa_to_hpa.find(gpa & ~(kPage4K - 1));
    if (it == td.gpa_to_hpa.end()) return exec_failure(Status::NotMapped);
    if (Status s = p.host_write(it->second + (gpa & (kPage4K - 1)), hex_arg(c, "data")); s != Status::Success)
      return exec_failure(s);
    return {};
  }
  if (v == "quote") {
    if (!qe_) return exec_failure(Status::NotRegistered);
    Bytes nonce = hex_arg(c, c.has("nonce-hex") ? "nonce-hex" : "nonce");
    if (!c.has("nonce") && !c.has("nonce-hex")) {
      nonce.resize(32);
      rng_->fill(nonce);
    }
    if (nonce.size() > 64) return exec_failure(Status::BadLength, "nonce");
    auto rep = agent_report(agent_for(td), nonce_to_reportdata(nonce));
    if (!rep) return exec_failure(rep.status());
    auto q = qe_->sign_report(*rep);
    if (!q) return exec_failure(q.status());
    const Bytes wire = q->serialize();
    trace_.dump("qe", "quote", wire);
    emit("quote", {{"td", str_arg(c, "td")}, {"len", std::to_string(wire.size())}, {"nonce", to_hex(nonce)}});
    quote_ = std::move(*q);
    quote_nonce_ = nonce;
    return {};
  }
  if (v == "ra-flow") {
    if (!qe_ || !qe_->att_cert()) return exec_failure(Status::NotRegistered);
    if (!policy_) return exec_failure(Status::BadParams, "no policy");
    if (int_arg(c, "cold", 0) != 0) pccs_->clear();
    std::optional<Bytes> replay;
    if (c.has("replay")) replay = hex_arg(c, "replay");
    auto out = ra_flow(agent_for(td), *qe_, *pccs_, pcs_->root_pub(), *policy_, *rng_, &trace_, replay);
    emit("ra-flow", {{"td", str_arg(c, "td")}, {"pccs_hit", yes_no(out.pccs_hit)}});
    return expect_verdict(c, out.verdict);
  }
  if (v == "encrypted-boot-demo") {
    if (!qe_ || !qe_->att_cert()) return exec_failure(Status::NotRegistered);
    if (!policy_) return exec_failure(Status::BadParams, "no policy");
    KeyReleaseServer server;
    server.policy = *policy_;
    server.trust_root = pcs_->root_pub();
    server.partition_key = rng_->bytes<32>();
    const std::string text = str_arg(c, "plaintext", "encrypted-partition-contents");
    const Bytes plaintext(text.begin(), text.end());
    const Bytes blob = seal_partition(server.partition_key, rng_->bytes<12>(), plaintext);
    auto out = encrypted_boot(agent_for(td), *qe_, *pccs_, server, blob, *rng_, &trace_);
    const bool matches = out.plaintext && *out.plaintext == plaintext;
    const bool released = out.key_released && matches;
    const std::string want = str_arg(c, "expect", "released");
    if (released != (want == "released"))
      return verify_failure(std::string("key ") + (released ? "released" : "denied") + ": " + out.verdict.reason());
    return {};
  }
  return exec_failure(Status::BadParams, "unhandled verb");
}

Runner::Outcome Runner::inspect(const Command& c) {
  Platform& p = *platform_;
  if (!initialized_) return exec_failure(Status::NotInitialized);
  const Digest48 before = p.state_digest();
  const std::string& v = c.verb;
  if (v == "pamt-walk") {
    const std::uint64_t pa = int_arg(c, "pa", 0);
    auto w = p.memory().pamt().walk(pa);
    if (!w) {
      emit("pamt-walk", {{"pa", hex_u64(pa)}, {"status", std::string(to_string(w.status()))}});
    } else {
      emit("pamt-walk", {{"pa", hex_u64(pa)},
                         {"type", std::string(to_string(w->type))},
                         {"size", std::string(to_string(w->size))},
                         {"owner", w->owner == kNoOwner ? "-" : hex_u64(w->owner)}});
    }
  } else if (v == "keyhole-stats") {
    const unsigned lp = static_cast<unsigned>(int_arg(c, "lp", 0));
    if (!p.memory().has_lp(lp)) return exec_failure(Status::InvalidLp);
    const KeyholeStats s = p.memory().keyholes(lp).stats();
    emit("keyhole-stats", {{"lp", std::to_string(lp)},
                           {"free", std::to_string(s.free)},
                           {"in_use", std::to_string(s.in_use)},
                           {"total_refs", std::to_string(s.total_refs)}});
  } else if (v == "td-state") {
    auto it = tds_.find(str_arg(c, "td"));
    const TdState* t = it == tds_.end() ? nullptr : p.td(it->second.tdr);
    if (t == nullptr) return exec_failure(Status::TdNotFound);
    std::vector<TraceField> f{{"td", str_arg(c, "td")},
                              {"tdr", hex_u64(t->tdr)},
                              {"hkid", std::to_string(t->hkid)},
                              {"lifecycle", std::string(to_string(t->lifecycle))},
                              {"vcpus", std::to_string(t->vcpus.size())},
                              {"measured_pages", std::to_string(t->measured_pages)},
                              {"mrtd", to_hex(t->mrtd)}};
    for (std::size_t i = 0; i < 4; ++i) f.push_back({"rtmr" + std::to_string(i), to_hex(t->rtmr[i])});
    emit("td-state", std::move(f));
  } else {
    const auto& id = p.module_identity();
    std::size_t live = 0;
    for (auto tdr : p.td_list()) live += p.td(tdr)->lifecycle != Lifecycle::TornDown;
    emit("module-state", {{"phase", std::string(to_string(p.phase()))},
                          {"svn", id ? std::to_string(id->svn) : "-"},
                          {"measurement", id ? to_hex(id->measurement) : "-"},
                          {"global_hkid", p.global_hkid() ? std::to_string(*p.global_hkid()) : "-"},
                          {"live_tds", std::to_string(live)}});
  }
  if (p.state_digest() != before) return exec_failure(Status::BadParams, "inspection changed platform state");
  return {};
}

}  // namespace tdxsim
