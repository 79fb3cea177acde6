#include "tdxsim/platform.hpp"

#include <algorithm>
#include <cassert>

namespace tdxsim {
namespace {

constexpr std::uint64_t kPlatformRngSalt = 0x9e3779b97f4a7c15ull;

struct LeafEntry {
  Leaf leaf;
  std::string_view name;
};
constexpr LeafEntry kLeafTable[] = {
    {Leaf::SysInit, "TDH.SYS.INIT"},         {Leaf::SysLpInit, "TDH.SYS.LP.INIT"},
    {Leaf::SysConfig, "TDH.SYS.CONFIG"},     {Leaf::SysKeyConfig, "TDH.SYS.KEY.CONFIG"},
    {Leaf::SysTdmrInit, "TDH.SYS.TDMR.INIT"}, {Leaf::MngCreate, "TDH.MNG.CREATE"},
    {Leaf::VpCreate, "TDH.VP.CREATE"},       {Leaf::MemPageAdd, "TDH.MEM.PAGE.ADD"},
    {Leaf::MrExtend, "TDH.MR.EXTEND"},       {Leaf::MrFinalize, "TDH.MR.FINALIZE"},
    {Leaf::MemPageAug, "TDH.MEM.PAGE.AUG"},  {Leaf::VpEnter, "TDH.VP.ENTER"},
    {Leaf::MngTeardown, "TDH.MNG.TEARDOWN"},
};

struct GuestLeafEntry {
  GuestLeaf leaf;
  std::string_view name;
};
constexpr GuestLeafEntry kGuestLeafTable[] = {
    {GuestLeaf::MemPageAccept, "TDG.MEM.PAGE.ACCEPT"},
    {GuestLeaf::MrRtmrExtend, "TDG.MR.RTMR.EXTEND"},
    {GuestLeaf::MrReport, "TDG.MR.REPORT"},
    {GuestLeaf::VpVmcall, "TDG.VP.VMCALL"},
};

// TDMR list encoding used by TDH.SYS.CONFIG: count, then per TDMR base, size,
// reserved count and (base, size) pairs.
std::vector<std::uint64_t> encode_tdmrs(std::span<const Tdmr> tdmrs) {
  std::vector<std::uint64_t> out{tdmrs.size()};
  for (const auto& t : tdmrs) {
    out.push_back(t.base);
    out.push_back(t.size);
    out.push_back(t.reserved.size());
    for (const auto& r : t.reserved) {
      out.push_back(r.base);
      out.push_back(r.size);
    }
  }
  return out;
}

std::optional<std::vector<Tdmr>> decode_tdmrs(const std::vector<std::uint64_t>& in) {
  std::size_t i = 0;
  auto next = [&](std::uint64_t& v) {
    if (i >= in.size()) return false;
    v = in[i++];
    return true;
  };
  std::uint64_t count = 0;
  if (!next(count) || count > 64) return std::nullopt;
  std::vector<Tdmr> out(count);
  for (auto& t : out) {
    std::uint64_t nres = 0;
    if (!next(t.base) || !next(t.size) || !next(nres) || nres > 64) return std::nullopt;
    t.reserved.resize(nres);
    for (auto& r : t.reserved)
      if (!next(r.base) || !next(r.size)) return std::nullopt;
  }
  if (i != in.size()) return std::nullopt;
  return out;
}

}  // namespace

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::Uninstalled: return "Uninstalled";
    case Phase::Installing: return "Installing";
    case Phase::Ready: return "Ready";
    case Phase::Disabled: return "Disabled";
  }
  return "?";
}

std::string_view leaf_name(std::uint32_t id) {
  for (const auto& e : kLeafTable)
    if (static_cast<std::uint32_t>(e.leaf) == id) return e.name;
  return {};
}

std::optional<Leaf> leaf_from_name(std::string_view name) {
  for (const auto& e : kLeafTable)
    if (e.name == name) return e.leaf;
  return std::nullopt;
}

const std::vector<Leaf>& all_leaves() {
  static const std::vector<Leaf> v = [] {
    std::vector<Leaf> out;
    for (const auto& e : kLeafTable) out.push_back(e.leaf);
    return out;
  }();
  return v;
}

std::string_view guest_leaf_name(std::uint32_t id) {
  for (const auto& e : kGuestLeafTable)
    if (static_cast<std::uint32_t>(e.leaf) == id) return e.name;
  return {};
}

const std::vector<GuestLeaf>& all_guest_leaves() {
  static const std::vector<GuestLeaf> v = [] {
    std::vector<GuestLeaf> out;
    for (const auto& e : kGuestLeafTable) out.push_back(e.leaf);
    return out;
  }();
  return v;
}

Platform::Platform(HarnessConfig cfg, Trace* trace)
    : cfg_(std::move(cfg)),
      trace_(trace),
      engine_(cfg_.rng_seed),
      mm_(cfg_.cmrs),
      rng_(cfg_.rng_seed ^ kPlatformRngSalt) {
  if (cfg_.lp_count == 0 || cfg_.package_count == 0 || cfg_.package_count > cfg_.lp_count)
    boot_status_ = Status::BadParams;
  else if (Status s = validate_cmrs(cfg_.cmrs); s != Status::Success)
    boot_status_ = s;
  else
    boot_status_ = engine_.configure_tme(cfg_.keys);
  rng_.fill(cpu_hmac_key_);
  lp_init_.assign(cfg_.lp_count, false);
}

// ---------------------------------------------------------------- install

Result<InstallProgress> Platform::seamldr_install(unsigned lp, ByteSpan image, const SeamSigstruct& sig) {
  auto log = [&](Status st) {
    if (trace_ != nullptr)
      trace_->emit("seamldr", "install",
                   {{"lp", std::to_string(lp)}, {"svn", std::to_string(sig.svn)}, {"result", std::string(to_string(st))}});
  };
  auto fail = [&](Status st) -> Result<InstallProgress> {
    log(st);
    return st;
  };
  if (boot_status_ != Status::Success) return fail(Status::NotConfigured);
  if (phase_ == Phase::Disabled) return fail(Status::VmFailInvalid);
  // The TDMR set and keys are frozen once platform init starts, so updates
  // are only accepted before TDH.SYS.INIT.
  if (sys_init_done_) return fail(Status::OutOfOrderCall);
  if (lp >= cfg_.lp_count) return fail(Status::InvalidLp);

  if (!session_) {
    session_ = Session{Bytes(image.begin(), image.end()), sig, std::vector<bool>(cfg_.lp_count, false), phase_};
    phase_ = Phase::Installing;
  } else {
    if (session_->joined[lp]) return fail(Status::ReentrantSession);
    if (!std::equal(image.begin(), image.end(), session_->image.begin(), session_->image.end()) ||
        !(sig == session_->sig))
      return fail(Status::BadParams);
  }
  session_->joined[lp] = true;
  if (!std::all_of(session_->joined.begin(), session_->joined.end(), [](bool b) { return b; })) {
    log(Status::Success);
    return InstallProgress::Joined;
  }

  Session s = std::move(*session_);
  session_.reset();
  const Status st = install_final(s);
  if (st != Status::Success) {
    phase_ = s.prior;
    return fail(st);
  }
  log(st);
  return InstallProgress::Installed;
}

Status Platform::install_final(const Session& s) {
  // 1. parameter checks
  if (s.image.empty() || s.sig.stack_pages_per_lp == 0 || s.sig.data_pages_per_lp == 0 ||
      s.sig.global_data_pages == 0)
    return Status::BadParams;
  // 2. sigstruct signature
  if (!crypto::ecdsa_verify(vendor_public_key(), s.sig.signed_bytes(), s.sig.signature)) return Status::BadSignature;
  // 3. SVN must not go backwards
  if (identity_ && s.sig.svn < identity_->svn) return Status::SvnDowngrade;
  // 4. region sizing
  auto layout = compute_seam_layout(cfg_.seamrr_base, cfg_.seamrr_size, cfg_.lp_count, s.sig, s.image.size());
  if (!layout) return layout.status();
  // 5. linear mapping with randomized bits 34..46
  const LinearLayout linear = randomize_linear_layout(rng_);
  // 6. image load, hash checked against the sigstruct
  if (crypto::sha384(s.image) != s.sig.image_hash) return Status::BadSignature;

  layout_ = *layout;
  linear_ = linear;
  // 7. sysinfo
  SysInfoTable info;
  info.cmrs = cfg_.cmrs;
  info.lp_count = cfg_.lp_count;
  info.seam_base = cfg_.seamrr_base;
  info.seam_size = cfg_.seamrr_size;
  info.linear = linear;
  info.private_hkid_first = engine_.partition().private_first;
  info.private_hkid_last = engine_.partition().private_last;
  sysinfo_ = info.serialize();
  // 8. per-LP SEAM transfer contexts
  vmcs_pages_.clear();
  for (unsigned lp = 0; lp < cfg_.lp_count; ++lp) {
    TransferContext ctx;
    ctx.host_entry_point = std::string(kSeamcallEntryPoint);
    ctx.page_table_root = layout_->page_table.base;
    ctx.fs_base = linear.sysinfo;
    ctx.gs_base = linear.data + std::uint64_t{lp} * s.sig.data_pages_per_lp * kPage4K;
    ctx.lp = lp;
    vmcs_pages_[layout_->vmcs_page(lp)] = ctx;
  }
  // 9. record the resident module
  identity_ = ModuleIdentity{s.sig.image_hash, s.sig.svn};
  phase_ = Phase::Ready;
  return Status::Success;
}

const TransferContext* Platform::transfer_context(unsigned lp) const {
  if (!layout_) return nullptr;
  auto it = vmcs_pages_.find(layout_->vmcs_page(lp));
  return it == vmcs_pages_.end() ? nullptr : &it->second;
}

Status install_module(Platform& p, ByteSpan image, const SeamSigstruct& sig) {
  for (unsigned lp = 0; lp < p.config().lp_count; ++lp) {
    auto r = p.seamldr_install(lp, image, sig);
    if (!r) return r.status();
  }
  return Status::Success;
}

// ---------------------------------------------------------------- dispatch

void Platform::trace_call(std::string_view event, unsigned lp, std::uint32_t leaf, bool guest, Status st) {
  if (trace_ == nullptr) return;
  std::string name(guest ? guest_leaf_name(leaf) : leaf_name(leaf));
  if (name.empty()) name = hex_u64(leaf);
  trace_->emit("module", event, {{"lp", std::to_string(lp)}, {"leaf", name}, {"result", std::string(to_string(st))}});
}

Platform::Handler Platform::handler_for(std::uint32_t leaf) const {
  switch (static_cast<Leaf>(leaf)) {
    case Leaf::SysInit: return &Platform::leaf_sys_init;
    case Leaf::SysLpInit: return &Platform::leaf_sys_lp_init;
    case Leaf::SysConfig: return &Platform::leaf_sys_config;
    case Leaf::SysKeyConfig: return &Platform::leaf_sys_key_config;
    case Leaf::SysTdmrInit: return &Platform::leaf_sys_tdmr_init;
    case Leaf::MngCreate: return &Platform::leaf_mng_create;
    case Leaf::VpCreate: return &Platform::leaf_vp_create;
    case Leaf::MemPageAdd: return &Platform::leaf_page_add;
    case Leaf::MrExtend: return &Platform::leaf_mr_extend;
    case Leaf::MrFinalize: return &Platform::leaf_mr_finalize;
    case Leaf::MemPageAug: return &Platform::leaf_page_aug;
    case Leaf::VpEnter: return &Platform::leaf_vp_enter;
    case Leaf::MngTeardown: return &Platform::leaf_mng_teardown;
  }
  return nullptr;
}

LeafResult Platform::seamcall(unsigned lp, std::uint32_t leaf, const LeafArgs& args) {
  LeafResult res;
  if (phase_ != Phase::Ready) {
    res.status = Status::VmFailInvalid;
  } else if (lp >= cfg_.lp_count) {
    res.status = Status::InvalidLp;
  } else if (Handler h = handler_for(leaf); h == nullptr) {
    res.status = Status::UnknownLeaf;
  } else {
    // SEAMCALL entry: load this LP's SEAM transfer VMCS.
    const std::uint64_t vmcs = layout_->vmcs_page(lp);
    auto ctx = vmcs_pages_.find(vmcs);
    if (ctx == vmcs_pages_.end() || ctx->second.lp != lp || ctx->second.host_entry_point != kSeamcallEntryPoint) {
      res.status = Status::VmFailInvalid;
    } else {
      last_vmcs_ = vmcs;
      res = (this->*h)(lp, args);
      if (phase_ == Phase::Disabled) res = LeafResult{Status::VmFailInvalid};
    }
  }
  trace_call("seamcall", lp, leaf, false, res.status);
  return res;
}

void Platform::module_poison_trip() {
  if (phase_ != Phase::Disabled && trace_ != nullptr) trace_->emit("module", "disabled", {{"reason", "poison"}});
  phase_ = Phase::Disabled;
}

Status Platform::require_lp_ready(unsigned lp) const {
  if (!sys_init_done_ || !lp_init_[lp]) return Status::OutOfOrderCall;
  return Status::Success;
}

// ---------------------------------------------------------------- platform init leaves

LeafResult Platform::leaf_sys_init(unsigned, const LeafArgs&) {
  if (sys_init_done_) return {Status::OutOfOrderCall};
  sys_init_done_ = true;
  mm_.init_keyholes(cfg_.lp_count, linear_->keyholes);
  return {};
}

LeafResult Platform::leaf_sys_lp_init(unsigned lp, const LeafArgs&) {
  if (!sys_init_done_ || lp_init_[lp]) return {Status::OutOfOrderCall};
  lp_init_[lp] = true;
  return {};
}

LeafResult Platform::leaf_sys_config(unsigned lp, const LeafArgs& a) {
  if (Status s = require_lp_ready(lp); s != Status::Success) return {s};
  if (config_done_ || !std::all_of(lp_init_.begin(), lp_init_.end(), [](bool b) { return b; }))
    return {Status::OutOfOrderCall};
  const auto hkid = static_cast<std::uint32_t>(a.rcx);
  if (!engine_.partition().contains(hkid)) return {Status::HkidOutOfRange};
  if (!engine_.partition().is_private(hkid)) return {Status::HkidNotPrivate};
  if (engine_.is_bound(hkid)) return {Status::HkidInUse};
  auto tdmrs = decode_tdmrs(a.list);
  if (!tdmrs) return {Status::BadParams};
  const Extent seam{cfg_.seamrr_base, cfg_.seamrr_size};
  for (const auto& t : *tdmrs)
    if (seam.overlaps({t.base, t.size})) return {Status::TdmrInvalid};
  if (mm_.configure_tdmrs(*tdmrs) != Status::Success) return {Status::TdmrInvalid};
  global_hkid_ = hkid;
  config_done_ = true;
  return {};
}

LeafResult Platform::leaf_sys_key_config(unsigned lp, const LeafArgs&) {
  if (Status s = require_lp_ready(lp); s != Status::Success) return {s};
  if (!config_done_) return {Status::OutOfOrderCall};
  const unsigned pkg = package_of(lp);
  if (key_packages_.contains(pkg)) return {Status::OutOfOrderCall};
  // One engine stands in for every package; the key is generated on the
  // first package and the remaining packages only record that they are
  // programmed.
  if (key_packages_.empty()) {
    auto k = engine_.pconfig(Actor::Seam, *global_hkid_);
    if (!k) return {k.status()};
  }
  key_packages_.insert(pkg);
  return {};
}

LeafResult Platform::leaf_sys_tdmr_init(unsigned lp, const LeafArgs& a) {
  if (Status s = require_lp_ready(lp); s != Status::Success) return {s};
  if (!config_done_) return {Status::OutOfOrderCall};
  if (a.rcx >= mm_.pamt().tdmrs().size()) return {Status::BadParams};
  const std::uint64_t entries = std::max<std::uint64_t>(1, cfg_.tdmr_init_chunk / kPamtEntryBytes);
  auto done = mm_.pamt().init_chunk(a.rcx, entries);
  if (!done) return {done.status()};
  return {Status::Success, *done ? 1u : 0u};
}

// ---------------------------------------------------------------- typed wrappers

Status Platform::sys_init(unsigned lp) { return seamcall(lp, Leaf::SysInit, {}).status; }
Status Platform::sys_lp_init(unsigned lp) { return seamcall(lp, Leaf::SysLpInit, {}).status; }

Status Platform::sys_config(unsigned lp, std::uint32_t global_hkid, std::span<const Tdmr> tdmrs) {
  LeafArgs a;
  a.rcx = global_hkid;
  a.list = encode_tdmrs(tdmrs);
  return seamcall(lp, Leaf::SysConfig, a).status;
}

Status Platform::sys_key_config(unsigned lp) { return seamcall(lp, Leaf::SysKeyConfig, {}).status; }

Result<bool> Platform::sys_tdmr_init(unsigned lp, std::size_t tdmr_index) {
  LeafArgs a;
  a.rcx = tdmr_index;
  auto r = seamcall(lp, Leaf::SysTdmrInit, a);
  if (r.status != Status::Success) return r.status;
  return r.rcx != 0;
}

Result<unsigned> platform_init_sequence(Platform& p, std::uint32_t global_hkid, std::span<const Tdmr> tdmrs) {
  const unsigned lps = p.config().lp_count;
  TDXSIM_TRY(p.sys_init(0));
  for (unsigned lp = 0; lp < lps; ++lp) TDXSIM_TRY(p.sys_lp_init(lp));
  TDXSIM_TRY(p.sys_config(0, global_hkid, tdmrs));
  std::set<unsigned> done_pkgs;
  for (unsigned lp = 0; lp < lps; ++lp)
    if (done_pkgs.insert(p.package_of(lp)).second) TDXSIM_TRY(p.sys_key_config(lp));
  unsigned calls = 0;
  for (std::size_t i = 0; i < tdmrs.size(); ++i) {
    for (;;) {
      auto r = p.sys_tdmr_init(0, i);
      ++calls;
      if (!r) return r.status();
      if (*r) break;
    }
  }
  return calls;
}

// ---------------------------------------------------------------- module memory access

Result<Line> Platform::module_read(unsigned lp, std::uint32_t hkid, std::uint64_t pa) {
  auto la = mm_.map_keyhole(lp, pa & ~(kPage4K - 1));
  if (!la) return la.status();
  auto phys = mm_.keyholes(lp).translate(*la + (pa & (kPage4K - 1)));
  auto r = engine_.read_line(Actor::Seam, engine_.addr(hkid, *phys));
  (void)mm_.unmap_keyhole(lp, *la);
  if (!r) return r.status();
  if (r->poisoned()) {
    module_poison_trip();
    return Status::VmFailInvalid;
  }
  return r->data;
}

Status Platform::module_write(unsigned lp, std::uint32_t hkid, std::uint64_t pa, const Line& data) {
  auto la = mm_.map_keyhole(lp, pa & ~(kPage4K - 1));
  if (!la) return la.status();
  auto phys = mm_.keyholes(lp).translate(*la + (pa & (kPage4K - 1)));
  const Status s = engine_.write_line(Actor::Seam, engine_.addr(hkid, *phys), data);
  (void)mm_.unmap_keyhole(lp, *la);
  return s;
}

Status Platform::module_zero_page(unsigned lp, std::uint32_t hkid, std::uint64_t page) {
  auto la = mm_.map_keyhole(lp, page);
  if (!la) return la.status();
  Status s = Status::Success;
  const Line zero{};
  for (std::uint64_t off = 0; off < kPage4K && s == Status::Success; off += kLineSize)
    s = engine_.write_line(Actor::Seam, engine_.addr(hkid, *mm_.keyholes(lp).translate(*la + off)), zero);
  (void)mm_.unmap_keyhole(lp, *la);
  return s;
}

// ---------------------------------------------------------------- host side

Status Platform::host_write(std::uint64_t pa, ByteSpan data) {
  if (pa % kLineSize != 0) return Status::Unaligned;
  for (std::size_t off = 0; off < data.size(); off += kLineSize) {
    Line l{};
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(off), std::min<std::size_t>(kLineSize, data.size() - off),
                l.begin());
    TDXSIM_TRY(engine_.write_line(Actor::Host, engine_.addr(0, pa + off), l));
  }
  return Status::Success;
}

Result<Bytes> Platform::host_read(std::uint64_t pa, std::size_t len) {
  if (pa % kLineSize != 0) return Status::Unaligned;
  Bytes out;
  for (std::size_t off = 0; off < len; off += kLineSize) {
    auto r = engine_.read_line(Actor::Host, engine_.addr(0, pa + off));
    if (!r) return r.status();
    if (r->poisoned()) return Status::VmFailInvalid;
    const std::size_t n = std::min<std::size_t>(kLineSize, len - off);
    out.insert(out.end(), r->data.begin(), r->data.begin() + static_cast<std::ptrdiff_t>(n));
  }
  return out;
}

// ---------------------------------------------------------------- inspection

const TdState* Platform::td(std::uint64_t tdr) const {
  auto it = tds_.find(tdr);
  return it == tds_.end() ? nullptr : &it->second;
}

std::vector<std::uint64_t> Platform::td_list() const {
  std::vector<std::uint64_t> out;
  for (const auto& [tdr, st] : tds_) out.push_back(tdr);
  return out;
}

void Platform::serialize_state(Bytes& out) const {
  engine_.serialize_state(out);
  mm_.serialize_state(out);
  out.push_back(static_cast<std::uint8_t>(phase_));
  out.push_back(session_ ? 1 : 0);
  if (identity_) {
    put_bytes(out, identity_->measurement);
    put_le(out, identity_->svn, 4);
  }
  put_bytes(out, sysinfo_);
  for (const auto& [pa, ctx] : vmcs_pages_) {
    put_le64(out, pa);
    put_le64(out, ctx.fs_base);
    put_le64(out, ctx.gs_base);
  }
  out.push_back(sys_init_done_ ? 1 : 0);
  for (bool b : lp_init_) out.push_back(b ? 1 : 0);
  out.push_back(config_done_ ? 1 : 0);
  put_le64(out, global_hkid_.value_or(~0u));
  for (unsigned p : key_packages_) put_le(out, p, 4);
  for (const auto& [tdr, t] : tds_) {
    put_le64(out, tdr);
    put_le(out, t.hkid, 4);
    out.push_back(static_cast<std::uint8_t>(t.lifecycle));
    for (auto c : t.tdcx) put_le64(out, c);
    put_le64(out, t.attributes);
    put_bytes(out, t.mrtd_state.finish());
    put_bytes(out, t.mrtd);
    for (const auto& r : t.rtmr) put_bytes(out, r);
    t.sept.for_each_leaf([&](const EptLeaf& l) {
      put_le64(out, l.gpa_base);
      put_le64(out, l.hpa);
      out.push_back(static_cast<std::uint8_t>(l.size));
      out.push_back(l.pending ? 1 : 0);
    });
    for (const auto& v : t.vcpus) {
      put_le64(out, v.tdvpr);
      put_le64(out, v.pc);
      put_le64(out, v.script.size());
      put_le64(out, v.ve.count);
      put_le64(out, v.reads.size());
    }
  }
  for (const auto& [tdr, ept] : shared_epts_) {
    put_le64(out, tdr);
    ept.for_each_leaf([&](const EptLeaf& l) {
      put_le64(out, l.gpa_base);
      put_le64(out, l.hpa);
    });
  }
}

Digest48 Platform::state_digest() const {
  Bytes b;
  serialize_state(b);
  return crypto::sha384(b);
}

}  // namespace tdxsim
