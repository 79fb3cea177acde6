#include <algorithm>

#include "tdxsim/platform.hpp"

namespace tdxsim {
namespace {

constexpr std::string_view kPageAddTag = "MEM.PAGE.ADD";
constexpr std::string_view kMrExtendTag = "MR.EXTEND";
constexpr std::uint64_t kExtendBlock = 256;

Bytes measure_prefix(std::string_view tag, std::uint64_t gpa) {
  Bytes b;
  put_ascii(b, tag);
  put_le64(b, gpa & ~kGpaSharedBit);
  return b;
}

Line metadata_line(std::string_view magic, std::initializer_list<std::uint64_t> words) {
  Line l{};
  std::copy(magic.begin(), magic.end(), l.begin());
  std::size_t off = 8;
  for (auto w : words) {
    for (int i = 0; i < 8 && off < l.size(); ++i) l[off++] = static_cast<std::uint8_t>(w >> (8 * i));
  }
  return l;
}

}  // namespace

std::string_view to_string(Lifecycle l) {
  switch (l) {
    case Lifecycle::Building: return "Building";
    case Lifecycle::Finalized: return "Finalized";
    case Lifecycle::Runnable: return "Runnable";
    case Lifecycle::Fatal: return "Fatal";
    case Lifecycle::TornDown: return "TornDown";
  }
  return "?";
}

std::string_view to_string(ExitClass c) {
  switch (c) {
    case ExitClass::Cpuid: return "cpuid";
    case ExitClass::Hlt: return "hlt";
    case ExitClass::PortIo: return "portio";
    case ExitClass::Msr: return "msr";
    case ExitClass::Ept: return "ept";
    case ExitClass::Other: return "other";
  }
  return "?";
}

std::optional<ExitClass> exit_class_from_string(std::string_view s) {
  for (auto c : {ExitClass::Cpuid, ExitClass::Hlt, ExitClass::PortIo, ExitClass::Msr, ExitClass::Ept, ExitClass::Other})
    if (to_string(c) == s) return c;
  return std::nullopt;
}

std::string_view to_string(GuestOp::Kind k) {
  switch (k) {
    case GuestOp::Kind::Read: return "read";
    case GuestOp::Kind::Write: return "write";
    case GuestOp::Kind::Accept: return "accept";
    case GuestOp::Kind::RtmrExtend: return "rtmr-extend";
    case GuestOp::Kind::Report: return "report";
    case GuestOp::Kind::Cpuid: return "cpuid";
    case GuestOp::Kind::Hlt: return "hlt";
    case GuestOp::Kind::PortIo: return "portio";
    case GuestOp::Kind::VmCall: return "vmcall";
  }
  return "?";
}

std::string_view to_string(TdExit::Kind k) {
  switch (k) {
    case TdExit::Kind::Done: return "done";
    case TdExit::Kind::VmCall: return "vmcall";
    case TdExit::Kind::Report: return "report";
    case TdExit::Kind::EptViolation: return "ept-violation";
    case TdExit::Kind::Fault: return "fault";
    case TdExit::Kind::Fatal: return "fatal";
  }
  return "?";
}

const std::map<ExitClass, std::vector<std::string>>& ve_param_allowlist() {
  static const std::map<ExitClass, std::vector<std::string>> m = {
      {ExitClass::Cpuid, {"leaf", "subleaf"}},
      {ExitClass::Hlt, {}},
      {ExitClass::PortIo, {"port", "size", "direction", "value"}},
  };
  return m;
}

Result<HypervisorRequest> minimize_exit(ExitClass c, const ExitParams& params) {
  const auto& allow = ve_param_allowlist();
  auto it = allow.find(c);
  if (it == allow.end()) return Status::UnsupportedExitClass;
  HypervisorRequest req{c, {}};
  for (const auto& [k, v] : params) {
    if (std::find(it->second.begin(), it->second.end(), k) == it->second.end()) return Status::UnsupportedExitClass;
    req.params[k] = v;
  }
  return req;
}

// ---------------------------------------------------------------- metadata

Status Platform::write_td_metadata(unsigned lp, const TdState& td) {
  TDXSIM_TRY(module_write(lp, *global_hkid_, td.tdr,
                          metadata_line("TDR", {td.hkid, static_cast<std::uint64_t>(td.lifecycle), td.tdcx[0],
                                                td.tdcx[1], td.tdcx[2], td.tdcx[3], td.vcpus.size()})));
  const Digest48 mr = td.lifecycle == Lifecycle::Building ? td.mrtd_state.finish() : td.mrtd;
  Line tdcs = metadata_line("TDCS", {td.attributes});
  std::copy_n(mr.begin(), 48, tdcs.begin() + 16);
  TDXSIM_TRY(module_write(lp, td.hkid, td.tdcx[0], tdcs));
  for (const auto& v : td.vcpus)
    TDXSIM_TRY(module_write(lp, td.hkid, v.tdvpr, metadata_line("TDVPR", {v.pc, v.ve.count})));
  return Status::Success;
}

Status Platform::check_td_metadata(unsigned lp, const TdState& td, std::optional<unsigned> vcpu) {
  auto tdr = module_read(lp, *global_hkid_, td.tdr);
  if (!tdr) return tdr.status();
  auto tdcs = module_read(lp, td.hkid, td.tdcx[0]);
  if (!tdcs) return tdcs.status();
  if (vcpu && *vcpu < td.vcpus.size()) {
    auto tdvpr = module_read(lp, td.hkid, td.vcpus[*vcpu].tdvpr);
    if (!tdvpr) return tdvpr.status();
  }
  return Status::Success;
}

Result<TdState*> Platform::find_td(unsigned lp, std::uint64_t tdr) {
  auto it = tds_.find(tdr);
  if (it == tds_.end() || it->second.lifecycle == Lifecycle::TornDown) return Status::TdNotFound;
  auto attrs = mm_.pamt().walk(tdr);
  if (!attrs || attrs->type != PageType::Tdr || attrs->owner != tdr) return Status::TdNotFound;
  TDXSIM_TRY(check_td_metadata(lp, it->second));
  return &it->second;
}

Status Platform::assign_pages(std::span<const std::uint64_t> pages, std::uint64_t owner, PageType type,
                              std::vector<std::uint64_t>& done) {
  for (auto pa : pages) {
    if (pa % kPage4K != 0) return Status::Misaligned;
    Status s = mm_.pamt().assign(pa, PageSize::k4K, owner, type);
    if (s == Status::AlreadyOwned) s = Status::PageNotFree;
    if (s != Status::Success) return s;
    done.push_back(pa);
  }
  return Status::Success;
}

void Platform::release_pages(std::span<const std::uint64_t> pages, std::uint64_t owner) {
  for (auto pa : pages) (void)mm_.pamt().release(pa, PageSize::k4K, owner);
}

// ---------------------------------------------------------------- TD leaves

LeafResult Platform::leaf_mng_create(unsigned lp, const LeafArgs& a) {
  if (Status s = require_lp_ready(lp); s != Status::Success) return {s};
  if (!config_done_ || !mm_.pamt().fully_initialized()) return {Status::OutOfOrderCall};
  if (key_packages_.size() != cfg_.package_count) return {Status::KeyNotConfigured};
  const auto hkid = static_cast<std::uint32_t>(a.rcx);
  const std::uint64_t tdr = a.rdx;
  if (!engine_.partition().contains(hkid)) return {Status::HkidOutOfRange};
  if (!engine_.partition().is_private(hkid)) return {Status::HkidNotPrivate};
  if (hkid == global_hkid_ || engine_.is_bound(hkid)) return {Status::HkidInUse};
  if (a.list.size() != kTdcxPages) return {Status::BadParams};
  std::vector<std::uint64_t> all{tdr};
  all.insert(all.end(), a.list.begin(), a.list.end());
  std::vector<std::uint64_t> sorted = all;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) return {Status::BadParams};

  std::vector<std::uint64_t> done;
  Status s = assign_pages(std::span(all).first(1), tdr, PageType::Tdr, done);
  if (s == Status::Success) s = assign_pages(std::span(all).subspan(1), tdr, PageType::Tdcx, done);
  if (s == Status::Success) {
    // The TD's ephemeral key.
    auto key = engine_.pconfig(Actor::Seam, hkid);
    if (!key) s = key.status();
  }
  if (s != Status::Success) {
    release_pages(done, tdr);
    return {s};
  }

  TdState td;
  td.tdr = tdr;
  td.hkid = hkid;
  td.attributes = cfg_.td_attributes;
  std::copy(a.list.begin(), a.list.end(), td.tdcx.begin());
  s = module_zero_page(lp, *global_hkid_, tdr);
  for (auto pa : td.tdcx)
    if (s == Status::Success) s = module_zero_page(lp, hkid, pa);
  if (s == Status::Success) s = write_td_metadata(lp, td);
  if (s != Status::Success) return {s};
  tds_.erase(tdr);
  tds_.emplace(tdr, std::move(td));
  return {};
}

LeafResult Platform::leaf_vp_create(unsigned lp, const LeafArgs& a) {
  if (Status s = require_lp_ready(lp); s != Status::Success) return {s};
  auto td = find_td(lp, a.rcx);
  if (!td) return {td.status()};
  TdState& t = **td;
  if (t.lifecycle != Lifecycle::Building) return {Status::NotBuilding};
  if (a.list.size() != kTdvpsPages - 1) return {Status::BadParams};
  std::vector<std::uint64_t> done;
  const std::uint64_t tdvpr = a.rdx;
  Status s = assign_pages(std::span(&tdvpr, 1), t.tdr, PageType::Tdvpr, done);
  if (s == Status::Success) s = assign_pages(a.list, t.tdr, PageType::Tdvpx, done);
  if (s != Status::Success) {
    release_pages(done, t.tdr);
    return {s};
  }
  Vcpu v;
  v.tdvpr = tdvpr;
  std::copy(a.list.begin(), a.list.end(), v.tdvpx.begin());
  for (auto pa : done)
    if (s == Status::Success) s = module_zero_page(lp, t.hkid, pa);
  if (s != Status::Success) return {s};
  t.vcpus.push_back(std::move(v));
  if (s = write_td_metadata(lp, t); s != Status::Success) return {s};
  return {Status::Success, t.vcpus.size() - 1};
}

LeafResult Platform::leaf_page_add(unsigned lp, const LeafArgs& a) {
  if (Status s = require_lp_ready(lp); s != Status::Success) return {s};
  auto td = find_td(lp, a.rcx);
  if (!td) return {td.status()};
  TdState& t = **td;
  const std::uint64_t gpa = a.rdx, hpa = a.r8, src = a.r9;
  if (t.lifecycle != Lifecycle::Building) return {Status::NotBuilding};
  if (gpa_is_shared(gpa)) return {Status::SharedGpa};
  if (gpa >= (std::uint64_t{1} << kGpaWidth)) return {Status::BadParams};
  if (gpa % kPage4K != 0 || hpa % kPage4K != 0 || src % kPage4K != 0) return {Status::Misaligned};
  if (t.sept.walk(gpa)) return {Status::AlreadyMapped};
  std::vector<std::uint64_t> done;
  if (Status s = assign_pages(std::span(&hpa, 1), t.tdr, PageType::Regular, done); s != Status::Success) return {s};
  if (Status s = mm_.sept_map(t.sept, t.tdr, gpa, hpa, PageSize::k4K, false); s != Status::Success) {
    release_pages(done, t.tdr);
    return {s};
  }
  // Copy the source page in under the TD's key.
  for (std::uint64_t off = 0; off < kPage4K; off += kLineSize) {
    auto line = module_read(lp, 0, src + off);
    if (!line) return {line.status()};
    if (Status s = module_write(lp, t.hkid, hpa + off, *line); s != Status::Success) return {s};
  }
  t.mrtd_state.update(measure_prefix(kPageAddTag, gpa));
  ++t.measured_pages;
  if (Status s = write_td_metadata(lp, t); s != Status::Success) return {s};
  return {};
}

LeafResult Platform::leaf_mr_extend(unsigned lp, const LeafArgs& a) {
  if (Status s = require_lp_ready(lp); s != Status::Success) return {s};
  auto td = find_td(lp, a.rcx);
  if (!td) return {td.status()};
  TdState& t = **td;
  const std::uint64_t gpa = a.rdx;
  if (t.lifecycle != Lifecycle::Building) return {Status::NotBuilding};
  if (gpa_is_shared(gpa)) return {Status::SharedGpa};
  if (gpa % kExtendBlock != 0) return {Status::Misaligned};
  auto tr = MemoryManager::sept_walk(t.sept, gpa);
  if (!tr) return {tr.status()};
  Bytes block;
  for (std::uint64_t off = 0; off < kExtendBlock; off += kLineSize) {
    auto line = module_read(lp, t.hkid, tr->hpa + off);
    if (!line) return {line.status()};
    put_bytes(block, *line);
  }
  t.mrtd_state.update(measure_prefix(kMrExtendTag, gpa));
  t.mrtd_state.update(block);
  if (Status s = write_td_metadata(lp, t); s != Status::Success) return {s};
  return {};
}

LeafResult Platform::leaf_mr_finalize(unsigned lp, const LeafArgs& a) {
  if (Status s = require_lp_ready(lp); s != Status::Success) return {s};
  auto td = find_td(lp, a.rcx);
  if (!td) return {td.status()};
  TdState& t = **td;
  if (t.lifecycle != Lifecycle::Building) return {Status::NotBuilding};
  t.mrtd = t.mrtd_state.finish();
  t.lifecycle = Lifecycle::Finalized;
  if (Status s = write_td_metadata(lp, t); s != Status::Success) return {s};
  return {};
}

LeafResult Platform::leaf_page_aug(unsigned lp, const LeafArgs& a) {
  if (Status s = require_lp_ready(lp); s != Status::Success) return {s};
  auto td = find_td(lp, a.rcx);
  if (!td) return {td.status()};
  TdState& t = **td;
  const std::uint64_t gpa = a.rdx, hpa = a.r8;
  if (t.lifecycle == Lifecycle::Building) return {Status::NotFinalized};
  if (t.lifecycle == Lifecycle::Fatal) return {Status::TdFatal};
  if (gpa_is_shared(gpa)) return {Status::SharedGpa};
  if (gpa % kPage4K != 0) return {Status::Misaligned};
  if (t.sept.walk(gpa)) return {Status::AlreadyMapped};
  std::vector<std::uint64_t> done;
  if (Status s = assign_pages(std::span(&hpa, 1), t.tdr, PageType::Regular, done); s != Status::Success) return {s};
  if (Status s = mm_.sept_map(t.sept, t.tdr, gpa, hpa, PageSize::k4K, true); s != Status::Success) {
    release_pages(done, t.tdr);
    return {s};
  }
  return {};
}

LeafResult Platform::leaf_vp_enter(unsigned lp, const LeafArgs& a) {
  if (Status s = require_lp_ready(lp); s != Status::Success) return {s};
  auto td = find_td(lp, a.rcx);
  if (!td) return {td.status()};
  TdState& t = **td;
  if (t.lifecycle == Lifecycle::Building) return {Status::NotFinalized};
  if (t.lifecycle == Lifecycle::Fatal) return {Status::TdFatal};
  const auto vcpu = static_cast<unsigned>(a.rdx);
  if (vcpu >= t.vcpus.size()) return {Status::VcpuNotFound};
  // TD transfer VMCS lives in the TDVPS.
  if (Status s = check_td_metadata(lp, t, vcpu); s != Status::Success) return {s};
  if (t.lifecycle == Lifecycle::Finalized) t.lifecycle = Lifecycle::Runnable;
  TdExit exit = run_guest(lp, t, vcpu);
  if (phase_ == Phase::Disabled) return {Status::VmFailInvalid};
  if (Status s = write_td_metadata(lp, t); s != Status::Success) return {s};
  if (trace_ != nullptr) {
    std::vector<TraceField> f{{"td", hex_u64(t.tdr)}, {"vcpu", std::to_string(vcpu)},
                              {"exit", std::string(to_string(exit.kind))}};
    if (exit.status != Status::Success) f.push_back({"status", std::string(to_string(exit.status))});
    if (exit.kind == TdExit::Kind::VmCall) {
      f.push_back({"class", std::string(to_string(exit.request.exit_class))});
      for (const auto& [k, v] : exit.request.params) f.push_back({k, hex_u64(v)});
    }
    if (exit.kind == TdExit::Kind::Fatal || exit.kind == TdExit::Kind::EptViolation) f.push_back({"gpa", hex_u64(exit.gpa)});
    trace_->emit("td", "exit", std::move(f));
  }
  LeafResult r;
  r.exit = std::move(exit);
  return r;
}

LeafResult Platform::leaf_mng_teardown(unsigned lp, const LeafArgs& a) {
  if (Status s = require_lp_ready(lp); s != Status::Success) return {s};
  auto td = find_td(lp, a.rcx);
  if (!td) return {td.status()};
  TdState& t = **td;
  std::vector<std::uint64_t> pages;
  t.sept.for_each_leaf([&](const EptLeaf& l) { pages.push_back(l.hpa); });
  for (const auto& v : t.vcpus) {
    pages.push_back(v.tdvpr);
    pages.insert(pages.end(), v.tdvpx.begin(), v.tdvpx.end());
  }
  pages.insert(pages.end(), t.tdcx.begin(), t.tdcx.end());
  pages.push_back(t.tdr);
  for (auto pa : pages)
    if (Status s = mm_.page_reclaim(engine_, t.tdr, pa); s != Status::Success) return {s};
  (void)engine_.unbind(Actor::Seam, t.hkid);
  t.sept.clear();
  t.vcpus.clear();
  t.lifecycle = Lifecycle::TornDown;
  shared_epts_.erase(t.tdr);
  return {};
}

// ---------------------------------------------------------------- typed wrappers

Status Platform::td_create(unsigned lp, std::uint32_t hkid, std::uint64_t tdr, std::span<const std::uint64_t> tdcx) {
  LeafArgs a;
  a.rcx = hkid;
  a.rdx = tdr;
  a.list.assign(tdcx.begin(), tdcx.end());
  return seamcall(lp, Leaf::MngCreate, a).status;
}

Result<unsigned> Platform::vp_create(unsigned lp, std::uint64_t tdr, std::uint64_t tdvpr,
                                     std::span<const std::uint64_t> tdvpx) {
  LeafArgs a;
  a.rcx = tdr;
  a.rdx = tdvpr;
  a.list.assign(tdvpx.begin(), tdvpx.end());
  auto r = seamcall(lp, Leaf::VpCreate, a);
  if (r.status != Status::Success) return r.status;
  return static_cast<unsigned>(r.rcx);
}

Status Platform::page_add(unsigned lp, std::uint64_t tdr, std::uint64_t gpa, std::uint64_t hpa,
                          std::uint64_t source_pa) {
  return seamcall(lp, Leaf::MemPageAdd, {tdr, gpa, hpa, source_pa, {}}).status;
}

Status Platform::mr_extend(unsigned lp, std::uint64_t tdr, std::uint64_t gpa) {
  return seamcall(lp, Leaf::MrExtend, {tdr, gpa, 0, 0, {}}).status;
}

Status Platform::mr_finalize(unsigned lp, std::uint64_t tdr) {
  return seamcall(lp, Leaf::MrFinalize, {tdr, 0, 0, 0, {}}).status;
}

Status Platform::page_aug(unsigned lp, std::uint64_t tdr, std::uint64_t gpa, std::uint64_t hpa) {
  return seamcall(lp, Leaf::MemPageAug, {tdr, gpa, hpa, 0, {}}).status;
}

Result<TdExit> Platform::td_enter(unsigned lp, std::uint64_t tdr, unsigned vcpu) {
  auto r = seamcall(lp, Leaf::VpEnter, {tdr, vcpu, 0, 0, {}});
  if (r.status != Status::Success) return r.status;
  return std::move(*r.exit);
}

Status Platform::td_teardown(unsigned lp, std::uint64_t tdr) {
  return seamcall(lp, Leaf::MngTeardown, {tdr, 0, 0, 0, {}}).status;
}

// ---------------------------------------------------------------- hypervisor side

Status Platform::load_guest(std::uint64_t tdr, unsigned vcpu, std::vector<GuestOp> script) {
  auto it = tds_.find(tdr);
  if (it == tds_.end() || it->second.lifecycle == Lifecycle::TornDown) return Status::TdNotFound;
  if (vcpu >= it->second.vcpus.size()) return Status::VcpuNotFound;
  auto& v = it->second.vcpus[vcpu];
  v.script = std::move(script);
  v.pc = 0;
  return Status::Success;
}

Status Platform::shared_ept_map(std::uint64_t tdr, std::uint64_t gpa, std::uint64_t hpa) {
  auto it = tds_.find(tdr);
  if (it == tds_.end() || it->second.lifecycle == Lifecycle::TornDown) return Status::TdNotFound;
  return MemoryManager::shared_ept_map(shared_epts_[tdr], gpa, hpa);
}

// ---------------------------------------------------------------- guest execution

Result<Platform::GuestPa> Platform::guest_translate(const TdState& td, std::uint64_t gpa) const {
  if (gpa_is_shared(gpa)) {
    auto it = shared_epts_.find(td.tdr);
    if (it == shared_epts_.end()) return Status::NotMapped;
    auto tr = it->second.walk(gpa);
    if (!tr) return tr.status();
    return GuestPa{tr->hpa, 0};
  }
  auto tr = MemoryManager::sept_walk(td.sept, gpa);
  if (!tr) return tr.status();
  if (tr->leaf.pending) return Status::NotPending;
  return GuestPa{tr->hpa, td.hkid};
}

Result<HypervisorRequest> Platform::inject_ve(TdState& td, unsigned vcpu, ExitClass cls, const ExitParams& raw) {
  const auto& allow = ve_param_allowlist();
  auto it = allow.find(cls);
  if (it == allow.end()) return Status::UnsupportedExitClass;
  // The VE info the guest handler sees carries only the allowlisted fields.
  VeInfo& ve = td.vcpus[vcpu].ve;
  ve.exit_reason = cls;
  ve.minimized_params.clear();
  for (const auto& k : it->second)
    if (auto p = raw.find(k); p != raw.end()) ve.minimized_params[k] = p->second;
  ++ve.count;
  // Guest VE handler: TDG.VP.VMCALL with the minimized parameters.
  return minimize_exit(cls, ve.minimized_params);
}

Result<HypervisorRequest> Platform::ve_inject_and_resume(std::uint64_t tdr, unsigned vcpu, ExitClass cls,
                                                         const ExitParams& raw) {
  if (phase_ != Phase::Ready) return Status::VmFailInvalid;
  auto it = tds_.find(tdr);
  if (it == tds_.end() || it->second.lifecycle == Lifecycle::TornDown) return Status::TdNotFound;
  if (vcpu >= it->second.vcpus.size()) return Status::VcpuNotFound;
  return inject_ve(it->second, vcpu, cls, raw);
}

TdExit Platform::run_guest(unsigned lp, TdState& td, unsigned vcpu) {
  Vcpu& v = td.vcpus[vcpu];
  auto fault = [&](Status s, std::uint64_t gpa = 0) {
    TdExit e;
    e.kind = TdExit::Kind::Fault;
    e.status = s;
    e.gpa = gpa;
    return e;
  };
  while (v.pc < v.script.size()) {
    const GuestOp op = v.script[v.pc];
    switch (op.kind) {
      case GuestOp::Kind::Read:
      case GuestOp::Kind::Write: {
        if (op.gpa % kLineSize != 0) {
          ++v.pc;
          return fault(Status::Unaligned, op.gpa);
        }
        auto pa = guest_translate(td, op.gpa);
        if (!pa) {
          if (pa.status() == Status::NotMapped) {
            // Left at this op so the access retries after the host maps it.
            TdExit e;
            e.kind = TdExit::Kind::EptViolation;
            e.status = Status::NotMapped;
            e.gpa = op.gpa;
            return e;
          }
          ++v.pc;
          return fault(pa.status(), op.gpa);
        }
        const PhysAddr addr = engine_.addr(pa->hkid, pa->hpa);
        if (op.kind == GuestOp::Kind::Write) {
          Line l{};
          std::copy_n(op.data.begin(), std::min<std::size_t>(op.data.size(), kLineSize), l.begin());
          if (Status s = engine_.write_line(Actor::Seam, addr, l); s != Status::Success) {
            ++v.pc;
            return fault(s, op.gpa);
          }
        } else {
          auto r = engine_.read_line(Actor::Seam, addr);
          if (!r) {
            ++v.pc;
            return fault(r.status(), op.gpa);
          }
          if (r->poisoned()) {
            td.lifecycle = Lifecycle::Fatal;
            TdExit e;
            e.kind = TdExit::Kind::Fatal;
            e.status = Status::TdFatal;
            e.gpa = op.gpa;
            return e;
          }
          v.reads.push_back(r->data);
        }
        ++v.pc;
        break;
      }
      case GuestOp::Kind::Accept:
      case GuestOp::Kind::RtmrExtend:
      case GuestOp::Kind::Report:
      case GuestOp::Kind::VmCall: {
        const GuestLeaf leaf = op.kind == GuestOp::Kind::Accept       ? GuestLeaf::MemPageAccept
                               : op.kind == GuestOp::Kind::RtmrExtend ? GuestLeaf::MrRtmrExtend
                               : op.kind == GuestOp::Kind::Report     ? GuestLeaf::MrReport
                                                                      : GuestLeaf::VpVmcall;
        TdcallResult r = tdcall_impl(lp, td, vcpu, static_cast<std::uint32_t>(leaf), op);
        ++v.pc;
        if (td.lifecycle == Lifecycle::Fatal) {
          TdExit e;
          e.kind = TdExit::Kind::Fatal;
          e.status = Status::TdFatal;
          e.gpa = op.gpa;
          return e;
        }
        if (r.status != Status::Success) return fault(r.status, op.gpa);
        if (r.report) {
          TdExit e;
          e.kind = TdExit::Kind::Report;
          e.report = std::move(r.report);
          return e;
        }
        if (r.request) {
          TdExit e;
          e.kind = TdExit::Kind::VmCall;
          e.request = std::move(*r.request);
          return e;
        }
        break;
      }
      case GuestOp::Kind::Cpuid:
      case GuestOp::Kind::Hlt:
      case GuestOp::Kind::PortIo: {
        const ExitClass cls = op.kind == GuestOp::Kind::Cpuid ? ExitClass::Cpuid
                              : op.kind == GuestOp::Kind::Hlt ? ExitClass::Hlt
                                                              : ExitClass::PortIo;
        auto req = inject_ve(td, vcpu, cls, op.params);
        ++v.pc;
        if (!req) return fault(req.status());
        TdExit e;
        e.kind = TdExit::Kind::VmCall;
        e.request = std::move(*req);
        return e;
      }
    }
  }
  return TdExit{};
}

// ---------------------------------------------------------------- TDCALL

TdcallResult Platform::tdcall(unsigned lp, std::uint64_t tdr, unsigned vcpu, std::uint32_t leaf, const GuestOp& args) {
  TdcallResult res;
  if (phase_ != Phase::Ready) {
    res.status = Status::VmFailInvalid;
  } else if (lp >= cfg_.lp_count) {
    res.status = Status::InvalidLp;
  } else if (auto td = find_td(lp, tdr); !td) {
    res.status = phase_ == Phase::Disabled ? Status::VmFailInvalid : td.status();
  } else if (vcpu >= (*td)->vcpus.size()) {
    res.status = Status::VcpuNotFound;
  } else if ((*td)->lifecycle == Lifecycle::Fatal) {
    res.status = Status::TdFatal;
  } else if ((*td)->lifecycle != Lifecycle::Runnable) {
    res.status = Status::NotFinalized;
  } else {
    return tdcall_impl(lp, **td, vcpu, leaf, args);
  }
  trace_call("tdcall", lp, leaf, true, res.status);
  return res;
}

TdcallResult Platform::tdcall_impl(unsigned lp, TdState& td, unsigned vcpu, std::uint32_t leaf, const GuestOp& op) {
  TdcallResult r;
  switch (static_cast<GuestLeaf>(leaf)) {
    case GuestLeaf::MemPageAccept: r = guest_accept(lp, td, op); break;
    case GuestLeaf::MrRtmrExtend: r = guest_rtmr_extend(td, op); break;
    case GuestLeaf::MrReport: r = guest_report(td, op); break;
    case GuestLeaf::VpVmcall: {
      (void)vcpu;
      auto req = minimize_exit(op.cls, op.params);
      if (req) r.request = std::move(*req);
      else r.status = req.status();
      break;
    }
    default: r.status = Status::UnknownLeaf;
  }
  trace_call("tdcall", lp, leaf, true, r.status);
  return r;
}

TdcallResult Platform::guest_accept(unsigned lp, TdState& td, const GuestOp& op) {
  if (gpa_is_shared(op.gpa)) return {Status::SharedGpa};
  if (op.gpa % kPage4K != 0) return {Status::Misaligned};
  auto tr = MemoryManager::sept_walk(td.sept, op.gpa);
  if (!tr) return {tr.status()};
  if (!tr->leaf.pending) return {Status::NotPending};
  if (Status s = module_zero_page(lp, td.hkid, tr->leaf.hpa); s != Status::Success) return {s};
  (void)td.sept.set_pending(op.gpa, false);
  return {};
}

TdcallResult Platform::guest_rtmr_extend(TdState& td, const GuestOp& op) {
  if (op.index >= td.rtmr.size()) return {Status::BadIndex};
  if (op.gpa % kLineSize != 0) return {Status::Misaligned};
  if (gpa_is_shared(op.gpa)) return {Status::SharedGpa};
  auto pa = guest_translate(td, op.gpa);
  if (!pa) return {pa.status()};
  // The extension buffer is TD memory read on the TD's behalf: poison there
  // is the TD's problem, not the module's.
  auto line = engine_.read_line(Actor::Seam, engine_.addr(pa->hkid, pa->hpa));
  if (!line) return {line.status()};
  if (line->poisoned()) {
    td.lifecycle = Lifecycle::Fatal;
    return {Status::TdFatal};
  }
  Bytes in(td.rtmr[op.index].begin(), td.rtmr[op.index].end());
  in.insert(in.end(), line->data.begin(), line->data.begin() + 48);
  td.rtmr[op.index] = crypto::sha384(in);
  return {};
}

TdcallResult Platform::guest_report(const TdState& td, const GuestOp& op) const {
  if (op.data.size() != 64) return {Status::BadLength};
  TdReport rep;
  rep.mac.cpu_svn = cfg_.cpu_svn;
  std::copy(op.data.begin(), op.data.end(), rep.mac.reportdata.begin());
  rep.tcb.module_svn = static_cast<std::uint16_t>(identity_->svn);
  rep.tcb.module_measurement = identity_->measurement;
  rep.td.attributes = td.attributes;
  rep.td.mrtd = td.mrtd;
  rep.td.rtmr = td.rtmr;
  // SEAMOPS[SEAMREPORT]: the CPU fills in the hashes and the HMAC.
  seal_report(rep, cpu_hmac_key_);
  TdcallResult r;
  r.report = std::move(rep);
  return r;
}

bool Platform::everifyreport2(const TdReport& report) const { return check_report(report, cpu_hmac_key_); }

}  // namespace tdxsim
