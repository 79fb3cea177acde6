#pragma once

// The simulated TDX platform: MKTME engine, module memory bookkeeping and the
// TDX module state machine behind SEAMCALL/TDCALL dispatch.

#include <functional>
#include <map>
#include <set>

#include "tdxsim/memory_manager.hpp"
#include "tdxsim/seam_loader.hpp"
#include "tdxsim/td.hpp"
#include "tdxsim/trace.hpp"

namespace tdxsim {

struct HarnessConfig {
  unsigned lp_count = 2;
  unsigned package_count = 1;
  KeyConfig keys{};
  std::uint64_t rng_seed = 1;
  std::vector<Cmr> cmrs{{0, 2 * kPage1G, true}};
  std::uint64_t seamrr_base = 0x3c000000;
  std::uint64_t seamrr_size = 64ull << 20;
  CpuSvn cpu_svn{2, 1};
  std::uint64_t td_attributes = 0;
  // Bytes of PAMT entries initialized by one TDH.SYS.TDMR.INIT.
  std::uint64_t tdmr_init_chunk = 1ull << 20;
};

enum class Phase : std::uint8_t { Uninstalled, Installing, Ready, Disabled };
std::string_view to_string(Phase p);

// Host-side SEAMCALL leaves. Numbers are a fixed table private to the
// simulator.
enum class Leaf : std::uint32_t {
  SysInit = 0x01,
  SysLpInit = 0x02,
  SysConfig = 0x03,
  SysKeyConfig = 0x04,
  SysTdmrInit = 0x05,
  MngCreate = 0x10,
  VpCreate = 0x11,
  MemPageAdd = 0x12,
  MrExtend = 0x13,
  MrFinalize = 0x14,
  MemPageAug = 0x15,
  VpEnter = 0x16,
  MngTeardown = 0x17,
};
std::string_view leaf_name(std::uint32_t id);
std::optional<Leaf> leaf_from_name(std::string_view name);
const std::vector<Leaf>& all_leaves();

// Guest-side TDCALL leaves.
enum class GuestLeaf : std::uint32_t {
  MemPageAccept = 0x01,
  MrRtmrExtend = 0x02,
  MrReport = 0x03,
  VpVmcall = 0x04,
};
std::string_view guest_leaf_name(std::uint32_t id);
const std::vector<GuestLeaf>& all_guest_leaves();

// Register-style argument block. Leaves read the fields they document and
// ignore the rest.
struct LeafArgs {
  std::uint64_t rcx = 0;
  std::uint64_t rdx = 0;
  std::uint64_t r8 = 0;
  std::uint64_t r9 = 0;
  std::vector<std::uint64_t> list;
};

struct LeafResult {
  LeafResult() = default;
  LeafResult(Status s, std::uint64_t out_rcx = 0) : status(s), rcx(out_rcx) {}

  Status status = Status::Success;
  std::uint64_t rcx = 0;
  std::optional<TdExit> exit;
};

struct TdcallResult {
  TdcallResult() = default;
  TdcallResult(Status s) : status(s) {}

  Status status = Status::Success;
  std::optional<TdReport> report;
  std::optional<HypervisorRequest> request;
};

enum class InstallProgress : std::uint8_t { Joined, Installed };

struct ModuleIdentity {
  Digest48 measurement{};
  std::uint32_t svn = 0;
};

class Platform {
 public:
  explicit Platform(HarnessConfig cfg, Trace* trace = nullptr);
  // Result of programming the memory engine from cfg.keys.
  Status boot_status() const { return boot_status_; }

  const HarnessConfig& config() const { return cfg_; }
  MemoryEngine& engine() { return engine_; }
  const MemoryEngine& engine() const { return engine_; }
  const MemoryManager& memory() const { return mm_; }
  Trace* trace() const { return trace_; }
  void set_trace(Trace* t) { trace_ = t; }

  // --- install (P-SEAM loader) ---
  Result<InstallProgress> seamldr_install(unsigned lp, ByteSpan image, const SeamSigstruct& sig);
  Phase phase() const { return phase_; }
  const std::optional<ModuleIdentity>& module_identity() const { return identity_; }
  const std::optional<SeamRangeLayout>& seam_layout() const { return layout_; }
  const std::optional<LinearLayout>& linear_layout() const { return linear_; }
  // Contents of the sysinfo page (empty before install).
  const Bytes& sysinfo_page() const { return sysinfo_; }
  const TransferContext* transfer_context(unsigned lp) const;
  // Physical address of the last SEAM transfer VMCS page loaded on entry.
  std::optional<std::uint64_t> last_vmcs_load() const { return last_vmcs_; }

  // --- dispatch ---
  LeafResult seamcall(unsigned lp, std::uint32_t leaf, const LeafArgs& args);
  LeafResult seamcall(unsigned lp, Leaf leaf, const LeafArgs& args) {
    return seamcall(lp, static_cast<std::uint32_t>(leaf), args);
  }
  TdcallResult tdcall(unsigned lp, std::uint64_t tdr, unsigned vcpu, std::uint32_t leaf, const GuestOp& args);

  // Typed wrappers over seamcall.
  Status sys_init(unsigned lp);
  Status sys_lp_init(unsigned lp);
  Status sys_config(unsigned lp, std::uint32_t global_hkid, std::span<const Tdmr> tdmrs);
  Status sys_key_config(unsigned lp);
  // Returns true once the TDMR's PAMT is fully initialized.
  Result<bool> sys_tdmr_init(unsigned lp, std::size_t tdmr_index);
  Status td_create(unsigned lp, std::uint32_t hkid, std::uint64_t tdr, std::span<const std::uint64_t> tdcx);
  Result<unsigned> vp_create(unsigned lp, std::uint64_t tdr, std::uint64_t tdvpr,
                             std::span<const std::uint64_t> tdvpx);
  Status page_add(unsigned lp, std::uint64_t tdr, std::uint64_t gpa, std::uint64_t hpa, std::uint64_t source_pa);
  Status mr_extend(unsigned lp, std::uint64_t tdr, std::uint64_t gpa);
  Status mr_finalize(unsigned lp, std::uint64_t tdr);
  Status page_aug(unsigned lp, std::uint64_t tdr, std::uint64_t gpa, std::uint64_t hpa);
  Result<TdExit> td_enter(unsigned lp, std::uint64_t tdr, unsigned vcpu);
  Status td_teardown(unsigned lp, std::uint64_t tdr);

  // --- hypervisor side ---
  // The guest program a vcpu runs; stands in for TD code.
  Status load_guest(std::uint64_t tdr, unsigned vcpu, std::vector<GuestOp> script);
  Status shared_ept_map(std::uint64_t tdr, std::uint64_t gpa, std::uint64_t hpa);
  Status host_write(std::uint64_t pa, ByteSpan data);  // shared HKID 0, line granular
  Result<Bytes> host_read(std::uint64_t pa, std::size_t len);

  // --- module internals exposed for the VE path and tests ---
  Result<HypervisorRequest> ve_inject_and_resume(std::uint64_t tdr, unsigned vcpu, ExitClass cls,
                                                 const ExitParams& raw);
  // Simulated EVERIFYREPORT2: only meaningful on the platform whose CPU key
  // produced the report.
  bool everifyreport2(const TdReport& report) const;
  void module_poison_trip();

  // --- inspection (read-only) ---
  const TdState* td(std::uint64_t tdr) const;
  std::vector<std::uint64_t> td_list() const;
  std::optional<std::uint32_t> global_hkid() const { return global_hkid_; }
  bool sys_initialized() const { return sys_init_done_; }
  bool lp_initialized(unsigned lp) const { return lp < lp_init_.size() && lp_init_[lp]; }
  bool configured() const { return config_done_; }
  const std::set<unsigned>& key_configured_packages() const { return key_packages_; }
  unsigned package_of(unsigned lp) const { return lp * cfg_.package_count / cfg_.lp_count; }
  void serialize_state(Bytes& out) const;
  Digest48 state_digest() const;

 private:
  struct Session {
    Bytes image;
    SeamSigstruct sig;
    std::vector<bool> joined;
    Phase prior = Phase::Uninstalled;
  };
  using Handler = LeafResult (Platform::*)(unsigned, const LeafArgs&);

  Status install_final(const Session& s);
  Handler handler_for(std::uint32_t leaf) const;

  LeafResult leaf_sys_init(unsigned lp, const LeafArgs& a);
  LeafResult leaf_sys_lp_init(unsigned lp, const LeafArgs& a);
  LeafResult leaf_sys_config(unsigned lp, const LeafArgs& a);
  LeafResult leaf_sys_key_config(unsigned lp, const LeafArgs& a);
  LeafResult leaf_sys_tdmr_init(unsigned lp, const LeafArgs& a);
  LeafResult leaf_mng_create(unsigned lp, const LeafArgs& a);
  LeafResult leaf_vp_create(unsigned lp, const LeafArgs& a);
  LeafResult leaf_page_add(unsigned lp, const LeafArgs& a);
  LeafResult leaf_mr_extend(unsigned lp, const LeafArgs& a);
  LeafResult leaf_mr_finalize(unsigned lp, const LeafArgs& a);
  LeafResult leaf_page_aug(unsigned lp, const LeafArgs& a);
  LeafResult leaf_vp_enter(unsigned lp, const LeafArgs& a);
  LeafResult leaf_mng_teardown(unsigned lp, const LeafArgs& a);

  TdcallResult tdcall_impl(unsigned lp, TdState& td, unsigned vcpu, std::uint32_t leaf, const GuestOp& op);
  TdcallResult guest_accept(unsigned lp, TdState& td, const GuestOp& op);
  TdcallResult guest_rtmr_extend(TdState& td, const GuestOp& op);
  TdcallResult guest_report(const TdState& td, const GuestOp& op) const;
  Result<HypervisorRequest> inject_ve(TdState& td, unsigned vcpu, ExitClass cls, const ExitParams& raw);
  TdExit run_guest(unsigned lp, TdState& td, unsigned vcpu);
  struct GuestPa {
    std::uint64_t hpa = 0;
    std::uint32_t hkid = 0;
  };
  // Translates a guest access through the SEPT or the shared EPT.
  Result<GuestPa> guest_translate(const TdState& td, std::uint64_t gpa) const;

  // Module memory access through this LP's keyholes. A poisoned read trips
  // the module and yields VmFailInvalid.
  Result<Line> module_read(unsigned lp, std::uint32_t hkid, std::uint64_t pa);
  Status module_write(unsigned lp, std::uint32_t hkid, std::uint64_t pa, const Line& data);
  Status module_zero_page(unsigned lp, std::uint32_t hkid, std::uint64_t page);
  Status write_td_metadata(unsigned lp, const TdState& td);
  Status check_td_metadata(unsigned lp, const TdState& td, std::optional<unsigned> vcpu = std::nullopt);
  // Looks up a live TD by TDR address and re-reads its metadata lines.
  Result<TdState*> find_td(unsigned lp, std::uint64_t tdr);
  Status require_lp_ready(unsigned lp) const;
  Status assign_pages(std::span<const std::uint64_t> pages, std::uint64_t owner, PageType type,
                      std::vector<std::uint64_t>& done);
  void release_pages(std::span<const std::uint64_t> pages, std::uint64_t owner);
  void trace_call(std::string_view event, unsigned lp, std::uint32_t leaf, bool guest, Status st);

  HarnessConfig cfg_;
  Trace* trace_;
  MemoryEngine engine_;
  Status boot_status_ = Status::Success;
  MemoryManager mm_;
  crypto::Rng rng_;
  std::array<std::uint8_t, 48> cpu_hmac_key_{};

  Phase phase_ = Phase::Uninstalled;
  std::optional<Session> session_;
  std::optional<ModuleIdentity> identity_;
  std::optional<SeamRangeLayout> layout_;
  std::optional<LinearLayout> linear_;
  Bytes sysinfo_;
  std::map<std::uint64_t, TransferContext> vmcs_pages_;
  std::optional<std::uint64_t> last_vmcs_;

  bool sys_init_done_ = false;
  std::vector<bool> lp_init_;
  bool config_done_ = false;
  std::optional<std::uint32_t> global_hkid_;
  std::set<unsigned> key_packages_;

  std::map<std::uint64_t, TdState> tds_;
  std::map<std::uint64_t, EptTree> shared_epts_;
};

// Drives TDH.SYS.INIT, LP.INIT on every LP, CONFIG, KEY.CONFIG once per
// package and TDMR.INIT until every PAMT is initialized. Returns the number
// of TDMR.INIT calls made.
Result<unsigned> platform_init_sequence(Platform& p, std::uint32_t global_hkid, std::span<const Tdmr> tdmrs);
// Runs the install on every LP in order.
Status install_module(Platform& p, ByteSpan image, const SeamSigstruct& sig);

}  // namespace tdxsim
