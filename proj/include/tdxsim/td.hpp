#pragma once

// Per-TD state held by the module, the scripted guest, and the exit and
// VE-forwarding records exchanged with the hypervisor.

#include <map>

#include "tdxsim/ept.hpp"
#include "tdxsim/report.hpp"

namespace tdxsim {

enum class Lifecycle : std::uint8_t { Building, Finalized, Runnable, Fatal, TornDown };
std::string_view to_string(Lifecycle l);

inline constexpr unsigned kTdcxPages = 4;
inline constexpr unsigned kTdvpsPages = 6;  // TDVPR + 5 TDVPX

// Exit classes that need hypervisor emulation and reach it through a VE.
enum class ExitClass : std::uint8_t { Cpuid, Hlt, PortIo, Msr, Ept, Other };
std::string_view to_string(ExitClass c);
std::optional<ExitClass> exit_class_from_string(std::string_view s);

// Guest-visible parameters attached to an exit. The VE handler passes these
// to TDG.VP.VMCALL; only the allowlisted subset reaches the hypervisor.
using ExitParams = std::map<std::string, std::uint64_t>;

// Fields the module forwards per exit class. Classes absent here are not
// routed through VE injection.
const std::map<ExitClass, std::vector<std::string>>& ve_param_allowlist();

struct HypervisorRequest {
  ExitClass exit_class = ExitClass::Other;
  ExitParams params;
};

// Filters a VMCALL down to the allowlist. Any unknown class or any param
// outside the allowlist is UnsupportedExitClass.
Result<HypervisorRequest> minimize_exit(ExitClass c, const ExitParams& params);

struct GuestOp {
  enum class Kind : std::uint8_t {
    Read,         // gpa
    Write,        // gpa, data (one line)
    Accept,       // gpa: TDG.MEM.PAGE.ACCEPT
    RtmrExtend,   // index, gpa: TDG.MR.RTMR.EXTEND
    Report,       // data (64 B reportdata): TDG.MR.REPORT
    Cpuid,        // params: leaf, subleaf (+ guest registers)
    Hlt,
    PortIo,       // params: port, size, direction, value
    VmCall,       // raw TDG.VP.VMCALL: cls + params
  };
  Kind kind = Kind::Hlt;
  std::uint64_t gpa = 0;
  std::uint32_t index = 0;
  Bytes data;
  ExitClass cls = ExitClass::Other;
  ExitParams params;
};
std::string_view to_string(GuestOp::Kind k);

struct TdExit {
  enum class Kind : std::uint8_t {
    Done,          // script exhausted
    VmCall,        // VE-forwarded request for the hypervisor
    Report,        // TDG.MR.REPORT completed; report handed back
    EptViolation,  // access to an unmapped GPA
    Fault,         // guest op failed with status
    Fatal,         // poison consumed; TD is now Fatal
  };
  Kind kind = Kind::Done;
  Status status = Status::Success;
  std::uint64_t gpa = 0;
  HypervisorRequest request;
  std::optional<TdReport> report;
};
std::string_view to_string(TdExit::Kind k);

struct VeInfo {
  ExitClass exit_reason = ExitClass::Other;
  ExitParams minimized_params;
  std::uint64_t count = 0;
};

struct Vcpu {
  std::uint64_t tdvpr = 0;
  std::array<std::uint64_t, kTdvpsPages - 1> tdvpx{};
  std::vector<GuestOp> script;
  std::size_t pc = 0;
  VeInfo ve;
  std::vector<Line> reads;  // data returned by Read ops, in order
};

struct TdState {
  std::uint64_t tdr = 0;
  std::uint32_t hkid = 0;
  Lifecycle lifecycle = Lifecycle::Building;
  std::array<std::uint64_t, kTdcxPages> tdcx{};
  std::uint64_t attributes = 0;
  crypto::Sha384 mrtd_state;
  Digest48 mrtd{};
  std::array<Digest48, 4> rtmr{};
  EptTree sept;
  std::vector<Vcpu> vcpus;
  std::uint64_t measured_pages = 0;
};

}  // namespace tdxsim
