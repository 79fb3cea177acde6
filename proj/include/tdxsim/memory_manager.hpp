#pragma once

// Physical memory bookkeeping owned by the TDX module: CMR/TDMR
// configuration, the PAMT, per-LP keyholes, and the EPT ownership checks.

#include "tdxsim/ept.hpp"
#include "tdxsim/keyhole.hpp"
#include "tdxsim/memory_engine.hpp"
#include "tdxsim/pamt.hpp"

namespace tdxsim {

class MemoryManager {
 public:
  explicit MemoryManager(std::vector<Cmr> cmrs = {}) : cmrs_(std::move(cmrs)) {}

  const std::vector<Cmr>& cmrs() const { return cmrs_; }

  // Validates and freezes the TDMR set.
  Status configure_tdmrs(std::span<const Tdmr> tdmrs);
  Pamt& pamt() { return pamt_; }
  const Pamt& pamt() const { return pamt_; }

  void init_keyholes(unsigned lp_count, std::uint64_t keyhole_region_base);
  bool has_lp(unsigned lp) const { return lp < keyholes_.size(); }
  KeyholeSegment& keyholes(unsigned lp) { return keyholes_.at(lp); }
  const KeyholeSegment& keyholes(unsigned lp) const { return keyholes_.at(lp); }
  Result<std::uint64_t> map_keyhole(unsigned lp, std::uint64_t pa_page);
  Status unmap_keyhole(unsigned lp, std::uint64_t linear_addr);

  // Installs a private translation after checking the HPA's PAMT entry is
  // a Regular page owned by tdr at the same size.
  Status sept_map(EptTree& sept, std::uint64_t tdr, std::uint64_t gpa, std::uint64_t hpa, PageSize size,
                  bool pending) const;
  static Result<Translation> sept_walk(const EptTree& sept, std::uint64_t gpa);
  static Status shared_ept_map(EptTree& shared_ept, std::uint64_t gpa, std::uint64_t hpa);

  // Frees the PAMT entry covering hpa and wipes every 4 KB page under it.
  Status page_reclaim(MemoryEngine& engine, std::uint64_t tdr, std::uint64_t hpa);

  void serialize_state(Bytes& out) const;

 private:
  std::vector<Cmr> cmrs_;
  Pamt pamt_;
  std::vector<KeyholeSegment> keyholes_;
};

}  // namespace tdxsim
