#include "tdxsim/memory_manager.hpp"

namespace tdxsim {

Status MemoryManager::configure_tdmrs(std::span<const Tdmr> tdmrs) {
  if (pamt_.configured()) return Status::OutOfOrderCall;
  if (tdmrs.empty()) return Status::TdmrInvalid;
  TDXSIM_TRY(validate_tdmr_config(cmrs_, tdmrs));
  return pamt_.configure(tdmrs);
}

void MemoryManager::init_keyholes(unsigned lp_count, std::uint64_t keyhole_region_base) {
  keyholes_.clear();
  for (unsigned lp = 0; lp < lp_count; ++lp)
    keyholes_.emplace_back(keyhole_region_base + std::uint64_t{lp} * kKeyholesPerLp * kPage4K);
}

Result<std::uint64_t> MemoryManager::map_keyhole(unsigned lp, std::uint64_t pa_page) {
  if (!has_lp(lp)) return Status::InvalidLp;
  return keyholes_[lp].map(pa_page);
}

Status MemoryManager::unmap_keyhole(unsigned lp, std::uint64_t linear_addr) {
  if (!has_lp(lp)) return Status::InvalidLp;
  return keyholes_[lp].unmap(linear_addr);
}

Status MemoryManager::sept_map(EptTree& sept, std::uint64_t tdr, std::uint64_t gpa, std::uint64_t hpa,
                               PageSize size, bool pending) const {
  if (gpa_is_shared(gpa)) return Status::SharedBitMismatch;
  auto attrs = pamt_.walk(hpa);
  if (!attrs) return attrs.status();
  if (attrs->owner != tdr) return Status::PamtOwnerMismatch;
  if (attrs->size != size) return Status::PamtSizeMismatch;
  if (attrs->type != PageType::Regular) return Status::BadParams;
  return sept.map(gpa, hpa, size, pending);
}

Result<Translation> MemoryManager::sept_walk(const EptTree& sept, std::uint64_t gpa) {
  if (gpa_is_shared(gpa)) return Status::SharedBitMismatch;
  return sept.walk(gpa);
}

Status MemoryManager::shared_ept_map(EptTree& shared_ept, std::uint64_t gpa, std::uint64_t hpa) {
  if (!gpa_is_shared(gpa)) return Status::SharedBitMismatch;
  return shared_ept.map(gpa, hpa, PageSize::k4K);
}

Status MemoryManager::page_reclaim(MemoryEngine& engine, std::uint64_t tdr, std::uint64_t hpa) {
  auto attrs = pamt_.walk(hpa);
  if (!attrs) return attrs.status();
  if (attrs->free() || attrs->owner != tdr) return Status::WrongOwner;
  TDXSIM_TRY(pamt_.release(attrs->page_base, attrs->size, tdr));
  for (std::uint64_t pa = attrs->page_base; pa < attrs->page_base + page_bytes(attrs->size); pa += kPage4K)
    engine.wipe_page(pa);
  return Status::Success;
}

void MemoryManager::serialize_state(Bytes& out) const {
  put_le64(out, cmrs_.size());
  for (const auto& c : cmrs_) {
    put_le64(out, c.base);
    put_le64(out, c.size);
  }
  pamt_.serialize_state(out);
  for (const auto& k : keyholes_) k.serialize_state(out);
}

}  // namespace tdxsim
