#include "tdxsim/keyhole.hpp"

namespace tdxsim {

KeyholeSegment::KeyholeSegment(std::uint64_t linear_base) : base_(linear_base) {
  for (unsigned i = 0; i < kKeyholesPerLp; ++i) lru_pos_[i] = lru_.insert(lru_.end(), i);
}

std::optional<unsigned> KeyholeSegment::slot_of(std::uint64_t linear_addr) const {
  if (linear_addr < base_ || linear_addr >= base_ + kKeyholesPerLp * kPage4K) return std::nullopt;
  return static_cast<unsigned>((linear_addr - base_) / kPage4K);
}

Result<std::uint64_t> KeyholeSegment::map(std::uint64_t pa_page) {
  if (pa_page % kPage4K != 0) return Status::Misaligned;
  if (auto it = by_page_.find(pa_page); it != by_page_.end()) {
    const unsigned slot = it->second;
    if (refs_[slot]++ == 0) lru_.erase(lru_pos_[slot]);
    return slot_address(slot);
  }
  if (lru_.empty()) return Status::KeyholesExhausted;
  const unsigned slot = lru_.front();
  lru_.pop_front();
  if (ptes_[slot] & kPtePresent) by_page_.erase(ptes_[slot] & ~(kPage4K - 1));
  ptes_[slot] = pa_page | kPtePresent;
  refs_[slot] = 1;
  by_page_.emplace(pa_page, slot);
  return slot_address(slot);
}

Status KeyholeSegment::unmap(std::uint64_t linear_addr) {
  auto slot = slot_of(linear_addr);
  if (!slot || refs_[*slot] == 0) return Status::NotMapped;
  if (--refs_[*slot] == 0) lru_pos_[*slot] = lru_.insert(lru_.end(), *slot);
  return Status::Success;
}

Result<std::uint64_t> KeyholeSegment::translate(std::uint64_t linear_addr) const {
  auto slot = slot_of(linear_addr);
  if (!slot || refs_[*slot] == 0 || !(ptes_[*slot] & kPtePresent)) return Status::NotMapped;
  return (ptes_[*slot] & ~(kPage4K - 1)) | (linear_addr % kPage4K);
}

std::uint32_t KeyholeSegment::ref_count(std::uint64_t linear_addr) const {
  auto slot = slot_of(linear_addr);
  return slot ? refs_[*slot] : 0;
}

KeyholeStats KeyholeSegment::stats() const {
  KeyholeStats s;
  for (auto r : refs_) {
    if (r == 0)
      ++s.free;
    else
      ++s.in_use;
    s.total_refs += r;
  }
  return s;
}

void KeyholeSegment::serialize_state(Bytes& out) const {
  put_le64(out, base_);
  for (unsigned i = 0; i < kKeyholesPerLp; ++i) {
    put_le64(out, ptes_[i]);
    put_le(out, refs_[i], 4);
  }
  for (unsigned slot : lru_) put_le(out, slot, 1);
}

}  // namespace tdxsim
