#pragma once

// Per-LP keyhole segment: 128 4 KB linear slots the module leases to map
// caller-supplied physical pages, reference counted, with refcount-0 slots
// kept on an LRU free list. A refcount-0 slot keeps its last mapping until
// it is recycled, so re-mapping that page reuses it.

#include <list>
#include <unordered_map>

#include "tdxsim/common.hpp"

namespace tdxsim {

inline constexpr unsigned kKeyholesPerLp = 128;
inline constexpr std::uint64_t kPtePresent = 1;

struct KeyholeStats {
  unsigned free = 0;
  unsigned in_use = 0;
  std::uint64_t total_refs = 0;
};

class KeyholeSegment {
 public:
  KeyholeSegment() = default;
  // linear_base: first keyhole of this LP's segment.
  explicit KeyholeSegment(std::uint64_t linear_base);
  KeyholeSegment(const KeyholeSegment&) = delete;
  KeyholeSegment& operator=(const KeyholeSegment&) = delete;
  KeyholeSegment(KeyholeSegment&&) noexcept = default;
  KeyholeSegment& operator=(KeyholeSegment&&) noexcept = default;

  Result<std::uint64_t> map(std::uint64_t pa_page);
  Status unmap(std::uint64_t linear_addr);
  // Linear address inside a mapped keyhole -> physical address.
  Result<std::uint64_t> translate(std::uint64_t linear_addr) const;

  std::uint32_t ref_count(std::uint64_t linear_addr) const;
  KeyholeStats stats() const;
  // Slot indices on the free list, LRU head first.
  std::vector<unsigned> free_order() const { return {lru_.begin(), lru_.end()}; }
  // Leaf PTEs as edited through the keyhole-edit region (pa | present, or 0).
  std::span<const std::uint64_t> ptes() const { return ptes_; }
  std::uint64_t linear_base() const { return base_; }
  std::uint64_t slot_address(unsigned slot) const { return base_ + slot * kPage4K; }

  void serialize_state(Bytes& out) const;

 private:
  std::optional<unsigned> slot_of(std::uint64_t linear_addr) const;

  std::uint64_t base_ = 0;
  std::array<std::uint64_t, kKeyholesPerLp> ptes_{};
  std::array<std::uint32_t, kKeyholesPerLp> refs_{};
  std::array<std::list<unsigned>::iterator, kKeyholesPerLp> lru_pos_{};
  std::list<unsigned> lru_;
  std::unordered_map<std::uint64_t, unsigned> by_page_;
};

}  // namespace tdxsim
