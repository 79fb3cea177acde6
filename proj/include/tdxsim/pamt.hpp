#pragma once

// Physical Address Metadata Table. One block per 1 GB of TDMR space, three
// levels per block: a single 1 GB entry, 512 2 MB entries and 512 x 512
// 4 KB entries. Each page is owned at exactly one level.

#include <memory>

#include "tdxsim/tdmr.hpp"

namespace tdxsim {

enum class PageType : std::uint8_t { Free, Reserved, Tdr, Tdcx, Tdvpr, Tdvpx, Regular };
std::string_view to_string(PageType t);

inline constexpr std::uint64_t kNoOwner = ~std::uint64_t{0};
inline constexpr std::uint64_t kPamtEntriesPerBlock = 1 + 512 + 512 * 512;
inline constexpr std::uint64_t kPamtEntryBytes = 16;

struct PageAttributes {
  std::uint64_t owner = kNoOwner;
  PageType type = PageType::Free;
  PageSize size = PageSize::k4K;
  std::uint64_t page_base = 0;

  bool free() const { return owner == kNoOwner; }
  bool operator==(const PageAttributes&) const = default;
};

class Pamt {
 public:
  // Frozen after the first call: the TDMR set is not reconfigurable.
  Status configure(std::span<const Tdmr> tdmrs);
  bool configured() const { return !tdmrs_.empty(); }
  const std::vector<Tdmr>& tdmrs() const { return tdmrs_; }

  std::uint64_t total_entries(std::size_t tdmr_index) const;
  std::uint64_t initialized_entries(std::size_t tdmr_index) const;
  bool tdmr_initialized(std::size_t tdmr_index) const;
  bool fully_initialized() const;

  // Initializes up to max_entries further entries of one TDMR in table order
  // (1 GB entry, then the 2 MB level, then the 4 KB level, block by block).
  // Returns true once the whole TDMR is initialized.
  Result<bool> init_chunk(std::size_t tdmr_index, std::uint64_t max_entries);

  Result<PageAttributes> walk(std::uint64_t pa) const;
  Status assign(std::uint64_t pa, PageSize size, std::uint64_t owner, PageType type);
  Status release(std::uint64_t pa, PageSize size, std::uint64_t owner);

  void serialize_state(Bytes& out) const;

 private:
  struct Entry {
    std::uint64_t owner = kNoOwner;
    PageType type = PageType::Free;
    PageSize size = PageSize::k4K;

    bool owned() const { return owner != kNoOwner; }
  };
  struct Block {
    Entry gb;
    std::array<Entry, 512> mb{};
    std::vector<Entry> kb = std::vector<Entry>(512 * 512);
    // Non-free 4 KB entries per 2 MB range, and how many of those are reserved.
    std::array<std::uint16_t, 512> kb_busy{};
    std::array<std::uint16_t, 512> kb_reserved{};
    std::uint32_t mb_owned = 0;
  };
  struct Region {
    Tdmr tdmr;
    std::vector<std::unique_ptr<Block>> blocks;
    std::uint64_t initialized = 0;
  };
  struct Locator {
    std::size_t region;
    std::size_t block;
    std::size_t mb;
    std::size_t kb;
  };

  Result<Locator> locate(std::uint64_t pa) const;
  static bool entry_initialized(const Region& r, std::size_t block, std::uint64_t offset_in_block) {
    return r.initialized > block * kPamtEntriesPerBlock + offset_in_block;
  }

  std::vector<Tdmr> tdmrs_;
  std::vector<Region> regions_;
};

}  // namespace tdxsim
