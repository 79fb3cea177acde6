#include "tdxsim/pamt.hpp"

#include <algorithm>

namespace tdxsim {

std::string_view to_string(PageType t) {
  switch (t) {
    case PageType::Free: return "Free";
    case PageType::Reserved: return "Reserved";
    case PageType::Tdr: return "TDR";
    case PageType::Tdcx: return "TDCX";
    case PageType::Tdvpr: return "TDVPR";
    case PageType::Tdvpx: return "TDVPX";
    case PageType::Regular: return "Regular";
  }
  return "?";
}

Status Pamt::configure(std::span<const Tdmr> tdmrs) {
  if (configured()) return Status::OutOfOrderCall;
  if (tdmrs.empty()) return Status::TdmrInvalid;
  tdmrs_.assign(tdmrs.begin(), tdmrs.end());
  regions_.clear();
  for (const auto& t : tdmrs_) {
    Region r;
    r.tdmr = t;
    for (std::uint64_t off = 0; off < t.size; off += kPage1G) r.blocks.push_back(std::make_unique<Block>());
    regions_.push_back(std::move(r));
  }
  return Status::Success;
}

std::uint64_t Pamt::total_entries(std::size_t i) const {
  return i < regions_.size() ? regions_[i].blocks.size() * kPamtEntriesPerBlock : 0;
}

std::uint64_t Pamt::initialized_entries(std::size_t i) const {
  return i < regions_.size() ? regions_[i].initialized : 0;
}

bool Pamt::tdmr_initialized(std::size_t i) const {
  return i < regions_.size() && regions_[i].initialized == total_entries(i);
}

bool Pamt::fully_initialized() const {
  if (regions_.empty()) return false;
  for (std::size_t i = 0; i < regions_.size(); ++i)
    if (!tdmr_initialized(i)) return false;
  return true;
}

Result<bool> Pamt::init_chunk(std::size_t tdmr_index, std::uint64_t max_entries) {
  if (tdmr_index >= regions_.size()) return Status::TdmrInvalid;
  if (max_entries == 0) return Status::BadParams;
  Region& r = regions_[tdmr_index];
  const std::uint64_t total = total_entries(tdmr_index);
  const std::uint64_t stop = std::min(total, r.initialized + max_entries);
  for (std::uint64_t idx = r.initialized; idx < stop; ++idx) {
    const std::size_t block = idx / kPamtEntriesPerBlock;
    const std::uint64_t off = idx % kPamtEntriesPerBlock;
    if (off < 513) continue;
    const std::uint64_t kb_index = off - 513;
    const std::uint64_t pa = r.tdmr.base + block * kPage1G + kb_index * kPage4K;
    if (r.tdmr.in_reserved(pa)) {
      Block& b = *r.blocks[block];
      b.kb[kb_index].type = PageType::Reserved;
      ++b.kb_busy[kb_index / 512];
      ++b.kb_reserved[kb_index / 512];
    }
  }
  r.initialized = stop;
  return stop == total;
}

Result<Pamt::Locator> Pamt::locate(std::uint64_t pa) const {
  for (std::size_t i = 0; i < regions_.size(); ++i) {
    const Region& r = regions_[i];
    if (!r.tdmr.contains(pa)) continue;
    const std::uint64_t off = pa - r.tdmr.base;
    return Locator{i, static_cast<std::size_t>(off / kPage1G), static_cast<std::size_t>((off % kPage1G) / kPage2M),
                   static_cast<std::size_t>((off % kPage2M) / kPage4K)};
  }
  return Status::OutsideTdmr;
}

Result<PageAttributes> Pamt::walk(std::uint64_t pa) const {
  auto loc = locate(pa);
  if (!loc) return loc.status();
  const Region& r = regions_[loc->region];
  const std::size_t kb_index = loc->mb * 512 + loc->kb;
  if (!entry_initialized(r, loc->block, 0) || !entry_initialized(r, loc->block, 1 + loc->mb) ||
      !entry_initialized(r, loc->block, 513 + kb_index))
    return Status::Uninitialized;

  const Block& b = *r.blocks[loc->block];
  const std::uint64_t gb_base = r.tdmr.base + loc->block * kPage1G;
  if (b.gb.owned()) return PageAttributes{b.gb.owner, b.gb.type, PageSize::k1G, gb_base};
  const Entry& mb = b.mb[loc->mb];
  if (mb.owned()) return PageAttributes{mb.owner, mb.type, PageSize::k2M, gb_base + loc->mb * kPage2M};
  const Entry& kb = b.kb[kb_index];
  if (kb.type == PageType::Reserved) return Status::ReservedArea;
  return PageAttributes{kb.owner, kb.type, PageSize::k4K, gb_base + kb_index * kPage4K};
}

Status Pamt::assign(std::uint64_t pa, PageSize size, std::uint64_t owner, PageType type) {
  if (owner == kNoOwner || type == PageType::Free || type == PageType::Reserved) return Status::BadParams;
  auto loc = locate(pa);
  if (!loc) return loc.status();
  if (!tdmr_initialized(loc->region)) return Status::Uninitialized;
  if (pa % page_bytes(size) != 0) return Status::Misaligned;

  Block& b = *regions_[loc->region].blocks[loc->block];
  if (b.gb.owned()) return Status::AlreadyOwned;
  switch (size) {
    case PageSize::k4K: {
      const std::size_t kb_index = loc->mb * 512 + loc->kb;
      if (b.mb[loc->mb].owned()) return Status::AlreadyOwned;
      Entry& e = b.kb[kb_index];
      if (e.type == PageType::Reserved) return Status::ReservedArea;
      if (e.owned()) return Status::AlreadyOwned;
      e = {owner, type, PageSize::k4K};
      ++b.kb_busy[loc->mb];
      return Status::Success;
    }
    case PageSize::k2M: {
      Entry& e = b.mb[loc->mb];
      if (e.owned()) return Status::AlreadyOwned;
      if (b.kb_reserved[loc->mb] > 0) return Status::ReservedArea;
      if (b.kb_busy[loc->mb] > 0) return Status::AlreadyOwned;
      e = {owner, type, PageSize::k2M};
      ++b.mb_owned;
      return Status::Success;
    }
    case PageSize::k1G: {
      if (std::any_of(b.kb_reserved.begin(), b.kb_reserved.end(), [](auto n) { return n > 0; }))
        return Status::ReservedArea;
      if (b.mb_owned > 0 || std::any_of(b.kb_busy.begin(), b.kb_busy.end(), [](auto n) { return n > 0; }))
        return Status::AlreadyOwned;
      b.gb = {owner, type, PageSize::k1G};
      return Status::Success;
    }
  }
  return Status::BadParams;
}

Status Pamt::release(std::uint64_t pa, PageSize size, std::uint64_t owner) {
  auto loc = locate(pa);
  if (!loc) return loc.status();
  if (!tdmr_initialized(loc->region)) return Status::Uninitialized;
  if (pa % page_bytes(size) != 0) return Status::Misaligned;

  Block& b = *regions_[loc->region].blocks[loc->block];
  const std::size_t kb_index = loc->mb * 512 + loc->kb;
  Entry* live = nullptr;
  PageSize live_size = PageSize::k4K;
  if (b.gb.owned()) {
    live = &b.gb;
    live_size = PageSize::k1G;
  } else if (b.mb[loc->mb].owned()) {
    live = &b.mb[loc->mb];
    live_size = PageSize::k2M;
  } else if (b.kb[kb_index].owned()) {
    live = &b.kb[kb_index];
  } else if (b.kb[kb_index].type == PageType::Reserved) {
    return Status::ReservedArea;
  } else {
    return Status::WrongOwner;
  }
  if (live->owner != owner) return Status::WrongOwner;
  if (live_size != size) return Status::SizeMismatch;
  *live = Entry{};
  if (size == PageSize::k4K) --b.kb_busy[loc->mb];
  if (size == PageSize::k2M) --b.mb_owned;
  return Status::Success;
}

void Pamt::serialize_state(Bytes& out) const {
  put_le64(out, regions_.size());
  for (const auto& r : regions_) {
    put_le64(out, r.tdmr.base);
    put_le64(out, r.tdmr.size);
    put_le64(out, r.initialized);
    for (const auto& b : r.blocks) {
      auto emit = [&out](std::size_t idx, const Entry& e) {
        if (e.type == PageType::Free) return;
        put_le64(out, idx);
        put_le64(out, e.owner);
        put_le(out, static_cast<std::uint8_t>(e.type), 1);
        put_le(out, static_cast<std::uint8_t>(e.size), 1);
      };
      emit(0, b->gb);
      for (std::size_t i = 0; i < b->mb.size(); ++i) emit(1 + i, b->mb[i]);
      for (std::size_t i = 0; i < b->kb.size(); ++i) emit(513 + i, b->kb[i]);
    }
  }
}

}  // namespace tdxsim
