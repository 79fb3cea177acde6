#include "tdxsim/tdmr.hpp"

#include <algorithm>

namespace tdxsim {
namespace {

struct Interval {
  std::uint64_t lo;
  std::uint64_t hi;  // exclusive
};

bool overlaps(Interval a, Interval b) { return a.lo < b.hi && b.lo < a.hi; }

// Is [lo, hi) fully covered by the sorted, disjoint intervals?
bool covered(Interval want, const std::vector<Interval>& have) {
  std::uint64_t cursor = want.lo;
  for (const auto& h : have) {
    if (h.hi <= cursor) continue;
    if (h.lo > cursor) return false;
    cursor = h.hi;
    if (cursor >= want.hi) return true;
  }
  return cursor >= want.hi;
}

}  // namespace

bool Tdmr::in_reserved(std::uint64_t pa) const {
  return std::any_of(reserved.begin(), reserved.end(),
                     [pa](const ReservedArea& r) { return pa >= r.base && pa < r.base + r.size; });
}

Status validate_cmrs(std::span<const Cmr> cmrs) {
  for (std::size_t i = 0; i < cmrs.size(); ++i) {
    if (cmrs[i].size == 0 || cmrs[i].base % kPage4K != 0 || cmrs[i].size % kPage4K != 0)
      return Status::Misaligned;
    for (std::size_t j = i + 1; j < cmrs.size(); ++j)
      if (overlaps({cmrs[i].base, cmrs[i].base + cmrs[i].size}, {cmrs[j].base, cmrs[j].base + cmrs[j].size}))
        return Status::Overlap;
  }
  return Status::Success;
}

Status validate_tdmr_config(std::span<const Cmr> cmrs, std::span<const Tdmr> tdmrs) {
  TDXSIM_TRY(validate_cmrs(cmrs));
  for (std::size_t i = 0; i < tdmrs.size(); ++i)
    for (std::size_t j = i + 1; j < tdmrs.size(); ++j)
      if (overlaps({tdmrs[i].base, tdmrs[i].end()}, {tdmrs[j].base, tdmrs[j].end()})) return Status::Overlap;
  for (const auto& t : tdmrs)
    if (t.size == 0 || t.base % kPage1G != 0 || t.size % kPage1G != 0) return Status::Misaligned;

  std::vector<Interval> convertible;
  for (const auto& c : cmrs)
    if (c.convertible) convertible.push_back({c.base, c.base + c.size});
  std::sort(convertible.begin(), convertible.end(), [](auto a, auto b) { return a.lo < b.lo; });

  for (const auto& t : tdmrs) {
    std::vector<Interval> holes;
    for (const auto& r : t.reserved) {
      if (r.size == 0 || r.base % kPage4K != 0 || r.size % kPage4K != 0 || r.base < t.base ||
          r.base + r.size > t.end())
        return Status::ReservedAreaMisaligned;
      holes.push_back({r.base, r.base + r.size});
    }
    std::sort(holes.begin(), holes.end(), [](auto a, auto b) { return a.lo < b.lo; });
    for (std::size_t k = 1; k < holes.size(); ++k)
      if (overlaps(holes[k - 1], holes[k])) return Status::ReservedAreaMisaligned;

    // Every non-reserved byte must sit in convertible memory.
    std::uint64_t cursor = t.base;
    for (const auto& h : holes) {
      if (h.lo > cursor && !covered({cursor, h.lo}, convertible)) return Status::NotConvertible;
      cursor = std::max(cursor, h.hi);
    }
    if (cursor < t.end() && !covered({cursor, t.end()}, convertible)) return Status::NotConvertible;
  }
  return Status::Success;
}

}  // namespace tdxsim
