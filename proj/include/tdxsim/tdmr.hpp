#pragma once

#include "tdxsim/common.hpp"

namespace tdxsim {

// Convertible memory range reported by firmware.
struct Cmr {
  std::uint64_t base = 0;
  std::uint64_t size = 0;
  bool convertible = true;
};

struct ReservedArea {
  std::uint64_t base = 0;
  std::uint64_t size = 0;
};

// TD memory range: 1 GB aligned, a whole number of GB long, with optional
// reserved 4 KB page runs carved out.
struct Tdmr {
  std::uint64_t base = 0;
  std::uint64_t size = 0;
  std::vector<ReservedArea> reserved;

  std::uint64_t end() const { return base + size; }
  bool contains(std::uint64_t pa) const { return pa >= base && pa < end(); }
  bool in_reserved(std::uint64_t pa) const;
};

Status validate_cmrs(std::span<const Cmr> cmrs);
Status validate_tdmr_config(std::span<const Cmr> cmrs, std::span<const Tdmr> tdmrs);

}  // namespace tdxsim
