#pragma once

// Pieces of the simulated P-SEAM loader: the signed module sigstruct, the
// physical layout of the SEAM range, the randomized linear layout, the
// sysinfo page and the per-LP SEAM transfer context.

#include "tdxsim/crypto.hpp"
#include "tdxsim/tdmr.hpp"

namespace tdxsim {

struct SeamSigstruct {
  Digest48 image_hash{};
  std::uint32_t svn = 0;
  std::uint32_t stack_pages_per_lp = 0;
  std::uint32_t data_pages_per_lp = 0;
  std::uint32_t global_data_pages = 0;
  crypto::EcSignature signature{};

  // Everything except the signature, in field order, integers LE.
  Bytes signed_bytes() const;
  bool operator==(const SeamSigstruct&) const = default;
};

// The simulated vendor key. The public half is what the loader trusts; the
// private half stands in for the vendor's offline build signer.
const crypto::EcPublicKey& vendor_public_key();
SeamSigstruct vendor_sign_module(ByteSpan image, std::uint32_t svn, std::uint32_t stack_pages_per_lp = 4,
                                 std::uint32_t data_pages_per_lp = 2, std::uint32_t global_data_pages = 16);
// A small deterministic stand-in for a module binary.
Bytes sample_module_image(std::uint32_t variant = 0);

struct Extent {
  std::uint64_t base = 0;
  std::uint64_t size = 0;

  std::uint64_t end() const { return base + size; }
  bool overlaps(const Extent& o) const { return base < o.end() && o.base < end(); }
  bool contains(const Extent& o) const { return o.base >= base && o.end() <= end(); }
};

inline constexpr std::uint64_t kPSeamldrRangeSize = 2 * kPage2M;
inline constexpr std::uint64_t kSeamPageTablePages = 32;

struct SeamRangeLayout {
  std::uint64_t seamrr_base = 0;
  std::uint64_t seamrr_size = 0;
  Extent module_range;
  Extent p_seamldr_range;
  Extent sysinfo;
  Extent vmcs;
  Extent data;
  Extent page_table;
  Extent stacks;
  Extent code;

  // SEAM transfer VMCS page for an LP: SEAMRR base + 4 KB + lp * 4 KB.
  std::uint64_t vmcs_page(unsigned lp) const { return seamrr_base + kPage4K + lp * kPage4K; }
  std::vector<std::pair<std::string, Extent>> regions() const;
};

Result<SeamRangeLayout> compute_seam_layout(std::uint64_t seamrr_base, std::uint64_t seamrr_size, unsigned lp_count,
                                            const SeamSigstruct& sig, std::size_t image_size);

// Linear bases of the module's regions. Bits 34..46 of each base come from
// the RNG; every other bit is zero, so regions are disjoint as long as the
// drawn values are distinct and each region is below 16 GB.
struct LinearLayout {
  std::uint64_t sysinfo = 0;
  std::uint64_t data = 0;
  std::uint64_t stacks = 0;
  std::uint64_t code = 0;
  std::uint64_t page_table = 0;
  std::uint64_t keyholes = 0;
  std::uint64_t keyhole_edit = 0;

  static constexpr unsigned kLowBit = 34;
  static constexpr unsigned kHighBit = 46;
  static constexpr std::uint64_t kRegionSpan = std::uint64_t{1} << kLowBit;

  std::vector<std::pair<std::string, std::uint64_t>> bases() const;
};

LinearLayout randomize_linear_layout(crypto::Rng& rng);

// 4 KB sysinfo page: the first 2 KB describe the platform (as MCHECK would
// report it), the second 2 KB describe the installed module.
struct SysInfoTable {
  std::vector<Cmr> cmrs;
  std::uint32_t lp_count = 0;
  std::uint64_t seam_base = 0;
  std::uint64_t seam_size = 0;
  LinearLayout linear;
  std::uint32_t private_hkid_first = 0;
  std::uint32_t private_hkid_last = 0;

  Bytes serialize() const;
};

struct TransferContext {
  std::string host_entry_point;
  std::uint64_t page_table_root = 0;
  std::uint64_t fs_base = 0;  // sysinfo linear base
  std::uint64_t gs_base = 0;  // this LP's data linear base
  std::uint32_t lp = 0;
};

inline constexpr std::string_view kSeamcallEntryPoint = "tdx_seamcall_entry_point";

}  // namespace tdxsim
