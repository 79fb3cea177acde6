#include "tdxsim/seam_loader.hpp"

#include <algorithm>

namespace tdxsim {
namespace {

const crypto::EcKeyPair& vendor_key() {
  static const crypto::EcKeyPair key = [] {
    auto priv = array_from_hex<32>("340ed10a7f2d55b9ed127d2728cdea1a288a40230cc60df9d2f68ec29cf51802");
    return crypto::EcKeyPair::from_private(*priv).value();
  }();
  return key;
}

std::uint64_t round_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

}  // namespace

Bytes SeamSigstruct::signed_bytes() const {
  Bytes out;
  put_ascii(out, "SEAMSIG1");
  put_bytes(out, image_hash);
  put_le(out, svn, 4);
  put_le(out, stack_pages_per_lp, 4);
  put_le(out, data_pages_per_lp, 4);
  put_le(out, global_data_pages, 4);
  return out;
}

const crypto::EcPublicKey& vendor_public_key() { return vendor_key().pub; }

SeamSigstruct vendor_sign_module(ByteSpan image, std::uint32_t svn, std::uint32_t stack_pages_per_lp,
                                 std::uint32_t data_pages_per_lp, std::uint32_t global_data_pages) {
  SeamSigstruct s;
  s.image_hash = crypto::sha384(image);
  s.svn = svn;
  s.stack_pages_per_lp = stack_pages_per_lp;
  s.data_pages_per_lp = data_pages_per_lp;
  s.global_data_pages = global_data_pages;
  s.signature = crypto::ecdsa_sign(vendor_key().priv, s.signed_bytes());
  return s;
}

Bytes sample_module_image(std::uint32_t variant) {
  Bytes img;
  put_ascii(img, "TDXSIM-MODULE");
  put_le(img, variant, 4);
  std::uint32_t x = 0x9e3779b9u ^ variant;
  while (img.size() < 3 * kPage4K + 123) {
    x = x * 1664525u + 1013904223u;
    img.push_back(static_cast<std::uint8_t>(x >> 24));
  }
  return img;
}

std::vector<std::pair<std::string, Extent>> SeamRangeLayout::regions() const {
  return {{"sysinfo", sysinfo}, {"vmcs", vmcs},     {"data", data},
          {"page_table", page_table}, {"stacks", stacks}, {"code", code}};
}

Result<SeamRangeLayout> compute_seam_layout(std::uint64_t seamrr_base, std::uint64_t seamrr_size, unsigned lp_count,
                                            const SeamSigstruct& sig, std::size_t image_size) {
  if (lp_count == 0 || seamrr_base % kPage2M != 0 || seamrr_size % kPage2M != 0 ||
      seamrr_size <= kPSeamldrRangeSize)
    return Status::BadParams;
  SeamRangeLayout l;
  l.seamrr_base = seamrr_base;
  l.seamrr_size = seamrr_size;
  l.module_range = {seamrr_base, seamrr_size - kPSeamldrRangeSize};
  l.p_seamldr_range = {l.module_range.end(), kPSeamldrRangeSize};

  std::uint64_t cursor = seamrr_base;
  auto take = [&](std::uint64_t pages) {
    Extent e{cursor, pages * kPage4K};
    cursor += e.size;
    return e;
  };
  l.sysinfo = take(1);
  l.vmcs = take(lp_count);
  l.data = take(std::uint64_t{sig.data_pages_per_lp} * lp_count + sig.global_data_pages);
  l.page_table = take(kSeamPageTablePages);
  l.stacks = take(std::uint64_t{sig.stack_pages_per_lp} * lp_count);
  l.code = take(round_up(image_size, kPage4K) / kPage4K);
  if (cursor > l.module_range.end()) return Status::BadParams;
  return l;
}

std::vector<std::pair<std::string, std::uint64_t>> LinearLayout::bases() const {
  return {{"sysinfo", sysinfo},       {"data", data},         {"stacks", stacks},
          {"code", code},             {"page_table", page_table}, {"keyholes", keyholes},
          {"keyhole_edit", keyhole_edit}};
}

LinearLayout randomize_linear_layout(crypto::Rng& rng) {
  constexpr unsigned kBits = LinearLayout::kHighBit - LinearLayout::kLowBit + 1;
  std::vector<std::uint64_t> drawn;
  auto draw = [&] {
    for (;;) {
      const std::uint64_t v = rng.next_u64() & ((std::uint64_t{1} << kBits) - 1);
      // Zero would put a region at linear address 0.
      if (v != 0 && std::find(drawn.begin(), drawn.end(), v) == drawn.end()) {
        drawn.push_back(v);
        return v << LinearLayout::kLowBit;
      }
    }
  };
  LinearLayout l;
  l.sysinfo = draw();
  l.data = draw();
  l.stacks = draw();
  l.code = draw();
  l.page_table = draw();
  l.keyholes = draw();
  l.keyhole_edit = draw();
  return l;
}

Bytes SysInfoTable::serialize() const {
  Bytes out;
  out.reserve(kPage4K);
  put_ascii(out, "MCHECK01");
  put_le(out, lp_count, 4);
  put_le(out, cmrs.size(), 4);
  for (const auto& c : cmrs) {
    put_le64(out, c.base);
    put_le64(out, c.size);
    out.push_back(c.convertible ? 1 : 0);
  }
  out.resize(kPage4K / 2, 0);
  put_ascii(out, "SEAMLDR1");
  put_le64(out, seam_base);
  put_le64(out, seam_size);
  for (const auto& [name, base] : linear.bases()) put_le64(out, base);
  put_le(out, private_hkid_first, 4);
  put_le(out, private_hkid_last, 4);
  out.resize(kPage4K, 0);
  return out;
}

}  // namespace tdxsim
