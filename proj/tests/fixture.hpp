#pragma once

// Shared setup for tests that need an installed, initialized platform and
// TDs built on it.

#include <memory>

#include "tdxsim/platform.hpp"

namespace fx {

using namespace tdxsim;

inline constexpr std::uint32_t kGlobalHkid = 4;
inline constexpr std::uint64_t kSourceBase = 0x10000000;  // host staging, shared memory

inline std::vector<Tdmr> default_tdmrs() { return {Tdmr{kPage1G, kPage1G, {}}}; }

inline std::unique_ptr<Platform> installed(HarnessConfig cfg = {}, Trace* trace = nullptr) {
  auto p = std::make_unique<Platform>(std::move(cfg), trace);
  const Bytes image = sample_module_image();
  const Status s = install_module(*p, image, vendor_sign_module(image, 1));
  if (s != Status::Success) return nullptr;
  return p;
}

inline std::unique_ptr<Platform> ready(HarnessConfig cfg = {}, Trace* trace = nullptr) {
  auto p = installed(std::move(cfg), trace);
  if (!p) return nullptr;
  const auto tdmrs = default_tdmrs();
  if (!platform_init_sequence(*p, kGlobalHkid, tdmrs)) return nullptr;
  return p;
}

// Bump allocator over TDMR pages.
struct PageAlloc {
  std::uint64_t next = kPage1G + 0x100000;
  std::uint64_t page() {
    const std::uint64_t pa = next;
    next += kPage4K;
    return pa;
  }
  std::vector<std::uint64_t> pages(std::size_t n) {
    std::vector<std::uint64_t> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back(page());
    return v;
  }
};

inline Bytes patterned_page(std::uint8_t seed) {
  Bytes b(kPage4K);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<std::uint8_t>(seed * 31 + i * 7 + (i >> 8));
  return b;
}

struct TdHandle {
  std::uint64_t tdr = 0;
  std::uint32_t hkid = 0;
  std::map<std::uint64_t, std::uint64_t> gpa_to_hpa;
};

inline Result<TdHandle> create_td(Platform& p, PageAlloc& alloc, std::uint32_t hkid, unsigned lp = 0) {
  TdHandle h;
  h.tdr = alloc.page();
  h.hkid = hkid;
  const auto tdcx = alloc.pages(kTdcxPages);
  TDXSIM_TRY(p.td_create(lp, hkid, h.tdr, tdcx));
  const std::uint64_t tdvpr = alloc.page();
  const auto tdvpx = alloc.pages(kTdvpsPages - 1);
  auto v = p.vp_create(lp, h.tdr, tdvpr, tdvpx);
  if (!v) return v.status();
  return h;
}

// Stages content in host memory and adds it at gpa, optionally extending all
// 16 blocks.
inline Status add_page(Platform& p, PageAlloc& alloc, TdHandle& td, std::uint64_t gpa, ByteSpan content,
                       bool extend = true, unsigned lp = 0) {
  const std::uint64_t src = kSourceBase + (gpa & 0xfffffff);
  TDXSIM_TRY(p.host_write(src, content));
  const std::uint64_t hpa = alloc.page();
  TDXSIM_TRY(p.page_add(lp, td.tdr, gpa, hpa, src));
  td.gpa_to_hpa[gpa] = hpa;
  if (extend)
    for (std::uint64_t off = 0; off < kPage4K; off += 256) TDXSIM_TRY(p.mr_extend(lp, td.tdr, gpa + off));
  return Status::Success;
}

// Creates a TD, adds n patterned pages at gpa 0, 4K, ... and finalizes.
inline Result<TdHandle> built_td(Platform& p, PageAlloc& alloc, std::uint32_t hkid, unsigned n_pages = 3) {
  auto td = create_td(p, alloc, hkid);
  if (!td) return td.status();
  for (unsigned i = 0; i < n_pages; ++i)
    TDXSIM_TRY(add_page(p, alloc, *td, i * kPage4K, patterned_page(static_cast<std::uint8_t>(i))));
  TDXSIM_TRY(p.mr_finalize(0, td->tdr));
  return td;
}

inline GuestOp op(GuestOp::Kind k, std::uint64_t gpa = 0) {
  GuestOp o;
  o.kind = k;
  o.gpa = gpa;
  return o;
}

}  // namespace fx
