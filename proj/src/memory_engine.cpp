#include "tdxsim/memory_engine.hpp"

namespace tdxsim {

std::string_view to_string(Actor a) { return a == Actor::Host ? "host" : "seam"; }

std::string_view to_string(ReadOutcome::Kind k) {
  switch (k) {
    case ReadOutcome::Kind::Plain: return "plain";
    case ReadOutcome::Kind::AllZeros: return "all-zeros";
    case ReadOutcome::Kind::Poisoned: return "poisoned";
  }
  return "?";
}

Result<HkidPartition> partition_hkids(const KeyConfig& cfg) {
  if (cfg.total_keyid_bits == 0 || cfg.total_keyid_bits > kMaxKeyidBits || cfg.reserved_keyid_bits == 0 ||
      cfg.reserved_keyid_bits > cfg.total_keyid_bits)
    return Status::InvalidBits;
  const std::uint32_t boundary = 1u << (cfg.total_keyid_bits - cfg.reserved_keyid_bits);
  HkidPartition p;
  p.shared_first = 0;
  p.shared_last = boundary - 1;
  p.private_first = boundary;
  p.private_last = (1u << cfg.total_keyid_bits) - 1;
  return p;
}

crypto::XtsTweak line_tweak(std::uint64_t line_addr) {
  crypto::XtsTweak t{};
  for (int i = 0; i < 8; ++i) t[i] = static_cast<std::uint8_t>(line_addr >> (8 * i));
  return t;
}

std::uint32_t compute_mac28(const Line& ciphertext, const crypto::XtsTweak& tweak, bool owner_bit,
                            std::span<const std::uint8_t, 16> mac_key) {
  Bytes msg;
  msg.reserve(ciphertext.size() + tweak.size() + 1);
  put_bytes(msg, ciphertext);
  put_bytes(msg, tweak);
  msg.push_back(owner_bit ? 1 : 0);
  const auto tag = crypto::hmac_sha256(mac_key, msg);
  return static_cast<std::uint32_t>(get_le(tag, 0, 4)) & 0x0fffffffu;
}

MemoryEngine::MemoryEngine(std::uint64_t seed) : rng_(seed) {}

Status MemoryEngine::configure_tme(const KeyConfig& cfg) {
  if (configured_) return Status::AlreadyConfigured;
  auto part = partition_hkids(cfg);
  if (!part) return part.status();
  cfg_ = cfg;
  partition_ = *part;
  if (cfg.ci_enabled) rng_.fill(mac_key_);
  configured_ = true;
  return Status::Success;
}

Result<KeyHandle> MemoryEngine::pconfig(Actor actor, std::uint32_t hkid, EncryptionMode mode) {
  if (!configured_) return Status::NotConfigured;
  if (!partition_.contains(hkid)) return Status::HkidOutOfRange;
  if (partition_.is_private(hkid) && actor != Actor::Seam) return Status::PrivateHkidFromNonSeam;
  if (keys_.contains(hkid)) return Status::AlreadyBound;
  KeyEntry entry;
  entry.mode = mode;
  for (;;) {
    rng_.fill(entry.key);
    // XTS rejects identical key halves.
    if (!std::equal(entry.key.begin(), entry.key.begin() + 16, entry.key.begin() + 16)) break;
  }
  keys_.emplace(hkid, entry);
  return KeyHandle{hkid, mode};
}

Status MemoryEngine::unbind(Actor actor, std::uint32_t hkid) {
  if (!configured_) return Status::NotConfigured;
  if (!partition_.contains(hkid)) return Status::HkidOutOfRange;
  if (partition_.is_private(hkid) && actor != Actor::Seam) return Status::PrivateHkidFromNonSeam;
  if (keys_.erase(hkid) == 0) return Status::HkidNotBound;
  return Status::Success;
}

Status MemoryEngine::check_access(Actor actor, PhysAddr addr, std::uint32_t& hkid, std::uint64_t& line) const {
  if (!configured_) return Status::NotConfigured;
  if (addr.raw >> kPhysAddrBits) return Status::HkidOutOfRange;
  hkid = addr.hkid(cfg_.total_keyid_bits);
  line = addr.line_addr(cfg_.total_keyid_bits);
  if (line % kLineSize != 0) return Status::Unaligned;
  if (partition_.is_private(hkid) && actor != Actor::Seam) return Status::PrivateHkidFromNonSeam;
  if (hkid != 0 && !keys_.contains(hkid)) return Status::HkidNotBound;
  return Status::Success;
}

MemoryEngine::Page& MemoryEngine::page_for(std::uint64_t line) {
  auto& slot = pages_[line / kPage4K];
  if (!slot) slot = std::make_unique<Page>();
  return *slot;
}

std::pair<MemoryEngine::Page*, std::size_t> MemoryEngine::find_line(std::uint64_t line) {
  auto it = pages_.find(line / kPage4K);
  if (it == pages_.end()) return {nullptr, 0};
  return {it->second.get(), (line % kPage4K) / kLineSize};
}

std::pair<const MemoryEngine::Page*, std::size_t> MemoryEngine::find_line(std::uint64_t line) const {
  auto it = pages_.find(line / kPage4K);
  if (it == pages_.end()) return {nullptr, 0};
  return {it->second.get(), (line % kPage4K) / kLineSize};
}

Status MemoryEngine::write_line(Actor actor, PhysAddr addr, const Line& plaintext) {
  std::uint32_t hkid = 0;
  std::uint64_t line = 0;
  TDXSIM_TRY(check_access(actor, addr, hkid, line));

  const auto tweak = line_tweak(line);
  Line ciphertext = plaintext;
  if (auto it = keys_.find(hkid); it != keys_.end() && it->second.mode == EncryptionMode::AesXts128)
    ciphertext = crypto::aes128_xts_encrypt(it->second.key, tweak, plaintext);

  Page& page = page_for(line);
  const std::size_t idx = (line % kPage4K) / kLineSize;
  LineMeta& meta = page.meta[idx];
  page.data[idx] = ciphertext;
  meta.written = true;
  meta.td_owner = partition_.is_private(hkid);
  meta.mac = cfg_.ci_enabled ? compute_mac28(ciphertext, tweak, meta.td_owner, mac_key_) : 0;
  return Status::Success;
}

Result<ReadOutcome> MemoryEngine::read_line(Actor actor, PhysAddr addr) {
  std::uint32_t hkid = 0;
  std::uint64_t line = 0;
  if (Status s = check_access(actor, addr, hkid, line); s != Status::Success) return s;

  auto [page, idx] = find_line(line);
  const bool written = page != nullptr && page->meta[idx].written;
  const bool owner = written && page->meta[idx].td_owner;

  if (actor == Actor::Host && owner) return ReadOutcome{ReadOutcome::Kind::AllZeros, {}};
  if (page != nullptr && page->meta[idx].poisoned) return ReadOutcome{ReadOutcome::Kind::Poisoned, {}};

  auto poison = [&]() -> ReadOutcome {
    Page& p = page_for(line);
    p.meta[idx].poisoned = true;
    return ReadOutcome{ReadOutcome::Kind::Poisoned, {}};
  };

  if (actor == Actor::Seam && partition_.is_private(hkid) && !owner) return poison();
  if (!written) return ReadOutcome{ReadOutcome::Kind::Plain, {}};

  const auto tweak = line_tweak(line);
  const LineMeta& meta = page->meta[idx];
  if (cfg_.ci_enabled && compute_mac28(page->data[idx], tweak, meta.td_owner, mac_key_) != meta.mac)
    return poison();

  ReadOutcome out{ReadOutcome::Kind::Plain, page->data[idx]};
  if (auto it = keys_.find(hkid); it != keys_.end() && it->second.mode == EncryptionMode::AesXts128)
    out.data = crypto::aes128_xts_decrypt(it->second.key, tweak, page->data[idx]);
  return out;
}

Result<std::uint32_t> MemoryEngine::mac28(const Line& ciphertext, const crypto::XtsTweak& tweak,
                                          bool owner_bit) const {
  if (!configured_ || !cfg_.ci_enabled) return Status::CiDisabled;
  return compute_mac28(ciphertext, tweak, owner_bit, mac_key_);
}

void MemoryEngine::wipe_page(std::uint64_t page_pa) { pages_.erase(page_pa / kPage4K); }

RawLine MemoryEngine::raw_line(std::uint64_t line_pa) const {
  auto [page, idx] = find_line(line_pa);
  if (page == nullptr) return {};
  return RawLine{true, page->data[idx], page->meta[idx]};
}

void MemoryEngine::flip_ciphertext_bit(std::uint64_t line_pa, unsigned bit) {
  Page& page = page_for(line_pa);
  const std::size_t idx = (line_pa % kPage4K) / kLineSize;
  page.data[idx][(bit / 8) % kLineSize] ^= static_cast<std::uint8_t>(1u << (bit % 8));
}

void MemoryEngine::flip_mac_bit(std::uint64_t line_pa, unsigned bit) {
  Page& page = page_for(line_pa);
  page.meta[(line_pa % kPage4K) / kLineSize].mac ^= (1u << (bit % 28));
}

void MemoryEngine::flip_owner_bit(std::uint64_t line_pa) {
  Page& page = page_for(line_pa);
  auto& meta = page.meta[(line_pa % kPage4K) / kLineSize];
  meta.td_owner = !meta.td_owner;
}

void MemoryEngine::serialize_state(Bytes& out) const {
  put_le(out, configured_ ? 1 : 0, 1);
  put_le(out, cfg_.total_keyid_bits, 1);
  put_le(out, cfg_.reserved_keyid_bits, 1);
  put_le(out, cfg_.ci_enabled ? 1 : 0, 1);
  put_le64(out, keys_.size());
  for (const auto& [hkid, entry] : keys_) {
    put_le(out, hkid, 4);
    put_le(out, static_cast<std::uint8_t>(entry.mode), 1);
  }
  put_le64(out, pages_.size());
  for (const auto& [pn, page] : pages_) {
    put_le64(out, pn);
    for (std::size_t i = 0; i < kLinesPerPage; ++i) {
      put_bytes(out, page->data[i]);
      const auto& m = page->meta[i];
      put_le(out, (m.written ? 1 : 0) | (m.td_owner ? 2 : 0) | (m.poisoned ? 4 : 0), 1);
      put_le(out, m.mac, 4);
    }
  }
}

}  // namespace tdxsim
