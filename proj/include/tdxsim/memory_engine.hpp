#pragma once

// Simulated DRAM behind a multi-key memory encryption engine. Every access is
// a 64-byte cache line; each line carries TD-owner, MAC and poison metadata
// that the engine checks on every read.

#include <map>
#include <memory>

#include "tdxsim/common.hpp"
#include "tdxsim/crypto.hpp"

namespace tdxsim {

// Who issues a memory transaction. Seam covers both the TDX module and TDs.
enum class Actor : std::uint8_t { Host, Seam };
std::string_view to_string(Actor a);

// Physical address width including the keyid field. The HKID occupies the
// top total_keyid_bits of this width.
inline constexpr unsigned kPhysAddrBits = 52;
inline constexpr unsigned kMaxKeyidBits = 15;

struct KeyConfig {
  unsigned total_keyid_bits = 6;
  unsigned reserved_keyid_bits = 4;
  bool ci_enabled = false;
};

struct HkidPartition {
  std::uint32_t shared_first = 0;
  std::uint32_t shared_last = 0;
  std::uint32_t private_first = 0;
  std::uint32_t private_last = 0;

  bool contains(std::uint32_t hkid) const { return hkid <= private_last; }
  bool is_private(std::uint32_t hkid) const { return hkid >= private_first && hkid <= private_last; }
  bool is_shared(std::uint32_t hkid) const { return hkid <= shared_last; }
};

// Validates bit counts and computes the shared/private split.
Result<HkidPartition> partition_hkids(const KeyConfig& cfg);

// A raw physical address as presented on the memory bus: HKID in the upper
// keyid bits, the byte address below.
struct PhysAddr {
  std::uint64_t raw = 0;

  static PhysAddr compose(std::uint32_t hkid, std::uint64_t pa, unsigned keyid_bits) {
    return {(std::uint64_t{hkid} << (kPhysAddrBits - keyid_bits)) | pa};
  }
  std::uint32_t hkid(unsigned keyid_bits) const {
    return static_cast<std::uint32_t>((raw >> (kPhysAddrBits - keyid_bits)) & ((1u << keyid_bits) - 1));
  }
  std::uint64_t line_addr(unsigned keyid_bits) const {
    return raw & ((std::uint64_t{1} << (kPhysAddrBits - keyid_bits)) - 1);
  }
};

enum class EncryptionMode : std::uint8_t { AesXts128, NoEncryption };

struct KeyHandle {
  std::uint32_t hkid = 0;
  EncryptionMode mode = EncryptionMode::AesXts128;
};

struct ReadOutcome {
  enum class Kind : std::uint8_t { Plain, AllZeros, Poisoned };
  Kind kind = Kind::Plain;
  Line data{};

  bool poisoned() const { return kind == Kind::Poisoned; }
};
std::string_view to_string(ReadOutcome::Kind k);

struct LineMeta {
  bool written = false;
  bool td_owner = false;
  std::uint32_t mac = 0;
  bool poisoned = false;
};

// What a physical probe of DRAM would observe. Carries no key material.
struct RawLine {
  bool present = false;
  Line ciphertext{};
  LineMeta meta{};
};

// XTS tweak for a line: the line address (keyid bits stripped) as 8 LE bytes,
// zero-extended to 16.
crypto::XtsTweak line_tweak(std::uint64_t line_addr);

// HMAC-SHA-256(mac_key, ciphertext || tweak || owner_bit) truncated to the
// low 28 bits of the first four digest bytes read little-endian.
std::uint32_t compute_mac28(const Line& ciphertext, const crypto::XtsTweak& tweak, bool owner_bit,
                            std::span<const std::uint8_t, 16> mac_key);

class MemoryEngine {
 public:
  // All key material (MAC key first, then one 32-byte XTS key per PCONFIG)
  // is drawn from Rng(seed) in call order.
  explicit MemoryEngine(std::uint64_t seed);

  Status configure_tme(const KeyConfig& cfg);
  bool configured() const { return configured_; }
  const KeyConfig& config() const { return cfg_; }
  const HkidPartition& partition() const { return partition_; }
  unsigned keyid_bits() const { return cfg_.total_keyid_bits; }
  PhysAddr addr(std::uint32_t hkid, std::uint64_t pa) const {
    return PhysAddr::compose(hkid, pa, cfg_.total_keyid_bits);
  }

  Result<KeyHandle> pconfig(Actor actor, std::uint32_t hkid, EncryptionMode mode = EncryptionMode::AesXts128);
  Status unbind(Actor actor, std::uint32_t hkid);
  bool is_bound(std::uint32_t hkid) const { return keys_.contains(hkid); }

  Status write_line(Actor actor, PhysAddr addr, const Line& plaintext);
  Result<ReadOutcome> read_line(Actor actor, PhysAddr addr);

  Result<std::uint32_t> mac28(const Line& ciphertext, const crypto::XtsTweak& tweak, bool owner_bit) const;

  // Page reclaim: content zeroed, owner bits and poison cleared.
  void wipe_page(std::uint64_t page_pa);

  // Physical probes used to model DRAM-level attackers and for inspection.
  RawLine raw_line(std::uint64_t line_pa) const;
  void flip_ciphertext_bit(std::uint64_t line_pa, unsigned bit);
  void flip_mac_bit(std::uint64_t line_pa, unsigned bit);
  void flip_owner_bit(std::uint64_t line_pa);

  std::size_t page_count() const { return pages_.size(); }
  void serialize_state(Bytes& out) const;

 private:
  struct Page {
    std::array<Line, kLinesPerPage> data{};
    std::array<LineMeta, kLinesPerPage> meta{};
  };
  struct KeyEntry {
    crypto::XtsKey key{};
    EncryptionMode mode = EncryptionMode::AesXts128;
  };

  Status check_access(Actor actor, PhysAddr addr, std::uint32_t& hkid, std::uint64_t& line) const;
  Page& page_for(std::uint64_t line);
  std::pair<Page*, std::size_t> find_line(std::uint64_t line);
  std::pair<const Page*, std::size_t> find_line(std::uint64_t line) const;

  crypto::Rng rng_;
  bool configured_ = false;
  KeyConfig cfg_{};
  HkidPartition partition_{};
  std::array<std::uint8_t, 16> mac_key_{};
  std::map<std::uint32_t, KeyEntry> keys_;
  std::map<std::uint64_t, std::unique_ptr<Page>> pages_;
};

}  // namespace tdxsim
