#pragma once

// Thin wrappers over OpenSSL primitives used throughout the simulator, plus
// the seeded RNG every key and nonce is drawn from.

#include <memory>
#include <random>

#include "tdxsim/common.hpp"

struct evp_md_ctx_st;

namespace tdxsim::crypto {

// Deterministic byte source. Bytes are produced from successive 64-bit
// mt19937_64 outputs, little-endian, with any unused tail of the last word
// discarded. Tests replay this transcript to reconstruct secrets.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  void fill(std::span<std::uint8_t> out);
  std::uint64_t next_u64() { return engine_(); }

  template <std::size_t N>
  std::array<std::uint8_t, N> bytes() {
    std::array<std::uint8_t, N> a{};
    fill(a);
    return a;
  }

 private:
  std::mt19937_64 engine_;
};

Digest48 sha384(ByteSpan data);
Digest32 sha256(ByteSpan data);
Digest32 hmac_sha256(ByteSpan key, ByteSpan data);
Digest48 hmac_sha384(ByteSpan key, ByteSpan data);

// Incremental SHA-384. Copyable; finish() does not disturb the running state.
class Sha384 {
 public:
  Sha384();
  Sha384(const Sha384& other);
  Sha384& operator=(const Sha384& other);
  Sha384(Sha384&&) noexcept = default;
  Sha384& operator=(Sha384&&) noexcept = default;
  ~Sha384();

  void update(ByteSpan data);
  Digest48 finish() const;

 private:
  struct Free {
    void operator()(evp_md_ctx_st* ctx) const;
  };
  std::unique_ptr<evp_md_ctx_st, Free> ctx_;
};

// AES-128-XTS over exactly one cache line. key = key1 || key2.
using XtsKey = std::array<std::uint8_t, 32>;
using XtsTweak = std::array<std::uint8_t, 16>;
Line aes128_xts_encrypt(const XtsKey& key, const XtsTweak& tweak, const Line& plaintext);
Line aes128_xts_decrypt(const XtsKey& key, const XtsTweak& tweak, const Line& ciphertext);

// AES-256-GCM; sealed output is ciphertext || 16-byte tag.
using GcmKey = std::array<std::uint8_t, 32>;
using GcmNonce = std::array<std::uint8_t, 12>;
Bytes aes256_gcm_seal(const GcmKey& key, const GcmNonce& nonce, ByteSpan plaintext, ByteSpan aad = {});
std::optional<Bytes> aes256_gcm_open(const GcmKey& key, const GcmNonce& nonce, ByteSpan sealed,
                                     ByteSpan aad = {});

// ECDSA / ECDH over NIST P-256. Public keys are uncompressed SEC1 points,
// signatures are raw r || s.
using EcPrivateKey = std::array<std::uint8_t, 32>;
using EcPublicKey = std::array<std::uint8_t, 65>;
using EcSignature = std::array<std::uint8_t, 64>;

struct EcKeyPair {
  EcPrivateKey priv{};
  EcPublicKey pub{};

  static EcKeyPair generate(Rng& rng);
  // Fails when the scalar is zero or not below the group order.
  static std::optional<EcKeyPair> from_private(const EcPrivateKey& priv);
};

// Deterministic-nonce ECDSA with SHA-256 (nonce = HMAC-SHA256(d, H(m) || ctr)
// reduced mod n), so identical inputs give byte-identical signatures.
EcSignature ecdsa_sign(const EcPrivateKey& priv, ByteSpan message);
// Verification goes through OpenSSL's EVP interface, independent of the
// signing path above.
bool ecdsa_verify(const EcPublicKey& pub, ByteSpan message, const EcSignature& sig);

// SHA-256 of the x coordinate of priv * peer.
std::optional<Digest32> ecdh_shared_secret(const EcPrivateKey& priv, const EcPublicKey& peer);

}  // namespace tdxsim::crypto
