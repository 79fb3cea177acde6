#include "tdxsim/crypto.hpp"

#include <openssl/bn.h>
#include <openssl/core_names.h>
#include <openssl/ec.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/obj_mac.h>
#include <openssl/param_build.h>

#include <cstring>
#include <stdexcept>

namespace tdxsim::crypto {
namespace {

[[noreturn]] void fail(const char* what) { throw std::runtime_error(std::string("openssl: ") + what); }

template <class T, void (*F)(T*)>
struct Deleter {
  void operator()(T* p) const { F(p); }
};
using BnPtr = std::unique_ptr<BIGNUM, Deleter<BIGNUM, BN_free>>;
using BnCtxPtr = std::unique_ptr<BN_CTX, Deleter<BN_CTX, BN_CTX_free>>;
using PointPtr = std::unique_ptr<EC_POINT, Deleter<EC_POINT, EC_POINT_free>>;
using CipherCtxPtr = std::unique_ptr<EVP_CIPHER_CTX, Deleter<EVP_CIPHER_CTX, EVP_CIPHER_CTX_free>>;
using PkeyPtr = std::unique_ptr<EVP_PKEY, Deleter<EVP_PKEY, EVP_PKEY_free>>;
using PkeyCtxPtr = std::unique_ptr<EVP_PKEY_CTX, Deleter<EVP_PKEY_CTX, EVP_PKEY_CTX_free>>;
using MdCtxPtr = std::unique_ptr<EVP_MD_CTX, Deleter<EVP_MD_CTX, EVP_MD_CTX_free>>;
using SigPtr = std::unique_ptr<ECDSA_SIG, Deleter<ECDSA_SIG, ECDSA_SIG_free>>;

const EC_GROUP* p256() {
  static const EC_GROUP* group = EC_GROUP_new_by_curve_name(NID_X9_62_prime256v1);
  if (group == nullptr) fail("P-256 group");
  return group;
}

BnPtr bn_from(ByteSpan b) { return BnPtr(BN_bin2bn(b.data(), static_cast<int>(b.size()), nullptr)); }

void bn_to(const BIGNUM* bn, std::span<std::uint8_t> out) {
  if (BN_bn2binpad(bn, out.data(), static_cast<int>(out.size())) < 0) fail("bn2binpad");
}

template <std::size_t N>
std::array<std::uint8_t, N> digest(const EVP_MD* md, ByteSpan data) {
  std::array<std::uint8_t, N> out{};
  unsigned len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, md, nullptr) != 1 || len != N) fail("digest");
  return out;
}

template <std::size_t N>
std::array<std::uint8_t, N> hmac(const EVP_MD* md, ByteSpan key, ByteSpan data) {
  std::array<std::uint8_t, N> out{};
  unsigned len = 0;
  if (HMAC(md, key.data(), static_cast<int>(key.size()), data.data(), data.size(), out.data(), &len) ==
          nullptr ||
      len != N)
    fail("hmac");
  return out;
}

Line xts(const XtsKey& key, const XtsTweak& tweak, const Line& in, bool encrypt) {
  CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
  if (!ctx || EVP_CipherInit_ex(ctx.get(), EVP_aes_128_xts(), nullptr, key.data(), tweak.data(),
                                encrypt ? 1 : 0) != 1)
    fail("xts init");
  Line out{};
  int len = 0;
  if (EVP_CipherUpdate(ctx.get(), out.data(), &len, in.data(), static_cast<int>(in.size())) != 1 ||
      len != static_cast<int>(in.size()))
    fail("xts update");
  int tail = 0;
  if (EVP_CipherFinal_ex(ctx.get(), out.data() + len, &tail) != 1) fail("xts final");
  return out;
}

EcPublicKey point_to_bytes(const EC_POINT* p, BN_CTX* ctx) {
  EcPublicKey out{};
  if (EC_POINT_point2oct(p256(), p, POINT_CONVERSION_UNCOMPRESSED, out.data(), out.size(), ctx) !=
      out.size())
    fail("point2oct");
  return out;
}

PointPtr point_from_bytes(const EcPublicKey& pub, BN_CTX* ctx) {
  PointPtr p(EC_POINT_new(p256()));
  if (!p || EC_POINT_oct2point(p256(), p.get(), pub.data(), pub.size(), ctx) != 1) return nullptr;
  return p;
}

PkeyPtr public_pkey(const EcPublicKey& pub) {
  std::unique_ptr<OSSL_PARAM_BLD, Deleter<OSSL_PARAM_BLD, OSSL_PARAM_BLD_free>> bld(OSSL_PARAM_BLD_new());
  if (!bld) fail("param bld");
  OSSL_PARAM_BLD_push_utf8_string(bld.get(), OSSL_PKEY_PARAM_GROUP_NAME, "prime256v1", 0);
  OSSL_PARAM_BLD_push_octet_string(bld.get(), OSSL_PKEY_PARAM_PUB_KEY, pub.data(), pub.size());
  std::unique_ptr<OSSL_PARAM, Deleter<OSSL_PARAM, OSSL_PARAM_free>> params(OSSL_PARAM_BLD_to_param(bld.get()));
  PkeyCtxPtr ctx(EVP_PKEY_CTX_new_from_name(nullptr, "EC", nullptr));
  EVP_PKEY* raw = nullptr;
  if (!ctx || EVP_PKEY_fromdata_init(ctx.get()) != 1 ||
      EVP_PKEY_fromdata(ctx.get(), &raw, EVP_PKEY_PUBLIC_KEY, params.get()) != 1)
    return nullptr;
  return PkeyPtr(raw);
}

// Provider-based key import dominates verify cost, and callers verify against
// the same handful of keys over and over.
EVP_PKEY* cached_public_pkey(const EcPublicKey& pub) {
  struct Slot {
    EcPublicKey pub{};
    PkeyPtr key;
  };
  thread_local std::array<Slot, 8> slots;
  thread_local std::size_t next = 0;
  for (auto& s : slots)
    if (s.key && s.pub == pub) return s.key.get();
  PkeyPtr key = public_pkey(pub);
  if (!key) return nullptr;
  Slot& s = slots[next++ % slots.size()];
  s.pub = pub;
  s.key = std::move(key);
  return s.key.get();
}

}  // namespace

void Rng::fill(std::span<std::uint8_t> out) {
  std::size_t i = 0;
  while (i < out.size()) {
    std::uint64_t w = engine_();
    for (int b = 0; b < 8 && i < out.size(); ++b, ++i) out[i] = static_cast<std::uint8_t>(w >> (8 * b));
  }
}

Digest48 sha384(ByteSpan data) { return digest<48>(EVP_sha384(), data); }
Digest32 sha256(ByteSpan data) { return digest<32>(EVP_sha256(), data); }
Digest32 hmac_sha256(ByteSpan key, ByteSpan data) { return hmac<32>(EVP_sha256(), key, data); }
Digest48 hmac_sha384(ByteSpan key, ByteSpan data) { return hmac<48>(EVP_sha384(), key, data); }

void Sha384::Free::operator()(evp_md_ctx_st* ctx) const { EVP_MD_CTX_free(ctx); }

Sha384::Sha384() : ctx_(EVP_MD_CTX_new()) {
  if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha384(), nullptr) != 1) fail("sha384 init");
}

Sha384::Sha384(const Sha384& other) : ctx_(EVP_MD_CTX_new()) {
  if (!ctx_ || EVP_MD_CTX_copy_ex(ctx_.get(), other.ctx_.get()) != 1) fail("sha384 copy");
}

Sha384& Sha384::operator=(const Sha384& other) {
  if (this != &other && EVP_MD_CTX_copy_ex(ctx_.get(), other.ctx_.get()) != 1) fail("sha384 copy");
  return *this;
}

Sha384::~Sha384() = default;

void Sha384::update(ByteSpan data) {
  if (EVP_DigestUpdate(ctx_.get(), data.data(), data.size()) != 1) fail("sha384 update");
}

Digest48 Sha384::finish() const {
  MdCtxPtr copy(EVP_MD_CTX_new());
  if (!copy || EVP_MD_CTX_copy_ex(copy.get(), ctx_.get()) != 1) fail("sha384 copy");
  Digest48 out{};
  unsigned len = 0;
  if (EVP_DigestFinal_ex(copy.get(), out.data(), &len) != 1 || len != out.size()) fail("sha384 final");
  return out;
}

Line aes128_xts_encrypt(const XtsKey& key, const XtsTweak& tweak, const Line& plaintext) {
  return xts(key, tweak, plaintext, true);
}

Line aes128_xts_decrypt(const XtsKey& key, const XtsTweak& tweak, const Line& ciphertext) {
  return xts(key, tweak, ciphertext, false);
}

Bytes aes256_gcm_seal(const GcmKey& key, const GcmNonce& nonce, ByteSpan plaintext, ByteSpan aad) {
  CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
  if (!ctx || EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()) != 1)
    fail("gcm init");
  int len = 0;
  if (!aad.empty() && EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1)
    fail("gcm aad");
  Bytes out(plaintext.size() + 16);
  if (EVP_EncryptUpdate(ctx.get(), out.data(), &len, plaintext.data(), static_cast<int>(plaintext.size())) != 1)
    fail("gcm update");
  int tail = 0;
  if (EVP_EncryptFinal_ex(ctx.get(), out.data() + len, &tail) != 1) fail("gcm final");
  if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, 16, out.data() + plaintext.size()) != 1)
    fail("gcm tag");
  return out;
}

std::optional<Bytes> aes256_gcm_open(const GcmKey& key, const GcmNonce& nonce, ByteSpan sealed, ByteSpan aad) {
  if (sealed.size() < 16) return std::nullopt;
  const std::size_t n = sealed.size() - 16;
  CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
  if (!ctx || EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()) != 1)
    fail("gcm init");
  int len = 0;
  if (!aad.empty() && EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1)
    fail("gcm aad");
  Bytes out(n);
  if (EVP_DecryptUpdate(ctx.get(), out.data(), &len, sealed.data(), static_cast<int>(n)) != 1) return std::nullopt;
  std::array<std::uint8_t, 16> tag{};
  std::memcpy(tag.data(), sealed.data() + n, 16);
  if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, 16, tag.data()) != 1) fail("gcm tag");
  int tail = 0;
  if (EVP_DecryptFinal_ex(ctx.get(), out.data() + len, &tail) != 1) return std::nullopt;
  return out;
}

EcKeyPair EcKeyPair::generate(Rng& rng) {
  for (;;) {
    auto candidate = EcKeyPair::from_private(rng.bytes<32>());
    if (candidate) return *candidate;
  }
}

std::optional<EcKeyPair> EcKeyPair::from_private(const EcPrivateKey& priv) {
  BnPtr d = bn_from(priv);
  if (!d || BN_is_zero(d.get()) || BN_cmp(d.get(), EC_GROUP_get0_order(p256())) >= 0) return std::nullopt;
  BnCtxPtr ctx(BN_CTX_new());
  PointPtr q(EC_POINT_new(p256()));
  if (!q || EC_POINT_mul(p256(), q.get(), d.get(), nullptr, nullptr, ctx.get()) != 1) fail("point mul");
  EcKeyPair kp;
  kp.priv = priv;
  kp.pub = point_to_bytes(q.get(), ctx.get());
  return kp;
}

EcSignature ecdsa_sign(const EcPrivateKey& priv, ByteSpan message) {
  const BIGNUM* n = EC_GROUP_get0_order(p256());
  const Digest32 h = sha256(message);
  BnCtxPtr ctx(BN_CTX_new());
  BnPtr d = bn_from(priv);
  BnPtr z = bn_from(h);
  BnPtr k(BN_new()), r(BN_new()), s(BN_new()), x(BN_new()), kinv(BN_new()), tmp(BN_new());
  PointPtr kg(EC_POINT_new(p256()));
  for (std::uint32_t counter = 0;; ++counter) {
    Bytes seed(h.begin(), h.end());
    put_le(seed, counter, 4);
    const Digest32 kbytes = hmac_sha256(priv, seed);
    BN_bin2bn(kbytes.data(), static_cast<int>(kbytes.size()), k.get());
    BN_nnmod(k.get(), k.get(), n, ctx.get());
    if (BN_is_zero(k.get())) continue;
    if (EC_POINT_mul(p256(), kg.get(), k.get(), nullptr, nullptr, ctx.get()) != 1 ||
        EC_POINT_get_affine_coordinates(p256(), kg.get(), x.get(), nullptr, ctx.get()) != 1)
      fail("ecdsa kG");
    BN_nnmod(r.get(), x.get(), n, ctx.get());
    if (BN_is_zero(r.get())) continue;
    // s = k^-1 (z + r d) mod n
    BN_mod_mul(tmp.get(), r.get(), d.get(), n, ctx.get());
    BN_mod_add(tmp.get(), tmp.get(), z.get(), n, ctx.get());
    if (BN_mod_inverse(kinv.get(), k.get(), n, ctx.get()) == nullptr) continue;
    BN_mod_mul(s.get(), kinv.get(), tmp.get(), n, ctx.get());
    if (BN_is_zero(s.get())) continue;
    EcSignature sig{};
    bn_to(r.get(), std::span(sig).first<32>());
    bn_to(s.get(), std::span(sig).last<32>());
    return sig;
  }
}

namespace {

bool ecdsa_verify_uncached(const EcPublicKey& pub, ByteSpan message, const EcSignature& sig) {
  EVP_PKEY* pkey = cached_public_pkey(pub);
  if (pkey == nullptr) return false;
  SigPtr esig(ECDSA_SIG_new());
  BIGNUM* r = BN_bin2bn(sig.data(), 32, nullptr);
  BIGNUM* s = BN_bin2bn(sig.data() + 32, 32, nullptr);
  if (!esig || r == nullptr || s == nullptr || ECDSA_SIG_set0(esig.get(), r, s) != 1) {
    BN_free(r);
    BN_free(s);
    return false;
  }
  unsigned char* der = nullptr;
  const int der_len = i2d_ECDSA_SIG(esig.get(), &der);
  if (der_len <= 0) return false;
  std::unique_ptr<unsigned char, void (*)(unsigned char*)> der_owner(der, [](unsigned char* p) { OPENSSL_free(p); });
  MdCtxPtr md(EVP_MD_CTX_new());
  if (!md || EVP_DigestVerifyInit(md.get(), nullptr, EVP_sha256(), nullptr, pkey) != 1) return false;
  return EVP_DigestVerify(md.get(), der, static_cast<std::size_t>(der_len), message.data(), message.size()) == 1;
}

}  // namespace

// Certificate chains get re-verified constantly with identical inputs, so a
// few recent successes are remembered by digest of (key, signature, message).
bool ecdsa_verify(const EcPublicKey& pub, ByteSpan message, const EcSignature& sig) {
  Bytes id(pub.begin(), pub.end());
  id.insert(id.end(), sig.begin(), sig.end());
  const Digest32 mh = sha256(message);
  id.insert(id.end(), mh.begin(), mh.end());
  const Digest32 key = sha256(id);
  thread_local std::array<Digest32, 16> good{};
  thread_local std::size_t next = 0;
  for (const auto& g : good)
    if (g == key) return true;
  if (!ecdsa_verify_uncached(pub, message, sig)) return false;
  good[next++ % good.size()] = key;
  return true;
}

std::optional<Digest32> ecdh_shared_secret(const EcPrivateKey& priv, const EcPublicKey& peer) {
  BnCtxPtr ctx(BN_CTX_new());
  PointPtr q = point_from_bytes(peer, ctx.get());
  if (!q || EC_POINT_is_on_curve(p256(), q.get(), ctx.get()) != 1) return std::nullopt;
  BnPtr d = bn_from(priv);
  PointPtr shared(EC_POINT_new(p256()));
  BnPtr x(BN_new());
  if (EC_POINT_mul(p256(), shared.get(), nullptr, q.get(), d.get(), ctx.get()) != 1 ||
      EC_POINT_is_at_infinity(p256(), shared.get()) == 1 ||
      EC_POINT_get_affine_coordinates(p256(), shared.get(), x.get(), nullptr, ctx.get()) != 1)
    return std::nullopt;
  std::array<std::uint8_t, 32> xb{};
  bn_to(x.get(), xb);
  return sha256(xb);
}

}  // namespace tdxsim::crypto
