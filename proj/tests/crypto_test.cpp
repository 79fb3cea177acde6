#include "tdxsim/crypto.hpp"

#include <gtest/gtest.h>

#include "oracle/sha384_ref.hpp"

namespace tdxsim::crypto {
namespace {

Bytes ascii(std::string_view s) { return Bytes(s.begin(), s.end()); }

TEST(Sha384, MatchesReferenceOnKnownAnswer) {
  // FIPS 180-4 "abc" example.
  const auto expected = *from_hex(
      "cb00753f45a35e8bb5a03d699ac65007272c32ab0eded1631a8b605a43ff5bed8086072ba1e7cc2358baeca134c825a7");
  const auto d = sha384(ascii("abc"));
  EXPECT_EQ(Bytes(d.begin(), d.end()), expected);
  const auto r = oracle::Sha384Ref::digest(ascii("abc"));
  EXPECT_EQ(Bytes(r.begin(), r.end()), expected);
}

TEST(Sha384, IncrementalAgreesWithOracleAcrossBlockBoundaries) {
  Rng rng(7);
  for (std::size_t len : {0u, 1u, 111u, 112u, 127u, 128u, 129u, 300u, 1000u}) {
    Bytes msg(len);
    rng.fill(msg);
    Sha384 inc;
    inc.update(ByteSpan(msg).first(len / 3));
    inc.update(ByteSpan(msg).subspan(len / 3));
    EXPECT_EQ(inc.finish(), oracle::Sha384Ref::digest(msg)) << "len=" << len;
  }
}

TEST(Sha384, FinishDoesNotConsumeState) {
  Sha384 h;
  h.update(ascii("MEM.PAGE.ADD"));
  const auto first = h.finish();
  EXPECT_EQ(first, h.finish());
  Sha384 copy = h;
  copy.update(ascii("x"));
  EXPECT_NE(copy.finish(), h.finish());
}

TEST(AesXts, KnownAnswerFromReferenceImplementation) {
  // Generated with pyca/cryptography AES-128-XTS: key = 00..1f,
  // tweak = LE64(0x12340) || 0^8, plaintext[i] = 7i + 3.
  XtsKey key{};
  for (std::size_t i = 0; i < key.size(); ++i) key[i] = static_cast<std::uint8_t>(i);
  XtsTweak tweak{};
  tweak[0] = 0x40;
  tweak[1] = 0x23;
  tweak[2] = 0x01;
  Line pt{};
  for (std::size_t i = 0; i < pt.size(); ++i) pt[i] = static_cast<std::uint8_t>(i * 7 + 3);
  const auto expected = *from_hex(
      "78174df086ad9f52543d9101b6b3e50aea68647b88a74ab3582c8c54fac32b76"
      "3baccf3a6d2e8c66c6eea9341df3724e07dee5dc2723e7b3cf89fc4e7dea6f18");
  const Line ct = aes128_xts_encrypt(key, tweak, pt);
  EXPECT_EQ(Bytes(ct.begin(), ct.end()), expected);
  EXPECT_EQ(aes128_xts_decrypt(key, tweak, ct), pt);
}

TEST(AesGcm, SealOpenAndTamperDetection) {
  Rng rng(3);
  const auto key = rng.bytes<32>();
  const auto nonce = rng.bytes<12>();
  const Bytes msg = ascii("partition secrets");
  Bytes sealed = aes256_gcm_seal(key, nonce, msg, ascii("aad"));
  auto opened = aes256_gcm_open(key, nonce, sealed, ascii("aad"));
  ASSERT_TRUE(opened);
  EXPECT_EQ(*opened, msg);
  EXPECT_FALSE(aes256_gcm_open(key, nonce, sealed, ascii("other")));
  sealed[0] ^= 1;
  EXPECT_FALSE(aes256_gcm_open(key, nonce, sealed, ascii("aad")));
}

TEST(Ecdsa, SignVerifyRoundTripAndDeterminism) {
  Rng rng(11);
  const auto kp = EcKeyPair::generate(rng);
  const Bytes msg = ascii("quote body");
  const auto sig = ecdsa_sign(kp.priv, msg);
  EXPECT_TRUE(ecdsa_verify(kp.pub, msg, sig));
  EXPECT_EQ(sig, ecdsa_sign(kp.priv, msg));

  Bytes other = msg;
  other.back() ^= 1;
  EXPECT_FALSE(ecdsa_verify(kp.pub, other, sig));
  auto bad = sig;
  bad[10] ^= 0x80;
  EXPECT_FALSE(ecdsa_verify(kp.pub, msg, bad));
  const auto kp2 = EcKeyPair::generate(rng);
  EXPECT_FALSE(ecdsa_verify(kp2.pub, msg, sig));
}

TEST(Ecdsa, RejectsOutOfRangeScalars) {
  EXPECT_FALSE(EcKeyPair::from_private(EcPrivateKey{}));
  EcPrivateKey ff{};
  ff.fill(0xff);
  EXPECT_FALSE(EcKeyPair::from_private(ff));
}

TEST(Ecdh, BothSidesDeriveSameSecret) {
  Rng rng(5);
  const auto a = EcKeyPair::generate(rng);
  const auto b = EcKeyPair::generate(rng);
  const auto s1 = ecdh_shared_secret(a.priv, b.pub);
  const auto s2 = ecdh_shared_secret(b.priv, a.pub);
  ASSERT_TRUE(s1 && s2);
  EXPECT_EQ(*s1, *s2);
  EcPublicKey junk{};
  junk[0] = 4;
  EXPECT_FALSE(ecdh_shared_secret(a.priv, junk));
}

TEST(Rng, TranscriptIsLittleEndianWords) {
  Rng a(99);
  std::mt19937_64 ref(99);
  const auto bytes = a.bytes<12>();
  const std::uint64_t w0 = ref();
  const std::uint64_t w1 = ref();
  for (int i = 0; i < 8; ++i) EXPECT_EQ(bytes[i], static_cast<std::uint8_t>(w0 >> (8 * i)));
  for (int i = 0; i < 4; ++i) EXPECT_EQ(bytes[8 + i], static_cast<std::uint8_t>(w1 >> (8 * i)));
}

}  // namespace
}  // namespace tdxsim::crypto
