#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "hcfctx/crypto/secure_logsum.hpp"

using namespace hcfctx;
using namespace hcfctx::crypto;

namespace {

const KeyPair& tiny_key() {
  static const KeyPair kp = keypair_from_primes(5, 7);
  return kp;
}

const KeyPair& key512() {
  static const KeyPair kp = [] {
    Csprng g = Csprng::seeded(42, "test-key-512");
    return keygen(512, g);
  }();
  return kp;
}

struct LogsumRig {
  const KeyPair& kp;
  FixedPointCodec codec;
  Csprng holder_rng, keyholder_rng;
  LogsumKeyholder keyholder;
  LogsumHolder holder;

  LogsumRig(const KeyPair& k, std::uint64_t c, std::uint64_t seed)
      : kp(k),
        codec(k.pub.n, c),
        holder_rng(Csprng::seeded(seed, "holder")),
        keyholder_rng(Csprng::seeded(seed, "keyholder")),
        keyholder(kp, codec, keyholder_rng),
        holder(kp.pub, codec, holder_rng, LogsumConfig::for_codec(c)) {}

  Ciphertext enc(long double r) { return encrypt_real(kp.pub, codec, r, holder_rng); }
  long double dec(const Ciphertext& c) { return decrypt_real(kp, codec, c); }

  long double logsum(const std::vector<long double>& logs, const std::vector<double>& w) {
    std::vector<Ciphertext> in;
    for (auto l : logs) in.push_back(enc(l));
    return dec(holder.logsum(keyholder, in, w));
  }
};

// The nearest value below r that the codec represents exactly.
long double codec_floor(double r, std::uint64_t c) {
  return std::floor(static_cast<long double>(r) * c) / static_cast<long double>(c);
}

long double plain_logsum(const std::vector<long double>& logs, const std::vector<double>& w) {
  const long double m = *std::max_element(logs.begin(), logs.end());
  long double s = 0;
  for (std::size_t i = 0; i < logs.size(); ++i) s += w[i] * std::exp(logs[i] - m);
  return m + std::log(s);
}

}  // namespace

TEST(Keys, TextbookInstance) {
  const auto& kp = tiny_key();
  EXPECT_EQ(kp.pub.n, 35);
  EXPECT_EQ(kp.pub.g, 36);
  EXPECT_EQ(kp.priv.lambda, 12);
  EXPECT_THROW(keypair_from_primes(5, 5), RangeError);
  EXPECT_THROW(keypair_from_primes(5, 9), RangeError);
  EXPECT_THROW(keypair_from_primes(3, 7), RangeError);  // gcd(21, 12) = 3
}

TEST(Keys, GenerationLengthsAndDeterminism) {
  for (std::size_t bits : {16u, 64u, 256u, 512u, 1024u}) {
    Csprng a = Csprng::seeded(7, "kg"), b = Csprng::seeded(7, "kg");
    const KeyPair k1 = keygen(bits, a), k2 = keygen(bits, b);
    EXPECT_EQ(k1.pub.bits(), bits);
    EXPECT_EQ(k1.pub.n, k2.pub.n);
    EXPECT_EQ(mpz_sizeinbase(k1.priv.p.get_mpz_t(), 2), bits / 2);
  }
  Csprng g = Csprng::seeded(1);
  EXPECT_THROW(keygen(8, g), RangeError);
}

TEST(Paillier, ExhaustiveRoundTripAndLawsAtN35) {
  const auto& kp = tiny_key();
  Csprng g = Csprng::seeded(3, "n35");
  for (int m = 0; m < 35; ++m) {
    const Ciphertext c = encrypt(kp.pub, m, g);
    ASSERT_GT(c.value, 0);
    ASSERT_LT(c.value, kp.pub.n2);
    ASSERT_EQ(decrypt(kp, c), m);
    ASSERT_EQ(decrypt(kp, negate_cipher(kp.pub, c)), (35 - m) % 35);
    for (int b = 0; b < 35; ++b) {
      const Ciphertext cb = encrypt(kp.pub, b, g);
      ASSERT_EQ(decrypt(kp, add_cipher(kp.pub, c, cb)), (m + b) % 35);
      ASSERT_EQ(decrypt(kp, scalar_mul(kp.pub, c, b)), (m * b) % 35);
      ASSERT_EQ(decrypt(kp, add_plain(kp.pub, c, b)), (m + b) % 35);
    }
  }
}

TEST(Paillier, TextbookExamples) {
  const auto& kp = tiny_key();
  Csprng g = Csprng::seeded(4);
  EXPECT_EQ(decrypt(kp, encrypt(kp.pub, 0, g)), 0);
  EXPECT_EQ(decrypt(kp, add_cipher(kp.pub, encrypt(kp.pub, 3, g), encrypt(kp.pub, 4, g))), 7);
  EXPECT_EQ(decrypt(kp, scalar_mul(kp.pub, encrypt(kp.pub, 3, g), 5)), 15);
  EXPECT_EQ(decrypt(kp, negate_cipher(kp.pub, encrypt(kp.pub, 12, g))), 23);
  const Ciphertext c = encrypt(kp.pub, 12, g);
  EXPECT_EQ(decrypt(kp, negate_cipher(kp.pub, c)), decrypt(kp, scalar_mul(kp.pub, c, 34)));
}

TEST(Paillier, RandomLawsAt512Bits) {
  const auto& kp = key512();
  Csprng g = Csprng::seeded(5, "laws");
  const mpz_class& n = kp.pub.n;
  for (int i = 0; i < 10000; ++i) {
    const mpz_class a = g.below(n), b = g.below(n), s = g.below(n);
    const Ciphertext ca = encrypt(kp.pub, a, g), cb = encrypt(kp.pub, b, g);
    switch (i % 3) {
      case 0:
        ASSERT_EQ(decrypt(kp, add_cipher(kp.pub, ca, cb)), mpz_class((a + b) % n));
        break;
      case 1:
        ASSERT_EQ(decrypt(kp, scalar_mul(kp.pub, ca, s)), mpz_class((a * s) % n));
        break;
      default:
        ASSERT_EQ(decrypt(kp, negate_cipher(kp.pub, ca)), mpz_class((n - a) % n));
    }
  }
}

TEST(Paillier, ProbabilisticEncryption) {
  const auto& kp = key512();
  Csprng g = Csprng::seeded(6);
  const Ciphertext a = encrypt(kp.pub, 5, g), b = encrypt(kp.pub, 5, g);
  EXPECT_NE(a.value, b.value);
  EXPECT_EQ(decrypt(kp, a), 5);
  EXPECT_EQ(decrypt(kp, b), 5);
}

TEST(Paillier, Errors) {
  const auto& kp = key512();
  const auto& tiny = tiny_key();
  Csprng g = Csprng::seeded(7);
  EXPECT_THROW(encrypt(kp.pub, kp.pub.n, g), RangeError);
  EXPECT_THROW(encrypt(kp.pub, -1, g), RangeError);
  const Ciphertext a = encrypt(kp.pub, 1, g);
  const Ciphertext t = encrypt(tiny.pub, 1, g);
  EXPECT_THROW(decrypt(tiny, a), KeyError);
  EXPECT_THROW(add_cipher(kp.pub, a, t), KeyError);
  EXPECT_THROW(scalar_mul(tiny.pub, a, 2), KeyError);
  Ciphertext b = a;
  b.scale = 2;
  EXPECT_THROW(add_cipher(kp.pub, a, b), RangeError);
}

TEST(Paillier, Serialization) {
  const auto& kp = key512();
  Csprng g = Csprng::seeded(8);
  const Ciphertext c = encrypt(kp.pub, 99, g);
  const Bytes b = serialize(c);
  EXPECT_EQ(deserialize_ciphertext(b, kp.pub), c);
  std::size_t pos = 0;
  EXPECT_EQ(get_prefixed(b, pos), c.value);
  EXPECT_EQ(deserialize_public_key(serialize(kp.pub)).n, kp.pub.n);
  const KeyPair back = deserialize_keypair(serialize(kp));
  EXPECT_EQ(decrypt(back, c), 99);
  Bytes cut(b.begin(), b.end() - 1);
  EXPECT_THROW(deserialize_ciphertext(cut, kp.pub), ParseError);
  EXPECT_EQ(key_id_of(kp.pub.n), kp.pub.id);
}

TEST(Csprng, SeededStreamsAreReproducibleAndLabelled) {
  Csprng a = Csprng::seeded(1, "x"), b = Csprng::seeded(1, "x"), c = Csprng::seeded(1, "y");
  for (int i = 0; i < 100; ++i) {
    const auto u = a.next_u64();
    EXPECT_EQ(u, b.next_u64());
    EXPECT_NE(u, c.next_u64());
  }
  Csprng os = Csprng::os_entropy();
  EXPECT_FALSE(os.is_seeded());
  EXPECT_NE(os.next_u64(), os.next_u64());
  for (int i = 0; i < 1000; ++i) {
    const mpz_class x = a.below(1000);
    EXPECT_GE(x, 0);
    EXPECT_LT(x, 1000);
  }
}

TEST(Codec, Examples) {
  const auto& kp = key512();
  const FixedPointCodec big(kp.pub.n, 1000000);
  EXPECT_EQ(big.encode(0.0L), 0);
  const FixedPointCodec ten(kp.pub.n, 10);
  EXPECT_EQ(ten.encode(-2.0L), kp.pub.n - 20);
  EXPECT_EQ(ten.decode(kp.pub.n - 20), -2.0L);
  EXPECT_THROW(ten.encode(std::nanl("")), RangeError);
  const FixedPointCodec tiny(tiny_key().pub.n, 1);
  EXPECT_EQ(tiny.encode(17.0L), 17);
  EXPECT_EQ(tiny.encode(-17.0L), 18);
  EXPECT_THROW(tiny.encode(18.0L), RangeError);
  EXPECT_THROW(tiny.encode(-18.0L), RangeError);
}

TEST(Codec, RandomRoundTripWithinOneOverC) {
  const auto& kp = key512();
  Csprng g = Csprng::seeded(9);
  for (std::uint64_t c : {10ULL, 1000ULL, 1000000ULL}) {
    const FixedPointCodec codec(kp.pub.n, c);
    for (int i = 0; i < 10000; ++i) {
      const long double r = (g.uniform() - 0.5) * 2.0e4;
      const long double back = codec.decode(codec.encode(r));
      ASSERT_LE(std::fabs(back - r), 1.0L / static_cast<long double>(c) + 1e-12L) << r;
      const Ciphertext ct = encrypt_real(kp.pub, codec, r, g);
      if (i % 100 == 0) {
        ASSERT_LE(std::fabs(decrypt_real(kp, codec, ct) - r), 1.0L / static_cast<long double>(c) + 1e-12L);
      }
    }
  }
}

TEST(Codec, EncodeOfDecodeIsIdentity) {
  const auto& kp = key512();
  const FixedPointCodec codec(kp.pub.n, 1000);
  Csprng g = Csprng::seeded(10);
  for (int i = 0; i < 1000; ++i) {
    mpz_class v = g.below(2000000) - 1000000;
    const mpz_class x = codec.to_residue(v);
    EXPECT_EQ(codec.to_signed(x), v);
  }
}

TEST(SecureLogsum, IdentityCase) {
  LogsumRig rig(key512(), 1000000, 11);
  for (long double l : {-3.25L, 0.0L, 12.5L, -400.0L}) {
    EXPECT_NEAR(static_cast<double>(rig.logsum({l}, {1.0})), static_cast<double>(l), 2e-6);
  }
}

TEST(SecureLogsum, ClosedFormPair) {
  LogsumRig rig(key512(), 1000000, 12);
  EXPECT_NEAR(static_cast<double>(rig.logsum({1.0L, 1.0L}, {1.0, 1.0})), 1.0 + std::log(2.0), 4e-6);
}

TEST(SecureLogsum, RandomInstancesWithinDocumentedBound) {
  LogsumRig rig(key512(), 1000000, 13);
  Csprng g = Csprng::seeded(14);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 1 + trial % 6;
    std::vector<long double> logs;
    std::vector<double> w;
    for (std::size_t i = 0; i < n; ++i) {
      logs.push_back(static_cast<long double>(codec_floor(-200.0 * g.uniform(), 1000000)));
      w.push_back(0.05 + g.uniform());
    }
    const double sum_a = std::accumulate(w.begin(), w.end(), 0.0);
    const double a_min = *std::min_element(w.begin(), w.end());
    const double err = std::fabs(static_cast<double>(rig.logsum(logs, w) - plain_logsum(logs, w)));
    EXPECT_LE(err, logsum_error_bound(1000000, n, sum_a, a_min)) << trial;
  }
}

TEST(SecureLogsum, ForwardStepMatchesPlaintext) {
  LogsumRig rig(key512(), 1000000, 15);
  Csprng g = Csprng::seeded(16);
  const double rho[2][2] = {{0.7, 0.3}, {0.2, 0.8}};
  for (int trial = 0; trial < 10; ++trial) {
    const std::vector<long double> la{-50.0L * g.uniform() - 1, -50.0L * g.uniform() - 1};
    const long double lmu = -3.0L * g.uniform();
    for (int k = 0; k < 2; ++k) {
      const std::vector<double> w{rho[0][k], rho[1][k]};
      std::vector<Ciphertext> in{rig.enc(la[0]), rig.enc(la[1])};
      Ciphertext next = add_cipher(rig.kp.pub, rig.holder.logsum(rig.keyholder, in, w), rig.enc(lmu));
      const long double alpha = std::exp(rig.dec(next));
      const long double ref = std::exp(plain_logsum(la, w) + lmu);
      EXPECT_LE(std::fabs(alpha - ref) / ref, 0.02L);
      EXPECT_LE(std::fabs(alpha - ref) / ref, 1e-5L);
    }
  }
}

TEST(SecureLogsum, ErrorShrinksWithC) {
  double prev = 1e9;
  for (std::uint64_t c : {1000ULL, 10000ULL, 1000000ULL}) {
    LogsumRig rig(key512(), c, 17);
    Csprng g = Csprng::seeded(18);
    double worst = 0;
    for (int trial = 0; trial < 30; ++trial) {
      const std::vector<long double> logs{-10.0L * g.uniform(), -10.0L * g.uniform(), -10.0L * g.uniform()};
      const std::vector<double> w{0.2 + g.uniform(), 0.2 + g.uniform(), 0.2 + g.uniform()};
      worst = std::max(worst, std::fabs(static_cast<double>(rig.logsum(logs, w) - plain_logsum(logs, w))));
    }
    EXPECT_LT(worst, prev);
    prev = worst;
  }
}

TEST(SecureLogsum, MasksAreFreshAndUniform) {
  LogsumRig rig(key512(), 1000000, 19);
  for (int i = 0; i < 400; ++i) rig.logsum({-1.0L * i, -2.0L}, {1.0, 1.0});
  std::set<mpz_class> seen;
  std::vector<double> u;
  for (const auto& m : rig.holder.masks()) {
    if (m.kind != "common") continue;
    EXPECT_TRUE(seen.insert(m.value).second);
    mpf_class f(m.value, 128);
    mpf_class scale(1, 128);
    mpf_mul_2exp(scale.get_mpf_t(), scale.get_mpf_t(), m.bits);
    const mpf_class q = f / scale;
    u.push_back(q.get_d());
  }
  ASSERT_EQ(u.size(), 400u);
  std::sort(u.begin(), u.end());
  double d = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double n = static_cast<double>(u.size());
    d = std::max({d, std::fabs(u[i] - static_cast<double>(i) / n), std::fabs(u[i] - static_cast<double>(i + 1) / n)});
  }
  EXPECT_LT(d, 1.63 / std::sqrt(400.0));  // KS at the 1% level
  // Keyholder views of the linearize round are the masked inputs, never the logs.
  for (const auto& v : rig.keyholder.views()) {
    if (v.kind == "linearize") {
      EXPECT_GT(abs(v.value), mpz_class(1) << 60);
    }
  }
}

TEST(SecureLogsum, RangeAndOverflowErrors) {
  LogsumRig rig(key512(), 1000000, 20);
  EXPECT_THROW(rig.logsum({}, {}), RangeError);
  EXPECT_THROW(rig.logsum({1.0L}, {-1.0}), RangeError);
  EXPECT_THROW(rig.logsum({1.0L}, {1e-9}), OverflowError);
  EXPECT_THROW(rig.logsum({1.0L, 2.0L}, {1.0}), RangeError);
  Csprng g = Csprng::seeded(21);
  const KeyPair small = keygen(96, g);
  const FixedPointCodec codec(small.pub.n, 1000000);
  EXPECT_THROW(LogsumHolder(small.pub, codec, g, LogsumConfig::for_codec(1000000)), OverflowError);
  // A blinded argument beyond n/2 is rejected by the keyholder.
  Csprng kr = Csprng::seeded(22);
  LogsumKeyholder kh(key512(), rig.codec, kr);
  EXPECT_THROW(kh.log_round(encrypt(key512().pub, key512().pub.n - 1, kr)), OverflowError);
  EXPECT_THROW(kh.log_round(encrypt(key512().pub, 0, kr)), OverflowError);
}
