#pragma once

#include <gmpxx.h>
#include <sodium.h>

#include <cstdint>
#include <string>
#include <vector>

#include "hcfctx/crypto/csprng.hpp"
#include "hcfctx/errors.hpp"

namespace hcfctx::crypto {

using Bytes = std::vector<unsigned char>;

inline Bytes to_bytes(const mpz_class& x) {
  if (x < 0) throw RangeError("cannot serialize a negative integer");
  std::size_t count = 0;
  Bytes out((mpz_sizeinbase(x.get_mpz_t(), 2) + 7) / 8);
  if (x != 0) mpz_export(out.data(), &count, 1, 1, 1, 0, x.get_mpz_t());
  out.resize(count);
  return out;
}

inline mpz_class from_bytes(const unsigned char* data, std::size_t len) {
  mpz_class x;
  if (len > 0) mpz_import(x.get_mpz_t(), len, 1, 1, 1, 0, data);
  return x;
}

// uint32 big-endian length followed by the big-endian magnitude.
inline void put_prefixed(Bytes& out, const mpz_class& x) {
  const Bytes mag = to_bytes(x);
  const auto n = static_cast<std::uint32_t>(mag.size());
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>(n >> s));
  out.insert(out.end(), mag.begin(), mag.end());
}

inline mpz_class get_prefixed(const Bytes& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw ParseError("truncated length prefix");
  std::uint32_t n = 0;
  for (int i = 0; i < 4; ++i) n = (n << 8) | in[pos + static_cast<std::size_t>(i)];
  pos += 4;
  if (pos + n > in.size()) throw ParseError("truncated integer");
  mpz_class x = from_bytes(in.data() + pos, n);
  pos += n;
  return x;
}

inline std::uint64_t key_id_of(const mpz_class& n) {
  ensure_sodium();
  const Bytes b = to_bytes(n);
  unsigned char h[8];
  crypto_generichash(h, sizeof h, b.data(), b.size(), nullptr, 0);
  std::uint64_t id = 0;
  for (unsigned char c : h) id = (id << 8) | c;
  return id;
}

/// Public key with g = n + 1.
struct PublicKey {
  mpz_class n;
  mpz_class n2;
  mpz_class g;
  std::uint64_t id = 0;

  static PublicKey from_modulus(const mpz_class& n) {
    PublicKey pk;
    pk.n = n;
    pk.n2 = n * n;
    pk.g = n + 1;
    pk.id = key_id_of(n);
    return pk;
  }

  std::size_t bits() const { return mpz_sizeinbase(n.get_mpz_t(), 2); }
  bool operator==(const PublicKey& o) const { return n == o.n; }
};

/// Factorization plus CRT decryption constants. lambda is the Carmichael
/// value lcm(p-1, q-1).
struct PrivateKey {
  mpz_class p, q;
  mpz_class p2, q2;
  mpz_class lambda;
  mpz_class hp, hq;     // L_p(g^{p-1} mod p^2)^{-1} mod p, same for q
  mpz_class q_inv_p;    // q^{-1} mod p
};

struct KeyPair {
  PublicKey pub;
  PrivateKey priv;
};

struct Ciphertext {
  mpz_class value;
  std::uint64_t key_id = 0;
  // Fixed-point scale exponent of the plaintext (value represents x * c^scale).
  int scale = 1;

  bool operator==(const Ciphertext& o) const {
    return value == o.value && key_id == o.key_id && scale == o.scale;
  }
};

/// Per-thread tallies of Paillier operations.
struct OpCounts {
  std::uint64_t encrypt = 0, decrypt = 0, add = 0, scalar_mul = 0, negate = 0, add_plain = 0;

  std::uint64_t total() const { return encrypt + decrypt + add + scalar_mul + negate + add_plain; }
  OpCounts operator-(const OpCounts& o) const {
    return {encrypt - o.encrypt, decrypt - o.decrypt, add - o.add,
            scalar_mul - o.scalar_mul, negate - o.negate, add_plain - o.add_plain};
  }
};

inline OpCounts& op_counts() {
  thread_local OpCounts c;
  return c;
}

namespace detail {

inline mpz_class L(const mpz_class& x, const mpz_class& d) { return (x - 1) / d; }

inline mpz_class invert(const mpz_class& a, const mpz_class& m) {
  mpz_class r;
  if (mpz_invert(r.get_mpz_t(), a.get_mpz_t(), m.get_mpz_t()) == 0) {
    throw RangeError("value is not invertible");
  }
  return r;
}

inline mpz_class powm(const mpz_class& b, const mpz_class& e, const mpz_class& m) {
  mpz_class r;
  mpz_powm(r.get_mpz_t(), b.get_mpz_t(), e.get_mpz_t(), m.get_mpz_t());
  return r;
}

}  // namespace detail

inline KeyPair keypair_from_primes(const mpz_class& p, const mpz_class& q) {
  if (p == q) throw RangeError("p and q must differ");
  if (mpz_probab_prime_p(p.get_mpz_t(), 30) == 0 || mpz_probab_prime_p(q.get_mpz_t(), 30) == 0) {
    throw RangeError("p and q must be prime");
  }
  const mpz_class n = p * q;
  mpz_class g;
  const mpz_class phi = (p - 1) * (q - 1);
  mpz_gcd(g.get_mpz_t(), n.get_mpz_t(), phi.get_mpz_t());
  if (g != 1) throw RangeError("gcd(pq, (p-1)(q-1)) must be 1");
  KeyPair kp;
  kp.pub = PublicKey::from_modulus(n);
  auto& s = kp.priv;
  s.p = p;
  s.q = q;
  s.p2 = p * p;
  s.q2 = q * q;
  mpz_lcm(s.lambda.get_mpz_t(), mpz_class(p - 1).get_mpz_t(), mpz_class(q - 1).get_mpz_t());
  s.hp = detail::invert(detail::L(detail::powm(kp.pub.g, p - 1, s.p2), p), p);
  s.hq = detail::invert(detail::L(detail::powm(kp.pub.g, q - 1, s.q2), q), q);
  s.q_inv_p = detail::invert(q, p);
  return kp;
}

/// Primes of bits/2 bits each with the top two bits set, so n has `bits` bits.
inline KeyPair keygen(std::size_t bits, Csprng& rng) {
  if (bits < 16) throw RangeError("key length must be at least 16 bits");
  const std::size_t half = bits / 2;
  auto prime = [&](std::size_t nb) {
    for (;;) {
      mpz_class x = rng.bits(nb);
      mpz_setbit(x.get_mpz_t(), nb - 1);
      mpz_setbit(x.get_mpz_t(), nb - 2);
      mpz_setbit(x.get_mpz_t(), 0);
      mpz_class pr;
      mpz_nextprime(pr.get_mpz_t(), x.get_mpz_t());
      if (mpz_sizeinbase(pr.get_mpz_t(), 2) == nb) return pr;
    }
  };
  for (;;) {
    const mpz_class p = prime(half);
    const mpz_class q = prime(bits - half);
    if (p == q) continue;
    mpz_class g;
    const mpz_class n = p * q, phi = (p - 1) * (q - 1);
    mpz_gcd(g.get_mpz_t(), n.get_mpz_t(), phi.get_mpz_t());
    if (g != 1) continue;
    return keypair_from_primes(p, q);
  }
}

inline void check_key(const PublicKey& pk, const Ciphertext& c) {
  if (c.key_id != pk.id) throw KeyError("ciphertext was produced under a different key");
}

/// E(m) = (1 + m n) r^n mod n^2 with fresh r coprime to n.
inline Ciphertext encrypt(const PublicKey& pk, const mpz_class& m, Csprng& rng, int scale = 1) {
  if (m < 0 || m >= pk.n) throw RangeError("plaintext outside Z_n");
  mpz_class r, g;
  do {
    r = rng.range(1, pk.n);
    mpz_gcd(g.get_mpz_t(), r.get_mpz_t(), pk.n.get_mpz_t());
  } while (g != 1);
  ++op_counts().encrypt;
  Ciphertext c;
  c.value = ((1 + m * pk.n) % pk.n2) * detail::powm(r, pk.n, pk.n2) % pk.n2;
  c.key_id = pk.id;
  c.scale = scale;
  return c;
}

inline mpz_class decrypt(const KeyPair& kp, const Ciphertext& c) {
  check_key(kp.pub, c);
  if (c.value <= 0 || c.value >= kp.pub.n2) throw RangeError("ciphertext outside Z_{n^2}");
  ++op_counts().decrypt;
  const auto& s = kp.priv;
  const mpz_class mp = detail::L(detail::powm(c.value, s.p - 1, s.p2), s.p) * s.hp % s.p;
  const mpz_class mq = detail::L(detail::powm(c.value, s.q - 1, s.q2), s.q) * s.hq % s.q;
  mpz_class u = (mp - mq) * s.q_inv_p % s.p;
  if (u < 0) u += s.p;
  return mq + u * s.q;
}

inline Ciphertext add_cipher(const PublicKey& pk, const Ciphertext& a, const Ciphertext& b) {
  check_key(pk, a);
  check_key(pk, b);
  if (a.scale != b.scale) throw RangeError("cannot add ciphertexts of different scale");
  ++op_counts().add;
  return {a.value * b.value % pk.n2, pk.id, a.scale};
}

/// Plaintext multiplied by s mod n; the scale is left unchanged.
inline Ciphertext scalar_mul(const PublicKey& pk, const Ciphertext& a, const mpz_class& s) {
  check_key(pk, a);
  mpz_class e = s % pk.n;
  if (e < 0) e += pk.n;
  ++op_counts().scalar_mul;
  return {detail::powm(a.value, e, pk.n2), pk.id, a.scale};
}

/// E(-a) through the modular inverse of the ciphertext (same result as
/// scalar_mul by n-1).
inline Ciphertext negate_cipher(const PublicKey& pk, const Ciphertext& a) {
  check_key(pk, a);
  ++op_counts().negate;
  return {detail::invert(a.value, pk.n2), pk.id, a.scale};
}

/// E(a + k) for a public k (taken mod n).
inline Ciphertext add_plain(const PublicKey& pk, const Ciphertext& a, const mpz_class& k) {
  check_key(pk, a);
  mpz_class e = k % pk.n;
  if (e < 0) e += pk.n;
  ++op_counts().add_plain;
  return {a.value * ((1 + e * pk.n) % pk.n2) % pk.n2, pk.id, a.scale};
}

inline Bytes serialize(const Ciphertext& c) {
  Bytes out;
  put_prefixed(out, c.value);
  return out;
}

inline Ciphertext deserialize_ciphertext(const Bytes& b, const PublicKey& pk, int scale = 1) {
  std::size_t pos = 0;
  Ciphertext c{get_prefixed(b, pos), pk.id, scale};
  if (pos != b.size()) throw ParseError("trailing bytes after ciphertext");
  return c;
}

inline Bytes serialize(const PublicKey& pk) {
  Bytes out;
  put_prefixed(out, pk.n);
  return out;
}

inline PublicKey deserialize_public_key(const Bytes& b) {
  std::size_t pos = 0;
  const mpz_class n = get_prefixed(b, pos);
  if (pos != b.size()) throw ParseError("trailing bytes after public key");
  return PublicKey::from_modulus(n);
}

inline Bytes serialize(const KeyPair& kp) {
  Bytes out;
  put_prefixed(out, kp.priv.p);
  put_prefixed(out, kp.priv.q);
  return out;
}

inline KeyPair deserialize_keypair(const Bytes& b) {
  std::size_t pos = 0;
  const mpz_class p = get_prefixed(b, pos);
  const mpz_class q = get_prefixed(b, pos);
  if (pos != b.size()) throw ParseError("trailing bytes after key pair");
  return keypair_from_primes(p, q);
}

}  // namespace hcfctx::crypto
