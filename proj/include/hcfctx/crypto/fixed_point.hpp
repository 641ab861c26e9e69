#pragma once

#include <gmpxx.h>

#include <cmath>
#include <cstdint>

#include "hcfctx/crypto/paillier.hpp"
#include "hcfctx/errors.hpp"

namespace hcfctx::crypto {

inline double mpz_log(const mpz_class& x) {
  if (x <= 0) throw RangeError("log of a non-positive integer");
  long exp = 0;
  const double mant = mpz_get_d_2exp(&exp, x.get_mpz_t());
  return std::log(mant) + static_cast<double>(exp) * std::log(2.0);
}

/// Scaled-integer encoding of reals in Z_n: encode(r) = floor(c^e r) mod n,
/// where e is the scale exponent; residues above (n-1)/2 decode as negative.
class FixedPointCodec {
 public:
  FixedPointCodec(const mpz_class& n, std::uint64_t c) : n_(n), c_(c), half_((n - 1) / 2) {
    if (c < 1) throw RangeError("scaling factor must be >= 1");
  }

  const mpz_class& modulus() const { return n_; }
  std::uint64_t c() const { return c_; }
  mpz_class c_pow(int e) const {
    mpz_class r;
    mpz_ui_pow_ui(r.get_mpz_t(), c_, static_cast<unsigned long>(e));
    return r;
  }

  // Largest |r| accepted at scale exponent e.
  long double max_abs(int e = 1) const {
    return static_cast<long double>(mpz_get_d(half_.get_mpz_t())) /
           static_cast<long double>(mpz_get_d(c_pow(e).get_mpz_t()));
  }

  /// Signed integer floor(c^e r), range-checked.
  mpz_class scaled(long double r, int e = 1) const {
    if (!std::isfinite(static_cast<double>(r))) throw RangeError("cannot encode a non-finite value");
    const mpz_class ce = c_pow(e);
    mpz_class v;
    if (e == 1 && c_ <= (1ULL << 53)) {
      const long double x = std::floor(r * static_cast<long double>(c_));
      if (std::fabs(x) > 9.0e18L) {
        mpf_class f(static_cast<double>(x), 128);
        v = mpz_class(f);
      } else {
        v = static_cast<long>(x);
      }
    } else {
      mpf_class f(static_cast<double>(r), 256);
      f *= mpf_class(ce, 256);
      mpf_floor(f.get_mpf_t(), f.get_mpf_t());
      v = mpz_class(f);
    }
    if (v > half_ || v < -half_) {
      throw RangeError("value outside the representable fixed-point range");
    }
    return v;
  }

  /// Residue in Z_n for a signed integer.
  mpz_class to_residue(const mpz_class& v) const {
    if (v > half_ || v < -half_) throw OverflowError("signed value outside the plaintext range");
    mpz_class r = v % n_;
    if (r < 0) r += n_;
    return r;
  }

  /// Signed integer from a residue in Z_n.
  mpz_class to_signed(const mpz_class& x) const {
    if (x < 0 || x >= n_) throw RangeError("residue outside Z_n");
    return x > half_ ? mpz_class(x - n_) : x;
  }

  mpz_class encode(long double r, int e = 1) const { return to_residue(scaled(r, e)); }

  long double decode(const mpz_class& x, int e = 1) const {
    const mpz_class s = to_signed(x);
    mpf_class f(s, 256);
    f /= mpf_class(c_pow(e), 256);
    return static_cast<long double>(f.get_d());
  }

 private:
  mpz_class n_;
  std::uint64_t c_;
  mpz_class half_;
};

inline Ciphertext encrypt_real(const PublicKey& pk, const FixedPointCodec& codec, long double r,
                               Csprng& rng) {
  return encrypt(pk, codec.encode(r), rng, 1);
}

inline long double decrypt_real(const KeyPair& kp, const FixedPointCodec& codec,
                                const Ciphertext& c) {
  return codec.decode(decrypt(kp, c), c.scale);
}

}  // namespace hcfctx::crypto
