#pragma once

#include <gmpxx.h>
#include <sodium.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace hcfctx::crypto {

inline void ensure_sodium() {
  static const bool ok = sodium_init() >= 0;
  if (!ok) throw std::runtime_error("libsodium initialization failed");
}

/// Cryptographic generator. Seeded instances produce a ChaCha20 keystream
/// keyed by BLAKE2b(seed, label) so protocol runs are reproducible; unseeded
/// instances read the operating system's entropy pool.
class Csprng {
 public:
  static Csprng seeded(std::uint64_t seed, const std::string& label = "") {
    ensure_sodium();
    Csprng g;
    g.seeded_ = true;
    std::string material = std::to_string(seed) + '/' + label;
    crypto_generichash(g.key_.data(), g.key_.size(),
                       reinterpret_cast<const unsigned char*>(material.data()), material.size(),
                       nullptr, 0);
    return g;
  }

  static Csprng os_entropy() {
    ensure_sodium();
    return Csprng();
  }

  bool is_seeded() const { return seeded_; }

  void fill(unsigned char* out, std::size_t len) {
    if (!seeded_) {
      randombytes_buf(out, len);
      return;
    }
    while (len > 0) {
      if (pos_ == block_.size()) refill();
      const std::size_t take = std::min(len, block_.size() - pos_);
      std::memcpy(out, block_.data() + pos_, take);
      pos_ += take;
      out += take;
      len -= take;
    }
  }

  std::uint64_t next_u64() {
    unsigned char b[8];
    fill(b, 8);
    std::uint64_t x = 0;
    for (unsigned char c : b) x = (x << 8) | c;
    return x;
  }

  // Uniform in [0, 2^bits).
  mpz_class bits(std::size_t nbits) {
    if (nbits == 0) return 0;
    std::vector<unsigned char> buf((nbits + 7) / 8);
    fill(buf.data(), buf.size());
    const std::size_t extra = buf.size() * 8 - nbits;
    buf[0] &= static_cast<unsigned char>(0xFFu >> extra);
    mpz_class x;
    mpz_import(x.get_mpz_t(), buf.size(), 1, 1, 1, 0, buf.data());
    return x;
  }

  // Uniform in [0, n) by rejection.
  mpz_class below(const mpz_class& n) {
    if (n <= 0) throw std::invalid_argument("below() needs n > 0");
    const std::size_t nb = mpz_sizeinbase(n.get_mpz_t(), 2);
    for (;;) {
      mpz_class x = bits(nb);
      if (x < n) return x;
    }
  }

  // Uniform in [lo, hi).
  mpz_class range(const mpz_class& lo, const mpz_class& hi) { return lo + below(hi - lo); }

  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

 private:
  Csprng() = default;

  void refill() {
    std::array<unsigned char, crypto_stream_chacha20_NONCEBYTES> nonce{};
    block_.fill(0);
    crypto_stream_chacha20_xor_ic(block_.data(), block_.data(), block_.size(), nonce.data(),
                                  counter_, key_.data());
    counter_ += block_.size() / 64;
    pos_ = 0;
  }

  bool seeded_ = false;
  std::array<unsigned char, crypto_stream_chacha20_KEYBYTES> key_{};
  std::array<unsigned char, 512> block_{};
  std::size_t pos_ = 512;
  std::uint64_t counter_ = 0;
};

}  // namespace hcfctx::crypto
