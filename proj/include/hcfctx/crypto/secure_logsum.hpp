#pragma once

#include <gmpxx.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hcfctx/crypto/csprng.hpp"
#include "hcfctx/crypto/fixed_point.hpp"
#include "hcfctx/crypto/paillier.hpp"
#include "hcfctx/errors.hpp"

namespace hcfctx::crypto {

// Two-party logsum. The holder owns encrypted logs E'[l_1..l_n]; the
// keyholder owns the private key. The exchange is:
//
//   1. holder draws a common mask S, sends E[X_i - S] (X_i = floor(c l_i));
//      keyholder decrypts y_i, takes m = max y_i and returns
//      E[floor(c exp((y_i - m)/c))] and E[m]; holder forms E[m + S].
//   2. holder computes W = sum floor(c a_i) z_i (scale c^2), draws a
//      multiplicative blind nu and sends E[nu W]; keyholder returns
//      E[floor(c log(nu W))].
//   3. holder removes floor(c log nu), the c^2 scale and adds the offset.
//
// The keyholder sees values masked by S (common to one invocation) and the
// blinded sum nu W.

struct LinearizeReply {
  std::vector<Ciphertext> z;  // floor(c exp((y_i - m)/c))
  Ciphertext max;             // E[m]
};

class LogsumPeer {
 public:
  virtual ~LogsumPeer() = default;
  // z_i carries `units` powers of c.
  virtual LinearizeReply linearize(const std::vector<Ciphertext>& masked, int units) = 0;
  virtual Ciphertext log_round(const Ciphertext& blinded) = 0;
};

struct KeyholderView {
  std::string kind;  // "linearize" or "log"
  std::uint64_t invocation = 0;
  mpz_class value;   // signed plaintext as seen by the keyholder
};

class LogsumKeyholder : public LogsumPeer {
 public:
  LogsumKeyholder(const KeyPair& kp, const FixedPointCodec& codec, Csprng& rng)
      : kp_(kp), codec_(codec), rng_(rng) {}

  LinearizeReply linearize(const std::vector<Ciphertext>& masked, int units) override {
    if (masked.empty()) throw ProtocolError("empty linearize request");
    if (units < 1 || units > 2) throw ProtocolError("linearize precision must be c or c^2");
    ++invocations_;
    std::vector<mpz_class> y;
    y.reserve(masked.size());
    for (const auto& c : masked) {
      if (c.scale != 1) throw ProtocolError("linearize expects scale-1 inputs");
      y.push_back(codec_.to_signed(decrypt(kp_, c)));
      if (record_views_) views_.push_back({"linearize", invocations_, y.back()});
    }
    const mpz_class m = *std::max_element(y.begin(), y.end());
    LinearizeReply r;
    const double c = static_cast<double>(codec_.c());
    const double cu = units == 1 ? c : c * c;
    for (const auto& yi : y) {
      const mpz_class d = yi - m;
      const double e = mpz_get_d(d.get_mpz_t()) / c;
      const double z = e < -745.0 ? 0.0 : std::floor(cu * std::exp(e));
      r.z.push_back(encrypt(kp_.pub, mpz_class(z), rng_, units));
    }
    r.max = encrypt(kp_.pub, codec_.to_residue(m), rng_, 1);
    return r;
  }

  Ciphertext log_round(const Ciphertext& blinded) override {
    const mpz_class x = decrypt(kp_, blinded);
    if (record_views_) views_.push_back({"log", invocations_, x});
    if (x == 0 || x > (kp_.pub.n - 1) / 2) {
      throw OverflowError("blinded logsum argument left the plaintext range; "
                          "increase the key length or lower c");
    }
    const long double l = static_cast<long double>(mpz_log(x));
    return encrypt(kp_.pub, codec_.encode(l), rng_, 1);
  }

  void set_record_views(bool on) { record_views_ = on; }
  const std::vector<KeyholderView>& views() const { return views_; }
  std::uint64_t invocations() const { return invocations_; }

 private:
  const KeyPair& kp_;
  const FixedPointCodec& codec_;
  Csprng& rng_;
  bool record_views_ = true;
  std::vector<KeyholderView> views_;
  std::uint64_t invocations_ = 0;
};

struct MaskRecord {
  std::string kind;  // "common", "nu" or "indicator"
  std::uint64_t invocation = 0;
  mpz_class value;
  std::size_t bits = 0;  // drawn uniformly from [0, 2^bits), or a log-uniform nu of that bit length
};

struct LogsumConfig {
  // Bound on |floor(c l)| for every input, in bits.
  std::size_t magnitude_bits = 64;
  // Statistical hiding margin added on top of the magnitude.
  std::size_t margin_bits = 40;
  // Bit lengths of the multiplicative blind are drawn uniformly in
  // [nu_min_bits, nu_max_bits].
  std::size_t nu_min_bits = 41;
  std::size_t nu_max_bits = 80;

  static LogsumConfig for_codec(std::uint64_t c) {
    LogsumConfig cfg;
    cfg.magnitude_bits = static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(c)))) + 24;
    return cfg;
  }
};

/// Upper bound on |decoded output - log sum a_i x_i| for one logsum over n
/// inputs that are themselves exact encodings; a_min is the smallest
/// (non-skipped) weight. Floors contribute 1/c each in the input, the blind,
/// the log round and the scale removal; the linear-domain floors contribute
/// a relative error of (sum a + n + 1) / (c a_min).
inline double logsum_error_bound(std::uint64_t c, std::size_t n, double sum_a, double a_min) {
  const double cd = static_cast<double>(c);
  return (4.0 + (sum_a + static_cast<double>(n) + 1.0) / a_min) / cd;
}

struct Linearized {
  std::vector<Ciphertext> z;  // ~ c^units exp(l_i - l_max), scale = units
  Ciphertext offset;          // E'[l_max], scale 1
};

class LogsumHolder {
 public:
  LogsumHolder(const PublicKey& pk, const FixedPointCodec& codec, Csprng& rng, LogsumConfig cfg)
      : pk_(pk), codec_(codec), rng_(rng), cfg_(cfg) {
    const std::size_t need = std::max(cfg.magnitude_bits + cfg.margin_bits + 2, cfg.nu_max_bits + 2 * 64);
    if (pk.bits() < need + 2) {
      throw OverflowError("key too short for the logsum mask window (" + std::to_string(pk.bits()) +
                          " < " + std::to_string(need + 2) + " bits)");
    }
  }

  /// Step 1 for a vector of scale-1 logs sharing one offset.
  Linearized linearize(LogsumPeer& peer, const std::vector<Ciphertext>& logs, int units = 1) {
    if (logs.empty()) throw RangeError("logsum needs at least one input");
    ++invocations_;
    const std::size_t bits = cfg_.magnitude_bits + cfg_.margin_bits;
    const mpz_class S = cfg_.margin_bits == 0 ? mpz_class(0) : rng_.bits(bits);
    masks_.push_back({"common", invocations_, S, bits});
    std::vector<Ciphertext> masked;
    masked.reserve(logs.size());
    for (const auto& c : logs) {
      if (c.scale != 1) throw RangeError("logsum inputs must be at scale 1");
      masked.push_back(add_plain(pk_, c, -S));
    }
    LinearizeReply reply = peer.linearize(masked, units);
    if (reply.z.size() != logs.size()) throw ProtocolError("linearize reply has the wrong length");
    return {std::move(reply.z), add_plain(pk_, reply.max, S)};
  }

  /// E'[log W] - log of the integer plaintext W - through one blinded round.
  /// The result is at scale 1 and includes log of W's own scaling.
  Ciphertext log_of(LogsumPeer& peer, Ciphertext W) {
    W.scale = 1;
    const std::size_t span = cfg_.nu_max_bits - cfg_.nu_min_bits + 1;
    const std::size_t nb = cfg_.nu_min_bits + static_cast<std::size_t>(rng_.below(span).get_ui());
    mpz_class nu = rng_.bits(nb - 1);
    mpz_setbit(nu.get_mpz_t(), nb - 1);
    masks_.push_back({"nu", invocations_, nu, nb});
    const Ciphertext blinded = scalar_mul(pk_, W, nu);
    Ciphertext l = peer.log_round(blinded);
    return add_plain(pk_, l, -codec_.scaled(static_cast<long double>(mpz_log(nu))));
  }

  /// E'[log sum a_i x_i] from E'[log x_i]. Zero weights are skipped.
  Ciphertext logsum(LogsumPeer& peer, const std::vector<Ciphertext>& logs,
                    const std::vector<double>& weights) {
    if (logs.size() != weights.size()) throw RangeError("one weight per input required");
    if (logs.empty()) throw RangeError("logsum needs at least one input");
    std::vector<Ciphertext> used;
    std::vector<mpz_class> mult;
    for (std::size_t i = 0; i < logs.size(); ++i) {
      if (weights[i] < 0) throw RangeError("logsum weights must be non-negative");
      const mpz_class w = codec_.scaled(static_cast<long double>(weights[i]));
      if (w == 0) continue;
      used.push_back(logs[i]);
      mult.push_back(w);
    }
    if (used.empty()) throw OverflowError("every logsum weight rounds to zero at this c");
    const Linearized lin = linearize(peer, used);
    Ciphertext W = scalar_mul(pk_, lin.z[0], mult[0]);
    W.scale = 2;
    for (std::size_t i = 1; i < used.size(); ++i) {
      Ciphertext term = scalar_mul(pk_, lin.z[i], mult[i]);
      term.scale = 2;
      W = add_cipher(pk_, W, term);
    }
    return finish(peer, W, lin.offset, 2);
  }

  /// Turns an encrypted integer W ~ c^units * sum(...) / x_max into
  /// E'[log sum(...)] given the linearization offset E'[log x_max].
  Ciphertext finish(LogsumPeer& peer, const Ciphertext& W, const Ciphertext& offset, int units) {
    Ciphertext l = log_of(peer, W);
    l.scale = 1;
    const long double c = static_cast<long double>(codec_.c());
    Ciphertext out = add_cipher(pk_, l, offset);
    return add_plain(pk_, out, -codec_.scaled(static_cast<long double>(units) * std::log(c)));
  }

  const std::vector<MaskRecord>& masks() const { return masks_; }
  std::vector<MaskRecord>& masks() { return masks_; }
  std::uint64_t invocations() const { return invocations_; }
  const LogsumConfig& config() const { return cfg_; }

 private:
  const PublicKey& pk_;
  const FixedPointCodec& codec_;
  Csprng& rng_;
  LogsumConfig cfg_;
  std::vector<MaskRecord> masks_;
  std::uint64_t invocations_ = 0;
};

}  // namespace hcfctx::crypto
