#pragma once

#include <sodium.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "hcfctx/context_log.hpp"
#include "hcfctx/crypto/secure_logsum.hpp"
#include "hcfctx/errors.hpp"

namespace hcfctx::mpc {

using crypto::Ciphertext;

enum class Role { Keyholder, Aggregator, Contributor };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::Keyholder: return "keyholder";
    case Role::Aggregator: return "aggregator";
    default: return "contributor";
  }
}

struct Party {
  std::size_t id = 0;  // 1-based
  Role role = Role::Contributor;
  std::optional<UserId> user;  // none for a keyholder without observations
  crypto::PublicKey pk;
  std::optional<crypto::KeyPair> key;
};

enum class PayloadKind : unsigned char { Ciphertexts = 0, PublicModel = 1, Released = 2 };

struct Message {
  std::uint64_t round = 0;
  std::size_t from = 0, to = 0;  // 1-based party ids
  std::string tag;
  std::uint32_t param = 0;  // small header field, e.g. the linearize precision
  PayloadKind kind = PayloadKind::Ciphertexts;
  std::vector<Ciphertext> ciphertexts;
  std::string text;  // PublicModel or Released payloads

  /// Wire encoding: header, then per-ciphertext scale byte and
  /// length-prefixed value, then the length-prefixed text.
  crypto::Bytes encode() const {
    crypto::Bytes out;
    auto u32 = [&](std::uint64_t v) {
      for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>(v >> s));
    };
    u32(round >> 32);
    u32(round & 0xFFFFFFFFu);
    u32(from);
    u32(to);
    u32(tag.size());
    out.insert(out.end(), tag.begin(), tag.end());
    u32(param);
    out.push_back(static_cast<unsigned char>(kind));
    u32(ciphertexts.size());
    for (const auto& c : ciphertexts) {
      out.push_back(static_cast<unsigned char>(c.scale));
      crypto::put_prefixed(out, c.value);
    }
    u32(text.size());
    out.insert(out.end(), text.begin(), text.end());
    return out;
  }
};

struct Transcript {
  std::vector<Message> messages;  // payloads dropped when not recorded
  std::vector<std::size_t> sizes;
  std::uint64_t bytes = 0;
  std::uint64_t logsum_invocations = 0;
  std::map<std::string, std::uint64_t> logsum_by_phase;
  crypto::OpCounts ops;
  bool payloads_recorded = true;

  void write_csv(std::ostream& os) const {
    os << "round,from,to,tag,bytes\n";
    for (std::size_t i = 0; i < messages.size(); ++i) {
      const auto& m = messages[i];
      os << m.round << ',' << m.from << ',' << m.to << ',' << m.tag << ',' << sizes[i] << '\n';
    }
  }

  /// BLAKE2b-256 over the wire encoding of every message so far.
  std::string digest() const {
    crypto_generichash_state copy = state();
    unsigned char h[32];
    crypto_generichash_final(&copy, h, sizeof h);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned char c : h) {
      out += hex[c >> 4];
      out += hex[c & 15];
    }
    return out;
  }

  void absorb(const crypto::Bytes& wire) {
    if (!hash_init_) state_ = state();
    hash_init_ = true;
    crypto_generichash_update(&state_, wire.data(), wire.size());
  }

 private:
  crypto_generichash_state state() const {
    if (hash_init_) return state_;
    crypto::ensure_sodium();
    crypto_generichash_state s;
    crypto_generichash_init(&s, nullptr, 0, 32);
    return s;
  }

  crypto_generichash_state state_{};
  bool hash_init_ = false;
};

struct SessionConfig {
  std::size_t keybits = 512;
  std::uint64_t c = 1000000;
  std::uint64_t seed = 1;
  std::size_t aggregator = 2;  // 1-based party id
  bool record_payloads = true;
  std::size_t mask_margin_bits = 40;
};

class Session;

namespace detail {

// Routes the logsum exchange through the session channel.
class ChannelPeer : public crypto::LogsumPeer {
 public:
  explicit ChannelPeer(Session& s) : s_(s) {}
  crypto::LinearizeReply linearize(const std::vector<Ciphertext>& masked, int units) override;
  Ciphertext log_round(const Ciphertext& blinded) override;

 private:
  Session& s_;
};

}  // namespace detail

/// One strictly round-sequenced protocol run over in-process parties.
class Session {
 public:
  Session(const Dataset& data, const SessionConfig& cfg) : data_(&data), cfg_(cfg) {
    const std::size_t M = data.num_users();
    if (M == 0) throw RangeError("no users in the dataset");
    const std::size_t P = M == 1 ? 2 : M;
    if (cfg.aggregator < 2 || cfg.aggregator > P) {
      throw RangeError("aggregator must be one of parties 2.." + std::to_string(P));
    }
    crypto::Csprng kg = crypto::Csprng::seeded(cfg.seed, "keygen");
    const crypto::KeyPair kp = crypto::keygen(cfg.keybits, kg);
    codec_ = std::make_unique<crypto::FixedPointCodec>(kp.pub.n, cfg.c);
    for (std::size_t i = 0; i < P; ++i) {
      Party p;
      p.id = i + 1;
      p.pk = kp.pub;
      if (M == 1) {
        if (i == 1) p.user = 0;
      } else {
        p.user = static_cast<UserId>(i);
      }
      if (i == 0) {
        p.role = Role::Keyholder;
        p.key = kp;
      } else if (i + 1 == cfg.aggregator) {
        p.role = Role::Aggregator;
      }
      parties_.push_back(std::move(p));
      rngs_.push_back(crypto::Csprng::seeded(cfg.seed, "party-" + std::to_string(i + 1)));
    }
    inbox_.resize(P);
    transcript_.payloads_recorded = cfg.record_payloads;
    start_ops_ = crypto::op_counts();
    keyholder_ = std::make_unique<crypto::LogsumKeyholder>(*parties_[0].key, *codec_, rngs_[0]);
    crypto::LogsumConfig lc = crypto::LogsumConfig::for_codec(cfg.c);
    lc.margin_bits = cfg.mask_margin_bits;
    holder_ = std::make_unique<crypto::LogsumHolder>(pk(), *codec_, rng(aggregator_id()), lc);
    peer_ = std::make_unique<detail::ChannelPeer>(*this);
  }

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const Dataset& data() const { return *data_; }
  const SessionConfig& config() const { return cfg_; }
  const crypto::PublicKey& pk() const { return parties_[0].pk; }
  const crypto::FixedPointCodec& codec() const { return *codec_; }
  const std::vector<Party>& parties() const { return parties_; }
  const Party& party(std::size_t id) const { return parties_.at(id - 1); }
  std::size_t keyholder_id() const { return 1; }
  std::size_t aggregator_id() const { return cfg_.aggregator; }
  crypto::Csprng& rng(std::size_t id) { return rngs_.at(id - 1); }
  const crypto::KeyPair& private_key() const { return *parties_[0].key; }

  /// Hands a copy of the private key to another party. Breaks the
  /// non-collusion assumption; exists so the audit can be shown to catch it.
  void leak_private_key_to(std::size_t id) { parties_.at(id - 1).key = parties_[0].key; }

  std::uint64_t round() const { return round_; }

  void advance() {
    for (const auto& q : inbox_) {
      if (!q.empty()) throw ProtocolError("round closed with undelivered messages");
    }
    ++round_;
  }

  void post(std::size_t from, std::size_t to, std::string tag, std::vector<Ciphertext> cts) {
    Message m;
    m.from = from;
    m.to = to;
    m.tag = std::move(tag);
    m.ciphertexts = std::move(cts);
    post(std::move(m));
  }

  void post(Message m) {
    if (m.from < 1 || m.from > parties_.size() || m.to < 1 || m.to > parties_.size() || m.from == m.to) {
      throw ProtocolError("message between invalid parties");
    }
    for (const auto& c : m.ciphertexts) crypto::check_key(pk(), c);
    m.round = round_;
    const crypto::Bytes wire = m.encode();
    transcript_.absorb(wire);
    transcript_.bytes += wire.size();
    transcript_.sizes.push_back(wire.size());
    if (cfg_.record_payloads) {
      transcript_.messages.push_back(m);
    } else {
      Message header = m;
      header.ciphertexts.clear();
      header.text.clear();
      transcript_.messages.push_back(std::move(header));
    }
    inbox_[m.to - 1].push_back(std::move(m));
  }

  /// Delivers the oldest pending message for `to`; it must carry `tag` and
  /// belong to the current round.
  Message take(std::size_t to, const std::string& tag) {
    auto& q = inbox_.at(to - 1);
    if (q.empty()) throw ProtocolError("party " + std::to_string(to) + " expected '" + tag + "' but has no message");
    if (q.front().tag != tag) {
      throw ProtocolError("party " + std::to_string(to) + " expected '" + tag + "' but received '" +
                          q.front().tag + "'");
    }
    if (q.front().round != round_) throw ProtocolError("message from a stale round");
    Message m = std::move(q.front());
    q.pop_front();
    return m;
  }

  /// Runs one secure logsum between the aggregator and the keyholder.
  Ciphertext logsum(const std::string& phase, const std::vector<Ciphertext>& logs,
                    const std::vector<double>& weights) {
    Ciphertext out = holder_->logsum(*peer_, logs, weights);
    ++transcript_.logsum_invocations;
    ++transcript_.logsum_by_phase[phase];
    return out;
  }

  crypto::Linearized linearize(const std::string& phase, const std::vector<Ciphertext>& logs,
                               int units) {
    crypto::Linearized lin = holder_->linearize(*peer_, logs, units);
    ++transcript_.logsum_by_phase[phase + ".linearize"];
    return lin;
  }

  Ciphertext finish(const std::string& phase, const Ciphertext& W, const Ciphertext& offset, int units) {
    ++transcript_.logsum_by_phase[phase + ".log"];
    return holder_->finish(*peer_, W, offset, units);
  }

  crypto::LogsumHolder& holder() { return *holder_; }
  const crypto::LogsumHolder& holder() const { return *holder_; }
  crypto::LogsumKeyholder& keyholder() { return *keyholder_; }
  const crypto::LogsumKeyholder& keyholder() const { return *keyholder_; }

  /// Records a mask drawn outside the logsum (e.g. statistics masking).
  void record_mask(crypto::MaskRecord r) { holder_->masks().push_back(std::move(r)); }

  Transcript& transcript() {
    transcript_.ops = crypto::op_counts() - start_ops_;
    return transcript_;
  }
  const Transcript& transcript_view() const { return transcript_; }

 private:
  const Dataset* data_;
  SessionConfig cfg_;
  std::vector<Party> parties_;
  std::vector<crypto::Csprng> rngs_;
  std::unique_ptr<crypto::FixedPointCodec> codec_;
  std::vector<std::deque<Message>> inbox_;
  Transcript transcript_;
  crypto::OpCounts start_ops_;
  std::uint64_t round_ = 0;
  std::unique_ptr<crypto::LogsumKeyholder> keyholder_;
  std::unique_ptr<crypto::LogsumHolder> holder_;
  std::unique_ptr<detail::ChannelPeer> peer_;
};

namespace detail {

inline crypto::LinearizeReply ChannelPeer::linearize(const std::vector<Ciphertext>& masked, int units) {
  const std::size_t a = s_.aggregator_id(), k = s_.keyholder_id();
  s_.advance();
  Message req;
  req.from = a;
  req.to = k;
  req.tag = "logsum.linearize";
  req.param = static_cast<std::uint32_t>(units);
  req.ciphertexts = masked;
  s_.post(std::move(req));
  const Message in = s_.take(k, "logsum.linearize");
  crypto::LinearizeReply r = s_.keyholder().linearize(in.ciphertexts, static_cast<int>(in.param));
  s_.advance();
  std::vector<Ciphertext> out = r.z;
  out.push_back(r.max);
  s_.post(k, a, "logsum.linearize.reply", std::move(out));
  Message back = s_.take(a, "logsum.linearize.reply");
  crypto::LinearizeReply got;
  got.max = back.ciphertexts.back();
  back.ciphertexts.pop_back();
  got.z = std::move(back.ciphertexts);
  return got;
}

inline Ciphertext ChannelPeer::log_round(const Ciphertext& blinded) {
  const std::size_t a = s_.aggregator_id(), k = s_.keyholder_id();
  s_.advance();
  s_.post(a, k, "logsum.log", {blinded});
  const Message in = s_.take(k, "logsum.log");
  const Ciphertext l = s_.keyholder().log_round(in.ciphertexts.at(0));
  s_.advance();
  s_.post(k, a, "logsum.log.reply", {l});
  return s_.take(a, "logsum.log.reply").ciphertexts.at(0);
}

}  // namespace detail

}  // namespace hcfctx::mpc
