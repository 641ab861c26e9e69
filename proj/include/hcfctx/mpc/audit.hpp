#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "hcfctx/model.hpp"
#include "hcfctx/mpc/protocol.hpp"

namespace hcfctx::mpc {

struct AuditReport {
  std::vector<std::string> findings;
  std::size_t messages = 0;
  std::size_t ciphertexts = 0;
  std::size_t masks = 0;

  bool passed() const { return findings.empty(); }
};

namespace detail {

// Kolmogorov-Smirnov distance of x / 2^bits against U(0, 1).
inline double ks_uniform(const std::vector<crypto::MaskRecord>& masks) {
  std::vector<double> u;
  u.reserve(masks.size());
  for (const auto& m : masks) {
    long e = 0;
    const double mant = m.value == 0 ? 0.0 : mpz_get_d_2exp(&e, m.value.get_mpz_t());
    u.push_back(std::ldexp(mant, static_cast<int>(e) - static_cast<int>(m.bits)));
  }
  std::sort(u.begin(), u.end());
  const double n = static_cast<double>(u.size());
  double d = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    d = std::max({d, std::abs(u[i] - static_cast<double>(i) / n), std::abs(u[i] - static_cast<double>(i + 1) / n)});
  }
  return d;
}

}  // namespace detail

/// Semi-honest transcript scan. Checks key custody, that every payload is a
/// ciphertext or public model data, that ciphertexts are well-formed and
/// randomized, that only mask-protected requests reach the keyholder, and
/// that the masks behind those requests are fresh and uniform.
inline AuditReport audit(const Session& s) {
  AuditReport r;
  auto find = [&](std::string f) { r.findings.push_back(std::move(f)); };
  const std::size_t kh = s.keyholder_id(), agg = s.aggregator_id();

  std::size_t holders = 0, aggregators = 0;
  for (const auto& p : s.parties()) {
    if (p.key) {
      ++holders;
      if (p.id != kh) find("party " + std::to_string(p.id) + " holds the private key");
    }
    if (p.role == Role::Aggregator) ++aggregators;
  }
  if (holders != 1) find("expected exactly one key holder, found " + std::to_string(holders));
  if (aggregators != 1 || agg == kh) find("aggregator must be a single party distinct from the keyholder");

  const Transcript& tr = s.transcript_view();
  if (!tr.payloads_recorded) {
    find("payloads were not recorded; transcript cannot be scanned");
    return r;
  }
  static const std::set<std::string> to_keyholder{"logsum.linearize", "logsum.log", "stats.masked",
                                                  "params.decrypt", "loglik.decrypt"};
  static const std::set<std::string> to_aggregator{"emission", "indicators", "stats.partial",
                                                   "logsum.linearize.reply", "logsum.log.reply"};
  const mpz_class& n = s.pk().n;
  std::map<std::string, std::size_t> request_cts;
  for (const auto& m : tr.messages) {
    ++r.messages;
    const std::string where = "message '" + m.tag + "' " + std::to_string(m.from) + "->" + std::to_string(m.to) +
                              " round " + std::to_string(m.round);
    switch (m.kind) {
      case PayloadKind::Ciphertexts: {
        if (!m.text.empty()) find(where + " carries plaintext next to ciphertexts");
        const bool ok_kh = m.to == kh && to_keyholder.count(m.tag);
        const bool ok_agg = m.to == agg && to_aggregator.count(m.tag);
        const bool ok_party = m.from == agg && m.tag == "stats.masked";
        if (!ok_kh && !ok_agg && !ok_party) find(where + " is not an allowed ciphertext flow");
        for (const auto& c : m.ciphertexts) {
          ++r.ciphertexts;
          if (c.key_id != s.pk().id) find(where + " has a ciphertext under a foreign key");
          if (c.value <= 0 || c.value >= s.pk().n2) find(where + " has a ciphertext outside Z_{n^2}");
          if (mpz_class(c.value % n) == 1) find(where + " has an unrandomized ciphertext");
        }
        request_cts[m.tag] += m.ciphertexts.size();
        break;
      }
      case PayloadKind::PublicModel:
        if (m.from != kh || m.tag != "model.publish") {
          find(where + " publishes model data from a non-keyholder");
          break;
        }
        try {
          (void)model_io::from_string(m.text);
        } catch (const std::exception&) {
          find(where + " carries text that is not a model");
        }
        break;
      case PayloadKind::Released:
        if (m.from != kh || m.to != agg || m.tag != "loglik.release") {
          find(where + " releases a plaintext outside the loglik release");
        }
        break;
    }
  }

  std::map<std::string, std::vector<crypto::MaskRecord>> by_kind;
  for (const auto& m : s.holder().masks()) by_kind[m.kind].push_back(m);
  r.masks = s.holder().masks().size();
  std::size_t linearize_requests = 0, log_requests = 0;
  for (const auto& m : tr.messages) {
    if (m.tag == "logsum.linearize") ++linearize_requests;
    if (m.tag == "logsum.log") ++log_requests;
  }
  if (by_kind["common"].size() != linearize_requests) find("linearize requests without a matching mask");
  if (by_kind["nu"].size() != log_requests) find("log requests without a matching blind");
  if (by_kind["indicator"].size() != request_cts["stats.masked"]) find("masked statistics without matching masks");

  const auto& cfg = s.holder().config();
  for (const auto& [kind, list] : by_kind) {
    std::set<mpz_class> seen;
    for (const auto& m : list) {
      if (!seen.insert(m.value).second) {
        find(kind + " mask reused");
        break;
      }
    }
    if (kind == "common") {
      for (const auto& m : list) {
        if (m.bits < cfg.magnitude_bits + 40) {
          find("common mask window below the 40-bit hiding margin");
          break;
        }
      }
    }
    if (kind == "nu") {
      for (const auto& m : list) {
        if (m.bits < cfg.nu_min_bits || m.bits > cfg.nu_max_bits ||
            mpz_sizeinbase(m.value.get_mpz_t(), 2) != m.bits) {
          find("multiplicative blind outside its range");
          break;
        }
      }
      continue;
    }
    if (list.size() >= 50) {
      const double d = detail::ks_uniform(list);
      if (d > 1.95 / std::sqrt(static_cast<double>(list.size()))) {
        find(kind + " masks fail the uniformity test (KS distance " + std::to_string(d) + ")");
      }
    }
  }
  return r;
}

}  // namespace hcfctx::mpc
