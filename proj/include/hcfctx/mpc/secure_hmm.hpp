#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "hcfctx/hmm.hpp"
#include "hcfctx/model.hpp"
#include "hcfctx/mpc/protocol.hpp"

namespace hcfctx::mpc {

using Grid = std::vector<std::vector<Ciphertext>>;  // [t][k]

/// Per-iteration encrypted quantities held by the aggregator.
struct EStepCaches {
  Grid log_mu;
  Grid log_alpha;
  Grid log_beta;
  Ciphertext log_p;
  double loglik = 0.0;
};

namespace detail {

inline std::vector<Ciphertext> flatten(const Grid& g) {
  std::vector<Ciphertext> out;
  for (const auto& row : g) out.insert(out.end(), row.begin(), row.end());
  return out;
}

inline Grid unflatten(const std::vector<Ciphertext>& v, std::size_t T, std::size_t K) {
  if (v.size() != T * K) throw ProtocolError("payload has the wrong length");
  Grid g(T);
  for (std::size_t t = 0; t < T; ++t) g[t].assign(v.begin() + static_cast<long>(t * K), v.begin() + static_cast<long>((t + 1) * K));
  return g;
}

inline Ciphertext enc(Session& s, std::size_t party, long double r) {
  return crypto::encrypt_real(s.pk(), s.codec(), r, s.rng(party));
}

inline Ciphertext add(Session& s, const Ciphertext& a, const Ciphertext& b) {
  return crypto::add_cipher(s.pk(), a, b);
}

inline Ciphertext add_real(Session& s, const Ciphertext& a, long double r) {
  return crypto::add_plain(s.pk(), a, s.codec().scaled(r));
}

}  // namespace detail

/// Every party with observations encrypts its log mu^u_tk and sends it to the
/// aggregator, which multiplies the user factors homomorphically.
inline Grid secure_emissions(Session& s, const ModelParams& p) {
  const Dataset& d = s.data();
  const std::size_t T = d.length(), K = p.num_states();
  const std::size_t agg = s.aggregator_id();
  const MatrixXd log_theta = p.theta.array().log().matrix();
  const MatrixXd log_phi = p.phi.array().log().matrix();
  auto local = [&](const Party& party) {
    Grid g(T, std::vector<Ciphertext>(K));
    const auto& seq = d.sequences[*party.user];
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t k = 0; k < K; ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        long double l = 0;
        for (const auto& [f, v] : seq.observations[t].pairs) {
          l += log_theta(kk, f) + log_phi(kk, static_cast<Eigen::Index>(p.layout.offset(f) + v));
        }
        g[t][k] = detail::enc(s, party.id, l);
      }
    }
    return g;
  };
  s.advance();
  Grid total;
  std::size_t senders = 0;
  for (const auto& party : s.parties()) {
    if (!party.user) continue;
    if (party.id == agg) {
      total = local(party);
    } else {
      s.post(party.id, agg, "emission", detail::flatten(local(party)));
      ++senders;
    }
  }
  for (std::size_t i = 0; i < senders; ++i) {
    const Grid g = detail::unflatten(s.take(agg, "emission").ciphertexts, T, K);
    if (total.empty()) {
      total = g;
      continue;
    }
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t k = 0; k < K; ++k) total[t][k] = detail::add(s, total[t][k], g[t][k]);
    }
  }
  return total;
}

/// Keyholder decrypts the encrypted loglik and releases it to the aggregator only.
inline double release_loglik(Session& s, const Ciphertext& log_p) {
  const std::size_t agg = s.aggregator_id(), kh = s.keyholder_id();
  s.advance();
  s.post(agg, kh, "loglik.decrypt", {log_p});
  const Message in = s.take(kh, "loglik.decrypt");
  const long double v = crypto::decrypt_real(s.private_key(), s.codec(), in.ciphertexts.at(0));
  s.advance();
  Message out;
  out.from = kh;
  out.to = agg;
  out.tag = "loglik.release";
  out.kind = PayloadKind::Released;
  out.text = model_io::fmt(static_cast<double>(v));
  s.post(std::move(out));
  return std::stod(s.take(agg, "loglik.release").text);
}

struct ForwardPass {
  Grid log_alpha;
  Ciphertext log_p;
  double loglik = 0.0;
};

/// Encrypted forward recursion: alpha_1 = pi mu_1, alpha_t = (sum_j alpha_{t-1,j} rho_jk) mu_t,
/// P = sum_k alpha_T. Uses K(T-1)+1 secure logsums.
inline ForwardPass secure_forward(Session& s, const ModelParams& p, const Grid& log_mu) {
  const std::size_t T = log_mu.size(), K = p.num_states();
  if (T == 0) throw RangeError("empty sequence");
  ForwardPass out;
  out.log_alpha.assign(T, std::vector<Ciphertext>(K));
  for (std::size_t k = 0; k < K; ++k) {
    out.log_alpha[0][k] = detail::add_real(s, log_mu[0][k], std::log(static_cast<long double>(p.pi[static_cast<Eigen::Index>(k)])));
  }
  std::vector<double> w(K);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t j = 0; j < K; ++j) w[j] = p.rho(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
      const Ciphertext l = s.logsum("forward", out.log_alpha[t - 1], w);
      out.log_alpha[t][k] = detail::add(s, l, log_mu[t][k]);
    }
  }
  out.log_p = s.logsum("forward", out.log_alpha[T - 1], std::vector<double>(K, 1.0));
  out.loglik = release_loglik(s, out.log_p);
  return out;
}

/// Encrypted backward recursion with beta_T = 1 and the pi-weighted
/// termination; K(T-1)+1 secure logsums.
inline Grid secure_backward(Session& s, const ModelParams& p, const Grid& log_mu,
                            Ciphertext* log_p = nullptr) {
  const std::size_t T = log_mu.size(), K = p.num_states();
  if (T == 0) throw RangeError("empty sequence");
  const std::size_t agg = s.aggregator_id();
  Grid beta(T, std::vector<Ciphertext>(K));
  for (std::size_t k = 0; k < K; ++k) beta[T - 1][k] = detail::enc(s, agg, 0.0L);
  std::vector<Ciphertext> in(K);
  std::vector<double> w(K);
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t j = 0; j < K; ++j) in[j] = detail::add(s, beta[t + 1][j], log_mu[t + 1][j]);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t j = 0; j < K; ++j) w[j] = p.rho(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j));
      beta[t][k] = s.logsum("backward", in, w);
    }
  }
  for (std::size_t j = 0; j < K; ++j) in[j] = detail::add(s, beta[0][j], log_mu[0][j]);
  for (std::size_t k = 0; k < K; ++k) w[k] = p.pi[static_cast<Eigen::Index>(k)];
  const Ciphertext lp = s.logsum("backward", in, w);
  if (log_p) *log_p = lp;
  return beta;
}

inline EStepCaches secure_e_pass(Session& s, const ModelParams& p) {
  EStepCaches c;
  c.log_mu = secure_emissions(s, p);
  ForwardPass f = secure_forward(s, p, c.log_mu);
  c.log_alpha = std::move(f.log_alpha);
  c.log_p = f.log_p;
  c.loglik = f.loglik;
  c.log_beta = secure_backward(s, p, c.log_mu);
  return c;
}

struct EncryptedPosteriors {
  Grid log_gamma;                        // [t][k]
  std::vector<std::vector<Ciphertext>> log_xi;  // [t-1][j*K + k], t = 1..T-1
};

/// log xi_t(j,k) = log alpha_{t-1,j} + log rho_jk + log mu_tk + log beta_tk - log P,
/// with rho applied through a single-term logsum; log gamma by logsums over
/// xi. K^2(T-1) + K T secure logsums.
inline EncryptedPosteriors secure_posteriors(Session& s, const ModelParams& p, const EStepCaches& c) {
  const std::size_t T = c.log_mu.size(), K = p.num_states();
  const Ciphertext neg_p = crypto::negate_cipher(s.pk(), c.log_p);
  EncryptedPosteriors out;
  out.log_gamma.assign(T, std::vector<Ciphertext>(K));
  out.log_xi.assign(T > 0 ? T - 1 : 0, std::vector<Ciphertext>(K * K));
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      const Ciphertext right = detail::add(s, detail::add(s, c.log_mu[t][k], c.log_beta[t][k]), neg_p);
      for (std::size_t j = 0; j < K; ++j) {
        const Ciphertext joint = detail::add(s, c.log_alpha[t - 1][j], right);
        const double r = p.rho(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
        out.log_xi[t - 1][j * K + k] = s.logsum("posterior", {joint}, {r});
      }
    }
  }
  std::vector<Ciphertext> in(K);
  const std::vector<double> ones(K, 1.0);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t j = 0; j < K; ++j) in[j] = out.log_xi[t - 1][j * K + k];
      out.log_gamma[t][k] = s.logsum("posterior", in, ones);
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (T > 1) {
      for (std::size_t j = 0; j < K; ++j) in[j] = out.log_xi[0][k * K + j];
      out.log_gamma[0][k] = s.logsum("posterior", in, ones);
    } else {
      const Ciphertext g = detail::add(s, detail::add(s, c.log_alpha[0][k], c.log_beta[0][k]), neg_p);
      out.log_gamma[0][k] = s.logsum("posterior", {g}, {1.0});
    }
  }
  return out;
}

namespace detail {

// Indicator ciphertexts of one non-aggregator party: presence[t*F + f] and
// values[t*S + offset(f) + v], plaintexts in {0, 1} at scale 0.
struct Indicators {
  std::size_t party = 0;
  std::vector<Ciphertext> presence, values;
};

inline std::vector<Indicators> collect_indicators(Session& s) {
  const Dataset& d = s.data();
  const std::size_t T = d.length(), F = d.schema.size();
  const ValueLayout layout(d.schema.cardinalities());
  const std::size_t S = layout.total(), agg = s.aggregator_id();
  s.advance();
  std::vector<std::size_t> senders;
  for (const auto& party : s.parties()) {
    if (!party.user || party.id == agg) continue;
    const auto& seq = d.sequences[*party.user];
    std::vector<Ciphertext> out;
    out.reserve(T * (F + S));
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<int> pres(F, 0), vals(S, 0);
      for (const auto& [f, v] : seq.observations[t].pairs) {
        pres[f] = 1;
        vals[layout.offset(f) + v] = 1;
      }
      for (int x : pres) out.push_back(crypto::encrypt(s.pk(), x, s.rng(party.id), 0));
      for (int x : vals) out.push_back(crypto::encrypt(s.pk(), x, s.rng(party.id), 0));
    }
    s.post(party.id, agg, "indicators", std::move(out));
    senders.push_back(party.id);
  }
  std::vector<Indicators> all;
  for (std::size_t id : senders) {
    const Message m = s.take(agg, "indicators");
    if (m.ciphertexts.size() != T * (F + S)) throw ProtocolError("indicator payload has the wrong length");
    Indicators ind;
    ind.party = id;
    for (std::size_t t = 0; t < T; ++t) {
      const auto base = m.ciphertexts.begin() + static_cast<long>(t * (F + S));
      ind.presence.insert(ind.presence.end(), base, base + static_cast<long>(F));
      ind.values.insert(ind.values.end(), base + static_cast<long>(F), base + static_cast<long>(F + S));
    }
    all.push_back(std::move(ind));
  }
  return all;
}

}  // namespace detail

/// Updates pi, rho, theta and phi from encrypted posteriors. Numerators and
/// denominators are formed in the encrypted log domain; the keyholder
/// decrypts both and publishes the resulting parameters to every party.
inline ModelParams secure_update(Session& s, const ModelParams& p, const EncryptedPosteriors& post,
                                 const Hyperparams& h) {
  const Dataset& d = s.data();
  const std::size_t T = post.log_gamma.size(), K = p.num_states();
  const ValueLayout& layout = p.layout;
  const std::size_t F = layout.num_features(), S = layout.total();
  const std::size_t agg = s.aggregator_id(), kh = s.keyholder_id();
  const auto& pk = s.pk();
  std::vector<Ciphertext> nums, dens;  // log numerators / denominators in publication order

  // pi
  std::vector<Ciphertext> pi_num(K);
  for (std::size_t k = 0; k < K; ++k) {
    const Ciphertext le = detail::enc(s, agg, std::log(static_cast<long double>(h.eta[static_cast<Eigen::Index>(k)])));
    pi_num[k] = s.logsum("update", {post.log_gamma[0][k], le}, {1.0, 1.0});
  }
  const Ciphertext pi_den = s.logsum("update", pi_num, std::vector<double>(K, 1.0));
  for (std::size_t k = 0; k < K; ++k) {
    nums.push_back(pi_num[k]);
    dens.push_back(pi_den);
  }

  // rho
  for (std::size_t j = 0; j < K; ++j) {
    std::vector<Ciphertext> row(K);
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<Ciphertext> in;
      for (std::size_t t = 1; t < T; ++t) in.push_back(post.log_xi[t - 1][j * K + k]);
      in.push_back(detail::enc(s, agg, std::log(static_cast<long double>(h.omega(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k))))));
      row[k] = s.logsum("update", in, std::vector<double>(in.size(), 1.0));
    }
    const Ciphertext den = s.logsum("update", row, std::vector<double>(K, 1.0));
    for (std::size_t k = 0; k < K; ++k) {
      nums.push_back(row[k]);
      dens.push_back(den);
    }
  }

  // theta and phi: gamma, delta and lambda share one linearization per
  // state; parties add their own indicator-selected shares.
  const std::vector<detail::Indicators> indicators = detail::collect_indicators(s);
  std::vector<crypto::Linearized> lin(K);
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<Ciphertext> in;
    for (std::size_t t = 0; t < T; ++t) in.push_back(post.log_gamma[t][k]);
    for (std::size_t f = 0; f < F; ++f) {
      in.push_back(detail::enc(s, agg, std::log(static_cast<long double>(h.delta(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(f))))));
    }
    for (std::size_t i = 0; i < S; ++i) {
      in.push_back(detail::enc(s, agg, std::log(static_cast<long double>(h.lambda(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i))))));
    }
    lin[k] = s.linearize("update", in, 2);
  }

  // Masked gamma shares for the other parties.
  const std::size_t mask_bits =
      static_cast<std::size_t>(std::ceil(2.0 * std::log2(static_cast<double>(s.codec().c())))) + 1 +
      s.holder().config().margin_bits;
  std::vector<std::vector<mpz_class>> masks;  // [party index][t*K + k]
  s.advance();
  std::vector<std::size_t> others;
  for (const auto& party : s.parties()) {
    if (!party.user || party.id == agg) continue;
    std::vector<mpz_class> r(T * K);
    std::vector<Ciphertext> out(T * K);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t k = 0; k < K; ++k) {
        r[t * K + k] = s.holder().config().margin_bits == 0 ? mpz_class(0) : s.rng(agg).bits(mask_bits);
        s.record_mask({"indicator", 0, r[t * K + k], mask_bits});
        out[t * K + k] = crypto::add_plain(pk, lin[k].z[t], r[t * K + k]);
      }
    }
    masks.push_back(std::move(r));
    others.push_back(party.id);
    s.post(agg, party.id, "stats.masked", std::move(out));
  }
  // Each party sums the masked shares over its own slots and re-randomizes.
  std::vector<Message> partial_msgs;
  for (std::size_t id : others) {
    const Message m = s.take(id, "stats.masked");
    const auto& seq = d.sequences[*s.party(id).user];
    std::vector<Ciphertext> acc;
    acc.reserve(K * (F + S));
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<Ciphertext> pres(F), vals(S);
      for (auto& c : pres) c = crypto::encrypt(pk, 0, s.rng(id), 2);
      for (auto& c : vals) c = crypto::encrypt(pk, 0, s.rng(id), 2);
      for (std::size_t t = 0; t < T; ++t) {
        const Ciphertext& z = m.ciphertexts.at(t * K + k);
        for (const auto& [f, v] : seq.observations[t].pairs) {
          pres[f] = crypto::add_cipher(pk, pres[f], z);
          vals[layout.offset(f) + v] = crypto::add_cipher(pk, vals[layout.offset(f) + v], z);
        }
      }
      acc.insert(acc.end(), pres.begin(), pres.end());
      acc.insert(acc.end(), vals.begin(), vals.end());
    }
    Message back;
    back.from = id;
    back.to = agg;
    back.tag = "stats.partial";
    back.ciphertexts = std::move(acc);
    partial_msgs.push_back(std::move(back));
  }
  s.advance();
  for (auto& m : partial_msgs) s.post(std::move(m));

  // Aggregator: own shares, removal of the masks through the indicators.
  const auto& own = d.sequences[*s.party(agg).user];
  std::vector<std::vector<Ciphertext>> pres_num(K, std::vector<Ciphertext>(F));
  std::vector<std::vector<Ciphertext>> val_num(K, std::vector<Ciphertext>(S));
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t f = 0; f < F; ++f) pres_num[k][f] = lin[k].z[T + f];
    for (std::size_t i = 0; i < S; ++i) val_num[k][i] = lin[k].z[T + F + i];
    for (std::size_t t = 0; t < T; ++t) {
      for (const auto& [f, v] : own.observations[t].pairs) {
        pres_num[k][f] = crypto::add_cipher(pk, pres_num[k][f], lin[k].z[t]);
        val_num[k][layout.offset(f) + v] = crypto::add_cipher(pk, val_num[k][layout.offset(f) + v], lin[k].z[t]);
      }
    }
  }
  for (std::size_t q = 0; q < others.size(); ++q) {
    const Message m = s.take(agg, "stats.partial");
    if (m.from != others[q] || m.ciphertexts.size() != K * (F + S)) throw ProtocolError("unexpected partial statistics");
    const detail::Indicators& ind = indicators.at(q);
    for (std::size_t k = 0; k < K; ++k) {
      auto correct = [&](const std::vector<Ciphertext>& flags, std::size_t width, std::size_t col) {
        Ciphertext c = crypto::scalar_mul(pk, flags[col], masks[q][k]);
        for (std::size_t t = 1; t < T; ++t) {
          c = crypto::add_cipher(pk, c, crypto::scalar_mul(pk, flags[t * width + col], masks[q][t * K + k]));
        }
        c.scale = 2;
        return crypto::negate_cipher(pk, c);
      };
      for (std::size_t f = 0; f < F; ++f) {
        const Ciphertext share = crypto::add_cipher(pk, m.ciphertexts[k * (F + S) + f], correct(ind.presence, F, f));
        pres_num[k][f] = crypto::add_cipher(pk, pres_num[k][f], share);
      }
      for (std::size_t i = 0; i < S; ++i) {
        const Ciphertext share = crypto::add_cipher(pk, m.ciphertexts[k * (F + S) + F + i], correct(ind.values, S, i));
        val_num[k][i] = crypto::add_cipher(pk, val_num[k][i], share);
      }
    }
  }

  const mpz_class M = static_cast<unsigned long>(d.num_users());
  for (std::size_t k = 0; k < K; ++k) {
    Ciphertext occ = lin[k].z[0];
    for (std::size_t t = 1; t < T; ++t) occ = crypto::add_cipher(pk, occ, lin[k].z[t]);
    Ciphertext den = crypto::scalar_mul(pk, occ, M);
    for (std::size_t f = 0; f < F; ++f) den = crypto::add_cipher(pk, den, lin[k].z[T + f]);
    const Ciphertext log_den = s.finish("update", den, lin[k].offset, 2);
    for (std::size_t f = 0; f < F; ++f) {
      nums.push_back(s.finish("update", pres_num[k][f], lin[k].offset, 2));
      dens.push_back(log_den);
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t f = 0; f < F; ++f) {
      const std::size_t off = layout.offset(f), V = layout.cardinality(f);
      Ciphertext block = val_num[k][off];
      for (std::size_t v = 1; v < V; ++v) block = crypto::add_cipher(pk, block, val_num[k][off + v]);
      const Ciphertext log_den = s.finish("update", block, lin[k].offset, 2);
      for (std::size_t v = 0; v < V; ++v) {
        nums.push_back(s.finish("update", val_num[k][off + v], lin[k].offset, 2));
        dens.push_back(log_den);
      }
    }
  }

  // Keyholder decrypts numerators and denominators and publishes the model.
  s.advance();
  std::vector<Ciphertext> both = nums;
  both.insert(both.end(), dens.begin(), dens.end());
  s.post(agg, kh, "params.decrypt", std::move(both));
  const Message req = s.take(kh, "params.decrypt");
  const std::size_t n = req.ciphertexts.size() / 2;
  std::vector<double> ratio(n);
  for (std::size_t i = 0; i < n; ++i) {
    const long double a = crypto::decrypt_real(s.private_key(), s.codec(), req.ciphertexts[i]);
    const long double b = crypto::decrypt_real(s.private_key(), s.codec(), req.ciphertexts[n + i]);
    ratio[i] = static_cast<double>(std::exp(a - b));
  }
  ModelParams q = ModelParams::zeros(K, layout);
  q.users = p.users;
  std::size_t idx = 0;
  for (std::size_t k = 0; k < K; ++k) q.pi[static_cast<Eigen::Index>(k)] = ratio[idx++];
  q.pi /= q.pi.sum();
  for (std::size_t j = 0; j < K; ++j) {
    for (std::size_t k = 0; k < K; ++k) q.rho(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = ratio[idx++];
    q.rho.row(static_cast<Eigen::Index>(j)) /= q.rho.row(static_cast<Eigen::Index>(j)).sum();
  }
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t f = 0; f < F; ++f) {
      q.theta(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(f)) = std::clamp(ratio[idx++], kThetaFloor, 1.0);
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t f = 0; f < F; ++f) {
      auto block = q.phi_block(k, f);
      for (Eigen::Index v = 0; v < block.size(); ++v) block[v] = ratio[idx++];
      block /= block.sum();
    }
  }
  s.advance();
  const std::string text = model_io::to_string(q);
  for (const auto& party : s.parties()) {
    if (party.id == kh) continue;
    Message m;
    m.from = kh;
    m.to = party.id;
    m.tag = "model.publish";
    m.kind = PayloadKind::PublicModel;
    m.text = text;
    s.post(std::move(m));
  }
  ModelParams published;
  for (const auto& party : s.parties()) {
    if (party.id == kh) continue;
    const Message m = s.take(party.id, "model.publish");
    if (party.id == agg) published = model_io::from_string(m.text);
  }
  return published;
}

/// One secure EM iteration from caches of the same parameters.
inline ModelParams secure_em_step(Session& s, const ModelParams& p, const EStepCaches& c,
                                  const Hyperparams& h) {
  const EncryptedPosteriors post = secure_posteriors(s, p, c);
  return secure_update(s, p, post, h);
}

/// Worst relative parameter error of `got` against `want`, per block.
struct ErrorReport {
  double pi = 0, rho = 0, theta = 0, phi = 0;
  double loglik_abs = 0;  // |secure - plaintext| loglik at the initial parameters

  double max() const { return std::max({pi, rho, theta, phi}); }
};

inline ErrorReport compare_params(const ModelParams& got, const ModelParams& want) {
  auto worst = [](const MatrixXd& a, const MatrixXd& b) {
    double e = 0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      for (Eigen::Index j = 0; j < a.cols(); ++j) e = std::max(e, std::abs(a(i, j) - b(i, j)) / std::abs(b(i, j)));
    }
    return e;
  };
  ErrorReport r;
  r.pi = worst(got.pi, want.pi);
  r.rho = worst(got.rho, want.rho);
  r.theta = worst(got.theta, want.theta);
  r.phi = worst(got.phi, want.phi);
  return r;
}

struct MpcTrainResult {
  ModelParams params;                // secure run
  ModelParams plain;                 // plaintext run from the same start
  ErrorReport error;
  std::vector<double> loglik_trace;  // secure loglik at each iterate's parameters
  std::vector<double> plain_trace;
  Transcript transcript;
  double seconds = 0;
};

/// `iters` secure EM iterations from `init`, compared against the
/// plaintext updates from the same start.
inline MpcTrainResult mpc_train(Session& s, const ModelParams& init, const Hyperparams& h, int iters) {
  if (iters < 1) throw RangeError("iterations must be >= 1");
  const Dataset& d = s.data();
  validate(d);
  MpcTrainResult r;
  const auto t0 = std::chrono::steady_clock::now();
  ModelParams cur = init;
  cur.users = d.user_names;
  for (int it = 0; it < iters; ++it) {
    const EStepCaches c = secure_e_pass(s, cur);
    r.loglik_trace.push_back(c.loglik);
    cur = secure_em_step(s, cur, c, h);
    cur.users = d.user_names;
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ModelParams ref = init;
  ref.users = d.user_names;
  for (int it = 0; it < iters; ++it) {
    const FBCache c = e_step(ref, d);
    r.plain_trace.push_back(c.loglik);
    ref = m_step(c.gamma, c.xi, d, h);
    ref.users = d.user_names;
  }
  r.params = cur;
  r.plain = ref;
  r.error = compare_params(cur, ref);
  r.error.loglik_abs = std::abs(r.loglik_trace.front() - r.plain_trace.front());
  r.transcript = s.transcript();
  return r;
}

/// Decrypts an encrypted grid with the session key (testing and reporting only).
inline std::vector<std::vector<double>> reveal(const Session& s, const Grid& g) {
  std::vector<std::vector<double>> out(g.size());
  for (std::size_t t = 0; t < g.size(); ++t) {
    for (const auto& c : g[t]) out[t].push_back(static_cast<double>(crypto::decrypt_real(s.private_key(), s.codec(), c)));
  }
  return out;
}

struct BenchRow {
  std::size_t T = 0;
  std::size_t keybits = 0;
  std::uint64_t c = 0;
  std::string phase;
  double seconds = 0;
  double max_rel_err = 0;
};

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << "T,keybits,c,phase,seconds,max_rel_err\n";
  for (const auto& r : rows) {
    os << r.T << ',' << r.keybits << ',' << r.c << ',' << r.phase << ',' << model_io::fmt(r.seconds) << ','
       << model_io::fmt(r.max_rel_err) << '\n';
  }
}

}  // namespace hcfctx::mpc
