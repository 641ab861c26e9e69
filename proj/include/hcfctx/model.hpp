#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hcfctx/errors.hpp"
#include "hcfctx/schema.hpp"

namespace hcfctx {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Ragged per-(state, feature) value blocks stored as a K x sum(V_f) matrix.
class ValueLayout {
 public:
  ValueLayout() = default;
  explicit ValueLayout(std::vector<std::size_t> cardinalities)
      : cardinalities_(std::move(cardinalities)), offsets_(cardinalities_.size() + 1, 0) {
    for (std::size_t f = 0; f < cardinalities_.size(); ++f) {
      if (cardinalities_[f] == 0) throw SchemaError("feature with zero cardinality");
      offsets_[f + 1] = offsets_[f] + cardinalities_[f];
    }
  }

  std::size_t num_features() const { return cardinalities_.size(); }
  std::size_t cardinality(std::size_t f) const { return cardinalities_[f]; }
  std::size_t offset(std::size_t f) const { return offsets_[f]; }
  std::size_t total() const { return offsets_.back(); }
  const std::vector<std::size_t>& cardinalities() const { return cardinalities_; }
  bool operator==(const ValueLayout&) const = default;

 private:
  std::vector<std::size_t> cardinalities_;
  std::vector<std::size_t> offsets_{0};
};

/// Dirichlet pseudo-counts: eta (K), omega (K x K), delta (K x F),
/// lambda (K x sum V_f).
struct Hyperparams {
  VectorXd eta;
  MatrixXd omega;
  MatrixXd delta;
  MatrixXd lambda;

  void check() const {
    auto positive = [](const auto& m) { return (m.array() > 0.0).all(); };
    if (!positive(eta) || !positive(omega) || !positive(delta) || !positive(lambda)) {
      throw RangeError("hyperparameters must be strictly positive");
    }
  }
};

/// Scalar settings from which per-K hyperparameters are built:
/// eta_k = eta_total/K, omega_kj = omega_total/K, lambda = lambda_value,
/// delta_kf = delta_high for features whose empirical availability exceeds
/// `availability_cut`, delta_low otherwise.
struct HyperSpec {
  double eta_total = 1.0;
  double omega_total = 50.0;
  double delta_high = 10.0;
  double delta_low = 1.0;
  double availability_cut = 0.5;
  double lambda_value = 0.01;
  // Per-feature delta overrides (empty = availability rule).
  std::vector<double> delta_override;

  Hyperparams build(std::size_t K, const Dataset& data) const {
    const std::size_t F = data.schema.size();
    std::vector<double> avail(F, 0.0);
    const double slots = static_cast<double>(data.length() * data.num_users());
    for (const auto& seq : data.sequences) {
      for (const auto& obs : seq.observations) {
        for (const auto& [f, v] : obs.pairs) avail[f] += 1.0;
      }
    }
    std::vector<double> per_feature(F);
    for (std::size_t f = 0; f < F; ++f) {
      if (!delta_override.empty()) {
        per_feature[f] = delta_override.at(f);
      } else {
        const double rate = slots > 0 ? avail[f] / slots : 0.0;
        per_feature[f] = rate > availability_cut ? delta_high : delta_low;
      }
    }
    return build(K, ValueLayout(data.schema.cardinalities()), per_feature);
  }

  Hyperparams build(std::size_t K, const ValueLayout& layout,
                    const std::vector<double>& per_feature_delta) const {
    const double k = static_cast<double>(K);
    Hyperparams h;
    h.eta = VectorXd::Constant(static_cast<Eigen::Index>(K), eta_total / k);
    h.omega = MatrixXd::Constant(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(K),
                                 omega_total / k);
    h.delta.resize(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(layout.num_features()));
    for (std::size_t f = 0; f < layout.num_features(); ++f) {
      h.delta.col(static_cast<Eigen::Index>(f)).setConstant(per_feature_delta.at(f));
    }
    h.lambda = MatrixXd::Constant(static_cast<Eigen::Index>(K),
                                  static_cast<Eigen::Index>(layout.total()), lambda_value);
    h.check();
    return h;
  }
};

/// Psi = {pi, rho, theta, phi}.
struct ModelParams {
  ValueLayout layout;
  VectorXd pi;     // K
  MatrixXd rho;    // K x K, row-stochastic: rho(j, k) = p(c_t = k | c_{t-1} = j)
  MatrixXd theta;  // K x F availability
  MatrixXd phi;    // K x sum V_f, each (k, f) block sums to 1
  // Users the model was trained on (names); informational.
  std::vector<std::string> users;

  std::size_t num_states() const { return static_cast<std::size_t>(pi.size()); }
  std::size_t num_features() const { return layout.num_features(); }

  double phi_at(std::size_t k, std::size_t f, std::size_t v) const {
    return phi(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(layout.offset(f) + v));
  }
  auto phi_block(std::size_t k, std::size_t f) const {
    return phi.row(static_cast<Eigen::Index>(k))
        .segment(static_cast<Eigen::Index>(layout.offset(f)),
                 static_cast<Eigen::Index>(layout.cardinality(f)));
  }
  auto phi_block(std::size_t k, std::size_t f) {
    return phi.row(static_cast<Eigen::Index>(k))
        .segment(static_cast<Eigen::Index>(layout.offset(f)),
                 static_cast<Eigen::Index>(layout.cardinality(f)));
  }

  static ModelParams zeros(std::size_t K, ValueLayout layout) {
    ModelParams p;
    const auto k = static_cast<Eigen::Index>(K);
    p.pi = VectorXd::Zero(k);
    p.rho = MatrixXd::Zero(k, k);
    p.theta = MatrixXd::Zero(k, static_cast<Eigen::Index>(layout.num_features()));
    p.phi = MatrixXd::Zero(k, static_cast<Eigen::Index>(layout.total()));
    p.layout = std::move(layout);
    return p;
  }

  // Throws RangeError unless every invariant holds within `tol`.
  void check(double tol = 1e-9) const {
    const auto K = num_states();
    if (K == 0) throw RangeError("model has no states");
    if (static_cast<std::size_t>(rho.rows()) != K || static_cast<std::size_t>(rho.cols()) != K ||
        static_cast<std::size_t>(theta.rows()) != K ||
        static_cast<std::size_t>(theta.cols()) != num_features() ||
        static_cast<std::size_t>(phi.rows()) != K ||
        static_cast<std::size_t>(phi.cols()) != layout.total()) {
      throw RangeError("model parameter shapes are inconsistent");
    }
    if ((pi.array() < 0).any() || std::abs(pi.sum() - 1.0) > tol) {
      throw RangeError("pi is not a probability vector");
    }
    for (Eigen::Index j = 0; j < rho.rows(); ++j) {
      if ((rho.row(j).array() < 0).any() || std::abs(rho.row(j).sum() - 1.0) > tol) {
        throw RangeError("rho row " + std::to_string(j) + " is not stochastic");
      }
    }
    if ((theta.array() <= 0).any() || (theta.array() > 1.0 + tol).any()) {
      throw RangeError("theta must lie in (0, 1]");
    }
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t f = 0; f < num_features(); ++f) {
        const auto b = phi_block(k, f);
        if ((b.array() < 0).any() || std::abs(b.sum() - 1.0) > tol) {
          throw RangeError("phi block is not a distribution");
        }
      }
    }
  }
};

// Versioned text format, every real printed with 17 significant digits:
//   hcfctx-model 1
//   K <K> F <F>
//   V <V_1> ... <V_F>
//   users <name>...            (optional)
//   pi <K reals>
//   rho           then K rows
//   theta         then K rows
//   phi           then K*F rows, one per (k, f) block
namespace model_io {

inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write(const ModelParams& p, std::ostream& out) {
  const auto K = p.num_states();
  const auto F = p.num_features();
  out << "hcfctx-model 1\n";
  out << "K " << K << " F " << F << "\n";
  out << "V";
  for (auto v : p.layout.cardinalities()) out << ' ' << v;
  out << "\n";
  if (!p.users.empty()) {
    out << "users";
    for (const auto& u : p.users) out << ' ' << u;
    out << "\n";
  }
  out << "pi";
  for (std::size_t k = 0; k < K; ++k) out << ' ' << fmt(p.pi[static_cast<Eigen::Index>(k)]);
  out << "\nrho\n";
  for (Eigen::Index j = 0; j < p.rho.rows(); ++j) {
    for (Eigen::Index k = 0; k < p.rho.cols(); ++k) out << (k ? " " : "") << fmt(p.rho(j, k));
    out << "\n";
  }
  out << "theta\n";
  for (Eigen::Index k = 0; k < p.theta.rows(); ++k) {
    for (Eigen::Index f = 0; f < p.theta.cols(); ++f) out << (f ? " " : "") << fmt(p.theta(k, f));
    out << "\n";
  }
  out << "phi\n";
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t f = 0; f < F; ++f) {
      const auto b = p.phi_block(k, f);
      for (Eigen::Index v = 0; v < b.size(); ++v) out << (v ? " " : "") << fmt(b[v]);
      out << "\n";
    }
  }
}

inline std::string to_string(const ModelParams& p) {
  std::ostringstream out;
  write(p, out);
  return out.str();
}

inline ModelParams read(std::istream& in) {
  auto expect = [&](const std::string& word) {
    std::string w;
    if (!(in >> w) || w != word) throw ParseError("model file: expected '" + word + "'");
  };
  auto number = [&]() {
    std::string tok;
    if (!(in >> tok)) throw ParseError("model file: truncated");
    try {
      std::size_t used = 0;
      const double x = std::stod(tok, &used);
      if (used != tok.size()) throw ParseError("model file: bad number '" + tok + "'");
      return x;
    } catch (const std::invalid_argument&) {
      throw ParseError("model file: bad number '" + tok + "'");
    } catch (const std::out_of_range&) {
      // Denormals round-trip through strtod even when stod reports ERANGE.
      return std::strtod(tok.c_str(), nullptr);
    }
  };
  expect("hcfctx-model");
  int version = 0;
  if (!(in >> version) || version != 1) throw ParseError("model file: unsupported version");
  std::size_t K = 0, F = 0;
  expect("K");
  in >> K;
  expect("F");
  in >> F;
  if (!in || K == 0) throw ParseError("model file: bad header");
  expect("V");
  std::vector<std::size_t> card(F);
  for (auto& v : card) {
    if (!(in >> v)) throw ParseError("model file: bad V list");
  }
  ModelParams p = ModelParams::zeros(K, ValueLayout(card));
  std::string word;
  in >> word;
  if (word == "users") {
    std::string line;
    std::getline(in, line);
    std::istringstream names(line);
    for (std::string u; names >> u;) p.users.push_back(u);
    in >> word;
  }
  if (word != "pi") throw ParseError("model file: expected 'pi'");
  for (std::size_t k = 0; k < K; ++k) p.pi[static_cast<Eigen::Index>(k)] = number();
  expect("rho");
  for (Eigen::Index j = 0; j < p.rho.rows(); ++j)
    for (Eigen::Index k = 0; k < p.rho.cols(); ++k) p.rho(j, k) = number();
  expect("theta");
  for (Eigen::Index k = 0; k < p.theta.rows(); ++k)
    for (Eigen::Index f = 0; f < p.theta.cols(); ++f) p.theta(k, f) = number();
  expect("phi");
  for (Eigen::Index k = 0; k < p.phi.rows(); ++k)
    for (Eigen::Index c = 0; c < p.phi.cols(); ++c) p.phi(k, c) = number();
  return p;
}

inline ModelParams from_string(const std::string& s) {
  std::istringstream in(s);
  return read(in);
}

inline void save(const ModelParams& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write model file " + path);
  write(p, out);
}

inline ModelParams load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model file " + path);
  return read(in);
}

}  // namespace model_io

enum class InitMethod { RandomDirichlet, FromPriors, FromData };

struct TrainConfig {
  int max_iters = 100;
  double loglik_rel_tol = 1e-4;
  std::uint64_t seed = 1;
  InitMethod init = InitMethod::FromData;
  int restarts = 4;
};

}  // namespace hcfctx
