#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hcfctx/errors.hpp"
#include "hcfctx/hmm.hpp"
#include "hcfctx/model.hpp"
#include "hcfctx/schema.hpp"

namespace hcfctx {

/// log p(o_{split..T-1} | o_{0..split-1}) = log sum_k alpha'_{split-1}(k) beta_{split-1}(k).
inline double log_predictive(const ModelParams& p, const Dataset& d, std::size_t split) {
  if (split < 1 || split >= d.length()) throw RangeError("split must satisfy 1 <= split < T");
  FBCache c = forward(p, d);
  backward(p, c);
  const auto t = static_cast<Eigen::Index>(split - 1);
  double lp = std::log(c.alpha_hat.col(t).dot(c.beta_hat.col(t)));
  for (Eigen::Index s = t + 1; s < c.log_scale.size(); ++s) lp -= c.log_scale[s];
  if (!std::isfinite(lp)) throw DegenerateError("predictive probability is zero");
  return lp;
}

/// exp(-log p(o_{split..} | o_{..split-1}) / #present instances in [split, T)).
/// A span without instances has perplexity 1.
inline double perplexity(const ModelParams& p, const Dataset& d, std::size_t split) {
  const auto n = d.count_instances(split, d.length());
  const double lp = log_predictive(p, d, split);
  if (n == 0) return 1.0;
  return std::exp(-lp / static_cast<double>(n));
}

struct WindowConfig {
  std::size_t given = 12;
  std::size_t predict = 12;
  std::size_t stride = 24;
};

struct WindowScore {
  std::size_t start = 0;  // first slot of the given part
  double perplexity = 0.0;
};

/// Windows [start, start+given+predict) stepping by stride inside [begin, end).
inline std::vector<WindowScore> windowed_perplexity(const ModelParams& p, const Dataset& d,
                                                    std::size_t begin, std::size_t end,
                                                    const WindowConfig& w) {
  if (w.given < 1 || w.predict < 1 || w.stride < 1) throw RangeError("bad window configuration");
  std::vector<WindowScore> out;
  for (std::size_t s = begin; s + w.given + w.predict <= end; s += w.stride) {
    const Dataset win = slice(d, s, s + w.given + w.predict);
    out.push_back({s, perplexity(p, win, w.given)});
  }
  return out;
}

struct SelectionConfig {
  double train_fraction = 2.0 / 3.0;
  WindowConfig window;
  double drop_threshold = 0.10;
  std::size_t k_step = 1;  // K grid: k_min, k_min + k_step, ... <= k_max
  HyperSpec hyper;
  TrainConfig train;
};

inline std::size_t train_end(const Dataset& d, const SelectionConfig& cfg) {
  const auto T = d.length();
  const auto n = static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(T)));
  if (n < 1 || n >= T) throw RangeError("train/test split leaves an empty part");
  return n;
}

struct PerplexityReport {
  std::size_t K = 0;
  std::vector<std::string> group;
  double mean_perplexity = 0.0;
  std::vector<WindowScore> per_window;
};

inline double mean_of(const std::vector<WindowScore>& w) {
  if (w.empty()) throw RangeError("no evaluation windows fit in the test span");
  double s = 0.0;
  for (const auto& x : w) s += x.perplexity;
  return s / static_cast<double>(w.size());
}

/// Rule: the first K_i whose relative drop (P_{i-1} - P_i) / P_{i-1} falls
/// below the threshold selects K_{i-1}; without such a drop the largest K.
inline std::size_t apply_drop_rule(const std::vector<PerplexityReport>& reports, double threshold) {
  if (reports.empty()) throw RangeError("no perplexity reports");
  for (std::size_t i = 1; i < reports.size(); ++i) {
    const double prev = reports[i - 1].mean_perplexity;
    const double drop = (prev - reports[i].mean_perplexity) / prev;
    if (drop < threshold) return reports[i - 1].K;
  }
  return reports.back().K;
}

inline ModelParams train_model(const Dataset& train, std::size_t K, const SelectionConfig& cfg) {
  return em_train(train, K, cfg.hyper.build(K, train), cfg.train).params;
}

struct SelectKResult {
  std::size_t K = 0;
  std::vector<PerplexityReport> reports;
  std::vector<ModelParams> models;  // one per report
};

inline SelectKResult select_k(const Dataset& d, std::size_t k_min, std::size_t k_max,
                              const SelectionConfig& cfg) {
  if (k_min < 1 || k_max < k_min || cfg.k_step < 1) throw RangeError("bad K range");
  const auto split = train_end(d, cfg);
  const Dataset train = slice(d, 0, split);
  SelectKResult r;
  for (std::size_t K = k_min; K <= k_max; K += cfg.k_step) {
    ModelParams m = train_model(train, K, cfg);
    PerplexityReport rep;
    rep.K = K;
    rep.group = d.user_names;
    rep.per_window = windowed_perplexity(m, d, split, d.length(), cfg.window);
    rep.mean_perplexity = mean_of(rep.per_window);
    r.reports.push_back(std::move(rep));
    r.models.push_back(std::move(m));
  }
  r.K = apply_drop_rule(r.reports, cfg.drop_threshold);
  return r;
}

/// All g-subsets of {0..M-1} in lexicographic order, optionally only those
/// containing `primary`.
inline std::vector<std::vector<std::size_t>> enumerate_groups(std::size_t M, std::size_t g,
                                                              std::optional<std::size_t> primary) {
  std::vector<std::vector<std::size_t>> out;
  if (g == 0 || g > M) return out;
  std::vector<std::size_t> c(g);
  for (std::size_t i = 0; i < g; ++i) c[i] = i;
  for (;;) {
    if (!primary || std::find(c.begin(), c.end(), *primary) != c.end()) out.push_back(c);
    std::size_t i = g;
    while (i > 0 && c[i - 1] == M - g + i - 1) --i;
    if (i == 0) break;
    ++c[i - 1];
    for (std::size_t j = i; j < g; ++j) c[j] = c[j - 1] + 1;
  }
  return out;
}

inline std::string group_label(const std::vector<std::string>& names) {
  std::string s;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) s += '+';
    s += names[i];
  }
  return s;
}

struct GroupResult {
  std::vector<std::string> group;
  std::size_t K = 0;
  double mean_perplexity = 0.0;
  std::vector<PerplexityReport> reports;       // every (group, K) evaluated
  std::vector<PerplexityReport> group_scores;  // one per group at its K*
};

/// Exhaustive group search: every candidate group gets its own select_k and
/// is scored by its mean perplexity at K*. Ties go to the lexicographically
/// smallest group (by user index).
inline GroupResult select_group(const Dataset& d, std::size_t g, std::size_t k_min,
                                std::size_t k_max, const SelectionConfig& cfg,
                                std::optional<std::string> primary) {
  if (g < 2 || g > d.num_users()) throw RangeError("group size must satisfy 2 <= g <= M");
  std::optional<std::size_t> prim;
  if (primary) prim = d.require_user(*primary);
  GroupResult best;
  best.mean_perplexity = std::numeric_limits<double>::infinity();
  for (const auto& idx : enumerate_groups(d.num_users(), g, prim)) {
    const Dataset sub = restrict_users(d, idx);
    auto sk = select_k(sub, k_min, k_max, cfg);
    const auto& at = *std::find_if(sk.reports.begin(), sk.reports.end(),
                                   [&](const auto& r) { return r.K == sk.K; });
    best.group_scores.push_back(at);
    if (at.mean_perplexity < best.mean_perplexity) {
      best.mean_perplexity = at.mean_perplexity;
      best.group = sub.user_names;
      best.K = sk.K;
    }
    for (auto& r : sk.reports) best.reports.push_back(std::move(r));
  }
  if (best.group.empty()) throw RangeError("no candidate groups");
  return best;
}

struct SlotChoice {
  int start_hour = 0;
  std::vector<std::string> group;
  double mean_perplexity = 0.0;
};

struct TimeslotResult {
  std::vector<SlotChoice> slots;
  // group label -> per-slot mean perplexity (same order as slots)
  std::map<std::string, std::vector<double>> table;
};

/// Per time-of-day group selection. Each candidate group is trained once at
/// K on the training part; for every slot the windows predict the
/// `slot_hours` slots starting at that hour from the `given` preceding slots.
/// Slot start hours must partition the day into equal bins.
inline TimeslotResult select_group_by_timeslot(const Dataset& d, std::size_t g, std::size_t K,
                                               const std::vector<int>& slot_starts,
                                               const SelectionConfig& cfg,
                                               std::optional<std::string> primary) {
  if (g < 1 || g > d.num_users()) throw RangeError("bad group size");
  if (slot_starts.empty()) throw RangeError("no slots");
  if (d.period_seconds <= 0 || utc::kHour % d.period_seconds != 0) {
    throw PeriodError("time-slot selection needs a period dividing one hour");
  }
  const std::size_t per_hour = static_cast<std::size_t>(utc::kHour / d.period_seconds);
  const int width = 24 / static_cast<int>(slot_starts.size());
  for (std::size_t i = 0; i < slot_starts.size(); ++i) {
    if (24 % slot_starts.size() != 0 || slot_starts[i] != slot_starts[0] + width * static_cast<int>(i)) {
      throw RangeError("slots must partition the day into equal bins");
    }
  }
  std::optional<std::size_t> prim;
  if (primary) prim = d.require_user(*primary);
  const auto split = train_end(d, cfg);
  const Dataset train_all = slice(d, 0, split);
  WindowConfig w;
  w.given = cfg.window.given;
  w.predict = static_cast<std::size_t>(width) * per_hour;

  TimeslotResult out;
  std::vector<std::vector<std::string>> groups;
  for (const auto& idx : enumerate_groups(d.num_users(), g, prim)) {
    const Dataset sub = restrict_users(d, idx);
    const ModelParams m = train_model(restrict_users(train_all, idx), K, cfg);
    std::vector<double> per_slot;
    for (int start : slot_starts) {
      std::vector<WindowScore> scores;
      for (std::size_t t = split + w.given; t + w.predict <= d.length(); ++t) {
        const auto ts = d.timestamp(t);
        if (utc::hour_of_day(ts) != start || (ts % utc::kHour) != 0) continue;
        const Dataset win = slice(sub, t - w.given, t + w.predict);
        scores.push_back({t - w.given, perplexity(m, win, w.given)});
      }
      per_slot.push_back(mean_of(scores));
    }
    out.table[group_label(sub.user_names)] = per_slot;
    groups.push_back(sub.user_names);
  }
  if (groups.empty()) throw RangeError("no candidate groups");
  for (std::size_t s = 0; s < slot_starts.size(); ++s) {
    SlotChoice c;
    c.start_hour = slot_starts[s];
    c.mean_perplexity = std::numeric_limits<double>::infinity();
    for (const auto& grp : groups) {
      const double v = out.table[group_label(grp)][s];
      if (v < c.mean_perplexity) {
        c.mean_perplexity = v;
        c.group = grp;
      }
    }
    out.slots.push_back(std::move(c));
  }
  return out;
}

// group,K,mean_perplexity
inline void write_reports_csv(std::ostream& out, const std::vector<PerplexityReport>& reports) {
  out << "group,K,mean_perplexity\n";
  char buf[40];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%.10g", r.mean_perplexity);
    out << group_label(r.group) << ',' << r.K << ',' << buf << '\n';
  }
}

}  // namespace hcfctx
