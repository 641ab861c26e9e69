#pragma once

#include <sodium.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hcfctx/context_log.hpp"
#include "hcfctx/hmm.hpp"
#include "hcfctx/mpc/audit.hpp"
#include "hcfctx/mpc/secure_hmm.hpp"
#include "hcfctx/prediction.hpp"
#include "hcfctx/selection.hpp"
#include "hcfctx/synthetic.hpp"
#include "json.hpp"

namespace hcfctx::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// Bad flags, config keys or option values (exit code 1).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Kind { Int, Real, Str, Bool, Path, IntList, RealList, StrList, PathList };

struct OptionSpec {
  std::string name;  // flag without dashes; also the config key
  Kind kind;
  json def;  // null = required
  std::string help;
};

struct CommandSpec {
  std::string name;
  std::string help;
  std::vector<OptionSpec> options;

  const OptionSpec* find(const std::string& key) const {
    for (const auto& o : options) {
      if (o.name == key) return &o;
    }
    return nullptr;
  }
};

inline constexpr const char* kConfigEnv = "HCFCTX_CONFIG";

// ---- option tables ----------------------------------------------------------

namespace detail {

inline std::vector<OptionSpec> join(std::initializer_list<std::vector<OptionSpec>> parts) {
  std::vector<OptionSpec> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

inline std::vector<OptionSpec> data_options() {
  return {{"data", Kind::Path, nullptr, "context log CSV (timestamp,user,<features>...)"},
          {"schema", Kind::Path, "", "schema file (name:cardinality:v1|v2|...); empty = built-in demo schema"}};
}

inline std::vector<OptionSpec> hyper_options() {
  return {{"eta-total", Kind::Real, 1.0, "initial-state pseudo-count total (eta_k = total/K)"},
          {"omega-total", Kind::Real, 50.0, "transition pseudo-count total per row (omega = total/K)"},
          {"lambda", Kind::Real, 0.01, "value pseudo-count"},
          {"delta-high", Kind::Real, 10.0, "availability pseudo-count for frequently observed features"},
          {"delta-low", Kind::Real, 1.0, "availability pseudo-count for rarely observed features"},
          {"availability-cut", Kind::Real, 0.5, "empirical availability above which delta-high applies"}};
}

inline std::vector<OptionSpec> train_options() {
  return {{"iters", Kind::Int, 100, "maximum EM iterations"},
          {"tol", Kind::Real, 1e-4, "relative loglik change that stops EM"},
          {"restarts", Kind::Int, 4, "random restarts (best final loglik wins)"},
          {"seed", Kind::Int, 1, "training seed"},
          {"init", Kind::Str, "data", "initialization: data | random | priors"}};
}

inline std::vector<OptionSpec> window_options(int given, int predict, int stride) {
  return {{"given", Kind::Int, given, "slots conditioned on per perplexity window"},
          {"predict", Kind::Int, predict, "slots scored per perplexity window"},
          {"stride", Kind::Int, stride, "slots between window starts"}};
}

}  // namespace detail

inline const std::vector<CommandSpec>& command_specs() {
  using detail::join;
  static const std::vector<CommandSpec> specs = [] {
    std::vector<CommandSpec> s;
    s.push_back({"gen", "sample a synthetic context log from a structured generator",
                 {{"schema", Kind::Path, "", "schema file; empty = built-in demo schema"},
                  {"k", Kind::Int, 4, "hidden states of the generator"},
                  {"shared", Kind::Int, 2, "users driven by the common latent chain"},
                  {"independent", Kind::Int, 0, "extra users with a latent chain each"},
                  {"T", Kind::Int, 1512, "time slots"},
                  {"seed", Kind::Int, 1, "generator and sampling seed"},
                  {"start", Kind::Str, "2024-01-01T00:00:00Z", "first timestamp (ISO-8601 UTC)"},
                  {"period", Kind::Int, 3600, "sampling period in seconds"},
                  {"stay", Kind::Real, 0.8, "self-transition probability"},
                  {"peak", Kind::Real, 0.7, "mass of each state's dominant value"},
                  {"time-features", Kind::Bool, false, "overwrite Day Period, Day Name and Holiday from timestamps"},
                  {"holidays", Kind::Path, "", "holiday dates file used with --time-features"}}});
    s.push_back({"train", "fit a context model by EM",
                 join({detail::data_options(),
                       {{"k", Kind::Str, "4", "hidden states, or 'auto' for perplexity-based selection"},
                        {"k-min", Kind::Int, 2, "smallest K tried by --k auto"},
                        {"k-max", Kind::Int, 12, "largest K tried by --k auto"},
                        {"k-step", Kind::Int, 1, "spacing of the K grid tried by --k auto"},
                        {"drop", Kind::Real, 0.10, "relative perplexity drop below which --k auto stops"},
                        {"train-fraction", Kind::Real, 2.0 / 3.0, "training share used by --k auto"},
                        {"group", Kind::StrList, json::array(), "users to train on (default: all)"},
                        {"train-slots", Kind::Int, 0, "train on the first N slots only (0 = all)"}},
                       detail::window_options(12, 12, 24), detail::hyper_options(), detail::train_options()})});
    s.push_back({"predict", "forecast a user's next slot from trailing windows and grade the forecasts",
                 join({detail::data_options(),
                       {{"models", Kind::PathList, nullptr, "model files; several are averaged"},
                        {"user", Kind::Str, "", "target user (default: first user in the log)"},
                        {"window", Kind::Int, 24, "prefix length in slots"},
                        {"stride", Kind::Int, 3, "slots between prediction targets"},
                        {"begin", Kind::Int, 0, "first slot usable as prefix"},
                        {"end", Kind::Int, 0, "one past the last target slot (0 = log end)"}}})});
    s.push_back({"perplexity", "windowed perplexity of a model on a log",
                 join({detail::data_options(),
                       {{"model", Kind::Path, nullptr, "model file"},
                        {"begin", Kind::Int, 0, "first slot of the scored range"},
                        {"end", Kind::Int, 0, "one past the last slot (0 = log end)"}},
                       detail::window_options(12, 12, 24)})});
    s.push_back({"select-group", "choose the user group (and K) with the lowest held-out perplexity",
                 join({detail::data_options(),
                       {{"g", Kind::Int, 2, "group size"},
                        {"primary", Kind::Str, "", "only groups containing this user"},
                        {"k-min", Kind::Int, 2, "smallest K per group"},
                        {"k-max", Kind::Int, 8, "largest K per group"},
                        {"k-step", Kind::Int, 1, "spacing of the K grid"},
                        {"drop", Kind::Real, 0.10, "relative perplexity drop below which K stops growing"},
                        {"train-fraction", Kind::Real, 2.0 / 3.0, "training share of the log"},
                        {"slots", Kind::IntList, json::array(), "time-of-day slot start hours (per-slot mode)"},
                        {"k", Kind::Int, 4, "K for every group in per-slot mode"}},
                       detail::window_options(12, 12, 24), detail::hyper_options(), detail::train_options()})});
    s.push_back({"mpc", "run EM iterations under the multi-party protocol and compare with plaintext",
                 join({detail::data_options(),
                       {{"k", Kind::Int, 2, "hidden states"},
                        {"group", Kind::StrList, json::array(), "participating users (default: all)"},
                        {"T", Kind::Int, 0, "use the first T slots only (0 = all)"},
                        {"keybits", Kind::IntList, json::array({512}), "Paillier modulus sizes; several = grid"},
                        {"c", Kind::IntList, json::array({1000000}), "fixed-point scales; several = grid"},
                        {"iters", Kind::Int, 1, "EM iterations"},
                        {"seed", Kind::Int, 1, "protocol seed (keys, masks)"},
                        {"init-seed", Kind::Int, 1, "seed of the initial parameters"},
                        {"aggregator", Kind::Int, 2, "party id of the aggregator"},
                        {"jobs", Kind::Int, 0, "concurrent grid cells (0 = hardware threads)"}},
                       detail::hyper_options()})});
    s.push_back({"rotate", "per-fold accuracy with three-week test folds rotated over nine weeks",
                 join({detail::data_options(),
                       {{"fold", Kind::Str, "all", "first | mid | last | all"},
                        {"k", Kind::Int, 4, "hidden states"},
                        {"user", Kind::Str, "", "target user (default: first user in the log)"},
                        {"group", Kind::StrList, json::array(), "collaborative group averaged with the personal model"},
                        {"weeks", Kind::Int, 9, "weeks in the log"},
                        {"test-weeks", Kind::Int, 3, "weeks per test fold"},
                        {"window", Kind::Int, 24, "prefix length in slots"},
                        {"stride", Kind::Int, 3, "slots between prediction targets"},
                        {"jobs", Kind::Int, 0, "concurrent folds (0 = hardware threads)"}},
                       detail::hyper_options(), detail::train_options()})});
    s.push_back({"bench", "time the encrypted forward pass (and optionally one EM step) over T and key sizes",
                 {{"T", Kind::IntList, json::array({250, 500, 1000, 2000}), "sequence lengths"},
                  {"keybits", Kind::IntList, json::array({512}), "Paillier modulus sizes"},
                  {"c", Kind::Int, 1000000, "fixed-point scale"},
                  {"k", Kind::Int, 2, "hidden states"},
                  {"users", Kind::Int, 2, "parties holding data"},
                  {"phase", Kind::Str, "forward", "forward | em | both"},
                  {"repeats", Kind::Int, 1, "runs per cell; the fastest is reported"},
                  {"seed", Kind::Int, 1, "data, key and mask seed"}}});
    for (auto& c : s) c.options.push_back({"out", Kind::Path, nullptr, "output directory"});
    return s;
  }();
  return specs;
}

inline const CommandSpec& command_spec(const std::string& name) {
  for (const auto& c : command_specs()) {
    if (c.name == name) return c;
  }
  throw UsageError("unknown command '" + name + "'");
}

// ---- option resolution ------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

inline json scalar_from_text(Kind k, const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    switch (k) {
      case Kind::Int:
      case Kind::IntList: {
        const long long v = std::stoll(text, &used);
        if (used != text.size()) break;
        return v;
      }
      case Kind::Real:
      case Kind::RealList: {
        const double v = std::stod(text, &used);
        if (used != text.size()) break;
        return v;
      }
      case Kind::Bool:
        if (text == "true" || text == "1") return true;
        if (text == "false" || text == "0") return false;
        break;
      case Kind::Path:
      case Kind::PathList:
        return text.empty() ? std::string() : fs::absolute(text).lexically_normal().string();
      default:
        return text;
    }
  } catch (const std::logic_error&) {
  }
  throw UsageError("option '" + key + "': cannot parse '" + text + "'");
}

inline bool is_list(Kind k) {
  return k == Kind::IntList || k == Kind::RealList || k == Kind::StrList || k == Kind::PathList;
}

inline json from_text(const OptionSpec& o, const std::string& text) {
  if (!is_list(o.kind)) return scalar_from_text(o.kind, o.name, text);
  json arr = json::array();
  for (const auto& part : split_list(text)) arr.push_back(scalar_from_text(o.kind, o.name, part));
  return arr;
}

// Type-checks a config-file value, converting comma strings for lists.
inline json from_config(const OptionSpec& o, const json& v) {
  auto scalar = [&](const json& x) -> json {
    switch (o.kind) {
      case Kind::Int:
      case Kind::IntList:
        if (x.is_number_integer()) return x;
        break;
      case Kind::Real:
      case Kind::RealList:
        if (x.is_number()) return x.get<double>();
        break;
      case Kind::Bool:
        if (x.is_boolean()) return x;
        break;
      case Kind::Str:
      case Kind::StrList:
        if (x.is_string()) return x;
        if (o.name == "k" && x.is_number_integer()) return std::to_string(x.get<long long>());
        break;
      case Kind::Path:
      case Kind::PathList:
        if (x.is_string()) return scalar_from_text(o.kind, o.name, x.get<std::string>());
        break;
    }
    throw UsageError("config key '" + o.name + "' has the wrong type");
  };
  if (!is_list(o.kind)) return scalar(v);
  if (v.is_string()) return from_text(o, v.get<std::string>());
  if (!v.is_array()) return json::array({scalar(v)});
  json arr = json::array();
  for (const auto& x : v) arr.push_back(scalar(x));
  return arr;
}

}  // namespace detail

inline json load_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  try {
    json j = json::parse(in);
    if (!j.is_object()) throw ParseError("config file must hold a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw ParseError("config file " + path.string() + ": " + e.what());
  }
}

/// Path from --config, else $HCFCTX_CONFIG, else none.
inline std::optional<fs::path> config_path(const std::string& flag) {
  if (!flag.empty()) return fs::path(flag);
  if (const char* env = std::getenv(kConfigEnv); env && *env) return fs::path(env);
  return std::nullopt;
}

/// Built-in defaults, overlaid by the config file (its "all" section, then
/// the section named after the command), overlaid by explicit flags.
inline json resolve_options(const CommandSpec& spec, const json& file, const std::map<std::string, std::string>& flags) {
  json out = json::object();
  for (const auto& o : spec.options) out[o.name] = o.def;
  if (file.contains("all")) {
    for (const auto& [key, v] : file.at("all").items()) {
      if (const auto* o = spec.find(key)) out[key] = detail::from_config(*o, v);
    }
  }
  if (file.contains(spec.name)) {
    for (const auto& [key, v] : file.at(spec.name).items()) {
      const auto* o = spec.find(key);
      if (!o) throw UsageError("config section '" + spec.name + "' has unknown key '" + key + "'");
      out[key] = detail::from_config(*o, v);
    }
  }
  for (const auto& [key, text] : flags) {
    const auto* o = spec.find(key);
    if (!o) throw UsageError("unknown option --" + key);
    out[key] = detail::from_text(*o, text);
  }
  for (const auto& o : spec.options) {
    if (out[o.name].is_null()) throw UsageError("--" + o.name + " is required");
  }
  return out;
}

// ---- files and digests ------------------------------------------------------

inline std::string digest_hex(std::string_view bytes) {
  crypto::ensure_sodium();
  unsigned char h[32];
  crypto_generichash(h, sizeof h, reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), nullptr, 0);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned char c : h) {
    out += hex[c >> 4];
    out += hex[c & 15];
  }
  return out;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Drops the named column from every line of a CSV.
inline std::string mask_csv_column(const std::string& text, const std::string& column) {
  std::istringstream in(text);
  std::string line, out;
  std::optional<std::size_t> idx;
  bool header = true;
  while (std::getline(in, line)) {
    auto cells = csv::split_row(line);
    if (header) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] == column) idx = i;
      }
      header = false;
    }
    std::string kept;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (idx && i == *idx) continue;
      if (!kept.empty()) kept += ',';
      kept += cells[i];
    }
    out += kept + '\n';
  }
  return out;
}

inline std::string content_digest(const std::string& content, const std::string& mask) {
  return digest_hex(mask.empty() ? content : mask_csv_column(content, mask));
}

/// Writes through a temporary sibling and renames it into place.
inline void write_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.parent_path() / ("." + path.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

// ---- run bookkeeping --------------------------------------------------------

/// One command execution: its output directory and the manifest it leaves.
class Run {
 public:
  Run(std::string command, json config) : command_(std::move(command)), config_(std::move(config)) {
    out_ = config_.at("out").get<std::string>();
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec) throw IoError("cannot create output directory " + out_.string() + ": " + ec.message());
    start_ = std::chrono::steady_clock::now();
  }

  const json& config() const { return config_; }
  const fs::path& out() const { return out_; }

  void input(const std::string& path) {
    if (path.empty()) return;
    for (const auto& i : inputs_) {
      if (i["path"] == path) return;
    }
    inputs_.push_back({{"path", path}, {"blake2b", digest_hex(read_file(path))}});
  }

  /// `mask` names a CSV column excluded from the recorded digest (wall-clock columns).
  void write(const std::string& name, const std::string& content, const std::string& mask = "") {
    std::lock_guard lock(mu_);
    write_atomic(out_ / name, content);
    json o = {{"path", name}, {"bytes", content.size()}, {"blake2b", content_digest(content, mask)}};
    if (!mask.empty()) o["masked_column"] = mask;
    outputs_.push_back(std::move(o));
  }

  void time(const std::string& key, double seconds) {
    std::lock_guard lock(mu_);
    timings_[key] = seconds;
  }

  void note(const std::string& line) {
    std::lock_guard lock(mu_);
    notes_.push_back(line);
  }
  const std::vector<std::string>& notes() const { return notes_; }

  // Deferred failure: the manifest is still written, then the error raised.
  void fail(const std::string& why) { failure_ = why; }
  const std::optional<std::string>& failure() const { return failure_; }

  json manifest() const {
    json seeds = json::object();
    for (const auto& [k, v] : config_.items()) {
      if (k.find("seed") != std::string::npos) seeds[k] = v;
    }
    json m = {{"tool", "hcfctx"},  {"format", 1},        {"command", command_}, {"config", config_},
              {"seeds", seeds},    {"inputs", inputs_}, {"outputs", outputs_}};
    json t = timings_;
    t["total_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    m["timings"] = t;
    if (failure_) m["failure"] = *failure_;
    return m;
  }

  json finish() {
    json m = manifest();
    write_atomic(out_ / "manifest.json", m.dump(2) + "\n");
    return m;
  }

 private:
  std::string command_;
  json config_;
  fs::path out_;
  json inputs_ = json::array();
  json outputs_ = json::array();
  json timings_ = json::object();
  std::vector<std::string> notes_;
  std::optional<std::string> failure_;
  std::chrono::steady_clock::time_point start_;
  std::mutex mu_;
};

/// Runs fn(0..n-1) on up to `jobs` threads (0 = hardware threads); the
/// first exception by index is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, n);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> workers;
  for (std::size_t j = 0; j < jobs; ++j) {
    workers.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---- shared helpers ---------------------------------------------------------

/// Demo vocabulary with the usual mobile-context features at small cardinalities.
inline FeatureSchema demo_schema() {
  auto numbered = [](const std::string& stem, int n) {
    std::vector<std::string> v;
    for (int i = 1; i <= n; ++i) v.push_back(stem + std::to_string(i));
    return v;
  };
  FeatureSchema s;
  s.add("WiFi", numbered("wifi", 12));
  s.add("Place Name", {"home", "office", "cafe", "gym", "mall", "station"});
  s.add("Cell ID", numbered("cid", 10));
  s.add("LAC", numbered("lac", 4));
  s.add("Battery Level", {"Low", "Medium", "High", "Full"});
  s.add("Battery Status", {"Charging", "Discharging", "Full", "Unknown"});
  s.add("Day Period", {"Morning", "Noon", "Afternoon", "Evening", "Night"});
  s.add("Day Name", {"Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"});
  s.add("Holiday", {"Yes", "No"});
  return s;
}

namespace detail {

inline std::string str(const json& c, const char* k) { return c.at(k).get<std::string>(); }
inline long long integer(const json& c, const char* k) { return c.at(k).get<long long>(); }
inline double real(const json& c, const char* k) { return c.at(k).get<double>(); }

inline std::size_t count(const json& c, const char* k) {
  const long long v = integer(c, k);
  if (v < 0) throw UsageError(std::string("--") + k + " must be non-negative");
  return static_cast<std::size_t>(v);
}

inline std::size_t positive(const json& c, const char* k) {
  const std::size_t v = count(c, k);
  if (v == 0) throw UsageError(std::string("--") + k + " must be positive");
  return v;
}

inline std::vector<std::string> strings(const json& c, const char* k) {
  return c.at(k).get<std::vector<std::string>>();
}

inline FeatureSchema schema_of(const json& c, Run& run) {
  const std::string path = str(c, "schema");
  if (path.empty()) return demo_schema();
  run.input(path);
  return load_schema(path);
}

inline Dataset data_of(const json& c, Run& run, const FeatureSchema& schema) {
  const std::string path = str(c, "data");
  run.input(path);
  return load_log(path, schema);
}

inline Dataset users_named(const Dataset& d, const std::vector<std::string>& names) {
  if (names.empty()) return d;
  std::vector<std::size_t> idx;
  for (const auto& n : names) idx.push_back(d.require_user(n));
  return restrict_users(d, idx);
}

inline HyperSpec hyper_of(const json& c) {
  HyperSpec h;
  h.eta_total = real(c, "eta-total");
  h.omega_total = real(c, "omega-total");
  h.lambda_value = real(c, "lambda");
  h.delta_high = real(c, "delta-high");
  h.delta_low = real(c, "delta-low");
  h.availability_cut = real(c, "availability-cut");
  return h;
}

inline TrainConfig train_of(const json& c) {
  TrainConfig t;
  t.max_iters = static_cast<int>(integer(c, "iters"));
  t.loglik_rel_tol = real(c, "tol");
  t.restarts = static_cast<int>(integer(c, "restarts"));
  t.seed = static_cast<std::uint64_t>(integer(c, "seed"));
  const std::string init = str(c, "init");
  if (init == "data") {
    t.init = InitMethod::FromData;
  } else if (init == "random") {
    t.init = InitMethod::RandomDirichlet;
  } else if (init == "priors") {
    t.init = InitMethod::FromPriors;
  } else {
    throw UsageError("--init must be data, random or priors");
  }
  return t;
}

inline WindowConfig window_of(const json& c) {
  WindowConfig w;
  w.given = positive(c, "given");
  w.predict = positive(c, "predict");
  w.stride = positive(c, "stride");
  return w;
}

inline std::string num(double x) { return model_io::fmt(x); }

inline std::string trace_csv(const std::vector<double>& trace) {
  std::string s = "iteration,loglik\n";
  for (std::size_t i = 0; i < trace.size(); ++i) s += std::to_string(i) + ',' + num(trace[i]) + '\n';
  return s;
}

template <class Writer>
std::string render(Writer&& w) {
  std::ostringstream os;
  w(os);
  return os.str();
}

}  // namespace detail

// ---- commands ---------------------------------------------------------------

inline void cmd_gen(const json& c, Run& run) {
  using namespace detail;
  const FeatureSchema schema = schema_of(c, run);
  const std::size_t K = positive(c, "k");
  const std::size_t shared = count(c, "shared"), independent = count(c, "independent");
  if (shared + independent == 0) throw UsageError("need at least one user");
  const std::size_t T = positive(c, "T");
  const auto seed = static_cast<std::uint64_t>(integer(c, "seed"));
  const utc::Seconds period = static_cast<utc::Seconds>(positive(c, "period"));
  SyntheticSpec spec;
  spec.stay = real(c, "stay");
  spec.peak = real(c, "peak");
  const ModelParams p = synthetic_model(K, ValueLayout(schema.cardinalities()), spec, mix_seed(seed, 1));
  Dataset d = sample_planted(p, schema, T, shared, independent, mix_seed(seed, 2), utc::parse_iso8601(str(c, "start")),
                             period);
  if (c.at("time-features").get<bool>()) {
    HolidaySet holidays;
    if (const auto h = str(c, "holidays"); !h.empty()) {
      run.input(h);
      holidays = load_holidays(h);
    }
    d = derive_time_features(d, holidays);
  }
  ModelParams named = p;
  named.users = d.user_names;
  run.write("generator.model", model_io::to_string(named));
  run.write("data.csv", format_log(d));
  run.write("schema.txt", format_schema(schema));
  run.note("sampled " + std::to_string(d.num_users()) + " users x " + std::to_string(T) + " slots");
}

inline void cmd_train(const json& c, Run& run) {
  using namespace detail;
  const FeatureSchema schema = schema_of(c, run);
  Dataset d = users_named(data_of(c, run, schema), strings(c, "group"));
  if (const std::size_t n = count(c, "train-slots"); n > 0) d = slice(d, 0, std::min(n, d.length()));
  SelectionConfig sel;
  sel.hyper = hyper_of(c);
  sel.train = train_of(c);
  sel.window = window_of(c);
  sel.drop_threshold = real(c, "drop");
  sel.train_fraction = real(c, "train-fraction");
  sel.k_step = positive(c, "k-step");
  const std::string kopt = str(c, "k");
  std::size_t K = 0;
  if (kopt == "auto") {
    const auto sk = select_k(d, positive(c, "k-min"), positive(c, "k-max"), sel);
    K = sk.K;
    run.write("k_select.csv", render([&](std::ostream& os) { write_reports_csv(os, sk.reports); }));
  } else {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(kopt, &used);
      if (used != kopt.size() || v < 1) throw std::invalid_argument(kopt);
      K = static_cast<std::size_t>(v);
    } catch (const std::logic_error&) {
      throw UsageError("--k must be a positive integer or 'auto'");
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = em_train(d, K, sel.hyper.build(K, d), sel.train);
  run.time("em_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  run.write("model.txt", model_io::to_string(r.params));
  run.write("trace.csv", trace_csv(r.trace));
  std::string summary = "K,users,slots,iterations,converged,best_restart,final_loglik\n";
  summary += std::to_string(K) + ',' + group_label(d.user_names) + ',' + std::to_string(d.length()) + ',' +
             std::to_string(r.iterations) + ',' + (r.converged ? "1" : "0") + ',' + std::to_string(r.best_restart) +
             ',' + num(r.final_loglik()) + '\n';
  run.write("summary.csv", summary);
  run.note("K=" + std::to_string(K) + " iterations=" + std::to_string(r.iterations) +
           " loglik=" + num(r.final_loglik()));
}

inline void cmd_predict(const json& c, Run& run) {
  using namespace detail;
  const FeatureSchema schema = schema_of(c, run);
  const Dataset d = data_of(c, run, schema);
  std::vector<ModelParams> models;
  for (const auto& path : strings(c, "models")) {
    run.input(path);
    models.push_back(model_io::load(path));
  }
  if (models.empty()) throw UsageError("--models needs at least one file");
  std::string user = str(c, "user");
  if (user.empty()) user = d.user_names.at(0);
  EvalConfig ec;
  ec.window = positive(c, "window");
  ec.stride = positive(c, "stride");
  ec.begin = count(c, "begin");
  ec.end = count(c, "end");
  const auto records = evaluate(models, d, user, ec);
  run.write("forecast.csv", render([&](std::ostream& os) { write_forecast_csv(os, records, schema); }));
  run.write("accuracy.csv", render([&](std::ostream& os) { write_accuracy_csv(os, records, schema); }));
  run.write("grades.csv", render([&](std::ostream& os) { write_grade_csv(os, records); }));
  const auto acc = feature_accuracy(records, schema.size());
  std::string s = "feature,correct,total,accuracy\n";
  std::size_t hit = 0, tot = 0;
  for (std::size_t f = 0; f < acc.size(); ++f) {
    s += csv::escape(schema[f].name) + ',' + std::to_string(acc[f].correct) + ',' + std::to_string(acc[f].total) +
         ',' + num(acc[f].rate()) + '\n';
    hit += acc[f].correct;
    tot += acc[f].total;
  }
  s += "ALL," + std::to_string(hit) + ',' + std::to_string(tot) + ',' +
       num(tot ? static_cast<double>(hit) / static_cast<double>(tot) : 0.0) + '\n';
  run.write("summary.csv", s);
  run.note(std::to_string(records.size()) + " predictions for " + user);
}

inline void cmd_perplexity(const json& c, Run& run) {
  using namespace detail;
  const FeatureSchema schema = schema_of(c, run);
  const std::string mpath = str(c, "model");
  run.input(mpath);
  const ModelParams p = model_io::load(mpath);
  const Dataset all = data_of(c, run, schema);
  const Dataset d = users_for_model(p, all, all.user_names);
  const std::size_t end = count(c, "end") == 0 ? d.length() : std::min(count(c, "end"), d.length());
  const auto scores = windowed_perplexity(p, d, count(c, "begin"), end, window_of(c));
  std::string s = "start,timestamp,perplexity\n";
  for (const auto& w : scores) {
    s += std::to_string(w.start) + ',' + utc::format_iso8601(d.timestamp(w.start)) + ',' + num(w.perplexity) + '\n';
  }
  run.write("perplexity.csv", s);
  run.write("summary.csv", "windows,mean_perplexity\n" + std::to_string(scores.size()) + ',' +
                               num(mean_of(scores)) + '\n');
  run.note("mean perplexity " + num(mean_of(scores)) + " over " + std::to_string(scores.size()) + " windows");
}

inline void cmd_select_group(const json& c, Run& run) {
  using namespace detail;
  const FeatureSchema schema = schema_of(c, run);
  const Dataset d = data_of(c, run, schema);
  SelectionConfig sel;
  sel.hyper = hyper_of(c);
  sel.train = train_of(c);
  sel.window = window_of(c);
  sel.drop_threshold = real(c, "drop");
  sel.train_fraction = real(c, "train-fraction");
  sel.k_step = positive(c, "k-step");
  const std::size_t g = positive(c, "g");
  std::optional<std::string> primary;
  if (const auto p = str(c, "primary"); !p.empty()) primary = p;
  const auto slots = c.at("slots").get<std::vector<int>>();
  if (slots.empty()) {
    const auto r = select_group(d, g, positive(c, "k-min"), positive(c, "k-max"), sel, primary);
    run.write("groups.csv", render([&](std::ostream& os) { write_reports_csv(os, r.group_scores); }));
    run.write("reports.csv", render([&](std::ostream& os) { write_reports_csv(os, r.reports); }));
    run.write("best.csv",
              "group,K,mean_perplexity\n" + group_label(r.group) + ',' + std::to_string(r.K) + ',' +
                  num(r.mean_perplexity) + '\n');
    run.note("best group " + group_label(r.group) + " at K=" + std::to_string(r.K));
    return;
  }
  const auto r = select_group_by_timeslot(d, g, positive(c, "k"), slots, sel, primary);
  std::string best = "start_hour,group,mean_perplexity\n";
  for (const auto& s : r.slots) {
    best += std::to_string(s.start_hour) + ',' + group_label(s.group) + ',' + num(s.mean_perplexity) + '\n';
  }
  std::string table = "group";
  for (int h : slots) table += ",h" + std::to_string(h);
  table += '\n';
  for (const auto& [label, row] : r.table) {
    table += label;
    for (double v : row) table += ',' + num(v);
    table += '\n';
  }
  run.write("slots.csv", best);
  run.write("slot_table.csv", table);
  run.note(std::to_string(r.slots.size()) + " slots scored over " + std::to_string(r.table.size()) + " groups");
}

namespace detail {

struct MpcCell {
  std::size_t keybits = 0;
  std::uint64_t c = 0;
  mpc::MpcTrainResult result;
  mpc::AuditReport audit;
};

inline std::string error_csv(const mpc::ErrorReport& e) {
  return "parameter,max_rel_err\npi," + num(e.pi) + "\nrho," + num(e.rho) + "\ntheta," + num(e.theta) + "\nphi," +
         num(e.phi) + "\nmax," + num(e.max()) + "\nloglik_abs," + num(e.loglik_abs) + '\n';
}

inline std::string audit_text(const mpc::AuditReport& a) {
  std::string s = a.passed() ? "passed\n" : "FAILED\n";
  s += "messages " + std::to_string(a.messages) + "\nciphertexts " + std::to_string(a.ciphertexts) + "\nmasks " +
       std::to_string(a.masks) + '\n';
  for (const auto& f : a.findings) s += "finding: " + f + '\n';
  return s;
}

inline std::string counters_csv(const mpc::Transcript& t) {
  std::string s = "counter,value\n";
  s += "messages," + std::to_string(t.messages.size()) + '\n';
  s += "bytes," + std::to_string(t.bytes) + '\n';
  s += "logsum," + std::to_string(t.logsum_invocations) + '\n';
  for (const auto& [phase, n] : t.logsum_by_phase) s += "logsum." + phase + ',' + std::to_string(n) + '\n';
  s += "op.encrypt," + std::to_string(t.ops.encrypt) + "\nop.decrypt," + std::to_string(t.ops.decrypt) + "\nop.add," +
       std::to_string(t.ops.add) + "\nop.scalar_mul," + std::to_string(t.ops.scalar_mul) + "\nop.negate," +
       std::to_string(t.ops.negate) + "\nop.add_plain," + std::to_string(t.ops.add_plain) + '\n';
  s += "digest," + t.digest() + '\n';
  return s;
}

}  // namespace detail

inline void cmd_mpc(const json& c, Run& run) {
  using namespace detail;
  const FeatureSchema schema = schema_of(c, run);
  Dataset d = users_named(data_of(c, run, schema), strings(c, "group"));
  if (const std::size_t T = count(c, "T"); T > 0) d = slice(d, 0, std::min(T, d.length()));
  const std::size_t K = positive(c, "k");
  const Hyperparams h = hyper_of(c).build(K, d);
  const ModelParams init = init_params(K, ValueLayout(schema.cardinalities()), h, InitMethod::RandomDirichlet,
                                       static_cast<std::uint64_t>(integer(c, "init-seed")));
  const auto keybits = c.at("keybits").get<std::vector<std::size_t>>();
  const auto scales = c.at("c").get<std::vector<std::uint64_t>>();
  if (keybits.empty() || scales.empty()) throw UsageError("--keybits and --c need at least one value");
  std::vector<MpcCell> cells;
  for (auto kb : keybits) {
    for (auto sc : scales) cells.push_back({kb, sc, {}, {}});
  }
  const int iters = static_cast<int>(positive(c, "iters"));
  const bool grid = cells.size() > 1;
  parallel_for(cells.size(), count(c, "jobs"), [&](std::size_t i) {
    auto& cell = cells[i];
    mpc::SessionConfig sc;
    sc.keybits = cell.keybits;
    sc.c = cell.c;
    sc.seed = static_cast<std::uint64_t>(integer(c, "seed"));
    sc.aggregator = count(c, "aggregator");
    mpc::Session s(d, sc);
    cell.result = mpc::mpc_train(s, init, h, iters);
    cell.audit = mpc::audit(s);
    if (grid) cell.result.transcript.messages.clear();
  });
  bool all_passed = true;
  for (const auto& cell : cells) {
    all_passed = all_passed && cell.audit.passed();
    run.time("keybits=" + std::to_string(cell.keybits) + ",c=" + std::to_string(cell.c), cell.result.seconds);
  }
  if (!grid) {
    const auto& r = cells[0].result;
    run.write("model.txt", model_io::to_string(r.params));
    run.write("plain.model", model_io::to_string(r.plain));
    run.write("error.csv", error_csv(r.error));
    run.write("transcript.csv", render([&](std::ostream& os) { r.transcript.write_csv(os); }));
    run.write("counters.csv", counters_csv(r.transcript));
    std::string trace = "iteration,secure_loglik,plain_loglik\n";
    for (std::size_t i = 0; i < r.loglik_trace.size(); ++i) {
      trace += std::to_string(i) + ',' + num(r.loglik_trace[i]) + ',' + num(r.plain_trace[i]) + '\n';
    }
    run.write("trace.csv", trace);
    run.write("audit.txt", audit_text(cells[0].audit));
    run.note("max relative parameter error " + num(r.error.max()) + ", audit " +
             (cells[0].audit.passed() ? "passed" : "FAILED"));
  } else {
    std::string table = "keybits,c,pi,rho,theta,phi,max,audit\n";
    std::string audits;
    for (const auto& cell : cells) {
      const auto& e = cell.result.error;
      table += std::to_string(cell.keybits) + ',' + std::to_string(cell.c) + ',' + num(e.pi) + ',' + num(e.rho) +
               ',' + num(e.theta) + ',' + num(e.phi) + ',' + num(e.max()) + ',' +
               (cell.audit.passed() ? "passed" : "failed") + '\n';
      audits += "# keybits=" + std::to_string(cell.keybits) + " c=" + std::to_string(cell.c) + '\n' +
                audit_text(cell.audit);
    }
    run.write("error_grid.csv", table);
    run.write("audit.txt", audits);
    run.note(std::to_string(cells.size()) + " grid cells, audit " + (all_passed ? "passed" : "FAILED"));
  }
  if (!all_passed) run.fail("privacy audit reported findings");
}

namespace detail {

struct Fold {
  std::string name;
  std::size_t begin = 0, end = 0;  // test slots
};

}  // namespace detail

inline void cmd_rotate(const json& c, Run& run) {
  using namespace detail;
  const FeatureSchema schema = schema_of(c, run);
  const Dataset d = data_of(c, run, schema);
  const std::size_t weeks = positive(c, "weeks"), test_weeks = positive(c, "test-weeks");
  if (weeks % test_weeks != 0 || weeks / test_weeks < 2) {
    throw UsageError("--weeks must be a multiple of --test-weeks with at least two folds");
  }
  if (d.period_seconds <= 0 || utc::kDay % d.period_seconds != 0) throw PeriodError("period must divide one day");
  const std::size_t per_week = static_cast<std::size_t>(7 * utc::kDay / d.period_seconds);
  if (d.length() < weeks * per_week) {
    throw AlignmentError("log has " + std::to_string(d.length()) + " slots, rotation needs " +
                         std::to_string(weeks * per_week));
  }
  const std::size_t nfolds = weeks / test_weeks;
  std::vector<Fold> folds;
  for (std::size_t i = 0; i < nfolds; ++i) {
    std::string name = i == 0 ? "first" : i + 1 == nfolds ? "last" : nfolds == 3 ? "mid" : "fold" + std::to_string(i + 1);
    folds.push_back({name, i * test_weeks * per_week, (i + 1) * test_weeks * per_week});
  }
  const std::string which = str(c, "fold");
  if (which != "all") {
    std::erase_if(folds, [&](const Fold& f) { return f.name != which; });
    if (folds.empty()) throw UsageError("--fold must name a fold or be 'all'");
  }
  std::string user = str(c, "user");
  if (user.empty()) user = d.user_names.at(0);
  auto group = strings(c, "group");
  if (!group.empty() && std::find(group.begin(), group.end(), user) == group.end()) group.insert(group.begin(), user);
  const std::size_t K = positive(c, "k");
  const HyperSpec hs = hyper_of(c);
  const TrainConfig tc = train_of(c);
  EvalConfig ec;
  ec.window = positive(c, "window");
  ec.stride = positive(c, "stride");

  std::vector<std::vector<FeatureAccuracy>> acc(folds.size());
  std::vector<std::size_t> predictions(folds.size());
  parallel_for(folds.size(), count(c, "jobs"), [&](std::size_t i) {
    const Fold& f = folds[i];
    const std::size_t total = weeks * per_week;
    Dataset train;
    if (f.begin == 0) {
      train = slice(d, f.end, total);
    } else if (f.end == total) {
      train = slice(d, 0, f.begin);
    } else {
      train = concatenate(slice(d, 0, f.begin), slice(d, f.end, total));
    }
    std::vector<ModelParams> models;
    const std::vector<std::string> personal{user};
    for (const auto& names : {personal, group}) {
      if (names.empty() || (names.size() == 1 && !models.empty())) continue;
      const Dataset sub = users_named(train, names);
      models.push_back(em_train(sub, K, hs.build(K, sub), tc).params);
    }
    EvalConfig e = ec;
    e.begin = f.begin >= ec.window ? f.begin - ec.window : 0;
    e.end = f.end;
    const auto records = evaluate(models, d, user, e);
    acc[i] = feature_accuracy(records, schema.size());
    predictions[i] = records.size();
  });
  std::string s = "fold,test_begin,test_end,feature,correct,total,accuracy\n";
  for (std::size_t i = 0; i < folds.size(); ++i) {
    std::size_t hit = 0, tot = 0;
    const std::string head = folds[i].name + ',' + utc::format_iso8601(d.timestamp(folds[i].begin)) + ',' +
                             utc::format_iso8601(d.timestamp(folds[i].end - 1)) + ',';
    for (std::size_t f = 0; f < schema.size(); ++f) {
      s += head + csv::escape(schema[f].name) + ',' + std::to_string(acc[i][f].correct) + ',' +
           std::to_string(acc[i][f].total) + ',' + num(acc[i][f].rate()) + '\n';
      hit += acc[i][f].correct;
      tot += acc[i][f].total;
    }
    s += head + "ALL," + std::to_string(hit) + ',' + std::to_string(tot) + ',' +
         num(tot ? static_cast<double>(hit) / static_cast<double>(tot) : 0.0) + '\n';
  }
  run.write("fold_accuracy.csv", s);
  run.note(std::to_string(folds.size()) + " folds evaluated for " + user);
}

inline void cmd_bench(const json& c, Run& run) {
  using namespace detail;
  const auto Ts = c.at("T").get<std::vector<std::size_t>>();
  const auto keybits = c.at("keybits").get<std::vector<std::size_t>>();
  const std::string phase = str(c, "phase");
  if (phase != "forward" && phase != "em" && phase != "both") throw UsageError("--phase must be forward, em or both");
  const std::size_t K = positive(c, "k"), M = positive(c, "users"), repeats = positive(c, "repeats");
  const auto seed = static_cast<std::uint64_t>(integer(c, "seed"));
  const std::uint64_t scale = positive(c, "c");
  const FeatureSchema schema = demo_schema();
  const ValueLayout layout(schema.cardinalities());
  const ModelParams gen = synthetic_model(K, layout, SyntheticSpec{}, mix_seed(seed, 1));
  std::size_t Tmax = 0;
  for (auto T : Ts) Tmax = std::max(Tmax, T);
  if (Tmax == 0) throw UsageError("--T needs positive lengths");
  const Dataset full = sample_planted(gen, schema, Tmax, M, 0, mix_seed(seed, 2));

  std::vector<mpc::BenchRow> rows;
  std::string counts = "T,keybits,phase,logsum,expected,messages,bytes\n";
  for (auto kb : keybits) {
    for (auto T : Ts) {
      const Dataset d = slice(full, 0, T);
      const Hyperparams h = HyperSpec{}.build(K, d);
      const ModelParams p = init_params(K, layout, h, InitMethod::RandomDirichlet, mix_seed(seed, 3));
      mpc::SessionConfig sc;
      sc.keybits = kb;
      sc.c = scale;
      sc.seed = seed;
      sc.record_payloads = false;
      if (phase != "em") {
        mpc::BenchRow row{T, kb, scale, "forward", std::numeric_limits<double>::infinity(), 0.0};
        mpc::Transcript tr;
        for (std::size_t r = 0; r < repeats; ++r) {
          mpc::Session s(d, sc);
          const auto t0 = std::chrono::steady_clock::now();
          const auto mu = mpc::secure_emissions(s, p);
          const auto fw = mpc::secure_forward(s, p, mu);
          row.seconds = std::min(row.seconds, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
          const double ref = loglik(p, d);
          row.max_rel_err = std::abs(fw.loglik - ref) / std::abs(ref);
          tr = s.transcript();
        }
        rows.push_back(row);
        counts += std::to_string(T) + ',' + std::to_string(kb) + ",forward," + std::to_string(tr.logsum_invocations) +
                  ',' + std::to_string(K * (T - 1) + 1) + ',' + std::to_string(tr.messages.size()) + ',' +
                  std::to_string(tr.bytes) + '\n';
      }
      if (phase != "forward") {
        mpc::BenchRow row{T, kb, scale, "em", std::numeric_limits<double>::infinity(), 0.0};
        mpc::Transcript tr;
        for (std::size_t r = 0; r < repeats; ++r) {
          mpc::Session s(d, sc);
          const auto res = mpc::mpc_train(s, p, h, 1);
          row.seconds = std::min(row.seconds, res.seconds);
          row.max_rel_err = res.error.max();
          tr = res.transcript;
        }
        rows.push_back(row);
        counts += std::to_string(T) + ',' + std::to_string(kb) + ",em," + std::to_string(tr.logsum_invocations) + ',' +
                  std::to_string(2 * (K * (T - 1) + 1) + K * K * (T - 1) + K * T + (K + 1) + K * (K + 1)) + ',' +
                  std::to_string(tr.messages.size()) + ',' + std::to_string(tr.bytes) + '\n';
      }
      run.note("T=" + std::to_string(T) + " keybits=" + std::to_string(kb) + " " + num(rows.back().seconds) + " s");
    }
  }
  run.write("bench.csv", render([&](std::ostream& os) { mpc::write_bench_csv(os, rows); }), "seconds");
  run.write("counts.csv", counts);
}

// ---- dispatch and replay ----------------------------------------------------

inline const std::map<std::string, std::function<void(const json&, Run&)>>& command_table() {
  static const std::map<std::string, std::function<void(const json&, Run&)>> t{
      {"gen", cmd_gen},       {"train", cmd_train}, {"predict", cmd_predict},
      {"perplexity", cmd_perplexity}, {"select-group", cmd_select_group},
      {"mpc", cmd_mpc},       {"rotate", cmd_rotate}, {"bench", cmd_bench}};
  return t;
}

struct Outcome {
  json manifest;
  std::vector<std::string> notes;
};

/// Runs a command on resolved options and writes its manifest.
inline Outcome execute(const std::string& command, const json& config) {
  const auto& table = command_table();
  const auto it = table.find(command);
  if (it == table.end()) throw UsageError("unknown command '" + command + "'");
  Run run(command, config);
  it->second(config, run);
  Outcome o{run.finish(), run.notes()};
  if (run.failure()) throw ProtocolError(*run.failure());
  return o;
}

struct ReplayReport {
  Outcome outcome;
  std::size_t compared = 0;
  std::vector<std::string> mismatched;

  bool identical() const { return mismatched.empty(); }
};

/// Reruns a recorded command (optionally into another directory) and checks
/// every output against the recorded digest.
inline ReplayReport replay(const fs::path& manifest_path, const std::optional<fs::path>& out) {
  json m;
  try {
    m = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw ParseError("manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!m.contains("command") || !m.contains("config") || !m.contains("outputs")) {
    throw ParseError("manifest " + manifest_path.string() + " lacks command, config or outputs");
  }
  const std::string command = m.at("command").get<std::string>();
  (void)command_spec(command);
  for (const auto& in : m.value("inputs", json::array())) {
    const std::string path = in.at("path").get<std::string>();
    if (digest_hex(read_file(path)) != in.at("blake2b").get<std::string>()) {
      throw DataError("input " + path + " changed since the recorded run");
    }
  }
  json cfg = m.at("config");
  if (out) cfg["out"] = fs::absolute(*out).lexically_normal().string();
  ReplayReport r;
  r.outcome = execute(command, cfg);
  const fs::path dir = cfg.at("out").get<std::string>();
  for (const auto& o : m.at("outputs")) {
    const std::string name = o.at("path").get<std::string>();
    ++r.compared;
    const fs::path p = dir / name;
    if (!fs::exists(p) ||
        content_digest(read_file(p), o.value("masked_column", std::string())) != o.at("blake2b").get<std::string>()) {
      r.mismatched.push_back(name);
    }
  }
  return r;
}

/// Exit status for an exception escaping a command.
inline int exit_code(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return 1;
  if (dynamic_cast<const DataError*>(&e)) return 2;
  if (dynamic_cast<const json::exception*>(&e)) return 2;
  return 3;
}

}  // namespace hcfctx::cli
