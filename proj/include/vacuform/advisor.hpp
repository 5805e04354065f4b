#pragma once

// Inference pipeline and closed-loop sessions: suggest an adjustment from 17
// views, apply it, re-form (simulated), repeat.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "vacuform/augmentation.hpp"
#include "vacuform/config_file.hpp"
#include "vacuform/dataset.hpp"
#include "vacuform/regressor/model.hpp"
#include "vacuform/regressor/train.hpp"
#include "vacuform/sim_oracle.hpp"

namespace vacuform {

inline constexpr int kSuggestionSchemaVersion = 1;
inline constexpr int kSessionSchemaVersion = 1;

struct SuggestConfig {
  int n_composites = 32;
  std::string method = "median";  // median | mean
  double no_change_epsilon = 0.05;
  std::uint64_t seed = 1;

  void validate() const {
    require(n_composites >= 1 && n_composites <= 680, ErrorCode::configuration,
            "n_composites must lie in [1, 680]", "advisor.n_composites");
    require(method == "median" || method == "mean", ErrorCode::configuration,
            "aggregation method must be median or mean", "advisor.method");
    require(no_change_epsilon >= 0.0 && no_change_epsilon < 1.0, ErrorCode::configuration,
            "no_change_epsilon must lie in [0,1)", "advisor.no_change_epsilon");
  }

  static SuggestConfig from_config(const ConfigFile& f, const std::string& section = "advisor") {
    SuggestConfig c;
    c.n_composites = f.get(section, "n_composites", c.n_composites);
    c.method = f.get<std::string>(section, "method", c.method);
    c.no_change_epsilon = f.get(section, "no_change_epsilon", c.no_change_epsilon);
    c.seed = f.get<std::uint64_t>(section, "seed", c.seed);
    c.validate();
    return c;
  }
};

struct SuggestionResult {
  AdjustmentVector delta_norm;
  std::array<double, 3> delta_physical{};
  ProcessParams current;
  ProcessParams new_params;
  bool needs_change = false;
  bool clamped = false;
  int n_composites = 0;
  std::string method;
  std::vector<Vec3> per_composite;  // not serialized

  json to_json() const {
    json phys = json::object();
    for (std::size_t k = 0; k < 3; ++k)
      phys[kParamNames[k]] = {{"value", delta_physical[k]}, {"unit", kParamUnits[k]}};
    return {{"schema_version", kSuggestionSchemaVersion},
            {"delta_norm", {delta_norm[0], delta_norm[1], delta_norm[2]}},
            {"delta_physical", phys},
            {"current_params", params_to_json(current)},
            {"new_params", params_to_json(new_params)},
            {"needs_change", needs_change},
            {"clamped", clamped},
            {"aggregation", {{"n_composites", n_composites}, {"method", method}}}};
  }

  static SuggestionResult from_json(const json& j) {
    SuggestionResult s;
    const auto& d = j.at("delta_norm");
    for (std::size_t k = 0; k < 3; ++k) s.delta_norm[k] = d.at(k).get<double>();
    for (std::size_t k = 0; k < 3; ++k)
      s.delta_physical[k] = j.at("delta_physical").at(std::string(kParamNames[k])).at("value").get<double>();
    s.current = params_from_json(j.at("current_params"));
    s.new_params = params_from_json(j.at("new_params"));
    s.needs_change = j.at("needs_change").get<bool>();
    s.clamped = j.value("clamped", false);
    s.n_composites = j.at("aggregation").at("n_composites").get<int>();
    s.method = j.at("aggregation").at("method").get<std::string>();
    return s;
  }
};

inline double median_of(std::vector<double> v) {
  require(!v.empty(), ErrorCode::validation, "median of an empty set", "composites");
  const std::size_t n = v.size(), mid = n / 2;
  std::nth_element(v.begin(), v.begin() + std::ptrdiff_t(mid), v.end());
  const double hi = v[mid];
  if (n % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + std::ptrdiff_t(mid));
  return 0.5 * (lo + hi);
}

inline AdjustmentVector aggregate_predictions(const std::vector<Vec3>& preds, const std::string& method) {
  require(!preds.empty(), ErrorCode::validation, "no predictions to aggregate", "composites");
  AdjustmentVector out;
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> col;
    col.reserve(preds.size());
    for (const auto& p : preds) col.push_back(p[k]);
    if (method == "mean") {
      double s = 0.0;
      for (double x : col) s += x;
      out[k] = s / double(col.size());
    } else {
      out[k] = median_of(std::move(col));
    }
  }
  return out;
}

/// Builds the result from an aggregated delta; shared by suggest and tests.
inline SuggestionResult make_suggestion(const AdjustmentVector& delta, const ProcessParams& current,
                                        const ParamBounds& bounds, double epsilon) {
  SuggestionResult r;
  r.delta_norm = delta;
  r.delta_physical = physical_delta(delta, bounds);
  r.current = current;
  r.needs_change = delta.max_abs() > epsilon;
  r.new_params = apply_adjustment(current, delta, bounds);
  r.clamped = !delta.is_zero() && apply_adjustment_detailed(current, delta, bounds).clamped;
  return r;
}

inline SuggestionResult suggest(const ViewSet& views, const ProcessParams& current, Model& model,
                                const SuggestConfig& cfg = {}) {
  cfg.validate();
  views.validate();
  validate_in_bounds(current, model.bounds);
  const CompositeSource src("query", views.views, model.input_size(), model.adr);
  const auto triples = sample_triples(std::size_t(cfg.n_composites), derive_seed(cfg.seed, {0x5a6}));
  std::vector<Vec3> preds;
  preds.reserve(triples.size());
  for (std::size_t k = 0; k < triples.size(); ++k)
    preds.push_back(to_vec3(model.predict(src.make(triples[k], derive_seed(cfg.seed, {0x5a7, k})))));
  auto r = make_suggestion(aggregate_predictions(preds, cfg.method), current, model.bounds, cfg.no_change_epsilon);
  r.n_composites = int(preds.size());
  r.method = cfg.method;
  r.per_composite = std::move(preds);
  return r;
}

// ---------------------------------------------------------------------------
// Model registry

struct ModelInfo {
  std::string id;
  std::filesystem::path path;
  std::string config_hash;
  json architecture;
  json summary;

  json to_json() const {
    return {{"id", id}, {"path", path.string()}, {"config_hash", config_hash}, {"architecture", architecture},
            {"summary", summary}};
  }
};

/// Checkpoints in one directory, addressed by file stem. Loaded models are
/// cached read-only; callers get their own copy to run forward passes on.
class ModelRegistry {
 public:
  explicit ModelRegistry(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& directory() const { return dir_; }

  std::vector<ModelInfo> list() const {
    std::vector<ModelInfo> out;
    if (!std::filesystem::exists(dir_)) return out;
    for (const auto& e : std::filesystem::directory_iterator(dir_)) {
      if (!e.is_regular_file() || e.path().extension() != ".json") continue;
      json j;
      try {
        j = read_json_file(e.path());
      } catch (const Error&) {
        continue;
      }
      if (j.value("format", std::string()) != kCheckpointFormat) continue;
      out.push_back({e.path().stem().string(), e.path(), j.value("config_hash", std::string()),
                     j.value("architecture", json::object()), j.value("summary", json::object())});
    }
    std::sort(out.begin(), out.end(), [](const ModelInfo& a, const ModelInfo& b) { return a.id < b.id; });
    return out;
  }

  Model acquire(const std::string& id) const {
    {
      std::shared_lock lock(mu_);
      if (auto it = cache_.find(id); it != cache_.end()) return *it->second;
    }
    if (id.empty() || id.find('/') != std::string::npos || id.find("..") != std::string::npos)
      fail(ErrorCode::validation, "invalid model id '" + id + "'", "model_id");
    const auto path = dir_ / (id + ".json");
    if (!std::filesystem::exists(path)) fail(ErrorCode::not_found, "unknown model '" + id + "'", "model_id");
    auto m = std::make_shared<const Model>(load_checkpoint(path));
    std::unique_lock lock(mu_);
    cache_.emplace(id, m);
    return *m;
  }

 private:
  std::filesystem::path dir_;
  mutable std::shared_mutex mu_;
  mutable std::map<std::string, std::shared_ptr<const Model>> cache_;
};

// ---------------------------------------------------------------------------
// Sessions

struct CycleRecord {
  int index = 0;
  ProcessParams params;
  std::string images_ref;  // "simulated:<render seed>" or a directory
  std::optional<std::uint64_t> render_seed;
  std::optional<SuggestionResult> suggestion;
  bool applied = false;  // whether this cycle's params came from the previous suggestion
  bool clamped = false;
  std::optional<Verdict> verdict;
  std::optional<FailureMode> failure_mode;
  std::optional<double> severity;

  json to_json() const {
    json j = {{"index", index},
              {"params", params_to_json(params)},
              {"images_ref", images_ref},
              {"applied", applied},
              {"clamped", clamped}};
    j["render_seed"] = render_seed ? json(*render_seed) : json(nullptr);
    j["suggestion"] = suggestion ? suggestion->to_json() : json(nullptr);
    j["verdict"] = verdict ? json(std::string(to_string(*verdict))) : json(nullptr);
    j["failure_mode"] = failure_mode ? json(std::string(to_string(*failure_mode))) : json(nullptr);
    j["severity"] = severity ? json(*severity) : json(nullptr);
    return j;
  }

  static CycleRecord from_json(const json& j) {
    CycleRecord c;
    c.index = j.at("index").get<int>();
    c.params = params_from_json(j.at("params"));
    c.images_ref = j.value("images_ref", std::string());
    c.applied = j.value("applied", false);
    c.clamped = j.value("clamped", false);
    if (j.contains("render_seed") && !j["render_seed"].is_null()) c.render_seed = j["render_seed"].get<std::uint64_t>();
    if (j.contains("suggestion") && !j["suggestion"].is_null())
      c.suggestion = SuggestionResult::from_json(j["suggestion"]);
    if (j.contains("verdict") && !j["verdict"].is_null())
      c.verdict = j["verdict"].get<std::string>() == "good" ? Verdict::good : Verdict::bad;
    if (j.contains("failure_mode") && !j["failure_mode"].is_null())
      c.failure_mode = failure_mode_from_string(j["failure_mode"].get<std::string>());
    if (j.contains("severity") && !j["severity"].is_null()) c.severity = j["severity"].get<double>();
    return c;
  }
};

struct Session {
  std::string id;
  std::string model_id;
  ParamBounds bounds = table1_bounds();
  std::optional<OracleConfig> oracle;  // set for simulated sessions
  SuggestConfig suggest;
  std::uint64_t seed = 1;
  int max_cycles = 10;
  bool closed = false;
  std::vector<CycleRecord> cycles;

  bool simulated() const { return oracle.has_value(); }

  json to_json() const {
    json cyc = json::array();
    for (const auto& c : cycles) cyc.push_back(c.to_json());
    return {{"schema_version", kSessionSchemaVersion},
            {"id", id},
            {"model_id", model_id},
            {"bounds", bounds_to_json(bounds)},
            {"simulated", simulated()},
            {"oracle", oracle ? oracle_to_json(*oracle) : json(nullptr)},
            {"suggest",
             {{"n_composites", suggest.n_composites},
              {"method", suggest.method},
              {"no_change_epsilon", suggest.no_change_epsilon},
              {"seed", suggest.seed}}},
            {"seed", seed},
            {"max_cycles", max_cycles},
            {"closed", closed},
            {"cycles", cyc}};
  }

  static Session from_json(const json& j) {
    Session s;
    try {
      require(j.at("schema_version").get<int>() == kSessionSchemaVersion, ErrorCode::validation,
              "unsupported session schema_version", "schema_version");
      s.id = j.at("id").get<std::string>();
      s.model_id = j.at("model_id").get<std::string>();
      s.bounds = bounds_from_json(j.at("bounds"));
      if (!j.at("oracle").is_null()) s.oracle = oracle_from_json(j["oracle"]);
      const auto& sg = j.at("suggest");
      s.suggest.n_composites = sg.at("n_composites").get<int>();
      s.suggest.method = sg.at("method").get<std::string>();
      s.suggest.no_change_epsilon = sg.at("no_change_epsilon").get<double>();
      s.suggest.seed = sg.at("seed").get<std::uint64_t>();
      s.seed = j.at("seed").get<std::uint64_t>();
      s.max_cycles = j.at("max_cycles").get<int>();
      s.closed = j.at("closed").get<bool>();
      for (const auto& c : j.at("cycles")) s.cycles.push_back(CycleRecord::from_json(c));
    } catch (const json::exception& e) {
      fail(ErrorCode::validation, std::string("malformed session: ") + e.what(), "session");
    }
    return s;
  }
};

struct SessionRequest {
  std::string model_id;
  ProcessParams start;
  std::optional<OracleConfig> oracle;  // empty: operator-driven session
  SuggestConfig suggest;
  std::uint64_t seed = 1;
  int max_cycles = 10;
  std::optional<ViewSet> initial_views;  // operator-driven sessions
  std::optional<std::string> id;

  static SessionRequest from_json(const json& j) {
    SessionRequest r;
    try {
      r.model_id = j.at("model_id").get<std::string>();
      r.start = params_from_json(j.at("params"));
      const bool simulated = j.value("simulated", true);
      if (simulated) r.oracle = j.contains("oracle") ? oracle_from_json(j["oracle"]) : OracleConfig{};
      r.seed = j.value("seed", r.seed);
      r.max_cycles = j.value("max_cycles", r.max_cycles);
      if (j.contains("suggest")) {
        const auto& s = j["suggest"];
        r.suggest.n_composites = s.value("n_composites", r.suggest.n_composites);
        r.suggest.method = s.value("method", r.suggest.method);
        r.suggest.no_change_epsilon = s.value("no_change_epsilon", r.suggest.no_change_epsilon);
        r.suggest.seed = s.value("seed", r.suggest.seed);
      }
      if (j.contains("id")) r.id = j["id"].get<std::string>();
    } catch (const json::exception& e) {
      fail(ErrorCode::validation, std::string("malformed session request: ") + e.what(), "body");
    }
    return r;
  }
};

/// Per-session render seed for cycle `index`.
inline std::uint64_t cycle_render_seed(std::uint64_t session_seed, int index) {
  return derive_seed(session_seed, {0xc7c1e, std::uint64_t(index)});
}

/// Renders and classifies `params` for a simulated cycle.
inline std::pair<ViewSet, Outcome> simulate_part(const ProcessParams& params, const OracleConfig& oc,
                                                 std::uint64_t render_seed) {
  const Outcome o = classify_outcome(params, oc);
  ViewSet vs;
  vs.views = render_views(params, o, render_seed, oc);
  vs.capture_meta = {{"source", "simulated"}, {"render_seed", render_seed}};
  return {std::move(vs), o};
}

/// Completes a cycle record: outcome (simulated) and suggestion.
inline void fill_cycle(CycleRecord& c, const Session& s, const ViewSet& views, const std::optional<Outcome>& outcome,
                       Model& model) {
  if (outcome) {
    c.failure_mode = outcome->failure_mode;
    c.verdict = outcome->failure_mode == FailureMode::good ? Verdict::good : Verdict::bad;
    c.severity = outcome->severity;
  }
  SuggestConfig sc = s.suggest;
  sc.seed = derive_seed(s.suggest.seed, {std::uint64_t(c.index)});
  c.suggestion = suggest(views, c.params, model, sc);
}

inline Session start_session(const SessionRequest& req, Model& model, const std::string& id) {
  req.suggest.validate();
  require(req.max_cycles >= 1, ErrorCode::validation, "max_cycles must be >= 1", "max_cycles");
  validate_in_bounds(req.start, model.bounds);
  Session s;
  s.id = id;
  s.model_id = req.model_id;
  s.bounds = model.bounds;
  s.oracle = req.oracle;
  s.suggest = req.suggest;
  s.seed = req.seed;
  s.max_cycles = req.max_cycles;
  CycleRecord c;
  c.index = 0;
  c.params = req.start;
  if (s.simulated()) {
    s.oracle->validate();
    c.render_seed = cycle_render_seed(s.seed, 0);
    c.images_ref = "simulated:" + std::to_string(*c.render_seed);
    auto [views, o] = simulate_part(c.params, *s.oracle, *c.render_seed);
    fill_cycle(c, s, views, o, model);
  } else {
    if (!req.initial_views)
      fail(ErrorCode::validation, "operator-driven sessions need 17 uploaded views", "images");
    c.images_ref = "uploaded";
    fill_cycle(c, s, *req.initial_views, std::nullopt, model);
  }
  s.cycles.push_back(std::move(c));
  return s;
}

/// Appends one cycle. With `apply`, the next params are the last suggestion's
/// new_params, else unchanged. Simulated sessions render and classify; others
/// need `uploaded` views.
inline const CycleRecord& advance_session(Session& s, bool apply, Model& model,
                                          const std::optional<ViewSet>& uploaded = std::nullopt,
                                          std::optional<Verdict> operator_verdict = std::nullopt) {
  if (s.closed) fail(ErrorCode::conflict, "session '" + s.id + "' is closed", "session_id");
  require(!s.cycles.empty() && s.cycles.back().suggestion.has_value(), ErrorCode::conflict,
          "session has no pending suggestion", "session_id");
  if (!s.simulated() && !uploaded)
    fail(ErrorCode::validation, "non-simulated session needs uploaded images for each cycle", "images");
  const auto& prev = s.cycles.back();
  CycleRecord c;
  c.index = prev.index + 1;
  c.applied = apply;
  if (apply) {
    c.params = prev.suggestion->new_params;
    c.clamped = prev.suggestion->clamped;
  } else {
    c.params = prev.params;
  }
  validate_in_bounds(c.params, s.bounds);
  if (s.simulated()) {
    c.render_seed = cycle_render_seed(s.seed, c.index);
    c.images_ref = "simulated:" + std::to_string(*c.render_seed);
    auto [views, o] = simulate_part(c.params, *s.oracle, *c.render_seed);
    fill_cycle(c, s, views, o, model);
  } else {
    uploaded->validate();
    c.images_ref = "uploaded";
    fill_cycle(c, s, *uploaded, std::nullopt, model);
    c.verdict = operator_verdict;
  }
  s.cycles.push_back(std::move(c));
  if (int(s.cycles.size()) > s.max_cycles) s.closed = true;
  return s.cycles.back();
}

/// Re-runs a recorded simulated session from its first cycle with the same
/// seeds and apply decisions. Returns indices of cycles whose outcome,
/// params or suggestion differ.
inline std::vector<int> replay_session(const Session& recorded, Model& model) {
  require(recorded.simulated(), ErrorCode::validation, "only simulated sessions can be replayed", "session_id");
  require(!recorded.cycles.empty(), ErrorCode::validation, "session has no cycles", "session_id");
  SessionRequest req;
  req.model_id = recorded.model_id;
  req.start = recorded.cycles.front().params;
  req.oracle = recorded.oracle;
  req.suggest = recorded.suggest;
  req.seed = recorded.seed;
  req.max_cycles = recorded.max_cycles;
  Session s = start_session(req, model, recorded.id);
  for (std::size_t i = 1; i < recorded.cycles.size(); ++i) advance_session(s, recorded.cycles[i].applied, model);
  std::vector<int> mismatches;
  for (std::size_t i = 0; i < recorded.cycles.size(); ++i)
    if (s.cycles[i].to_json() != recorded.cycles[i].to_json()) mismatches.push_back(int(i));
  return mismatches;
}

/// Sessions persisted one JSON file each. Appends to one session are
/// serialized by a per-session mutex; different sessions proceed in parallel.
class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  std::filesystem::path path_for(const std::string& id) const { return dir_ / (id + ".json"); }

  std::string new_id() {
    const auto now = std::chrono::system_clock::now().time_since_epoch().count();
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%012llx",
                  static_cast<unsigned long long>(derive_seed(std::uint64_t(now), {counter_++}) & 0xffffffffffffULL));
    return buf;
  }

  void save(const Session& s) { write_json_file(path_for(s.id), s.to_json()); }

  Session get(const std::string& id) const {
    check_id(id);
    const auto p = path_for(id);
    if (!std::filesystem::exists(p)) fail(ErrorCode::not_found, "unknown session '" + id + "'", "session_id");
    return Session::from_json(read_json_file(p));
  }

  bool exists(const std::string& id) const { return std::filesystem::exists(path_for(id)); }

  std::mutex& lock_for(const std::string& id) {
    std::lock_guard g(map_mu_);
    auto& m = locks_[id];
    if (!m) m = std::make_unique<std::mutex>();
    return *m;
  }

  static void check_id(const std::string& id) {
    const bool ok = !id.empty() && id.size() <= 64 && std::all_of(id.begin(), id.end(), [](char ch) {
      return std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_';
    });
    if (!ok) fail(ErrorCode::validation, "invalid session id '" + id + "'", "session_id");
  }

 private:
  std::filesystem::path dir_;
  std::atomic<std::uint64_t> counter_{0};
  std::mutex map_mu_;
  std::map<std::string, std::unique_ptr<std::mutex>> locks_;
};

/// Facade used by the service and the CLI.
class Advisor {
 public:
  Advisor(std::filesystem::path models_dir, std::filesystem::path sessions_dir)
      : registry_(std::move(models_dir)), sessions_(std::move(sessions_dir)) {}

  ModelRegistry& registry() { return registry_; }
  SessionStore& sessions() { return sessions_; }

  std::vector<ModelInfo> list_models() const { return registry_.list(); }

  SuggestionResult suggest(const std::string& model_id, const ViewSet& views, const ProcessParams& current,
                           const SuggestConfig& cfg = {}) {
    Model m = registry_.acquire(model_id);
    return vacuform::suggest(views, current, m, cfg);
  }

  Session create_session(const SessionRequest& req) {
    Model m = registry_.acquire(req.model_id);
    std::string id = req.id ? *req.id : sessions_.new_id();
    SessionStore::check_id(id);
    std::lock_guard g(sessions_.lock_for(id));
    if (sessions_.exists(id)) fail(ErrorCode::conflict, "session '" + id + "' already exists", "id");
    Session s = start_session(req, m, id);
    sessions_.save(s);
    return s;
  }

  Session get_session(const std::string& id) const { return sessions_.get(id); }

  CycleRecord run_cycle(const std::string& id, bool apply, const std::optional<ViewSet>& uploaded = std::nullopt,
                        std::optional<Verdict> verdict = std::nullopt) {
    SessionStore::check_id(id);
    std::lock_guard g(sessions_.lock_for(id));
    Session s = sessions_.get(id);
    Model m = registry_.acquire(s.model_id);
    CycleRecord c = advance_session(s, apply, m, uploaded, verdict);
    sessions_.save(s);
    return c;
  }

 private:
  ModelRegistry registry_;
  SessionStore sessions_;
};

// ---------------------------------------------------------------------------
// Closed-loop harness

/// Seeded bad starting points on the machine grid within `b`.
inline std::vector<ProcessParams> sample_bad_starts(std::size_t count, const OracleConfig& oc, const ParamBounds& b,
                                                    std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0xbad5}));
  std::vector<ProcessParams> out;
  for (std::size_t tries = 0; out.size() < count; ++tries) {
    require(tries < 100000 * count, ErrorCode::validation, "could not find enough bad starting points", "oracle");
    ProcessParams p = snap_to_machine({rng.uniform(b[0].min, b[0].max), rng.uniform(b[1].min, b[1].max),
                                       rng.uniform(b[2].min, b[2].max)});
    if (!b.contains(p)) continue;
    if (classify_outcome(p, oc).failure_mode != FailureMode::good) out.push_back(p);
  }
  return out;
}

/// Seeded good parameter sets on the machine grid (no-change holdout).
inline std::vector<ProcessParams> sample_good_params(std::size_t count, const OracleConfig& oc, const ParamBounds& b,
                                                     std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x600d}));
  std::vector<ProcessParams> out;
  for (std::size_t tries = 0; out.size() < count; ++tries) {
    require(tries < 100000 * count, ErrorCode::validation, "could not find enough good parameter sets", "oracle");
    ProcessParams p = snap_to_machine({rng.uniform(b[0].min, b[0].max), rng.uniform(b[1].min, b[1].max),
                                       rng.uniform(b[2].min, b[2].max)});
    if (!b.contains(p)) continue;
    if (classify_outcome(p, oc).failure_mode == FailureMode::good) out.push_back(p);
  }
  return out;
}

enum class LoopPolicy { model, random_delta };

struct LoopTrajectory {
  std::vector<ProcessParams> params;
  std::vector<FailureMode> modes;
  int cycles_to_good = -1;  // -1: not reached
};

struct LoopSummary {
  std::vector<LoopTrajectory> runs;
  int max_cycles = 3;

  std::size_t fixed() const {
    return std::size_t(std::count_if(runs.begin(), runs.end(), [](const auto& r) { return r.cycles_to_good >= 0; }));
  }
  double fraction_fixed() const { return runs.empty() ? 0.0 : double(fixed()) / double(runs.size()); }
  std::vector<int> histogram() const {  // [0..max_cycles] cycles to good, last slot = never
    std::vector<int> h(std::size_t(max_cycles) + 2, 0);
    for (const auto& r : runs) ++h[r.cycles_to_good < 0 ? h.size() - 1 : std::size_t(r.cycles_to_good)];
    return h;
  }
  json to_json() const {
    json runs_j = json::array();
    for (const auto& r : runs) {
      json ps = json::array(), ms = json::array();
      for (const auto& p : r.params) ps.push_back(params_to_json(p));
      for (auto m : r.modes) ms.push_back(std::string(to_string(m)));
      runs_j.push_back({{"params", ps}, {"failure_modes", ms}, {"cycles_to_good", r.cycles_to_good}});
    }
    json hist = json::object();
    const auto h = histogram();
    for (int k = 0; k <= max_cycles; ++k) hist[std::to_string(k)] = h[std::size_t(k)];
    hist["never"] = h.back();
    return {{"schema_version", 1},
            {"starts", runs.size()},
            {"max_cycles", max_cycles},
            {"fixed", fixed()},
            {"fraction_fixed", fraction_fixed()},
            {"cycles_to_good_histogram", hist},
            {"runs", runs_j}};
  }
};

/// Random direction with the same Euclidean norm as `d`, clamped to [-1,1].
inline AdjustmentVector random_like(const AdjustmentVector& d, Rng& rng) {
  const double norm = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  double g[3], gn = 0.0;
  do {
    gn = 0.0;
    for (double& x : g) {
      x = rng.normal();
      gn += x * x;
    }
  } while (gn < 1e-24);
  gn = std::sqrt(gn);
  AdjustmentVector out;
  for (std::size_t k = 0; k < 3; ++k) out[k] = std::clamp(norm * g[k] / gn, -1.0, 1.0);
  return out;
}

/// Runs each start for up to `max_cycles` corrections, stopping at the first
/// good part. The random policy replaces each suggested delta by a random
/// direction of the same magnitude.
inline LoopSummary simulate_loop(Model& model, const OracleConfig& oc, const std::vector<ProcessParams>& starts,
                                 int max_cycles, std::uint64_t seed, LoopPolicy policy = LoopPolicy::model,
                                 const SuggestConfig& sc = {}) {
  LoopSummary summary;
  summary.max_cycles = max_cycles;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    LoopTrajectory t;
    Rng rng(derive_seed(seed, {0x7a2d, i}));
    ProcessParams p = starts[i];
    for (int cycle = 0;; ++cycle) {
      auto [views, o] = simulate_part(p, oc, derive_seed(seed, {0x100b, i, std::uint64_t(cycle)}));
      t.params.push_back(p);
      t.modes.push_back(o.failure_mode);
      if (o.failure_mode == FailureMode::good) {
        t.cycles_to_good = cycle;
        break;
      }
      if (cycle == max_cycles) break;
      SuggestConfig c = sc;
      c.seed = derive_seed(sc.seed, {i, std::uint64_t(cycle)});
      auto s = suggest(views, p, model, c);
      AdjustmentVector d = policy == LoopPolicy::model ? s.delta_norm : random_like(s.delta_norm, rng);
      p = apply_adjustment(p, d, model.bounds);
    }
    summary.runs.push_back(std::move(t));
  }
  return summary;
}

}  // namespace vacuform
