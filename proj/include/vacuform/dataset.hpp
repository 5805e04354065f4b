#pragma once

// Sample records, view sets, dataset manifests and their on-disk layout:
//
//   <dataset>/manifest.json
//   <dataset>/images/<sample_id>/<view_idx>.png   (0 top, 1-8 low, 9-16 high)
//   <dataset>/labels.json                          (written by the labeler)

#include <algorithm>
#include <cerrno>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include <json.hpp>

#include "vacuform/error.hpp"
#include "vacuform/image.hpp"
#include "vacuform/params.hpp"
#include "vacuform/rng.hpp"
#include "vacuform/sim_oracle.hpp"

namespace vacuform {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kManifestSchemaVersion = 1;

enum class Verdict { good, bad };
enum class SampleSource { synthetic, ingested };

inline std::string_view to_string(Verdict v) { return v == Verdict::good ? "good" : "bad"; }
inline std::string_view to_string(SampleSource s) {
  return s == SampleSource::synthetic ? "synthetic" : "ingested";
}

/// The 17 views of one formed part.
struct ViewSet {
  std::vector<Image> views;
  json capture_meta = json::object();

  const Image& top() const { return views.at(0); }
  const Image& low_angle(int k) const { return views.at(1 + k); }
  const Image& high_angle(int k) const { return views.at(1 + kViewsPerRing + k); }

  void validate() const {
    if (views.size() != std::size_t(kViewCount))
      fail(ErrorCode::validation,
           "expected 17 views, got " + std::to_string(views.size()), "views");
    for (std::size_t i = 0; i < views.size(); ++i) {
      const auto& v = views[i];
      require(!v.empty() && (v.channels == 1 || v.channels == 3), ErrorCode::validation,
              "view " + std::to_string(i) + " must be a nonempty 1- or 3-channel image", "views");
      require(v.width == views[0].width && v.height == views[0].height, ErrorCode::validation,
              "view " + std::to_string(i) + " dimensions differ from view 0", "views");
    }
  }
};

struct Material {
  std::string color = "red";
  double thickness = 1.0;  // mm
  friend bool operator==(const Material&, const Material&) = default;
};

struct SampleRecord {
  std::string id;
  ProcessParams params;
  Verdict verdict = Verdict::bad;
  FailureMode failure_mode = FailureMode::good;
  std::vector<std::string> views;  // paths relative to the dataset root
  Material material;
  SampleSource source = SampleSource::synthetic;
  std::optional<std::uint64_t> render_seed;
  std::optional<double> severity;
  std::optional<double> sheet_temp;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct DatasetSplit {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

struct DatasetManifest {
  ParamBounds bounds = table1_bounds();
  std::string bounds_mode = "design";  // or "observed"
  std::vector<SampleRecord> samples;
  std::optional<DatasetSplit> split;
  json oracle = nullptr;  // generator provenance for synthetic datasets

  const SampleRecord* find(const std::string& id) const {
    for (const auto& s : samples)
      if (s.id == id) return &s;
    return nullptr;
  }
  const SampleRecord& at(const std::string& id) const {
    if (auto* s = find(id)) return *s;
    fail(ErrorCode::not_found, "unknown sample id '" + id + "'", "sample_id");
  }
  /// Train ids; every sample when no split has been made.
  std::vector<std::string> train_ids() const {
    if (split) return split->train_ids;
    std::vector<std::string> ids;
    for (const auto& s : samples) ids.push_back(s.id);
    return ids;
  }
  std::vector<std::string> test_ids() const { return split ? split->test_ids : std::vector<std::string>{}; }

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

inline std::string view_relpath(const std::string& sample_id, int view_idx) {
  return "images/" + sample_id + "/" + std::to_string(view_idx) + ".png";
}

// ---------------------------------------------------------------------------
// JSON

inline json params_to_json(const ProcessParams& p) {
  return {{"heat_power", p.heat_power}, {"heat_time", p.heat_time}, {"vacuum_time", p.vacuum_time}};
}

inline ProcessParams params_from_json(const json& j) {
  ProcessParams p;
  try {
    p.heat_power = j.at("heat_power").get<double>();
    p.heat_time = j.at("heat_time").get<double>();
    p.vacuum_time = j.at("vacuum_time").get<double>();
  } catch (const json::exception& e) {
    fail(ErrorCode::validation, std::string("malformed params: ") + e.what(), "params");
  }
  return p;
}

inline json bounds_to_json(const ParamBounds& b) {
  json j;
  for (std::size_t i = 0; i < 3; ++i) j[std::string(kParamNames[i])] = {b[i].min, b[i].max};
  return j;
}

inline ParamBounds bounds_from_json(const json& j) {
  ParamBounds b;
  try {
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& r = j.at(std::string(kParamNames[i]));
      b[i] = Range{r.at(0).get<double>(), r.at(1).get<double>()};
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::validation, std::string("malformed bounds: ") + e.what(), "bounds");
  }
  b.validate();
  return b;
}

inline json record_to_json(const SampleRecord& r) {
  json j = {{"id", r.id},
            {"params", params_to_json(r.params)},
            {"verdict", to_string(r.verdict)},
            {"failure_mode", to_string(r.failure_mode)},
            {"views", r.views},
            {"material", {{"color", r.material.color}, {"thickness", r.material.thickness}}},
            {"source", to_string(r.source)}};
  if (r.render_seed) j["render_seed"] = *r.render_seed;
  if (r.severity) j["severity"] = *r.severity;
  if (r.sheet_temp) j["sheet_temp"] = *r.sheet_temp;
  return j;
}

inline SampleRecord record_from_json(const json& j) {
  SampleRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.params = params_from_json(j.at("params"));
    const auto verdict = j.at("verdict").get<std::string>();
    require(verdict == "good" || verdict == "bad", ErrorCode::validation,
            "verdict must be 'good' or 'bad'", "verdict");
    r.verdict = verdict == "good" ? Verdict::good : Verdict::bad;
    r.failure_mode = failure_mode_from_string(
        j.value("failure_mode", std::string(r.verdict == Verdict::good ? "good" : "underheated")));
    if (j.contains("views")) r.views = j.at("views").get<std::vector<std::string>>();
    if (j.contains("material")) {
      r.material.color = j["material"].value("color", std::string("red"));
      r.material.thickness = j["material"].value("thickness", 1.0);
    }
    const auto source = j.value("source", std::string("ingested"));
    require(source == "synthetic" || source == "ingested", ErrorCode::validation,
            "source must be 'synthetic' or 'ingested'", "source");
    r.source = source == "synthetic" ? SampleSource::synthetic : SampleSource::ingested;
    if (j.contains("render_seed")) r.render_seed = j["render_seed"].get<std::uint64_t>();
    if (j.contains("severity")) r.severity = j["severity"].get<double>();
    if (j.contains("sheet_temp")) r.sheet_temp = j["sheet_temp"].get<double>();
  } catch (const json::exception& e) {
    fail(ErrorCode::validation, std::string("malformed sample record: ") + e.what(), "samples");
  }
  return r;
}

/// Record-level invariants. `check_views` also requires exactly 17 view paths.
inline void validate_record(const SampleRecord& r, const ParamBounds& bounds, bool check_views = true) {
  require(!r.id.empty(), ErrorCode::validation, "sample id must be nonempty", "id");
  require(r.id.find('/') == std::string::npos && r.id.find("..") == std::string::npos,
          ErrorCode::validation, "sample id must not contain path separators", "id");
  validate_in_bounds(r.params, bounds);
  if (r.verdict == Verdict::good)
    require(r.failure_mode == FailureMode::good, ErrorCode::validation,
            "sample '" + r.id + "': verdict good requires failure_mode good", "failure_mode");
  else
    require(r.failure_mode != FailureMode::good, ErrorCode::validation,
            "sample '" + r.id + "': verdict bad requires a failure mode", "failure_mode");
  require(r.material.thickness > 0.0, ErrorCode::validation, "material thickness must be positive",
          "material.thickness");
  if (check_views)
    require(r.views.size() == std::size_t(kViewCount), ErrorCode::validation,
            "sample '" + r.id + "': expected 17 views, got " + std::to_string(r.views.size()), "views");
}

inline void validate_manifest(const DatasetManifest& m) {
  m.bounds.validate();
  std::set<std::string> ids;
  for (const auto& s : m.samples) {
    validate_record(s, m.bounds);
    require(ids.insert(s.id).second, ErrorCode::validation, "duplicate sample id '" + s.id + "'", "id");
  }
  if (m.split) {
    std::set<std::string> seen;
    for (const auto* part : {&m.split->train_ids, &m.split->test_ids})
      for (const auto& id : *part) {
        require(ids.count(id) == 1, ErrorCode::validation, "split references unknown sample '" + id + "'",
                "split");
        require(seen.insert(id).second, ErrorCode::validation,
                "sample '" + id + "' appears in both partitions", "split");
      }
    require(seen.size() == ids.size(), ErrorCode::validation, "split does not cover every sample", "split");
  }
}

inline json manifest_to_json(const DatasetManifest& m) {
  json samples = json::array();
  for (const auto& s : m.samples) samples.push_back(record_to_json(s));
  json j = {{"schema_version", kManifestSchemaVersion},
            {"bounds", bounds_to_json(m.bounds)},
            {"bounds_mode", m.bounds_mode},
            {"samples", samples}};
  j["split"] = m.split ? json{{"train_ids", m.split->train_ids}, {"test_ids", m.split->test_ids}} : json(nullptr);
  j["oracle"] = m.oracle;
  return j;
}

inline DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  try {
    const int version = j.at("schema_version").get<int>();
    require(version == kManifestSchemaVersion, ErrorCode::validation,
            "unsupported manifest schema_version " + std::to_string(version), "schema_version");
    m.bounds = bounds_from_json(j.at("bounds"));
    m.bounds_mode = j.value("bounds_mode", std::string("design"));
    for (const auto& s : j.at("samples")) m.samples.push_back(record_from_json(s));
    if (j.contains("split") && !j["split"].is_null())
      m.split = DatasetSplit{j["split"].at("train_ids").get<std::vector<std::string>>(),
                             j["split"].at("test_ids").get<std::vector<std::string>>()};
    if (j.contains("oracle")) m.oracle = j["oracle"];
  } catch (const json::exception& e) {
    fail(ErrorCode::validation, std::string("malformed manifest: ") + e.what(), "manifest");
  }
  validate_manifest(m);
  return m;
}

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::validation, path.string() + ": " + e.what());
  }
}

/// Writes via a temporary file and rename so readers never see a partial file.
inline void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) fail(ErrorCode::io, "cannot write " + tmp.string());
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

/// Single-writer lock on a dataset directory (manifest.lock, O_EXCL).
class DatasetLock {
 public:
  explicit DatasetLock(const fs::path& dir) : path_(dir / "manifest.lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      fail(ErrorCode::conflict, "dataset " + dir.string() + " is locked by another writer (" +
                                    path_.string() + ")");
  }
  ~DatasetLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }
  DatasetLock(const DatasetLock&) = delete;
  DatasetLock& operator=(const DatasetLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

inline fs::path manifest_path(const fs::path& dataset_dir) { return dataset_dir / "manifest.json"; }

inline DatasetManifest load_manifest(const fs::path& dataset_dir) {
  if (!fs::exists(manifest_path(dataset_dir)))
    fail(ErrorCode::not_found, "no dataset at " + dataset_dir.string(), "dataset");
  return manifest_from_json(read_json_file(manifest_path(dataset_dir)));
}

inline void save_manifest(const fs::path& dataset_dir, const DatasetManifest& m) {
  validate_manifest(m);
  DatasetLock lock(dataset_dir);
  write_json_file(manifest_path(dataset_dir), manifest_to_json(m));
}

inline ViewSet load_views(const fs::path& dataset_dir, const SampleRecord& r) {
  ViewSet vs;
  for (const auto& rel : r.views) vs.views.push_back(read_png(dataset_dir / rel));
  vs.capture_meta = {{"sample_id", r.id}, {"source", to_string(r.source)}};
  vs.validate();
  return vs;
}

/// Loads every sample's views, keyed by id.
inline std::unordered_map<std::string, ViewSet> load_all_views(const fs::path& dataset_dir,
                                                               const DatasetManifest& m) {
  std::unordered_map<std::string, ViewSet> out;
  for (const auto& s : m.samples) out.emplace(s.id, load_views(dataset_dir, s));
  return out;
}

/// Bounds spanning the observed parameter values (the alternative to the
/// design ranges).
inline ParamBounds observed_bounds(const std::vector<SampleRecord>& samples) {
  require(!samples.empty(), ErrorCode::validation, "observed bounds need at least one sample", "samples");
  ParamBounds b;
  for (std::size_t i = 0; i < 3; ++i) b[i] = Range{1e300, -1e300};
  for (const auto& s : samples) {
    const auto a = s.params.as_array();
    for (std::size_t i = 0; i < 3; ++i) {
      b[i].min = std::min(b[i].min, a[i]);
      b[i].max = std::max(b[i].max, a[i]);
    }
  }
  b.validate();
  return b;
}

// ---------------------------------------------------------------------------
// Operations

/// Validates a manifest-style entry plus its 17 images and writes both into
/// the dataset (images re-encoded as PNG under images/<id>/). `entry.views`
/// lists file names relative to `image_dir`; when absent, the *.png files of
/// `image_dir` are taken in name order (natural numeric order for digit names).
inline SampleRecord ingest_sample(const json& entry, const fs::path& image_dir, const fs::path& dataset_dir) {
  SampleRecord r;
  try {
    r = record_from_json(entry);
  } catch (const Error& e) {
    fail(ErrorCode::ingestion, e.what(), e.field());
  }
  r.source = SampleSource::ingested;

  std::vector<fs::path> files;
  if (entry.contains("views")) {
    for (const auto& v : entry["views"]) files.push_back(image_dir / v.get<std::string>());
  } else {
    if (!fs::is_directory(image_dir))
      fail(ErrorCode::ingestion, "image directory " + image_dir.string() + " does not exist", "image_dir");
    for (const auto& e : fs::directory_iterator(image_dir))
      if (e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
      const auto sa = a.stem().string(), sb = b.stem().string();
      const bool da = !sa.empty() && std::all_of(sa.begin(), sa.end(), ::isdigit);
      const bool db = !sb.empty() && std::all_of(sb.begin(), sb.end(), ::isdigit);
      if (da && db) return std::stoul(sa) < std::stoul(sb);
      return sa < sb;
    });
  }
  if (files.size() != std::size_t(kViewCount))
    fail(ErrorCode::ingestion, "expected 17 views, got " + std::to_string(files.size()), "views");

  DatasetManifest m;
  const bool exists = fs::exists(manifest_path(dataset_dir));
  if (exists) m = load_manifest(dataset_dir);
  try {
    validate_record(r, m.bounds, false);
  } catch (const Error& e) {
    fail(ErrorCode::ingestion, e.what(), e.field());
  }
  if (m.find(r.id)) fail(ErrorCode::ingestion, "sample id '" + r.id + "' already in dataset", "id");

  std::vector<Image> images;
  for (const auto& f : files) {
    if (!fs::exists(f)) fail(ErrorCode::ingestion, "view file " + f.string() + " not found", "views");
    images.push_back(read_png(f));
  }
  for (std::size_t i = 1; i < images.size(); ++i)
    if (images[i].width != images[0].width || images[i].height != images[0].height)
      fail(ErrorCode::ingestion,
           "view " + std::to_string(i) + " dimensions " + std::to_string(images[i].width) + "x" +
               std::to_string(images[i].height) + " differ from view 0",
           "views");

  DatasetLock lock(dataset_dir);
  fs::create_directories(dataset_dir / "images" / r.id);
  r.views.clear();
  for (int k = 0; k < kViewCount; ++k) {
    r.views.push_back(view_relpath(r.id, k));
    write_png(dataset_dir / r.views.back(), images[k]);
  }
  m.samples.push_back(r);
  // A new sample invalidates any earlier split.
  m.split.reset();
  validate_manifest(m);
  write_json_file(manifest_path(dataset_dir), manifest_to_json(m));
  return r;
}

/// Seeded sample-level split: ids are sorted, shuffled, and the first
/// `train_count` become the train partition.
inline DatasetManifest split_dataset(const DatasetManifest& manifest, std::size_t train_count,
                                     std::uint64_t seed) {
  const std::size_t n = manifest.samples.size();
  if (!(train_count > 0 && train_count < n))
    fail(ErrorCode::validation,
         "train_count must lie in (0, " + std::to_string(n) + "), got " + std::to_string(train_count),
         "train_count");
  std::vector<std::string> ids;
  for (const auto& s : manifest.samples) ids.push_back(s.id);
  std::sort(ids.begin(), ids.end());
  Rng rng(derive_seed(seed, {0x5917}));
  rng.shuffle(ids.begin(), ids.end());
  DatasetManifest out = manifest;
  DatasetSplit split;
  split.train_ids.assign(ids.begin(), ids.begin() + std::ptrdiff_t(train_count));
  split.test_ids.assign(ids.begin() + std::ptrdiff_t(train_count), ids.end());
  std::sort(split.train_ids.begin(), split.train_ids.end());
  std::sort(split.test_ids.begin(), split.test_ids.end());
  out.split = std::move(split);
  return out;
}

inline json oracle_to_json(const OracleConfig& c) {
  return {{"ambient_temp", c.ambient_temp},     {"max_gain", c.max_gain},
          {"tau0", c.tau0},                     {"ref_thickness", c.ref_thickness},
          {"thickness", c.thickness},           {"form_window", {c.form_window.min, c.form_window.max}},
          {"vacuum_required", c.vacuum_required}, {"vacuum_full", c.vacuum_full},
          {"webbing_span", c.webbing_span},     {"good_threshold", c.good_threshold},
          {"edge_margin", c.edge_margin},       {"edge_severity", c.edge_severity},
          {"overflow", c.overflow},             {"severity_noise", c.severity_noise},
          {"mould_shape", to_string(c.mould_shape)}, {"material_color", c.material_color},
          {"image_size", c.image_size}};
}

inline OracleConfig oracle_from_json(const json& j) {
  OracleConfig c;
  try {
    c.ambient_temp = j.value("ambient_temp", c.ambient_temp);
    c.max_gain = j.value("max_gain", c.max_gain);
    c.tau0 = j.value("tau0", c.tau0);
    c.ref_thickness = j.value("ref_thickness", c.ref_thickness);
    c.thickness = j.value("thickness", c.thickness);
    if (j.contains("form_window")) c.form_window = {j["form_window"].at(0), j["form_window"].at(1)};
    c.vacuum_required = j.value("vacuum_required", c.vacuum_required);
    c.vacuum_full = j.value("vacuum_full", c.vacuum_full);
    c.webbing_span = j.value("webbing_span", c.webbing_span);
    c.good_threshold = j.value("good_threshold", c.good_threshold);
    c.edge_margin = j.value("edge_margin", c.edge_margin);
    c.edge_severity = j.value("edge_severity", c.edge_severity);
    c.overflow = j.value("overflow", c.overflow);
    c.severity_noise = j.value("severity_noise", c.severity_noise);
    c.mould_shape = mould_shape_from_string(j.value("mould_shape", std::string("hemisphere")));
    c.material_color = j.value("material_color", c.material_color);
    c.image_size = j.value("image_size", c.image_size);
  } catch (const json::exception& e) {
    fail(ErrorCode::configuration, std::string("malformed oracle config: ") + e.what(), "oracle");
  }
  c.validate();
  return c;
}

/// One synthetic part: record plus its rendered views (not yet on disk).
struct SyntheticSample {
  SampleRecord record;
  ViewSet views;
};

inline SyntheticSample synthesize_sample(const std::string& id, const ProcessParams& p, const OracleConfig& c,
                                         std::uint64_t render_seed, const ParamBounds& bounds = table1_bounds()) {
  validate_in_bounds(p, bounds);
  const Outcome o = classify_outcome(p, c);
  SyntheticSample s;
  s.record.id = id;
  s.record.params = p;
  s.record.failure_mode = o.failure_mode;
  s.record.verdict = o.failure_mode == FailureMode::good ? Verdict::good : Verdict::bad;
  s.record.material = {c.material_color, c.thickness};
  s.record.source = SampleSource::synthetic;
  s.record.render_seed = render_seed;
  s.record.severity = o.severity;
  s.record.sheet_temp = o.sheet_temp;
  for (int k = 0; k < kViewCount; ++k) s.record.views.push_back(view_relpath(id, k));
  s.views.views = render_views(p, o, render_seed, c);
  s.views.capture_meta = {{"sample_id", id}, {"source", "synthetic"}, {"render_seed", render_seed}};
  return s;
}

inline std::string synthetic_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "syn%04zu", index);
  return buf;
}

/// In-memory synthetic dataset: manifest plus views keyed by id.
struct SyntheticDataset {
  DatasetManifest manifest;
  std::unordered_map<std::string, ViewSet> views;
};

inline SyntheticDataset synthesize_dataset(const std::vector<ProcessParams>& grid, const OracleConfig& c,
                                           std::uint64_t seed, const ParamBounds& bounds = table1_bounds()) {
  require(!grid.empty(), ErrorCode::validation, "parameter grid is empty", "grid");
  c.validate();
  SyntheticDataset ds;
  ds.manifest.bounds = bounds;
  ds.manifest.oracle = oracle_to_json(c);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    auto s = synthesize_sample(synthetic_id(i), grid[i], c, derive_seed(seed, {0x9e4, i}), bounds);
    ds.views.emplace(s.record.id, std::move(s.views));
    ds.manifest.samples.push_back(std::move(s.record));
  }
  return ds;
}

inline void write_dataset(const fs::path& dir, const DatasetManifest& m,
                          const std::unordered_map<std::string, ViewSet>& views) {
  validate_manifest(m);
  DatasetLock lock(dir);
  for (const auto& s : m.samples) {
    const auto& vs = views.at(s.id);
    vs.validate();
    fs::create_directories(dir / "images" / s.id);
    for (int k = 0; k < kViewCount; ++k) write_png(dir / s.views[k], vs.views[k]);
  }
  write_json_file(manifest_path(dir), manifest_to_json(m));
}

/// Renders and persists one record per grid point.
inline DatasetManifest generate_synthetic_dataset(const std::vector<ProcessParams>& grid, const OracleConfig& c,
                                                  std::uint64_t seed, const fs::path& out_dir,
                                                  const ParamBounds& bounds = table1_bounds()) {
  auto ds = synthesize_dataset(grid, c, seed, bounds);
  write_dataset(out_dir, ds.manifest, ds.views);
  return ds.manifest;
}

}  // namespace vacuform
