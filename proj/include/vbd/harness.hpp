#pragma once

// Scenario runner: trains and evaluates detectors over manifests, applies the
// robustness / lighting / pre-JPEG test-time transforms, fine-tunes the aware
// model, and serializes report tables.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "vbd/attacks.hpp"
#include "vbd/comat.hpp"
#include "vbd/corpus.hpp"
#include "vbd/crspam.hpp"
#include "vbd/image_io.hpp"
#include "vbd/nn.hpp"
#include "vbd/svm.hpp"

namespace vbd::harness {

namespace fs = std::filesystem;
using corpus::Label;
using corpus::Manifest;
using corpus::ManifestEntry;
using corpus::Split;

// -- progress log -----------------------------------------------------------------

using LogFn = std::function<void(const std::string&)>;

inline LogFn& log_sink() {
  static LogFn sink;
  return sink;
}

inline void log(const std::string& msg) {
  if (log_sink()) log_sink()(msg);
}

/// Runs fn(0..n-1) on the available cores. Each index owns its output slot, so
/// results do not depend on scheduling.
template <class F>
void parallel_for(std::size_t n, F&& fn) {
  const std::size_t threads = std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!error) error = std::current_exception();
            next = n;
          }
        }
      });
  }
  if (error) std::rethrow_exception(error);
}

// -- scenario description ---------------------------------------------------------

enum class Detector { cnn_comat, svm_crspam };
enum class ScenarioKind { unaware, robustness, lighting, aware_attack, mismatch, prejpeg };

inline std::string to_string(Detector d) { return d == Detector::cnn_comat ? "cnn_comat" : "svm_crspam"; }

inline Detector parse_detector(const std::string& s) {
  if (s == "cnn_comat") return Detector::cnn_comat;
  if (s == "svm_crspam") return Detector::svm_crspam;
  throw std::invalid_argument("unknown detector '" + s + "'");
}

inline std::string to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::unaware: return "unaware";
    case ScenarioKind::robustness: return "robustness";
    case ScenarioKind::lighting: return "lighting";
    case ScenarioKind::aware_attack: return "aware_attack";
    case ScenarioKind::mismatch: return "mismatch";
    case ScenarioKind::prejpeg: return "prejpeg";
  }
  return "?";
}

inline ScenarioKind parse_scenario_kind(const std::string& s) {
  for (auto k : {ScenarioKind::unaware, ScenarioKind::robustness, ScenarioKind::lighting, ScenarioKind::aware_attack,
                 ScenarioKind::mismatch, ScenarioKind::prejpeg})
    if (to_string(k) == s || (k == ScenarioKind::aware_attack && s == "aware")) return k;
  throw std::invalid_argument("unknown scenario '" + s + "'");
}

struct CnnOptions {
  int bins = 64;
  bool two_dense = true;
  nn::TrainConfig train;  // seed is overridden by the scenario seed
};

struct SvmOptions {
  std::vector<double> c_grid = svm::default_c_grid();
  std::vector<double> gamma_grid = svm::default_gamma_grid();
  int folds = 5;
  svm::TrainOptions train;
};

/// Median filtering, gamma, average blurring, CLAHE, Gaussian noise, resizing,
/// zooming, rotation, then blurring followed by sharpening.
inline std::vector<AttackChain> table_ii_grid() {
  std::vector<AttackChain> g;
  for (const char* s : {"median:3", "median:5", "median:7", "gamma:0.9", "gamma:0.6", "gamma:1.3", "avg_blur:3",
                        "avg_blur:5", "avg_blur:7", "clahe:2", "clahe:4", "gauss_noise:2", "gauss_noise:0.8",
                        "resize:0.8", "resize:0.5", "zoom:1.4", "zoom:1.9", "rotate:5", "rotate:10",
                        "avg_blur:3+sharpen"})
    g.push_back(parse_chain(s));
  return g;
}

struct Scenario {
  ScenarioKind name = ScenarioKind::unaware;
  fs::path train_manifest;
  fs::path test_manifest;
  std::vector<AttackChain> attack_grid = table_ii_grid();
  Detector detector = Detector::cnn_comat;
  std::uint64_t seed = 1;
  fs::path model_in;   // model consumed by every scenario but unaware
  fs::path model_out;  // where unaware / aware persist their model
  std::vector<double> lighting_factors{1.0, 0.75, 0.5};
  std::vector<int> jpeg_qualities{95, 90, 85, 80};
  CnnOptions cnn;
  SvmOptions svm;
};

inline nlohmann::ordered_json to_json(const Scenario& s) {
  nlohmann::ordered_json j;
  j["name"] = to_string(s.name);
  j["detector"] = to_string(s.detector);
  j["seed"] = s.seed;
  j["train_manifest"] = s.train_manifest.generic_string();
  j["test_manifest"] = s.test_manifest.generic_string();
  j["model_in"] = s.model_in.generic_string();
  j["model_out"] = s.model_out.generic_string();
  auto grid = nlohmann::ordered_json::array();
  for (const auto& c : s.attack_grid) grid.push_back(format_chain(c));
  j["attack_grid"] = grid;
  j["lighting_factors"] = s.lighting_factors;
  j["jpeg_qualities"] = s.jpeg_qualities;
  const auto& t = s.cnn.train;
  j["cnn"] = {{"bins", s.cnn.bins},
              {"two_dense", s.cnn.two_dense},
              {"learning_rate", t.learning_rate},
              {"momentum", t.momentum},
              {"batch_size", t.batch_size},
              {"epochs", t.epochs},
              {"stop_at_val_accuracy", t.stop_at_val_accuracy}};
  j["svm"] = {{"c_grid", s.svm.c_grid},
              {"gamma_grid", s.svm.gamma_grid},
              {"folds", s.svm.folds},
              {"tol", s.svm.train.tol},
              {"max_iterations", s.svm.train.max_iterations}};
  return j;
}

/// Missing keys keep their defaults. Attack chains may be compact strings or JSON arrays.
inline Scenario scenario_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("scenario config must be a JSON object");
  Scenario s;
  try {
    if (j.contains("name")) s.name = parse_scenario_kind(j.at("name").get<std::string>());
    if (j.contains("detector")) s.detector = parse_detector(j.at("detector").get<std::string>());
    s.seed = j.value("seed", s.seed);
    s.train_manifest = j.value("train_manifest", std::string());
    s.test_manifest = j.value("test_manifest", std::string());
    s.model_in = j.value("model_in", std::string());
    s.model_out = j.value("model_out", std::string());
    if (j.contains("attack_grid")) {
      s.attack_grid.clear();
      for (const auto& c : j.at("attack_grid"))
        s.attack_grid.push_back(c.is_string() ? parse_chain(c.get<std::string>()) : chain_from_json(c));
    }
    s.lighting_factors = j.value("lighting_factors", s.lighting_factors);
    s.jpeg_qualities = j.value("jpeg_qualities", s.jpeg_qualities);
    if (j.contains("cnn")) {
      const auto& c = j.at("cnn");
      auto& t = s.cnn.train;
      s.cnn.bins = c.value("bins", s.cnn.bins);
      s.cnn.two_dense = c.value("two_dense", s.cnn.two_dense);
      t.learning_rate = c.value("learning_rate", t.learning_rate);
      t.momentum = c.value("momentum", t.momentum);
      t.batch_size = c.value("batch_size", t.batch_size);
      t.epochs = c.value("epochs", t.epochs);
      t.stop_at_val_accuracy = c.value("stop_at_val_accuracy", t.stop_at_val_accuracy);
    }
    if (j.contains("svm")) {
      const auto& c = j.at("svm");
      s.svm.c_grid = c.value("c_grid", s.svm.c_grid);
      s.svm.gamma_grid = c.value("gamma_grid", s.svm.gamma_grid);
      s.svm.folds = c.value("folds", s.svm.folds);
      s.svm.train.tol = c.value("tol", s.svm.train.tol);
      s.svm.train.max_iterations = c.value("max_iterations", s.svm.train.max_iterations);
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("scenario config: ") + e.what());
  }
  for (double f : s.lighting_factors)
    if (!(f > 0 && f <= 1)) throw std::invalid_argument("scenario: lighting factors must be in (0,1]");
  for (int q : s.jpeg_qualities)
    if (q < 1 || q > 100) throw std::invalid_argument("scenario: JPEG qualities must be in [1,100]");
  return s;
}

// -- reports ------------------------------------------------------------------------

struct ReportRow {
  std::string scenario;
  std::string detector;
  std::string condition;
  std::string parameter;
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::size_t n_test() const { return tp + tn + fp + fn; }
  double accuracy() const { return static_cast<double>(tp + tn) / static_cast<double>(n_test()); }
  bool operator==(const ReportRow&) const = default;
};

struct EvalReport {
  std::vector<ReportRow> rows;

  void add(ReportRow r) {
    if (r.n_test() == 0) throw std::invalid_argument("report row '" + r.condition + "' has no test frames");
    rows.push_back(std::move(r));
  }
  /// First row matching condition (and parameter, when given).
  const ReportRow& find(const std::string& condition, const std::optional<std::string>& parameter = {}) const {
    for (const auto& r : rows)
      if (r.condition == condition && (!parameter || r.parameter == *parameter)) return r;
    throw std::out_of_range("report has no row " + condition + (parameter ? " " + *parameter : ""));
  }
};

inline std::string percent(double accuracy) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * accuracy);
  return buf;
}

enum class ReportFormat { csv, json, markdown };

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  if (s == "markdown" || s == "md") return ReportFormat::markdown;
  throw std::invalid_argument("unknown report format '" + s + "'");
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

}  // namespace detail

inline constexpr const char* kCsvHeader = "scenario,detector,condition,parameter,accuracy,n_test,tp,tn,fp,fn";

inline std::string format_report(const EvalReport& r, ReportFormat fmt) {
  std::ostringstream os;
  switch (fmt) {
    case ReportFormat::csv:
      os << kCsvHeader << '\n';
      for (const auto& row : r.rows)
        os << detail::csv_field(row.scenario) << ',' << detail::csv_field(row.detector) << ','
           << detail::csv_field(row.condition) << ',' << detail::csv_field(row.parameter) << ','
           << percent(row.accuracy()) << ',' << row.n_test() << ',' << row.tp << ',' << row.tn << ',' << row.fp << ','
           << row.fn << '\n';
      break;
    case ReportFormat::json: {
      auto arr = nlohmann::ordered_json::array();
      for (const auto& row : r.rows)
        arr.push_back({{"scenario", row.scenario},
                       {"detector", row.detector},
                       {"condition", row.condition},
                       {"parameter", row.parameter},
                       {"accuracy", percent(row.accuracy())},
                       {"n_test", row.n_test()},
                       {"tp", row.tp},
                       {"tn", row.tn},
                       {"fp", row.fp},
                       {"fn", row.fn}});
      os << nlohmann::ordered_json{{"rows", arr}}.dump(2) << '\n';
      break;
    }
    case ReportFormat::markdown:
      // Operation | Parameter | Accuracy, preceded by scenario and detector.
      os << "| Scenario | Detector | Operation | Parameter | Accuracy | n |\n";
      os << "|---|---|---|---|---:|---:|\n";
      for (const auto& row : r.rows)
        os << "| " << row.scenario << " | " << row.detector << " | " << row.condition << " | "
           << (row.parameter.empty() ? "-" : row.parameter) << " | " << percent(row.accuracy()) << " | "
           << row.n_test() << " |\n";
      break;
  }
  return os.str();
}

inline void emit_report(const EvalReport& r, ReportFormat fmt, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report " + path.string());
  out << format_report(r, fmt);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

/// Parses CSV or JSON reports. The printed accuracy must agree with the confusion counts.
inline EvalReport parse_report(const std::string& text) {
  EvalReport r;
  auto check = [](const ReportRow& row, const std::string& printed) {
    if (row.n_test() == 0) throw std::invalid_argument("report row with no test frames");
    if (percent(row.accuracy()) != printed)
      throw std::invalid_argument("report accuracy " + printed + " disagrees with confusion counts");
  };
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
      for (const auto& o : j.at("rows")) {
        ReportRow row{o.at("scenario"), o.at("detector"),         o.at("condition"),    o.at("parameter"),
                      o.at("tp").get<std::size_t>(),              o.at("tn").get<std::size_t>(),
                      o.at("fp").get<std::size_t>(),              o.at("fn").get<std::size_t>()};
        check(row, o.at("accuracy").get<std::string>());
        if (row.n_test() != o.at("n_test").get<std::size_t>()) throw std::invalid_argument("report: n_test mismatch");
        r.rows.push_back(std::move(row));
      }
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(std::string("report json: ") + e.what());
    }
    return r;
  }
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw std::invalid_argument("report csv: bad header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::csv_split(line);
    if (f.size() != 10) throw std::invalid_argument("report csv: expected 10 fields");
    try {
      ReportRow row{f[0], f[1], f[2], f[3], std::stoull(f[6]), std::stoull(f[7]), std::stoull(f[8]), std::stoull(f[9])};
      check(row, f[4]);
      if (row.n_test() != std::stoull(f[5])) throw std::invalid_argument("report: n_test mismatch");
      r.rows.push_back(std::move(row));
    } catch (const std::logic_error& e) {
      throw std::invalid_argument(std::string("report csv: ") + e.what());
    }
  }
  return r;
}

inline EvalReport read_report(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open report " + path.string());
  return parse_report(std::string(std::istreambuf_iterator<char>(in), {}));
}

// -- detectors ------------------------------------------------------------------------

/// A trained detector of either kind. Positive (true) means virtual background.
struct Model {
  Detector kind = Detector::cnn_comat;
  std::optional<nn::CnnModel<float>> cnn;
  std::optional<svm::SvmModel> svm;

  bool predict(const Frame& f) const;

  void save(const fs::path& path) const {
    if (cnn)
      cnn->save(path);
    else if (svm)
      svm::save_svm(*svm, path);
    else
      throw std::logic_error("save: empty model");
  }

  /// CNN files start with "VBGM"; anything else is read as an SVM descriptor.
  static Model load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open model " + path.string());
    char magic[4] = {};
    in.read(magic, 4);
    Model m;
    if (in && std::string(magic, 4) == "VBGM") {
      m.kind = Detector::cnn_comat;
      m.cnn = nn::CnnModel<float>::load(path);
    } else {
      m.kind = Detector::svm_crspam;
      m.svm = svm::load_svm(path);
    }
    return m;
  }
};

inline nn::Input<float> cnn_input(const nn::CnnModel<float>& m, const Frame& f) {
  return m.prepare(rebin_tensor(build_tensor(f), m.architecture().input_bins));
}

inline svm::Row svm_features(const Frame& f) {
  const auto v = crspam1372(f);
  return svm::Row(v.begin(), v.end());
}

inline bool Model::predict(const Frame& f) const {
  if (cnn) return cnn->forward(cnn_input(*cnn, f)) >= 0.5f;
  if (svm) return svm::svm_predict(*svm, svm_features(f)).virtual_bg;
  throw std::logic_error("predict: empty model");
}

// -- manifest handling ----------------------------------------------------------------

inline Manifest load_manifest(const fs::path& path, const char* role) {
  if (path.empty()) throw std::invalid_argument(std::string("scenario: ") + role + " manifest not set");
  if (!fs::exists(path)) throw std::runtime_error(std::string(role) + " manifest not found: " + path.string());
  return corpus::read_manifest(path);
}

inline Manifest filter(const Manifest& m, const std::function<bool(const ManifestEntry&)>& keep) {
  Manifest out;
  std::copy_if(m.begin(), m.end(), std::back_inserter(out), keep);
  return out;
}

inline Manifest clean_split(const Manifest& m, Split s) {
  return filter(m, [s](const auto& e) { return e.split == s && e.label != Label::attack_virtual; });
}

/// Throws if any frame content appears on both sides.
inline void check_disjoint(const Manifest& train, const Manifest& test) {
  std::set<std::uint64_t> seen;
  for (const auto& e : train) seen.insert(e.hash);
  std::size_t overlap = 0;
  for (const auto& e : test) overlap += seen.count(e.hash);
  if (overlap > 0)
    throw std::invalid_argument("train and test manifests share " + std::to_string(overlap) + " frame(s) by content hash");
}

inline void require_both_classes(const Manifest& m, const std::string& what) {
  const bool pos = std::any_of(m.begin(), m.end(), [](const auto& e) { return corpus::is_positive(e.label); });
  const bool neg = std::any_of(m.begin(), m.end(), [](const auto& e) { return !corpus::is_positive(e.label); });
  if (!pos || !neg) throw std::invalid_argument(what + " must contain both real and virtual frames");
}

inline std::vector<Frame> load_frames(const Manifest& m) {
  std::vector<Frame> frames(m.size());
  parallel_for(m.size(), [&](std::size_t i) { frames[i] = load_frame(m[i].path); });
  return frames;
}

inline nn::Dataset<float> cnn_dataset(const nn::CnnModel<float>& model, const Manifest& m) {
  nn::Dataset<float> d(m.size());
  parallel_for(m.size(), [&](std::size_t i) {
    d[i].input = cnn_input(model, load_frame(m[i].path));
    d[i].label = corpus::is_positive(m[i].label) ? 1.0f : 0.0f;
  });
  return d;
}

/// Per-frame transform applied before feature extraction; receives the frame index.
using FrameTransform = std::function<Frame(const Frame&, std::size_t)>;

inline ReportRow evaluate_frames(const Model& model, const std::vector<Frame>& frames, const Manifest& m,
                                 const FrameTransform& transform = {}) {
  std::vector<char> pred(frames.size());
  parallel_for(frames.size(), [&](std::size_t i) {
    pred[i] = transform ? model.predict(transform(frames[i], i)) : model.predict(frames[i]);
  });
  ReportRow r;
  r.detector = to_string(model.kind);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const bool truth = corpus::is_positive(m[i].label);
    if (truth)
      (pred[i] ? r.tp : r.fn)++;
    else
      (pred[i] ? r.fp : r.tn)++;
  }
  return r;
}

inline ReportRow evaluate_dataset(const nn::CnnModel<float>& model, const nn::Dataset<float>& data) {
  ReportRow r;
  r.detector = to_string(Detector::cnn_comat);
  for (const auto& s : data) {
    const bool pred = model.forward(s.input) >= 0.5f, truth = s.label >= 0.5f;
    if (truth)
      (pred ? r.tp : r.fn)++;
    else
      (pred ? r.fp : r.tn)++;
  }
  return r;
}

inline ReportRow labelled(ReportRow r, ScenarioKind k, std::string condition, std::string parameter) {
  r.scenario = to_string(k);
  r.condition = std::move(condition);
  r.parameter = std::move(parameter);
  return r;
}

inline Model require_model(const Scenario& scn) {
  if (scn.model_in.empty()) throw std::invalid_argument("scenario '" + to_string(scn.name) + "' needs model_in");
  if (!fs::exists(scn.model_in)) throw std::runtime_error("model not found: " + scn.model_in.string());
  Model m = Model::load(scn.model_in);
  if (m.kind != Detector::cnn_comat)
    throw std::invalid_argument("scenario '" + to_string(scn.name) + "' is defined for the co-mat CNN only");
  return m;
}

/// Row labels for a chain: op names and parameters joined by '+', "-" when absent.
inline std::pair<std::string, std::string> chain_labels(const AttackChain& c) {
  if (c.empty()) return {"none", "-"};
  std::string ops, params;
  for (const auto& s : c) {
    if (!ops.empty()) ops += "+";
    ops += attack_name(s);
    const auto p = attack_parameter(s);
    if (!p.empty()) params += (params.empty() ? "" : "+") + p;
  }
  return {ops, params.empty() ? "-" : params};
}

// -- training -------------------------------------------------------------------------

inline nn::TrainConfig train_config(const Scenario& scn) {
  nn::TrainConfig t = scn.cnn.train;
  t.seed = scn.seed;
  return t;
}

inline void log_epoch(const nn::EpochStats& e) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch %d  train loss %.4f acc %.4f  val loss %.4f acc %.4f", e.epoch, e.train_loss,
                e.train_acc, e.val_loss, e.val_acc);
  log(buf);
}

inline Model train_cnn(const Scenario& scn, const Manifest& train, const Manifest& val) {
  Model m;
  m.kind = Detector::cnn_comat;
  m.cnn.emplace(nn::Architecture::detector(scn.cnn.bins, scn.cnn.two_dense), scn.seed);
  log("extracting co-mat tensors for " + std::to_string(train.size() + val.size()) + " frames");
  const auto tr = cnn_dataset(*m.cnn, train);
  const auto va = cnn_dataset(*m.cnn, val);
  nn::train(*m.cnn, tr, &va, train_config(scn), [](const nn::EpochStats& e) {
    log_epoch(e);
    return true;
  });
  return m;
}

inline Model train_svm(const Scenario& scn, const Manifest& train) {
  log("extracting CRSPAM features for " + std::to_string(train.size()) + " frames");
  svm::Matrix x(train.size());
  std::vector<int> y(train.size());
  parallel_for(train.size(), [&](std::size_t i) {
    x[i] = svm_features(load_frame(train[i].path));
    y[i] = corpus::is_positive(train[i].label) ? 1 : -1;
  });
  const auto g = svm::grid_search_cv(x, y, scn.svm.c_grid, scn.svm.gamma_grid, scn.svm.folds, scn.seed, scn.svm.train);
  char buf[128];
  std::snprintf(buf, sizeof buf, "grid search: C=%g gamma=%g cv accuracy %.4f", g.C, g.gamma, g.cv_accuracy);
  log(buf);
  Model m;
  m.kind = Detector::svm_crspam;
  m.svm = svm::svm_train(x, y, g.C, g.gamma, scn.svm.train);
  return m;
}

// -- scenarios ------------------------------------------------------------------------

/// Trains the selected detector on the clean train split (the CNN monitors the
/// val split; the SVM cross-validates over train+val) and reports clean test accuracy.
inline EvalReport run_unaware(const Scenario& scn, Model* trained = nullptr) {
  const auto train_m = load_manifest(scn.train_manifest, "train");
  const auto test_m = load_manifest(scn.test_manifest, "test");
  const auto train = clean_split(train_m, Split::train), val = clean_split(train_m, Split::val);
  const auto test = clean_split(test_m, Split::test);
  if (test.empty()) throw std::invalid_argument("unaware: test manifest has no clean test frames");
  require_both_classes(train, "unaware training split");
  require_both_classes(test, "unaware test split");
  Manifest seen = train;
  seen.insert(seen.end(), val.begin(), val.end());
  check_disjoint(seen, test);

  Model m = scn.detector == Detector::cnn_comat ? train_cnn(scn, train, val) : train_svm(scn, seen);
  if (!scn.model_out.empty()) m.save(scn.model_out);
  EvalReport r;
  r.add(labelled(evaluate_frames(m, load_frames(test), test), ScenarioKind::unaware, "clean", "-"));
  if (trained) *trained = std::move(m);
  return r;
}

/// Applies every chain of the grid to the clean test frames only. The identity
/// row comes first.
inline EvalReport run_robustness(const Scenario& scn) {
  const Model m = require_model(scn);
  const auto test = clean_split(load_manifest(scn.test_manifest, "test"), Split::test);
  if (test.empty()) throw std::invalid_argument("robustness: no clean test frames");
  const auto frames = load_frames(test);
  EvalReport r;
  std::vector<AttackChain> grid{AttackChain{}};
  grid.insert(grid.end(), scn.attack_grid.begin(), scn.attack_grid.end());
  for (const auto& chain : grid) {
    for (const auto& s : chain) validate(s);
    const auto [op, param] = chain_labels(chain);
    log("robustness: " + (chain.empty() ? std::string("identity") : format_chain(chain)));
    const FrameTransform t = [&](const Frame& f, std::size_t i) {
      return apply_chain(f, reseed_chain(chain, corpus::derive_seed(scn.seed, test[i].hash)));
    };
    r.add(labelled(evaluate_frames(m, frames, test, chain.empty() ? FrameTransform{} : t), ScenarioKind::robustness,
                   op, param));
  }
  return r;
}

inline EvalReport run_lighting(const Scenario& scn) {
  const Model m = require_model(scn);
  const auto test = clean_split(load_manifest(scn.test_manifest, "test"), Split::test);
  if (test.empty()) throw std::invalid_argument("lighting: no clean test frames");
  const auto frames = load_frames(test);
  EvalReport r;
  for (double k : scn.lighting_factors) {
    const FrameTransform t = [k](const Frame& f, std::size_t) { return corpus::lighting_proxy(f, k); };
    r.add(labelled(evaluate_frames(m, frames, test, t), ScenarioKind::lighting, "lighting",
                   vbd::detail::format_number(k)));
  }
  return r;
}

/// Continues SGD from the unaware weights on the train split including
/// attack_virtual frames, then compares both models on the attack frames alone
/// and on attack_virtual vs real. The aware model's training accuracy is reported too.
inline EvalReport run_aware(const Scenario& scn, Model* tuned = nullptr) {
  const Model unaware = require_model(scn);
  const auto train_m = load_manifest(scn.train_manifest, "train");
  const auto test_m = load_manifest(scn.test_manifest, "test");
  const auto train = corpus::select(train_m, Split::train), val = corpus::select(train_m, Split::val);
  const auto is_attack = [](const ManifestEntry& e) { return e.label == Label::attack_virtual; };
  if (std::none_of(train.begin(), train.end(), is_attack))
    throw std::invalid_argument("aware: train split has no attack_virtual frames");
  const auto attack_test = filter(test_m, [&](const auto& e) { return e.split == Split::test && is_attack(e); });
  if (attack_test.empty()) throw std::invalid_argument("aware: test split has no attack_virtual frames");
  const auto versus = filter(test_m, [&](const auto& e) {
    return e.split == Split::test && (is_attack(e) || e.label == Label::real);
  });
  require_both_classes(versus, "aware test split");
  Manifest seen = train;
  seen.insert(seen.end(), val.begin(), val.end());
  check_disjoint(seen, versus);

  Model aware = unaware;
  log("extracting co-mat tensors for " + std::to_string(train.size() + val.size()) + " frames");
  const auto tr = cnn_dataset(*aware.cnn, train);
  const auto va = cnn_dataset(*aware.cnn, val);
  nn::train(*aware.cnn, tr, &va, train_config(scn), [](const nn::EpochStats& e) {
    log_epoch(e);
    return true;
  });
  if (!scn.model_out.empty()) aware.save(scn.model_out);

  const auto attack_frames = load_frames(attack_test);
  const auto versus_frames = load_frames(versus);
  EvalReport r;
  const auto k = ScenarioKind::aware_attack;
  r.add(labelled(evaluate_frames(unaware, attack_frames, attack_test), k, "attack_virtual", "unaware"));
  r.add(labelled(evaluate_frames(aware, attack_frames, attack_test), k, "attack_virtual", "aware"));
  r.add(labelled(evaluate_frames(unaware, versus_frames, versus), k, "attack_vs_real", "unaware"));
  r.add(labelled(evaluate_frames(aware, versus_frames, versus), k, "attack_vs_real", "aware"));
  r.add(labelled(evaluate_dataset(*aware.cnn, tr), k, "train", "aware"));
  if (tuned) *tuned = std::move(aware);
  return r;
}

/// Cross-source rows, one per source tag in the test manifest, after a control
/// row on the training source's own clean (real vs virtual) test split.
inline EvalReport run_mismatch(const Scenario& scn) {
  const Model m = require_model(scn);
  const auto train_m = load_manifest(scn.train_manifest, "train");
  const auto test_m = load_manifest(scn.test_manifest, "test");
  std::set<std::string> train_tags;
  for (const auto& e : train_m)
    if (e.split != Split::test) train_tags.insert(e.source_tag);
  std::map<std::string, Manifest> by_tag;
  for (const auto& e : test_m)
    if (e.split == Split::test) by_tag[e.source_tag].push_back(e);
  if (by_tag.empty()) throw std::invalid_argument("mismatch: test manifest has no test frames");
  for (const auto& [tag, _] : by_tag)
    if (train_tags.count(tag)) throw std::invalid_argument("mismatch: source tag '" + tag + "' is also in training");
  const auto control = clean_split(train_m, Split::test);
  if (control.empty()) throw std::invalid_argument("mismatch: training manifest has no test split for the control row");

  Manifest seen = filter(train_m, [](const auto& e) { return e.split != Split::test; });
  EvalReport r;
  std::string train_tag;
  for (const auto& t : train_tags) train_tag += (train_tag.empty() ? "" : "+") + t;
  r.add(labelled(evaluate_frames(m, load_frames(control), control), ScenarioKind::mismatch, "control", train_tag));
  for (const auto& [tag, entries] : by_tag) {
    check_disjoint(seen, entries);
    r.add(labelled(evaluate_frames(m, load_frames(entries), entries), ScenarioKind::mismatch, "source_tag", tag));
  }
  return r;
}

/// [median(3), jpeg(QF)] on every test frame for each QF, then the QF 100 control.
inline EvalReport run_prejpeg(const Scenario& scn) {
  const Model m = require_model(scn);
  const auto test = corpus::select(load_manifest(scn.test_manifest, "test"), Split::test);
  if (test.empty()) throw std::invalid_argument("prejpeg: no test frames");
  const auto frames = load_frames(test);
  EvalReport r;
  auto qualities = scn.jpeg_qualities;
  qualities.push_back(100);
  for (int q : qualities) {
    const AttackChain chain{attack::Median{3}, attack::Jpeg{q}};
    const auto [op, param] = chain_labels(chain);
    log("prejpeg: QF " + std::to_string(q));
    const FrameTransform t = [&](const Frame& f, std::size_t) { return apply_chain(f, chain); };
    r.add(labelled(evaluate_frames(m, frames, test, t), ScenarioKind::prejpeg, op, param));
  }
  return r;
}

inline EvalReport run(const Scenario& scn) {
  switch (scn.name) {
    case ScenarioKind::unaware: return run_unaware(scn);
    case ScenarioKind::robustness: return run_robustness(scn);
    case ScenarioKind::lighting: return run_lighting(scn);
    case ScenarioKind::aware_attack: return run_aware(scn);
    case ScenarioKind::mismatch: return run_mismatch(scn);
    case ScenarioKind::prejpeg: return run_prejpeg(scn);
  }
  throw std::logic_error("unreachable scenario");
}

}  // namespace vbd::harness
