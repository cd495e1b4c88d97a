// vbd: command-line front end for corpus generation, feature extraction,
// attacks, training and scenario evaluation.
//
// Exit codes: 0 success, 2 validation error, 3 runtime failure.

#include <cstdio>
#include <fstream>
#include <iostream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include <CLI11.hpp>

#include "vbd/harness.hpp"

namespace {

namespace fs = std::filesystem;
using namespace vbd;

constexpr int kOk = 0;
constexpr int kValidation = 2;
constexpr int kRuntime = 3;

struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open config " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

std::vector<fs::path> image_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// -- corpus ---------------------------------------------------------------------

struct CorpusGenArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<double> scale;
};

int corpus_gen(const CorpusGenArgs& a) {
  if (a.scale && !(*a.scale > 0)) throw ValidationError("--scale must be > 0");
  corpus::CorpusConfig cfg = a.scale ? corpus::CorpusConfig::scaled(*a.scale) : corpus::CorpusConfig{};
  if (!a.config.empty()) {
    auto j = read_json(a.config);
    if (a.scale) j.erase("counts");
    const auto base = corpus::to_json(cfg);
    nlohmann::json merged = nlohmann::json::parse(base.dump());
    merged.update(j);
    cfg = corpus::corpus_config_from_json(merged);
  }
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  const auto m = corpus::build_manifest(cfg, a.out);
  std::ofstream(fs::path(a.out) / "corpus_config.json") << corpus::to_json(cfg).dump(2) << '\n';
  std::cout << "wrote " << m.size() << " frames to " << (fs::path(a.out) / "manifest.jsonl").string() << '\n';
  return kOk;
}

struct IngestArgs {
  std::string dir, label, source_tag, manifest, split = "test";
  std::vector<std::string> tags;
  std::optional<std::uint64_t> seed;  // accepted for uniformity; ingestion is not random
};

int corpus_ingest(const IngestArgs& a) {
  corpus::Manifest existing;
  if (fs::exists(a.manifest)) existing = corpus::read_manifest(a.manifest);
  const auto res = corpus::ingest(a.dir, corpus::parse_label(a.label), a.source_tag, existing,
                                  corpus::parse_split(a.split), a.tags);
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
  existing.insert(existing.end(), res.entries.begin(), res.entries.end());
  if (const auto parent = fs::path(a.manifest).parent_path(); !parent.empty()) fs::create_directories(parent);
  corpus::write_manifest(existing, a.manifest);
  std::cout << "ingested " << res.entries.size() << " frames (" << res.warnings.size() << " duplicate warnings)\n";
  return kOk;
}

// -- extraction -------------------------------------------------------------------

struct ExtractArgs {
  std::string manifest, out, split;
  int bins = 256;
  bool raw_counts = false;
  std::optional<std::uint64_t> seed;
};

corpus::Manifest extract_entries(const ExtractArgs& a) {
  auto m = corpus::read_manifest(a.manifest);
  if (!a.split.empty()) m = corpus::select(m, corpus::parse_split(a.split));
  if (m.empty()) throw ValidationError("no manifest entries to extract");
  return m;
}

int extract_comat(const ExtractArgs& a) {
  if (a.bins < 1 || 256 % a.bins != 0) throw ValidationError("--bins must divide 256");
  const auto m = extract_entries(a);
  fs::create_directories(a.out);
  harness::parallel_for(m.size(), [&](std::size_t i) {
    const auto t = rebin_tensor(build_tensor(load_frame(m[i].path), !a.raw_counts), a.bins);
    const auto stem = fs::path(a.out) / m[i].path.stem();
    write_tensor(t, stem.string() + ".cmt6");
    write_tensor_sidecar(t, stem.string() + ".json", m[i].path.filename().string());
  });
  std::cout << "wrote " << m.size() << " co-mat tensors to " << a.out << '\n';
  return kOk;
}

int extract_crspam(const ExtractArgs& a) {
  const auto m = extract_entries(a);
  std::vector<FeatureRow> rows(m.size());
  harness::parallel_for(m.size(), [&](std::size_t i) {
    const auto f = crspam1372(load_frame(m[i].path));
    rows[i] = {m[i].path.filename().string(), corpus::to_string(m[i].label), {f.begin(), f.end()}};
  });
  if (const auto parent = fs::path(a.out).parent_path(); !parent.empty()) fs::create_directories(parent);
  write_feature_csv(rows, a.out);
  std::cout << "wrote " << rows.size() << " CRSPAM rows to " << a.out << '\n';
  return kOk;
}

// -- attacks ----------------------------------------------------------------------

struct AttackArgs {
  std::string in, out, chain;
  int jpeg_quality = 0;  // JPEG output quality; 0 means PNG unless the name ends in .jpg
  std::optional<std::uint64_t> seed;
};

int attack_apply(const AttackArgs& a) {
  const AttackChain chain = parse_chain(a.chain);
  auto one = [&](const fs::path& src, const fs::path& dst, std::uint64_t index) {
    const AttackChain c = a.seed ? reseed_chain(chain, corpus::derive_seed(*a.seed, index)) : chain;
    auto ext = dst.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    const bool jpeg = a.jpeg_quality > 0 || ext == ".jpg" || ext == ".jpeg";
    save_frame(apply_chain(load_frame(src), c), dst,
               jpeg ? SaveOptions::jpeg(a.jpeg_quality > 0 ? a.jpeg_quality : 95) : SaveOptions::png());
  };
  if (fs::is_directory(a.in)) {
    const auto files = image_files(a.in);
    if (files.empty()) throw ValidationError("no PNG/JPEG frames in " + a.in);
    fs::create_directories(a.out);
    harness::parallel_for(files.size(), [&](std::size_t i) {
      one(files[i], fs::path(a.out) / files[i].filename().replace_extension(a.jpeg_quality > 0 ? ".jpg" : ".png"), i);
    });
    std::cout << "attacked " << files.size() << " frames with " << format_chain(chain) << '\n';
  } else {
    if (!fs::exists(a.in)) throw std::runtime_error("input not found: " + a.in);
    one(a.in, a.out, 0);
    std::cout << "wrote " << a.out << '\n';
  }
  return kOk;
}

// -- scenarios --------------------------------------------------------------------

struct ScenarioArgs {
  std::string config, train_manifest, test_manifest, model_in, model_out, report, format = "csv";
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> bins;
};

harness::Scenario load_scenario(const ScenarioArgs& a, harness::ScenarioKind kind) {
  harness::Scenario s;
  if (!a.config.empty()) s = harness::scenario_from_json(read_json(a.config));
  s.name = kind;
  if (a.seed) s.seed = *a.seed;
  if (!a.train_manifest.empty()) s.train_manifest = a.train_manifest;
  if (!a.test_manifest.empty()) s.test_manifest = a.test_manifest;
  if (!a.model_in.empty()) s.model_in = a.model_in;
  if (!a.model_out.empty()) s.model_out = a.model_out;
  if (a.epochs) s.cnn.train.epochs = *a.epochs;
  if (a.bins) s.cnn.bins = *a.bins;
  if (s.test_manifest.empty()) s.test_manifest = s.train_manifest;
  return s;
}

int finish(const harness::EvalReport& r, const ScenarioArgs& a) {
  const auto fmt = harness::parse_report_format(a.format);
  if (!a.report.empty()) {
    if (const auto parent = fs::path(a.report).parent_path(); !parent.empty()) fs::create_directories(parent);
    harness::emit_report(r, fmt, a.report);
  }
  std::cout << harness::format_report(r, harness::ReportFormat::markdown);
  return kOk;
}

int train_detector(const ScenarioArgs& a, harness::Detector d) {
  auto s = load_scenario(a, harness::ScenarioKind::unaware);
  s.detector = d;
  if (s.model_out.empty()) throw ValidationError("train: --model-out (or model_out in the config) is required");
  return finish(harness::run_unaware(s), a);
}

int eval_scenario(const ScenarioArgs& a, harness::ScenarioKind k) { return finish(harness::run(load_scenario(a, k)), a); }

// -- misc -------------------------------------------------------------------------

struct GradcheckArgs {
  double tolerance = 1e-4;
  bool dropout = false;
  std::optional<std::uint64_t> seed;
};

int gradcheck(const GradcheckArgs& a) {
  const auto rep = nn::grad_check(nn::Architecture::reduced(a.dropout), a.tolerance, a.seed.value_or(7));
  std::printf("max relative error %.3e at parameter %zu; %zu checked, %zu skipped at kinks -> %s\n",
              rep.max_relative_error, rep.worst_index, rep.checked, rep.kinks_skipped, rep.passed ? "PASS" : "FAIL");
  return rep.passed ? kOk : kRuntime;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out, format = "markdown";
  std::optional<std::uint64_t> seed;  // accepted for uniformity
};

int report(const ReportArgs& a) {
  harness::EvalReport merged;
  for (const auto& in : a.inputs) {
    const auto r = harness::read_report(in);
    merged.rows.insert(merged.rows.end(), r.rows.begin(), r.rows.end());
  }
  const auto fmt = harness::parse_report_format(a.format);
  if (a.out.empty())
    std::cout << harness::format_report(merged, fmt);
  else
    harness::emit_report(merged, fmt, a.out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Keep freed training buffers in the heap instead of returning them to the OS every batch.
  mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif
  CLI::App app{"Virtual background detection toolkit"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress messages");
  std::function<int()> action;

  auto add_seed = [](CLI::App* c, std::optional<std::uint64_t>& seed) {
    c->add_option("--seed", seed, "Master seed");
  };

  // corpus
  auto* corpus_cmd = app.add_subcommand("corpus", "Generate or ingest frame corpora");
  corpus_cmd->require_subcommand(1);
  CorpusGenArgs gen;
  auto* gen_cmd = corpus_cmd->add_subcommand("gen", "Generate the synthetic corpus and its manifest");
  gen_cmd->add_option("--config", gen.config, "Corpus config JSON")->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--scale", gen.scale, "Counts as a fraction of 300/50/30 per class");
  add_seed(gen_cmd, gen.seed);
  gen_cmd->callback([&] { action = [&] { return corpus_gen(gen); }; });

  IngestArgs ing;
  auto* ing_cmd = corpus_cmd->add_subcommand("ingest", "Append a directory of frames to a manifest");
  ing_cmd->add_option("--dir", ing.dir, "Directory of PNG/JPEG frames")->required();
  ing_cmd->add_option("--label", ing.label, "real | virtual | attack_virtual")->required();
  ing_cmd->add_option("--source-tag", ing.source_tag, "Source tag, e.g. ingested_appA")->required();
  ing_cmd->add_option("--manifest", ing.manifest, "Manifest to append to (created if missing)")->required();
  ing_cmd->add_option("--split", ing.split, "train | val | test");
  ing_cmd->add_option("--tag", ing.tags, "Scenario tag (repeatable)");
  add_seed(ing_cmd, ing.seed);
  ing_cmd->callback([&] { action = [&] { return corpus_ingest(ing); }; });

  // extract
  auto* extract_cmd = app.add_subcommand("extract", "Extract features for manifest entries");
  extract_cmd->require_subcommand(1);
  ExtractArgs ex;
  auto* comat_cmd = extract_cmd->add_subcommand("comat", "Six-plane co-occurrence tensors (CMT6 files)");
  auto* crspam_cmd = extract_cmd->add_subcommand("crspam", "CRSPAM1372 features (one CSV)");
  for (auto* c : {comat_cmd, crspam_cmd}) {
    c->add_option("--manifest", ex.manifest, "Manifest")->required()->check(CLI::ExistingFile);
    c->add_option("--out", ex.out, c == comat_cmd ? "Output directory" : "Output CSV")->required();
    c->add_option("--split", ex.split, "Only this split");
    add_seed(c, ex.seed);
  }
  comat_cmd->add_option("--bins", ex.bins, "Bin count (divides 256)");
  comat_cmd->add_flag("--raw-counts", ex.raw_counts, "Keep raw counts instead of per-plane frequencies");
  comat_cmd->callback([&] { action = [&] { return extract_comat(ex); }; });
  crspam_cmd->callback([&] { action = [&] { return extract_crspam(ex); }; });

  // attack
  auto* attack_cmd = app.add_subcommand("attack", "Post-processing attacks");
  attack_cmd->require_subcommand(1);
  AttackArgs at;
  auto* apply_cmd = attack_cmd->add_subcommand("apply", "Apply a chain to a frame or a directory of frames");
  apply_cmd->add_option("--in", at.in, "Input frame or directory")->required();
  apply_cmd->add_option("--out", at.out, "Output frame or directory")->required();
  apply_cmd->add_option("--chain", at.chain, "Chain, e.g. median:3+jpeg:80 or gauss_noise:2@7")->required();
  apply_cmd->add_option("--jpeg-quality", at.jpeg_quality, "Save output as JPEG at this quality")
      ->check(CLI::Range(1, 100));
  add_seed(apply_cmd, at.seed);
  apply_cmd->callback([&] { action = [&] { return attack_apply(at); }; });

  // train / eval
  ScenarioArgs sc;
  auto add_scenario_options = [&](CLI::App* c) {
    c->add_option("--config", sc.config, "Scenario config JSON")->check(CLI::ExistingFile);
    c->add_option("--train-manifest", sc.train_manifest, "Training manifest");
    c->add_option("--test-manifest", sc.test_manifest, "Test manifest (defaults to the training manifest)");
    c->add_option("--model-in", sc.model_in, "Existing model");
    c->add_option("--model-out", sc.model_out, "Where to write the trained model");
    c->add_option("--report", sc.report, "Report output path");
    c->add_option("--format", sc.format, "csv | json | markdown");
    c->add_option("--epochs", sc.epochs, "Training epochs");
    c->add_option("--bins", sc.bins, "CNN input bins");
    add_seed(c, sc.seed);
  };
  auto* train_cmd = app.add_subcommand("train", "Train a detector on the clean train split");
  train_cmd->require_subcommand(1);
  auto* train_cnn = train_cmd->add_subcommand("cnn", "Co-mat CNN");
  auto* train_svm = train_cmd->add_subcommand("svm", "CRSPAM SVM with grid search");
  add_scenario_options(train_cnn);
  add_scenario_options(train_svm);
  train_cnn->callback([&] { action = [&] { return train_detector(sc, harness::Detector::cnn_comat); }; });
  train_svm->callback([&] { action = [&] { return train_detector(sc, harness::Detector::svm_crspam); }; });

  auto* eval_cmd = app.add_subcommand("eval", "Run an evaluation scenario");
  eval_cmd->require_subcommand(1);
  for (const char* name : {"unaware", "robustness", "lighting", "aware", "mismatch", "prejpeg"}) {
    auto* c = eval_cmd->add_subcommand(name, std::string("Scenario: ") + name);
    add_scenario_options(c);
    const auto kind = harness::parse_scenario_kind(name);
    c->callback([&, kind] { action = [&, kind] { return eval_scenario(sc, kind); }; });
  }

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the reduced network");
  gc_cmd->add_option("--tolerance", gc.tolerance, "Maximum relative error");
  gc_cmd->add_flag("--dropout", gc.dropout, "Include dropout with frozen masks");
  add_seed(gc_cmd, gc.seed);
  gc_cmd->callback([&] { action = [&] { return gradcheck(gc); }; });

  ReportArgs rp;
  auto* rp_cmd = app.add_subcommand("report", "Merge and convert report files");
  rp_cmd->add_option("--in", rp.inputs, "CSV or JSON report (repeatable)")->required()->check(CLI::ExistingFile);
  rp_cmd->add_option("--out", rp.out, "Output path (stdout if omitted)");
  rp_cmd->add_option("--format", rp.format, "csv | json | markdown");
  add_seed(rp_cmd, rp.seed);
  rp_cmd->callback([&] { action = [&] { return report(rp); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kValidation;
  }
  if (!quiet) harness::log_sink() = [](const std::string& m) { std::cerr << m << std::endl; };
  try {
    return action ? action() : kValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
}
