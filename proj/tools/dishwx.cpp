/* Copyright 2026 The dishwx Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// dishwx: command-line driver for the dish weather-condition pipeline.
//
//   dishwx [--config FILE] [--set key=value]... [--dry-run] [--jobs N] <command>
//
// Exit codes: 0 success, 1 internal error, 2 user or configuration error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dishwx/classifier/train.hpp"
#include "dishwx/cli/config.hpp"
#include "dishwx/complexity/profiler.hpp"
#include "dishwx/error.hpp"
#include "dishwx/eval/metrics.hpp"
#include "dishwx/eval/mmd.hpp"
#include "dishwx/eval/report.hpp"
#include "dishwx/forge/forge.hpp"
#include "dishwx/forge/manifest.hpp"
#include "dishwx/hash.hpp"
#include "dishwx/segmenter/annotation.hpp"
#include "dishwx/segmenter/external_backend.hpp"
#include "dishwx/segmenter/oracle_backend.hpp"
#include "dishwx/segmenter/pixel_backend.hpp"
#include "dishwx/segmenter/preprocess.hpp"
#include "dishwx/synthetic.hpp"

namespace fs = std::filesystem;
using namespace dishwx;
using cli::Json;

namespace {

/// Structured event log: one JSON object per line.
class EventLog {
 public:
  void open(const std::string& path) {
    if (path.empty()) return;
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    out_ = std::make_unique<std::ofstream>(path, std::ios::app);
  }
  void emit(const std::string& event, Json fields = Json::object()) {
    Json j;
    j["event"] = event;
    for (auto& [k, v] : fields.items()) j[k] = v;
    const auto line = j.dump();
    if (out_) *out_ << line << '\n' << std::flush;
    if (echo_) std::cerr << line << '\n';
  }
  void echo(bool on) { echo_ = on; }

 private:
  std::unique_ptr<std::ofstream> out_;
  bool echo_ = false;
};

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
  bool dry_run = false;
  int jobs = 0;
  std::string log_path;
  bool verbose = false;
  Json cfg;
  EventLog log;
};

void print_plan(const std::string& command, const std::vector<std::string>& steps) {
  std::cout << "dry run: " << command << '\n';
  for (std::size_t i = 0; i < steps.size(); ++i) std::cout << "  " << i + 1 << ". " << steps[i] << '\n';
  std::cout << "no files written\n";
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> class_names(forge::Scenario s) {
  std::vector<std::string> out;
  for (auto d : forge::dish_conditions(s)) out.emplace_back(to_string(d));
  return out;
}

// ---------------------------------------------------------------------------
// Segmentation backends

std::unique_ptr<seg::SegmentationBackend> make_backend(const Json& cfg) {
  const auto name = cli::get<std::string>(cfg, "segmenter.backend");
  const double thr = cli::get<double>(cfg, "segmenter.confidence_threshold");
  if (name == "oracle") return std::make_unique<seg::OracleBackend>(thr);
  if (name == "pixel-logit") return std::make_unique<seg::PixelLogitBackend>(thr);
  if (name == "external") {
    auto work = cli::get<std::string>(cfg, "segmenter.external.work");
    if (work.empty()) work = (fs::path(cli::get<std::string>(cfg, "paths.output")) / "segmenter_work").string();
    return std::make_unique<seg::ExternalProcessBackend>(cli::get<std::string>(cfg, "segmenter.external.infer"),
                                                         cli::get<std::string>(cfg, "segmenter.external.train"),
                                                         work, thr);
  }
  throw Error(ErrorCode::InvalidConfig, "unknown segmenter backend '" + name + "'");
}

/// A checkpoint reference is either a checkpoint.json written by
/// finetune-seg ({"backend","path","hash"}) or a raw backend path (for the
/// oracle, also a directory of annotation files).
seg::Checkpoint resolve_checkpoint(const seg::SegmentationBackend& backend, const std::string& ref) {
  if (ref.empty()) throw Error(ErrorCode::CheckpointMissing, "no segmenter checkpoint configured");
  if (!fs::exists(ref)) throw Error(ErrorCode::CheckpointMissing, "segmenter checkpoint not found: " + ref);
  if (fs::is_regular_file(ref) && fs::path(ref).filename() == "checkpoint.json") {
    const auto j = Json::parse(read_file(ref), nullptr, false);
    if (!j.is_discarded() && j.contains("backend") && j.contains("path")) {
      seg::Checkpoint ck{j.at("backend").get<std::string>(), j.at("path").get<std::string>(),
                         j.value("hash", std::string{})};
      if (ck.backend != backend.name())
        throw Error(ErrorCode::InvalidConfig, "checkpoint " + ref + " belongs to backend '" + ck.backend + "'");
      if (!ck.hash.empty() && fs::is_regular_file(ck.path) && file_hash(ck.path) != ck.hash)
        throw Error(ErrorCode::CheckpointMissing, "checkpoint blob " + ck.path + " does not match its recorded hash");
      return ck;
    }
  }
  seg::Checkpoint ck{backend.name(), ref, ""};
  if (fs::is_regular_file(ref)) {
    ck.hash = file_hash(ref);
  } else {
    Fnv1a64 h;
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(ref))
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) h.update(read_file(f.string()));
    ck.hash = hex64(h.digest());
  }
  return ck;
}

std::vector<seg::AnnotatedImage> collect_annotations(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::AnnotationMissing, "annotation directory not found: " + dir);
  std::vector<seg::AnnotatedImage> out;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const auto a = seg::read_annotation(f.string());
    out.push_back({seg::annotation_image_path(a, f.string()), f.string()});
  }
  if (out.empty()) throw Error(ErrorCode::EmptyDataset, "no annotation files under " + dir);
  return out;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(Globals& g, const std::string& out, int photos, int backgrounds) {
  synth::CorpusSpec spec;
  spec.seed = cli::seed_of(g.cfg);
  spec.photos_per_condition = photos;
  spec.backgrounds_per_condition = backgrounds;
  if (photos < 2 || backgrounds < 1)
    throw Error(ErrorCode::InvalidConfig, "need >= 2 photos per condition and >= 1 background per condition");
  if (g.dry_run) {
    print_plan("synth", {"render " + std::to_string(3 * photos) + " annotated dish photos to " + out + "/photos",
                         "render " + std::to_string(4 * backgrounds) + " weather backgrounds to " + out + "/backgrounds"});
    return 0;
  }
  synth::write_corpus(spec, out);
  g.log.emit("synth", {{"out", out}, {"photos", 3 * photos}, {"backgrounds", 4 * backgrounds}});
  std::cout << "wrote " << 3 * photos << " photos and " << 4 * backgrounds << " backgrounds under " << out << '\n';
  return 0;
}

int cmd_finetune_seg(Globals& g, std::string annotations, std::string out) {
  const auto& cfg = g.cfg;
  if (annotations.empty()) annotations = cli::get<std::string>(cfg, "paths.annotations");
  if (out.empty()) out = (fs::path(cli::get<std::string>(cfg, "paths.output")) / "segmenter").string();
  const auto scfg = cli::segmenter_config(cfg);
  auto backend = make_backend(cfg);
  if (!backend->trainable())
    throw Error(ErrorCode::BackendNotTrainable, "backend '" + backend->name() + "' cannot be fine-tuned");
  const auto dataset = collect_annotations(annotations);
  if (g.dry_run) {
    print_plan("finetune-seg",
               {"fine-tune backend '" + backend->name() + "' on " + std::to_string(dataset.size()) + " annotated images",
                "loss = " + std::to_string(scfg.weights.cls) + "*L_cls + " + std::to_string(scfg.weights.box) +
                    "*L_box + " + std::to_string(scfg.weights.mask) + "*L_mask",
                "write checkpoint and finetune_log.jsonl to " + out});
    return 0;
  }
  fs::create_directories(out);
  const auto log_path = (fs::path(out) / "finetune_log.jsonl").string();
  std::ofstream trace_log(log_path, std::ios::trunc);
  auto sink = [&](const seg::TrainingTrace& t, const seg::LossWeights& w) {
    Json j;
    j["event"] = "seg_loss";
    j["iteration"] = t.iteration;
    j["l_cls"] = t.components.cls;
    j["l_box"] = t.components.box;
    j["l_mask"] = t.components.mask;
    j["w_cls"] = w.cls;
    j["w_box"] = w.box;
    j["w_mask"] = w.mask;
    j["total"] = t.total;
    trace_log << j.dump() << '\n';
  };
  const auto ck = backend->finetune(dataset, scfg, out, sink);
  Json ref;
  ref["backend"] = ck.backend;
  ref["path"] = fs::absolute(ck.path).string();
  ref["hash"] = ck.hash;
  ref["images"] = dataset.size();
  ref["weights"] = {{"cls", scfg.weights.cls}, {"box", scfg.weights.box}, {"mask", scfg.weights.mask}};
  const auto ref_path = (fs::path(out) / "checkpoint.json").string();
  std::ofstream(ref_path) << ref.dump(1) << '\n';
  g.log.emit("finetune_done", {{"backend", ck.backend}, {"checkpoint", ref_path}, {"hash", ck.hash}});
  std::cout << "checkpoint: " << ref_path << '\n';
  std::cout << "loss trace: " << log_path << " (weights cls=" << scfg.weights.cls << " box=" << scfg.weights.box
            << " mask=" << scfg.weights.mask << ")\n";
  return 0;
}

int cmd_preprocess(Globals& g, const std::string& mode, const std::vector<std::string>& manifests, std::string input,
                   std::string out, std::string checkpoint) {
  const auto& cfg = g.cfg;
  auto backend = make_backend(cfg);
  if (checkpoint.empty()) checkpoint = cli::get<std::string>(cfg, "segmenter.checkpoint");
  if (mode == "cutouts") {
    if (input.empty()) input = cli::get<std::string>(cfg, "paths.photos");
    if (out.empty()) out = cli::get<std::string>(cfg, "paths.cutouts");
    if (checkpoint.empty() && backend->name() == "oracle") checkpoint = input;
    const auto ck = resolve_checkpoint(*backend, checkpoint);
    if (g.dry_run) {
      print_plan("preprocess (cutouts)", {"segment photos under " + input + " with '" + backend->name() + "'",
                                          "write RGBA cutouts per condition to " + out});
      return 0;
    }
    backend->load(ck);
    int skipped = 0;
    const int n = seg::extract_cutouts(*backend, input, out, [&](const seg::Skipped& s) {
      ++skipped;
      g.log.emit("skipped", {{"path", s.path}, {"reason", s.reason}});
      std::cerr << "skipped " << s.path << ": " << s.reason << '\n';
    });
    std::cout << "cutouts written: " << n << " (skipped " << skipped << ") to " << out << '\n';
    return 0;
  }
  if (mode != "remove") throw Error(ErrorCode::InvalidConfig, "preprocess mode must be 'remove' or 'cutouts'");
  if (manifests.empty()) throw Error(ErrorCode::InvalidConfig, "preprocess needs at least one --manifest");
  if (out.empty()) out = (fs::path(cli::get<std::string>(cfg, "paths.output")) / "preprocessed").string();
  std::vector<forge::DatasetManifest> ms;
  for (const auto& m : manifests) ms.push_back(forge::read_manifest(m, true));
  if (checkpoint.empty() && backend->name() == "oracle") checkpoint = ms.front().root;
  const auto ck = resolve_checkpoint(*backend, checkpoint);
  const auto tag = seg::provenance(*backend, ck);
  if (g.dry_run) {
    std::vector<std::string> steps;
    for (std::size_t i = 0; i < ms.size(); ++i)
      steps.push_back("remove backgrounds of " + std::to_string(ms[i].samples.size()) + " images in " + manifests[i]);
    steps.push_back("write images and manifests to " + out + " tagged " + tag);
    print_plan("preprocess", steps);
    return 0;
  }
  backend->load(ck);
  for (std::size_t i = 0; i < ms.size(); ++i) {
    int skipped = 0;
    const auto res = seg::remove_backgrounds(*backend, ms[i], out, tag, [&](const seg::Skipped& s) {
      ++skipped;
      g.log.emit("skipped", {{"path", s.path}, {"reason", s.reason}});
      std::cerr << "skipped " << s.path << ": " << s.reason << '\n';
    });
    const auto dst = (fs::path(out) / fs::path(manifests[i]).filename()).string();
    forge::write_manifest(res, dst);
    g.log.emit("preprocessed", {{"manifest", dst}, {"images", res.samples.size()}, {"skipped", skipped}});
    std::cout << dst << ": " << res.samples.size() << " images (skipped " << skipped << ")\n";
  }
  return 0;
}

int cmd_forge(Globals& g, const std::string& only_split) {
  const auto& cfg = g.cfg;
  const auto spec = cli::scenario_spec(cfg);
  const auto params = cli::composition(cfg);
  const auto out = cli::get<std::string>(cfg, "paths.output");
  const auto cut_dir = cli::get<std::string>(cfg, "paths.cutouts");
  const auto bg_dir = cli::get<std::string>(cfg, "paths.backgrounds");
  const int val_pc = cli::get<int>(cfg, "scenario.val_per_combination");
  const int test_size = cli::get<int>(cfg, "scenario.test_size");
  const double fraction = cli::get<double>(cfg, "scenario.split_fraction");
  const int jobs = cli::get<int>(cfg, "jobs");
  if (!only_split.empty() && only_split != "train" && only_split != "val" && only_split != "test")
    throw Error(ErrorCode::InvalidConfig, "--split must be train, val or test");
  auto want = [&](const char* s) { return only_split.empty() || only_split == s; };
  if (test_size % spec.combinations() != 0)
    throw Error(ErrorCode::IndivisibleSize, std::to_string(test_size) + " is not divisible by " +
                                                std::to_string(spec.combinations()) + " combinations");
  const std::string scen(forge::to_string(spec.scenario));
  auto line = [&](const std::string& split, int per) {
    return split + ": " + std::to_string(spec.combinations()) + " combinations × " + std::to_string(per) + " = " +
           std::to_string(spec.combinations() * per);
  };
  if (g.dry_run) {
    std::vector<std::string> steps{"load cutouts from " + cut_dir + " and backgrounds from " + bg_dir,
                                   "split cutouts " + std::to_string(fraction) + " train / rest validation"};
    if (want("train")) steps.push_back(line("train", spec.per_combination));
    if (want("val")) steps.push_back(line("val", val_pc));
    if (want("test")) steps.push_back(line("test", test_size / spec.combinations()));
    steps.push_back("write " + out + "/" + scen + "/<split>/ and <split>.jsonl");
    print_plan("forge", steps);
    return 0;
  }
  const auto cutouts = forge::load_cutout_pool(cut_dir);
  const auto backgrounds = forge::load_background_pool(bg_dir);
  const auto [train_pool, val_pool] = forge::split_cutout_pool(cutouts, fraction, spec.seed);
  forge::GenerateOptions opt;
  opt.params = params;
  opt.jobs = jobs;

  auto run = [&](Split split, const forge::CutoutPool& pool, int per) {
    const std::string name(to_string(split));
    const auto manifest_path = (fs::path(out) / scen / (name + ".jsonl")).string();
    const auto before = read_file(manifest_path);
    fs::remove_all(fs::path(out) / scen / name);
    forge::ScenarioSpec s = spec;
    s.per_combination = per;
    opt.split = split;
    const auto m = forge::generate_dataset(s, pool, backgrounds, out, opt);
    std::cout << line(name, per) << '\n';
    for (const auto& [key, n] : m.combination_counts())
      std::cout << "  " << to_string(key.first) << "/" << to_string(key.second) << ": " << n << '\n';
    std::cout << "  manifest: " << manifest_path << '\n';
    if (!before.empty()) std::cout << "  " << (before == read_file(manifest_path) ? "manifest identical" : "manifest changed") << '\n';
    g.log.emit("forged", {{"split", name}, {"images", m.samples.size()}, {"manifest", manifest_path}});
  };
  if (want("train")) run(Split::Train, train_pool, spec.per_combination);
  if (want("val")) run(Split::Val, val_pool, val_pc);
  if (want("test")) run(Split::Test, val_pool, test_size / spec.combinations());
  return 0;
}

tl::BackboneSource backbone_source(const Json& cfg) {
  const auto kind = cli::get<std::string>(cfg, "train.backbone");
  if (kind == "seeded") return tl::BackboneSource::seeded(cli::seed_of(cfg));
  return tl::BackboneSource::resolve(cli::get<std::string>(cfg, "train.weights"));
}

int cmd_train(Globals& g, const std::string& train_path, const std::string& val_path, std::string out, bool resume,
              bool freeze_verify) {
  const auto& cfg = g.cfg;
  if (out.empty()) out = (fs::path(cli::get<std::string>(cfg, "paths.output")) / "classifier").string();
  const auto train_set = forge::read_manifest(train_path, true);
  const auto val_set = forge::read_manifest(val_path, true);
  if (train_set.samples.empty()) throw Error(ErrorCode::EmptyManifest, train_path + " has no samples");
  if (val_set.samples.empty()) throw Error(ErrorCode::EmptyManifest, val_path + " has no samples");
  if (train_set.scenario != val_set.scenario)
    throw Error(ErrorCode::MalformedManifest, "train and validation manifests are from different scenarios");
  const int classes = static_cast<int>(forge::dish_conditions(train_set.scenario).size());
  const auto tcfg = cli::train_config(cfg, classes);
  for (const auto* m : {&train_set, &val_set})
    for (const auto& s : m->samples)
      if (s.preprocessed_by.empty())
        throw Error(ErrorCode::UnpreprocessedInput, s.image_path + " has not been through background removal");
  const auto source = backbone_source(cfg);
  if (g.dry_run) {
    print_plan("train", {"build ResNet50 backbone (" + std::string(source.kind == tl::BackboneSource::Kind::Seeded ? "seeded stand-in" : source.path) +
                             ") + FC head for " + std::to_string(classes) + " classes, freeze backbone",
                         std::to_string(tcfg.epochs) + " epochs, Adam lr " + std::to_string(tcfg.learning_rate) +
                             ", weight decay " + std::to_string(tcfg.weight_decay) + ", batch " + std::to_string(tcfg.batch_size),
                         "train " + std::to_string(train_set.samples.size()) + " / validate " +
                             std::to_string(val_set.samples.size()) + " images",
                         "write checkpoints, report.json and train_log.jsonl to " + out});
    return 0;
  }
  fs::create_directories(out);
  auto model = tl::ClassifierModel::build(classes, source, tcfg.seed);
  model.freeze_backbone();
  std::ofstream log(fs::path(out) / "train_log.jsonl", resume ? std::ios::app : std::ios::trunc);
  tl::TrainOptions opt;
  opt.checkpoint_dir = out;
  opt.resume = resume;
  opt.on_epoch = [&](const tl::EpochRecord& e) {
    Json j{{"event", "epoch"},          {"epoch", e.epoch},
           {"train_loss", e.train_loss}, {"train_batch_loss", e.train_batch_loss},
           {"train_accuracy", e.train_accuracy}, {"val_loss", e.val_loss},
           {"val_accuracy", e.val_accuracy}, {"seconds", e.seconds},
           {"backbone_layers_changed", e.backbone_layers_changed}};
    log << j.dump() << '\n' << std::flush;
    if (g.verbose || e.epoch % 10 == 0)
      std::printf("epoch %3d  train_loss %.4f  val_loss %.4f  val_acc %.4f\n", e.epoch, e.train_loss, e.val_loss,
                  e.val_accuracy);
  };
  const auto report = tl::train(model, train_set, val_set, tcfg, opt);

  // Merge with an earlier report when resuming so the curve stays complete.
  const auto report_path = fs::path(out) / "report.json";
  Json rj = report.to_json();
  if (resume && fs::exists(report_path)) {
    const auto prev = Json::parse(read_file(report_path.string()), nullptr, false);
    if (!prev.is_discarded() && prev.contains("epochs")) {
      Json merged = prev["epochs"];
      for (const auto& e : rj["epochs"]) merged.push_back(e);
      rj["epochs"] = merged;
    }
  }
  rj["classes"] = class_names(train_set.scenario);
  rj["training_images"] = train_set.samples.size();
  rj["train_manifest"] = fs::absolute(train_path).string();
  std::ofstream(report_path) << rj.dump(1) << '\n';
  const auto& last = report.epochs.back();
  std::printf("final: epoch %d  train_loss %.4f  train_acc %.4f  val_loss %.4f  val_acc %.4f  (best epoch %d)\n",
              last.epoch, last.train_loss, last.train_accuracy, last.val_loss, last.val_accuracy, report.best_epoch);
  if (freeze_verify)
    std::cout << "backbone hash-delta = " << report.backbone_hash_delta << " (head layers changed "
              << report.head_layers_changed << ")\n";
  g.log.emit("train_done", {{"report", report_path.string()}, {"backbone_hash_delta", report.backbone_hash_delta}});
  return 0;
}

std::optional<eval::LossCurve> curve_from_report(const std::string& report_path, const std::string& model_id,
                                                 int classes) {
  if (!fs::exists(report_path)) return std::nullopt;
  const auto j = Json::parse(read_file(report_path), nullptr, false);
  if (j.is_discarded() || !j.contains("epochs")) return std::nullopt;
  eval::LossCurve c;
  c.model_id = model_id;
  c.classes = classes;
  for (const auto& e : j["epochs"]) {
    c.epochs.push_back(e.at("epoch").get<int>());
    c.raw_loss.push_back(e.at("train_loss").get<double>());
  }
  return c;
}

int cmd_eval(Globals& g, std::string checkpoint, const std::string& test_path, std::string out,
             const std::string& model_id, int training_images, const std::vector<std::string>& loss_imports,
             const std::vector<std::string>& prediction_imports, const std::string& mmd_source,
             const std::string& mmd_unmasked) {
  const auto& cfg = g.cfg;
  if (out.empty()) out = (fs::path(cli::get<std::string>(cfg, "paths.output")) / "eval").string();
  if (!fs::exists(fs::path(checkpoint) / "checkpoint.json") && fs::exists(fs::path(checkpoint) / "best" / "checkpoint.json"))
    checkpoint = (fs::path(checkpoint) / "best").string();
  if (!fs::exists(fs::path(checkpoint) / "checkpoint.json"))
    throw Error(ErrorCode::ModelNotLoaded, "no classifier checkpoint at " + checkpoint);
  const auto test = forge::read_manifest(test_path, true);
  if (test.samples.empty()) throw Error(ErrorCode::EmptyManifest, test_path + " has no samples");
  std::vector<std::vector<eval::LossCurve>> imported_losses;
  for (const auto& f : loss_imports) imported_losses.push_back(eval::read_loss_curves(f));
  std::vector<std::vector<eval::PredictionRecord>> imported_preds;
  for (const auto& f : prediction_imports) imported_preds.push_back(eval::read_predictions(f));
  if (g.dry_run) {
    print_plan("eval", {"load classifier from " + checkpoint, "predict " + std::to_string(test.samples.size()) + " test images",
                        "merge " + std::to_string(loss_imports.size()) + " loss imports and " +
                            std::to_string(prediction_imports.size()) + " prediction imports",
                        "write comparison.csv, confusion CSVs, loss plots and metrics.json to " + out});
    return 0;
  }
  auto ck = tl::load_checkpoint(checkpoint);
  const auto& model = ck.model;
  const auto vocab = class_names(test.scenario);
  if (static_cast<int>(vocab.size()) != model.classes())
    throw Error(ErrorCode::InvalidClassCount, "checkpoint has " + std::to_string(model.classes()) +
                                                  " classes, test manifest scenario has " + std::to_string(vocab.size()));
  const auto images = tl::load_preprocessed(test);
  std::vector<eval::PredictionRecord> records;
  for (std::size_t i = 0; i < images.size(); ++i) {
    eval::PredictionRecord r;
    r.sample_id = test.samples[i].image_path;
    r.true_class = std::string(to_string(test.samples[i].dish_condition));
    r.probabilities = model.predict(images[i]);
    r.predicted_class = vocab[eval::argmax(r.probabilities)];
    r.model_id = model_id;
    records.push_back(std::move(r));
  }
  fs::create_directories(out);

  const auto report_path = (fs::path(checkpoint).parent_path() / "report.json").string();
  if (training_images <= 0 && fs::exists(report_path)) {
    const auto j = Json::parse(read_file(report_path), nullptr, false);
    if (!j.is_discarded()) training_images = j.value("training_images", 0);
  }
  std::for_each(records.begin(), records.end(), [&](auto& r) { r.training_images = training_images; });
  eval::write_predictions(records, (fs::path(out) / "predictions.jsonl").string());

  std::vector<eval::ModelReport> reports;
  std::vector<std::string> undefined;
  reports.push_back(eval::report_from_predictions(model_id, training_images, records, vocab, &undefined));
  for (const auto& c : undefined) {
    g.log.emit("warning", {{"model", model_id}, {"message", "AP undefined for class " + c + "; excluded from mAP"}});
    std::cerr << "warning: " << model_id << ": class '" << c << "' never predicted; AP excluded from mAP\n";
  }
  reports.back().loss = curve_from_report(report_path, model_id, model.classes());

  auto find_or_add = [&](const std::string& id, int n) -> eval::ModelReport& {
    for (auto& r : reports)
      if (r.model_id == id) return r;
    eval::ModelReport r;
    r.model_id = id;
    r.training_images = n;
    reports.push_back(r);
    return reports.back();
  };
  for (std::size_t k = 0; k < imported_preds.size(); ++k) {
    const auto& recs = imported_preds[k];
    if (recs.empty()) throw Error(ErrorCode::MalformedImport, prediction_imports[k] + " has no records");
    const auto id = recs.front().model_id.empty() ? fs::path(prediction_imports[k]).stem().string() : recs.front().model_id;
    std::vector<std::string> und;
    auto rep = eval::report_from_predictions(id, recs.front().training_images, recs, vocab, &und);
    auto& slot = find_or_add(id, rep.training_images);
    slot.map = rep.map;
    slot.accuracy = rep.accuracy;
    slot.classes = rep.classes;
    slot.confusion = rep.confusion;
    for (const auto& c : und) std::cerr << "warning: " << id << ": class '" << c << "' never predicted; AP excluded from mAP\n";
  }
  for (const auto& curves : imported_losses)
    for (const auto& c : curves) find_or_add(c.model_id, 0).loss = c;

  const auto outputs = eval::emit_comparison(reports, out);

  Json metrics;
  metrics["model"] = model_id;
  metrics["test_images"] = records.size();
  metrics["accuracy"] = *reports.front().accuracy;
  metrics["mAP"] = *reports.front().map;
  const auto counts = eval::confusion(records, vocab);
  Json per_class = Json::object();
  const auto aps = eval::per_class_ap(counts);
  for (std::size_t i = 0; i < vocab.size(); ++i) per_class[vocab[i]] = aps[i] ? Json(*aps[i]) : Json(nullptr);
  metrics["ap"] = per_class;
  for (const auto& r : reports)
    if (r.loss) metrics["alpha"][r.model_id] = r.loss->alpha();

  if (!mmd_source.empty()) {
    if (mmd_unmasked.empty()) throw Error(ErrorCode::InvalidConfig, "--mmd-source needs --mmd-unmasked");
    const auto raw = forge::read_manifest(mmd_unmasked, true);
    eval::FeatureSet src, masked, unmasked;
    for (const auto& p : forge::list_images(mmd_source)) src.push_back(model.extract_features(forge::prepare_background(load_image(p.string()))));
    for (const auto& img : images) masked.push_back(model.extract_features(img));
    for (const auto& s : raw.samples) unmasked.push_back(model.extract_features(load_image(raw.resolve(s.image_path))));
    metrics["mmd_source_masked"] = eval::mmd_estimate(src, masked);
    metrics["mmd_source_unmasked"] = eval::mmd_estimate(src, unmasked);
  }
  std::ofstream(fs::path(out) / "metrics.json") << metrics.dump(1) << '\n';

  std::cout << eval::comparison_csv(reports);
  std::cout << "table: " << outputs.table << '\n';
  for (const auto& p : outputs.confusion_tables) std::cout << "confusion: " << p << '\n';
  for (const auto& p : outputs.plots) std::cout << "plot: " << p << '\n';
  g.log.emit("eval_done", {{"accuracy", metrics["accuracy"]}, {"mAP", metrics["mAP"]}});
  return 0;
}

int cmd_profile(Globals& g, const std::string& checkpoint, const std::string& model_json,
                const std::vector<std::string>& imports, std::string out, int input_px, int batch) {
  const auto& cfg = g.cfg;
  if (input_px <= 0) input_px = cli::get<int>(cfg, "profile.input_px");
  if (batch <= 0) batch = cli::get<int>(cfg, "profile.batch_size");
  if (out.empty()) out = (fs::path(cli::get<std::string>(cfg, "paths.output")) / "complexity.csv").string();

  std::vector<complexity::ModelCosts> rows;
  if (!model_json.empty()) {
    const auto j = Json::parse(read_file(model_json), nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::InvalidConfig, model_json + " is not valid JSON");
    const auto desc = complexity::parse_model_description(j);
    // "input": {"channels", "height", "width"} profiles models that do not take
    // an image, e.g. a head fed with pooled features.
    int ch = 3, h = input_px, w = input_px;
    if (j.contains("input")) {
      ch = j["input"].value("channels", 3);
      h = j["input"].value("height", input_px);
      w = j["input"].value("width", input_px);
    }
    rows.push_back({desc.name, {{desc.name, complexity::count_gflops(desc, h, w, ch),
                                 complexity::estimate_memory_gb(desc, h, w, batch, ch), input_px, batch}}});
  } else {
    int classes = 2;
    if (!checkpoint.empty()) {
      auto dir = fs::path(checkpoint);
      if (!fs::exists(dir / "checkpoint.json") && fs::exists(dir / "best" / "checkpoint.json")) dir /= "best";
      const auto j = Json::parse(read_file((dir / "checkpoint.json").string()), nullptr, false);
      if (j.is_discarded()) throw Error(ErrorCode::ModelNotLoaded, "no classifier checkpoint at " + checkpoint);
      classes = j.value("classes", 2);
    }
    // Shapes only: describe() never touches weights, so a seeded skeleton suffices.
    const auto desc = tl::ClassifierModel::build(classes, tl::BackboneSource::seeded(0)).describe();
    complexity::ModelCosts proposed{"proposed", {}};
    proposed.components.push_back({"mask_remover", complexity::mask_remover_gflops(input_px),
                                   static_cast<double>(batch) * input_px * input_px * 4 * 2 / 1e9, input_px, batch});
    proposed.components.push_back({"resnet50+fc", complexity::count_gflops(desc, input_px, input_px),
                                   complexity::estimate_memory_gb(desc, input_px, input_px, batch), input_px, batch});
    rows.push_back(proposed);
  }
  for (const auto& f : imports) {
    std::ifstream in(f);
    if (!in) throw Error(ErrorCode::MalformedImport, "cannot open cost file " + f);
    for (auto& m : complexity::read_component_costs(in, f)) {
      auto it = std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.model == m.model; });
      if (it == rows.end())
        rows.push_back(std::move(m));
      else
        it->components.insert(it->components.begin(), m.components.begin(), m.components.end());
    }
  }
  const auto table = complexity::emit_complexity_table(rows);
  if (g.dry_run) {
    print_plan("profile", {"count GFLOPs and memory at " + std::to_string(input_px) + "x" + std::to_string(input_px) +
                               " px, batch " + std::to_string(batch),
                           "write " + out});
    return 0;
  }
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  std::ofstream(out) << table;
  std::cout << table << "written: " << out << '\n';
  return 0;
}

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::BackendFailure:
      return 1;
    default:
      return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dishwx: weather-condition classification of satellite ground-terminal dishes"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("-c,--config", g.config_path, "JSON config file");
  app.add_option("--set", g.overrides, "Override a config value, e.g. --set train.epochs=10")->allow_extra_args(false);
  app.add_flag("--dry-run", g.dry_run, "Validate config and print the plan without writing files");
  app.add_option("-j,--jobs", g.jobs, "Worker threads for parallel stages");
  app.add_option("--log", g.log_path, "Append structured JSON events to this file");
  app.add_flag("-v,--verbose", g.verbose, "Print every epoch and echo events to stderr");

  auto* synth_cmd = app.add_subcommand("synth", "Render a procedural corpus of annotated dish photos and backgrounds");
  std::string synth_out = "data";
  int synth_photos = 12, synth_bgs = 6;
  synth_cmd->add_option("--out", synth_out, "Output root");
  synth_cmd->add_option("--photos-per-condition", synth_photos);
  synth_cmd->add_option("--backgrounds-per-condition", synth_bgs);

  auto* ft = app.add_subcommand("finetune-seg", "Fine-tune the segmentation backend under the weighted loss");
  std::string ft_ann, ft_out;
  ft->add_option("--annotations", ft_ann, "Annotation directory (default paths.annotations)");
  ft->add_option("--out", ft_out, "Checkpoint directory");

  auto* pre = app.add_subcommand("preprocess", "Background removal over manifests, or cutout extraction from photos");
  std::string pre_mode = "remove", pre_input, pre_out, pre_ck;
  std::vector<std::string> pre_manifests;
  pre->add_option("--mode", pre_mode, "remove | cutouts")->check(CLI::IsMember({"remove", "cutouts"}));
  pre->add_option("--manifest", pre_manifests, "Manifest(s) to process (mode remove)");
  pre->add_option("--input", pre_input, "Photo directory (mode cutouts)");
  pre->add_option("--out", pre_out, "Output directory");
  pre->add_option("--checkpoint", pre_ck, "Segmenter checkpoint reference");

  auto* fg = app.add_subcommand("forge", "Forge balanced train/val/test datasets");
  std::string fg_split;
  int fg_per = 0;
  fg->add_option("--split", fg_split, "Only this split (train, val, test)");
  fg->add_option("--per-combination", fg_per, "Images per (dish, background) combination");

  auto* tr = app.add_subcommand("train", "Train the classifier head on a frozen backbone");
  std::string tr_train, tr_val, tr_out;
  bool tr_resume = false, tr_verify = false;
  tr->add_option("--train", tr_train, "Preprocessed training manifest")->required();
  tr->add_option("--val", tr_val, "Preprocessed validation manifest")->required();
  tr->add_option("--out", tr_out, "Checkpoint/report directory");
  tr->add_flag("--resume", tr_resume, "Continue from <out>/last");
  tr->add_flag("--freeze-verify", tr_verify, "Print the backbone hash delta");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint and emit comparison tables and plots");
  std::string ev_ck, ev_test, ev_out, ev_model = "proposed", ev_mmd_src, ev_mmd_raw;
  int ev_n = 0;
  std::vector<std::string> ev_loss, ev_preds;
  ev->add_option("--checkpoint", ev_ck, "Classifier checkpoint directory")->required();
  ev->add_option("--test", ev_test, "Preprocessed test manifest")->required();
  ev->add_option("--out", ev_out, "Report directory");
  ev->add_option("--model-id", ev_model, "Row label for this model");
  ev->add_option("--training-images", ev_n, "Training-set size for the table row");
  ev->add_option("--import-loss", ev_loss, "Loss-curve CSV of an external model");
  ev->add_option("--import-predictions", ev_preds, "Prediction JSONL of an external model");
  ev->add_option("--mmd-source", ev_mmd_src, "Directory of source-domain (weather) images");
  ev->add_option("--mmd-unmasked", ev_mmd_raw, "Unmasked manifest matching the test set");

  auto* pf = app.add_subcommand("profile", "Write the GFLOPs / memory complexity table");
  std::string pf_ck, pf_model, pf_out;
  std::vector<std::string> pf_imports;
  int pf_px = 0, pf_batch = 0;
  pf->add_option("--checkpoint", pf_ck, "Classifier checkpoint (class count)");
  pf->add_option("--model-json", pf_model, "Profile this layer description instead");
  pf->add_option("--import", pf_imports, "Component cost CSV(s) to merge");
  pf->add_option("--input-px", pf_px, "Square input size");
  pf->add_option("--batch", pf_batch, "Batch size for memory");
  pf->add_option("--out", pf_out, "CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    g.cfg = cli::load_config(g.config_path, g.overrides);
    if (g.jobs > 0) g.cfg["jobs"] = g.jobs;
    if (fg_per > 0) g.cfg["scenario"]["per_combination"] = fg_per;
    cli::validate(g.cfg);
    g.log.echo(g.verbose);
    if (!g.dry_run) g.log.open(g.log_path);

    if (synth_cmd->parsed()) return cmd_synth(g, synth_out, synth_photos, synth_bgs);
    if (ft->parsed()) return cmd_finetune_seg(g, ft_ann, ft_out);
    if (pre->parsed()) return cmd_preprocess(g, pre_mode, pre_manifests, pre_input, pre_out, pre_ck);
    if (fg->parsed()) return cmd_forge(g, fg_split);
    if (tr->parsed()) return cmd_train(g, tr_train, tr_val, tr_out, tr_resume, tr_verify);
    if (ev->parsed()) return cmd_eval(g, ev_ck, ev_test, ev_out, ev_model, ev_n, ev_loss, ev_preds, ev_mmd_src, ev_mmd_raw);
    if (pf->parsed()) return cmd_profile(g, pf_ck, pf_model, pf_imports, pf_out, pf_px, pf_batch);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    g.log.emit("error", {{"error", e.name()}, {"message", e.what()}});
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: Internal: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
