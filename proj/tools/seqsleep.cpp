// Command-line front end: synth, train, predict, evaluate, gradcheck,
// export-filters, export-attention.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include "seqsleep/eval.hpp"
#include "seqsleep/gradient_suite.hpp"
#include "seqsleep/harness.hpp"
#include "seqsleep/train.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace seqsleep;

namespace {

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw UsageError("cannot write " + path.string());
  return os;
}

void require_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw UsageError("no such file: " + path.string());
}

eval::LabeledRecording load_labeled(const std::string& name, const harness::Recording& rec,
                                    const tfr::StftConfig& stft) {
  return {name, harness::recording_images(rec, stft), rec.labels};
}

// ---- synth ----

struct SynthArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int run_synth(const SynthArgs& a) {
  harness::SyntheticConfig cfg = harness::default_synthetic_config();
  if (!a.config.empty()) {
    require_file(a.config);
    cfg = harness::parse_synthetic_config(harness::read_text_file(a.config));
  }
  if (a.seed) cfg.seed = *a.seed;
  std::vector<harness::Recording> recs;
  for (std::size_t i = 0; i < cfg.recordings; ++i) recs.push_back(harness::generate_synthetic(cfg, i));
  harness::save_dataset(a.out, recs);
  std::cout << "wrote " << recs.size() << " recordings x " << cfg.epochs << " epochs to " << a.out
            << "\n";
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out;
  std::optional<std::size_t> seq_len;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  harness::TrainConfig cfg;
  if (!a.config.empty()) {
    require_file(a.config);
    cfg = harness::parse_train_config(harness::read_text_file(a.config));
  }
  if (a.seq_len) cfg.model.seq_len = *a.seq_len;
  if (a.seed) cfg.model.seed = *a.seed;

  const auto dataset = harness::load_dataset(a.data);
  const harness::DatasetSplit split = harness::split_dataset(dataset.size(), cfg.split);
  const harness::Recording& first = dataset.front().recording;
  cfg.model.channels = first.channels;
  cfg.model.freq_bins = cfg.stft.freq_bins();
  cfg.model.frames = cfg.stft.frames(first.samples_per_epoch);
  cfg.model.validate();

  std::vector<eval::LabeledRecording> train_set, valid_set;
  for (std::size_t i : split.train) {
    if (dataset[i].recording.labels.empty()) throw DataError(dataset[i].name + ": no labels");
    train_set.push_back(load_labeled(dataset[i].name, dataset[i].recording, cfg.stft));
  }
  for (std::size_t i : split.valid) {
    if (dataset[i].recording.labels.empty()) throw DataError(dataset[i].name + ": no labels");
    valid_set.push_back(load_labeled(dataset[i].name, dataset[i].recording, cfg.stft));
  }

  auto progress = [&](const model::LogRow& r) {
    if (!a.quiet && r.valid_accuracy >= 0.0) {
      std::cerr << "step " << r.step << " epoch " << r.epoch << " loss " << r.train_loss
                << " valid_accuracy " << r.valid_accuracy << "\n";
    }
  };
  model::TrainResult result = model::train(train_set, valid_set, cfg.model, progress);
  for (const std::string& w : result.warnings) std::cerr << "warning: " << w << "\n";

  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  harness::save_checkpoint(out, *result.best, cfg);
  std::ofstream log = open_output(out.string() + ".log.csv");
  model::write_training_log(log, result.log);

  std::cout << "trained " << result.log.size() << " steps on " << train_set.size()
            << " recordings; retained step " << result.best_step;
  if (result.best_valid_accuracy >= 0.0) {
    std::cout << " (validation accuracy " << result.best_valid_accuracy << ")";
  }
  std::cout << "\ncheckpoint " << out.string() << "\nlog " << out.string() << ".log.csv\n";
  return 0;
}

// ---- predict ----

struct PredictArgs {
  std::string ckpt;
  std::string recording;
  std::string out;
};

int run_predict(const PredictArgs& a) {
  require_file(a.ckpt);
  require_file(a.recording);
  harness::LoadedCheckpoint ck = harness::load_checkpoint(a.ckpt);
  const harness::Recording rec = harness::read_recording(a.recording);
  const auto images = harness::recording_images(rec, ck.config.stft);
  const eval::SlidingPrediction p = eval::sliding_predict(images, *ck.net, ck.net->config().seq_len);
  std::ofstream os = open_output(a.out);
  eval::write_hypnogram_csv(os, p, rec.labels);
  std::cout << "predicted " << p.hypnogram.size() << " epochs";
  if (rec.labels.size() == p.hypnogram.size()) {
    std::size_t correct = 0;
    for (std::size_t e = 0; e < rec.labels.size(); ++e) correct += rec.labels[e] == p.hypnogram[e];
    std::cout << ", accuracy " << static_cast<double>(correct) / static_cast<double>(rec.labels.size());
  }
  std::cout << "\n";
  return 0;
}

// ---- evaluate ----

struct EvaluateArgs {
  std::string ckpt;
  std::string data;
  std::string out;
  std::string cm;
  std::string split = "test";
};

int run_evaluate(const EvaluateArgs& a) {
  require_file(a.ckpt);
  harness::LoadedCheckpoint ck = harness::load_checkpoint(a.ckpt);
  const auto dataset = harness::load_dataset(a.data);
  std::vector<std::size_t> chosen;
  if (a.split == "all") {
    for (std::size_t i = 0; i < dataset.size(); ++i) chosen.push_back(i);
  } else {
    const harness::DatasetSplit split = harness::split_dataset(dataset.size(), ck.config.split);
    chosen = a.split == "test" ? split.test : a.split == "valid" ? split.valid : split.train;
  }
  if (chosen.empty()) throw DataError("the '" + a.split + "' split is empty");

  eval::ConfusionMatrix cm;
  // Transition flags are computed per recording so no neighbour pair spans two
  // recordings; the counts are then pooled.
  eval::TransitionReport pooled;
  std::size_t trans_wrong = 0, stable_wrong = 0;
  for (std::size_t i : chosen) {
    const harness::Recording& rec = dataset[i].recording;
    if (rec.labels.empty()) throw DataError(dataset[i].name + ": no labels");
    const auto images = harness::recording_images(rec, ck.config.stft);
    const eval::SlidingPrediction p =
        eval::sliding_predict(images, *ck.net, ck.net->config().seq_len);
    cm.add(rec.labels, p.hypnogram);
    const std::vector<bool> flags = eval::transition_split(rec.labels);
    for (std::size_t t = 0; t < flags.size(); ++t) {
      const bool wrong = rec.labels[t] != p.hypnogram[t];
      if (flags[t]) {
        ++pooled.transitioning_count;
        trans_wrong += wrong;
      } else {
        ++pooled.stable_count;
        stable_wrong += wrong;
      }
    }
    pooled.transitioning.insert(pooled.transitioning.end(), flags.begin(), flags.end());
  }
  if (pooled.transitioning_count > 0) {
    pooled.transitioning_error =
        static_cast<double>(trans_wrong) / static_cast<double>(pooled.transitioning_count);
  }
  if (pooled.stable_count > 0) {
    pooled.stable_error = static_cast<double>(stable_wrong) / static_cast<double>(pooled.stable_count);
  }

  const eval::Metrics m = eval::compute_metrics(cm);
  {
    std::ofstream os = open_output(a.out);
    os << eval::metrics_json(m, cm, &pooled);
  }
  if (!a.cm.empty()) {
    std::ofstream os = open_output(a.cm);
    eval::write_confusion_csv(os, cm);
  }
  std::cout << std::setprecision(4) << "epochs " << cm.total() << " accuracy " << m.accuracy
            << " macro_f1 " << m.macro_f1 << " kappa " << m.kappa << "\n";
  return 0;
}

// ---- gradcheck ----

struct GradcheckArgs {
  bool micro = false;
  std::uint64_t seed = 1;
};

int run_gradcheck(const GradcheckArgs& a) {
  const auto checks = model::run_gradient_suite(a.micro, a.seed);
  bool ok = true;
  double worst = 0.0;
  for (const model::GradientCheck& c : checks) {
    std::cout << (c.passed() ? "PASS " : "FAIL ") << std::left << std::setw(24) << c.name
              << " max_rel_error " << std::scientific << std::setprecision(3)
              << c.result.max_relative_error << " (tol " << c.tolerance << ", "
              << c.result.coordinates_checked << " coords)\n";
    ok = ok && c.passed();
    worst = std::max(worst, c.result.max_relative_error);
  }
  std::cout << "max relative error " << std::scientific << worst << "\n";
  if (!ok) throw NumericalError("gradient check failed");
  return 0;
}

// ---- exports ----

struct ExportFiltersArgs {
  std::string ckpt;
  std::string out;
};

int run_export_filters(const ExportFiltersArgs& a) {
  require_file(a.ckpt);
  harness::LoadedCheckpoint ck = harness::load_checkpoint(a.ckpt);
  std::ofstream os = open_output(a.out);
  const auto& layers = ck.net->filterbanks();
  const std::size_t filters = ck.net->config().filters;
  os << "channel,bin";
  for (std::size_t m = 0; m < filters; ++m) os << ",filter_" << m;
  os << "\n" << std::setprecision(17);
  for (const auto& layer : layers) {
    const Matrix w = layer.effective_weights();
    for (Eigen::Index f = 0; f < w.rows(); ++f) {
      os << layer.channel_index << ',' << f;
      for (Eigen::Index m = 0; m < w.cols(); ++m) os << ',' << w(f, m);
      os << "\n";
    }
  }
  std::cout << "wrote " << layers.size() << " filterbanks to " << a.out << "\n";
  return 0;
}

struct ExportAttentionArgs {
  std::string ckpt;
  std::string recording;
  std::size_t epoch = 0;
  std::string out;
};

int run_export_attention(const ExportAttentionArgs& a) {
  require_file(a.ckpt);
  require_file(a.recording);
  harness::LoadedCheckpoint ck = harness::load_checkpoint(a.ckpt);
  const harness::Recording rec = harness::read_recording(a.recording);
  if (a.epoch >= rec.epoch_count()) {
    throw DataError("epoch " + std::to_string(a.epoch) + " out of range (" +
                    std::to_string(rec.epoch_count()) + " epochs)");
  }
  const tfr::TimeFrequencyImage image = tfr::epoch_to_image(rec.epoch(a.epoch), ck.config.stft);
  const Matrix w = ck.net->attention_weights(std::span(&image, 1));
  std::ofstream os = open_output(a.out);
  eval::write_attention_csv(os, a.epoch, std::span<const double>(w.data(), static_cast<std::size_t>(w.cols())));
  std::cout << "wrote " << w.cols() << " attention weights to " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SeqSleepNet sleep staging: synthetic data, training, inference, evaluation"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic dataset directory");
  s->add_option("--config", synth.config, "Synthetic config JSON (built-in default if omitted)");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--seed", synth.seed, "Override the config seed");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train on a dataset directory");
  t->add_option("--data", train.data, "Dataset directory")->required();
  t->add_option("--config", train.config, "Training config JSON");
  t->add_option("--out", train.out, "Checkpoint path (log written to <out>.log.csv)")->required();
  t->add_option("--seq-len", train.seq_len, "Sequence length L");
  t->add_option("--seed", train.seed, "Override the model seed");
  t->add_flag("--quiet", train.quiet, "Suppress progress output");

  PredictArgs predict;
  auto* p = app.add_subcommand("predict", "Write the hypnogram of one recording");
  p->add_option("--ckpt", predict.ckpt, "Checkpoint")->required();
  p->add_option("--recording", predict.recording, "Recording (.ssr)")->required();
  p->add_option("--out", predict.out, "Hypnogram CSV")->required();

  EvaluateArgs evaluate;
  auto* e = app.add_subcommand("evaluate", "Score a split of a dataset");
  e->add_option("--ckpt", evaluate.ckpt, "Checkpoint")->required();
  e->add_option("--data", evaluate.data, "Dataset directory")->required();
  e->add_option("--out", evaluate.out, "Metrics JSON")->required();
  e->add_option("--cm", evaluate.cm, "Confusion matrix CSV");
  e->add_option("--split", evaluate.split, "Which recordings to score")
      ->check(CLI::IsMember({"test", "valid", "train", "all"}));

  GradcheckArgs gradcheck;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  g->add_flag("--micro", gradcheck.micro, "Use micro dimensions");
  g->add_option("--seed", gradcheck.seed, "Seed for parameters and inputs");

  ExportFiltersArgs filters;
  auto* f = app.add_subcommand("export-filters", "Write learned effective filterbanks as CSV");
  f->add_option("--ckpt", filters.ckpt, "Checkpoint")->required();
  f->add_option("--out", filters.out, "Output CSV")->required();

  ExportAttentionArgs attn;
  auto* x = app.add_subcommand("export-attention", "Write one epoch's attention weights as CSV");
  x->add_option("--ckpt", attn.ckpt, "Checkpoint")->required();
  x->add_option("--recording", attn.recording, "Recording (.ssr)")->required();
  x->add_option("--epoch", attn.epoch, "Epoch index")->required();
  x->add_option("--out", attn.out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*s) return run_synth(synth);
    if (*t) return run_train(train);
    if (*p) return run_predict(predict);
    if (*e) return run_evaluate(evaluate);
    if (*g) return run_gradcheck(gradcheck);
    if (*f) return run_export_filters(filters);
    if (*x) return run_export_attention(attn);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const NumericalError& err) {
    std::cerr << "numerical error: " << err.what() << "\n";
    return 3;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 1;
}
