#include "seqsleep/eval.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

namespace seqsleep::eval {

Stage argmax_stage(std::span<const double> scores) {
  if (scores.size() != kNumStages) throw ShapeError("argmax_stage: expected 5 scores");
  std::size_t best = 0;
  for (std::size_t k = 1; k < kNumStages; ++k) {
    if (scores[k] > scores[best]) best = k;
  }
  return static_cast<Stage>(best);
}

Aggregated aggregate(const DecisionEnsemble& ensemble) {
  if (ensemble.members.empty()) throw DataError("aggregate: empty decision ensemble");
  Aggregated out;
  for (const Posterior& p : ensemble.members) {
    for (std::size_t k = 0; k < kNumStages; ++k) {
      out.log_scores[k] += std::log(std::max(p[k], kLogFloor));
    }
  }
  const double count = static_cast<double>(ensemble.members.size());
  for (double& s : out.log_scores) s /= count;
  out.label = argmax_stage(out.log_scores);
  return out;
}

SlidingPrediction sliding_predict(std::span<const tfr::TimeFrequencyImage> recording,
                                  const model::SeqSleepNet& net, std::size_t seq_len) {
  if (seq_len < 1 || recording.size() < seq_len) {
    throw DataError("recording has " + std::to_string(recording.size()) +
                    " epochs, fewer than L=" + std::to_string(seq_len) +
                    "; use a smaller sequence length");
  }
  // Epoch-level features do not depend on the window, so each epoch is
  // encoded once and shared by all windows that contain it.
  const Matrix features = net.encode_epochs(recording);
  SlidingPrediction out;
  out.window_posteriors = net.classify_windows(features, seq_len);

  const std::size_t epochs = recording.size();
  std::vector<DecisionEnsemble> ensembles(epochs);
  for (std::size_t w = 0; w < out.window_posteriors.size(); ++w) {
    const Matrix& probs = out.window_posteriors[w];
    for (std::size_t l = 0; l < seq_len; ++l) {
      Posterior p;
      for (std::size_t k = 0; k < kNumStages; ++k) {
        p[k] = probs(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(k));
      }
      ensembles[w + l].members.push_back(p);
    }
  }

  out.log_scores.resize(static_cast<Eigen::Index>(epochs), kNumStages);
  for (std::size_t e = 0; e < epochs; ++e) {
    const Aggregated a = aggregate(ensembles[e]);
    out.hypnogram.push_back(a.label);
    out.ensemble_size.push_back(ensembles[e].members.size());
    for (std::size_t k = 0; k < kNumStages; ++k) {
      out.log_scores(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(k)) = a.log_scores[k];
    }
  }
  return out;
}

double per_window_accuracy(const SlidingPrediction& prediction, std::span<const Stage> labels) {
  std::size_t correct = 0;
  std::size_t total = 0;
  for (std::size_t w = 0; w < prediction.window_posteriors.size(); ++w) {
    const Matrix& probs = prediction.window_posteriors[w];
    for (Eigen::Index l = 0; l < probs.rows(); ++l) {
      const std::size_t epoch = w + static_cast<std::size_t>(l);
      if (epoch >= labels.size()) throw DataError("per_window_accuracy: too few labels");
      const Eigen::RowVectorXd row = probs.row(l);
      if (argmax_stage(std::span<const double>(row.data(), kNumStages)) == labels[epoch]) ++correct;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

// ---- confusion matrix and metrics -----------------------------------------------

void ConfusionMatrix::add(Stage reference, Stage predicted, std::uint64_t n) {
  counts_[stage_index(reference)][stage_index(predicted)] += n;
}

void ConfusionMatrix::add(std::span<const Stage> reference, std::span<const Stage> predicted) {
  if (reference.size() != predicted.size()) {
    throw DataError("confusion: " + std::to_string(reference.size()) + " reference vs " +
                    std::to_string(predicted.size()) + " predicted labels");
  }
  for (std::size_t i = 0; i < reference.size(); ++i) add(reference[i], predicted[i]);
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  for (std::size_t r = 0; r < kNumStages; ++r) {
    for (std::size_t c = 0; c < kNumStages; ++c) counts_[r][c] += other.counts_[r][c];
  }
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (const auto& row : counts_) {
    for (std::uint64_t v : row) n += v;
  }
  return n;
}

namespace {
double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }
}  // namespace

Metrics compute_metrics(const ConfusionMatrix& cm) {
  const double n = static_cast<double>(cm.total());
  if (n <= 0.0) throw DataError("compute_metrics: empty confusion matrix");

  std::array<double, kNumStages> row{}, col{};
  double trace = 0.0;
  for (std::size_t r = 0; r < kNumStages; ++r) {
    for (std::size_t c = 0; c < kNumStages; ++c) {
      const double v = static_cast<double>(cm.at(r, c));
      row[r] += v;
      col[c] += v;
      if (r == c) trace += v;
    }
  }

  Metrics m;
  m.accuracy = trace / n;
  double expected = 0.0;
  for (std::size_t k = 0; k < kNumStages; ++k) {
    const double tp = static_cast<double>(cm.at(k, k));
    const double fn = row[k] - tp;
    const double fp = col[k] - tp;
    const double tn = n - tp - fn - fp;
    m.class_absent[k] = row[k] == 0.0 && col[k] == 0.0;
    m.class_sensitivity[k] = ratio(tp, tp + fn);
    m.class_selectivity[k] = ratio(tp, tp + fp);
    m.class_f1[k] = ratio(2.0 * tp, 2.0 * tp + fp + fn);
    m.class_specificity[k] = ratio(tn, tn + fp);
    expected += (row[k] / n) * (col[k] / n);
  }
  for (std::size_t k = 0; k < kNumStages; ++k) {
    m.macro_f1 += m.class_f1[k] / static_cast<double>(kNumStages);
    m.sensitivity += m.class_sensitivity[k] / static_cast<double>(kNumStages);
    m.specificity += m.class_specificity[k] / static_cast<double>(kNumStages);
  }
  // Chance agreement of 1 means a single class on both sides; agreement is then perfect.
  m.kappa = expected >= 1.0 ? 1.0 : (m.accuracy - expected) / (1.0 - expected);
  return m;
}

std::vector<bool> transition_split(std::span<const Stage> reference) {
  std::vector<bool> flags(reference.size(), false);
  for (std::size_t t = 0; t < reference.size(); ++t) {
    const bool prev = t > 0 && reference[t - 1] != reference[t];
    const bool next = t + 1 < reference.size() && reference[t + 1] != reference[t];
    flags[t] = prev || next;
  }
  return flags;
}

TransitionReport transition_errors(std::span<const Stage> reference,
                                   std::span<const Stage> predicted) {
  if (reference.size() != predicted.size()) {
    throw DataError("transition_errors: label count mismatch");
  }
  TransitionReport r;
  r.transitioning = transition_split(reference);
  std::size_t trans_wrong = 0, stable_wrong = 0;
  for (std::size_t t = 0; t < reference.size(); ++t) {
    const bool wrong = reference[t] != predicted[t];
    if (r.transitioning[t]) {
      ++r.transitioning_count;
      trans_wrong += wrong ? 1 : 0;
    } else {
      ++r.stable_count;
      stable_wrong += wrong ? 1 : 0;
    }
  }
  r.transitioning_error =
      ratio(static_cast<double>(trans_wrong), static_cast<double>(r.transitioning_count));
  r.stable_error = ratio(static_cast<double>(stable_wrong), static_cast<double>(r.stable_count));
  return r;
}

// ---- writers -------------------------------------------------------------------

void write_hypnogram_csv(std::ostream& os, const SlidingPrediction& prediction,
                         std::span<const Stage> reference) {
  os << "epoch_index,reference_label,predicted_label";
  for (std::string_view name : kStageNames) os << ",log_" << name;
  os << '\n';
  os << std::setprecision(17);
  for (std::size_t e = 0; e < prediction.hypnogram.size(); ++e) {
    os << e << ',' << (e < reference.size() ? stage_name(reference[e]) : std::string_view{})
       << ',' << stage_name(prediction.hypnogram[e]);
    for (std::size_t k = 0; k < kNumStages; ++k) {
      os << ',' << prediction.log_scores(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(k));
    }
    os << '\n';
  }
}

void write_confusion_csv(std::ostream& os, const ConfusionMatrix& cm) {
  os << "reference";
  for (std::string_view name : kStageNames) os << ',' << name;
  os << '\n';
  for (std::size_t r = 0; r < kNumStages; ++r) {
    os << kStageNames[r];
    for (std::size_t c = 0; c < kNumStages; ++c) os << ',' << cm.at(r, c);
    os << '\n';
  }
}

std::string metrics_json(const Metrics& m, const ConfusionMatrix& cm,
                         const TransitionReport* transitions) {
  nlohmann::ordered_json j;
  j["accuracy"] = m.accuracy;
  j["macro_f1"] = m.macro_f1;
  j["kappa"] = m.kappa;
  j["sensitivity"] = m.sensitivity;
  j["specificity"] = m.specificity;
  nlohmann::ordered_json sens, sel, f1, absent;
  for (std::size_t k = 0; k < kNumStages; ++k) {
    const std::string name(kStageNames[k]);
    sens[name] = m.class_sensitivity[k];
    sel[name] = m.class_selectivity[k];
    f1[name] = m.class_f1[k];
    absent[name] = m.class_absent[k];
  }
  j["class_sensitivity"] = sens;
  j["class_selectivity"] = sel;
  j["class_f1"] = f1;
  j["class_absent"] = absent;
  j["epochs"] = cm.total();
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < kNumStages; ++r) {
    rows.push_back(nlohmann::json(cm.counts()[r]));
  }
  j["confusion_matrix"] = rows;
  if (transitions != nullptr) {
    j["transitioning_epochs"] = transitions->transitioning_count;
    j["stable_epochs"] = transitions->stable_count;
    j["transitioning_error"] = transitions->transitioning_error;
    j["stable_error"] = transitions->stable_error;
  }
  return j.dump(2) + "\n";
}

void write_attention_csv(std::ostream& os, std::size_t epoch, std::span<const double> weights) {
  os << "epoch_index,frame,weight\n" << std::setprecision(17);
  for (std::size_t t = 0; t < weights.size(); ++t) os << epoch << ',' << t << ',' << weights[t] << '\n';
}

}  // namespace seqsleep::eval
