#include "doctest.h"
#include "oracles.hpp"

#include "seqsleep/eval.hpp"
#include "seqsleep/gradient_suite.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"

using namespace seqsleep;
using namespace seqsleep::eval;

namespace {

Posterior random_posterior(Rng& rng) {
  Posterior p;
  double z = 0.0;
  for (double& v : p) z += v = 0.01 + rng.uniform();
  for (double& v : p) v /= z;
  return p;
}

struct Oracle {
  double accuracy, macro_f1, kappa, sensitivity, specificity;
};

// Straight from the one-vs-rest definitions, averaged over all five classes.
Oracle metrics_oracle(const std::vector<std::vector<double>>& cm) {
  const std::size_t K = 5;
  double n = 0.0, diag = 0.0;
  for (std::size_t r = 0; r < K; ++r) {
    for (std::size_t c = 0; c < K; ++c) n += cm[r][c];
    diag += cm[r][r];
  }
  Oracle o{diag / n, 0.0, 0.0, 0.0, 0.0};
  double pe = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    double tp = cm[k][k], fp = 0.0, fn = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      if (j == k) continue;
      fp += cm[j][k];
      fn += cm[k][j];
    }
    const double tn = n - tp - fp - fn;
    const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    o.macro_f1 += f1 / K;
    o.sensitivity += rec / K;
    o.specificity += (tn + fp > 0 ? tn / (tn + fp) : 0.0) / K;
    pe += ((tp + fn) / n) * ((tp + fp) / n);
  }
  o.kappa = (o.accuracy - pe) / (1.0 - pe);
  return o;
}

ConfusionMatrix from_rows(const std::vector<std::vector<double>>& cm) {
  ConfusionMatrix out;
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 5; ++c) {
      out.add(static_cast<Stage>(r), static_cast<Stage>(c), static_cast<std::uint64_t>(cm[r][c]));
    }
  }
  return out;
}

std::vector<tfr::TimeFrequencyImage> random_images(const model::ModelConfig& cfg, std::size_t n,
                                                   Rng& rng) {
  model::RandomBatch batch;
  fill_random_batch(batch, cfg, 1, rng);
  std::vector<tfr::TimeFrequencyImage> out;
  while (out.size() < n) {
    fill_random_batch(batch, cfg, 1, rng);
    for (auto& img : batch.images) {
      if (out.size() < n) out.push_back(img);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("aggregation worked example") {
  DecisionEnsemble e;
  e.members.push_back({0.6, 0.1, 0.1, 0.1, 0.1});
  e.members.push_back({0.2, 0.5, 0.1, 0.1, 0.1});
  const Aggregated a = aggregate(e);
  CHECK(std::exp(a.log_scores[0]) == doctest::Approx(std::sqrt(0.12)).epsilon(1e-12));
  CHECK(std::exp(a.log_scores[1]) == doctest::Approx(std::sqrt(0.05)).epsilon(1e-12));
  CHECK(a.label == Stage::W);
  CHECK_THROWS_AS(aggregate(DecisionEnsemble{}), DataError);
}

TEST_CASE("aggregation ties go to the lowest index") {
  DecisionEnsemble e;
  e.members.push_back({0.1, 0.3, 0.1, 0.3, 0.2});
  CHECK(aggregate(e).label == Stage::N1);
  e.members.assign(3, Posterior{0.2, 0.2, 0.2, 0.2, 0.2});
  CHECK(aggregate(e).label == Stage::W);
  CHECK(argmax_stage(std::vector<double>{0, 0, 5, 5, 5}) == Stage::N2);
}

TEST_CASE("mean-log decision equals the product decision and ignores scaling") {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    DecisionEnsemble e;
    const std::size_t K = 1 + rng.below(20);
    for (std::size_t i = 0; i < K; ++i) e.members.push_back(random_posterior(rng));
    std::vector<double> product(5, 1.0);
    for (const auto& p : e.members) {
      for (std::size_t k = 0; k < 5; ++k) product[k] *= p[k];
    }
    const Aggregated a = aggregate(e);
    CHECK(a.label == argmax_stage(product));
    for (std::size_t k = 0; k < 5; ++k) {
      CHECK(std::abs(std::exp(static_cast<double>(K) * a.log_scores[k]) - product[k]) < 1e-9);
    }

    DecisionEnsemble scaled = e;
    const double c = 0.1 + 3.0 * rng.uniform();
    for (auto& p : scaled.members) {
      for (double& v : p) v *= c;
    }
    const Aggregated b = aggregate(scaled);
    CHECK(b.label == a.label);
    for (std::size_t k = 0; k < 5; ++k) {
      CHECK(b.log_scores[k] - a.log_scores[k] == doctest::Approx(std::log(c)).epsilon(1e-9));
    }
  }
}

TEST_CASE("zero probabilities hit the log floor") {
  DecisionEnsemble e;
  e.members.push_back({1.0, 0.0, 0.0, 0.0, 0.0});
  const Aggregated a = aggregate(e);
  CHECK(a.log_scores[1] == doctest::Approx(std::log(1e-12)));
  CHECK(std::isfinite(a.log_scores[4]));
}

TEST_CASE("sliding prediction ensembles") {
  model::ModelConfig cfg = model::micro_config();
  model::SeqSleepNet net(cfg);
  Rng rng(2);
  model::perturb_parameters(net.params(), 0.5, rng);
  const std::size_t L = cfg.seq_len;
  for (std::size_t E : {L, L + 1, std::size_t{10}, std::size_t{17}}) {
    const auto images = random_images(cfg, E, rng);
    const SlidingPrediction p = sliding_predict(images, net, L);
    CHECK(p.window_posteriors.size() == E - L + 1);
    CHECK(p.ensemble_size == oracle::ensemble_sizes(E, L));
    for (std::size_t e = 0; e < E; ++e) {
      // Re-fuse by hand from the window posteriors.
      std::vector<double> acc(5, 0.0);
      std::size_t k = 0;
      for (std::size_t w = 0; w < p.window_posteriors.size(); ++w) {
        if (e < w || e >= w + L) continue;
        ++k;
        for (std::size_t c = 0; c < 5; ++c) {
          acc[c] += std::log(p.window_posteriors[w](static_cast<Eigen::Index>(e - w),
                                                    static_cast<Eigen::Index>(c)));
        }
      }
      for (double& v : acc) v /= static_cast<double>(k);
      CHECK(p.hypnogram[e] == argmax_stage(acc));
      for (std::size_t c = 0; c < 5; ++c) {
        CHECK(p.log_scores(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(c)) ==
              doctest::Approx(acc[c]).epsilon(1e-12));
      }
    }
  }
  // Length 40 with L = 10: K = min(t, L, 40 - t + 1, 40 - L + 1), t 1-based.
  model::ModelConfig cfg10 = cfg;
  cfg10.seq_len = 10;
  model::SeqSleepNet net10(cfg10);
  const SlidingPrediction p40 = sliding_predict(random_images(cfg10, 40, rng), net10, 10);
  CHECK(p40.ensemble_size == oracle::ensemble_sizes(40, 10));
  for (std::size_t t = 1; t <= 40; ++t) {
    CHECK(p40.ensemble_size[t - 1] == std::min({t, std::size_t{10}, 41 - t, std::size_t{31}}));
  }

  const auto shorter = random_images(cfg, L - 1, rng);
  CHECK_THROWS_AS(sliding_predict(shorter, net, L), DataError);
}

TEST_CASE("sliding prediction with L = 1 is per-epoch classification") {
  model::ModelConfig cfg = model::micro_config();
  cfg.seq_len = 1;
  model::SeqSleepNet net(cfg);
  Rng rng(3);
  model::perturb_parameters(net.params(), 0.5, rng);
  const auto images = random_images(cfg, 6, rng);
  const SlidingPrediction p = sliding_predict(images, net, 1);
  for (std::size_t e = 0; e < 6; ++e) {
    CHECK(p.ensemble_size[e] == 1);
    const Eigen::RowVectorXd row = p.window_posteriors[e].row(0);
    CHECK(p.hypnogram[e] == argmax_stage(std::span<const double>(row.data(), 5)));
  }
  std::vector<Stage> labels(p.hypnogram);
  CHECK(per_window_accuracy(p, labels) == 1.0);
}

TEST_CASE("metrics on a hand-checked confusion matrix") {
  const std::vector<std::vector<double>> rows{
      {5, 1, 0, 0, 0}, {2, 6, 2, 0, 0}, {0, 1, 8, 0, 0}, {0, 0, 0, 0, 0}, {0, 0, 0, 0, 0}};
  const ConfusionMatrix cm = from_rows(rows);
  CHECK(cm.total() == 25);
  const Metrics m = compute_metrics(cm);
  const Oracle o = metrics_oracle(rows);
  CHECK(m.accuracy == doctest::Approx(0.76));
  CHECK(m.kappa == doctest::Approx(0.4208 / 0.6608).epsilon(1e-12));
  CHECK(m.accuracy == doctest::Approx(o.accuracy).epsilon(1e-14));
  CHECK(m.kappa == doctest::Approx(o.kappa).epsilon(1e-12));
  CHECK(m.macro_f1 == doctest::Approx(o.macro_f1).epsilon(1e-12));
  CHECK(m.sensitivity == doctest::Approx(o.sensitivity).epsilon(1e-12));
  CHECK(m.specificity == doctest::Approx(o.specificity).epsilon(1e-12));
  CHECK(m.class_sensitivity[0] == doctest::Approx(5.0 / 6.0));
  CHECK(m.class_selectivity[0] == doctest::Approx(5.0 / 7.0));
  CHECK(m.class_absent[3]);
  CHECK(m.class_absent[4]);
  CHECK_FALSE(m.class_absent[0]);
  CHECK(m.class_f1[3] == 0.0);
}

TEST_CASE("metrics on random matrices stay in range and match the oracle") {
  Rng rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::vector<double>> rows(5, std::vector<double>(5));
    for (auto& r : rows) {
      for (double& v : r) v = static_cast<double>(rng.below(rng.below(2) == 0 ? 3 : 40));
    }
    rows[rng.below(5)][rng.below(5)] += 1;
    const Metrics m = compute_metrics(from_rows(rows));
    const Oracle o = metrics_oracle(rows);
    CHECK(m.accuracy >= 0.0);
    CHECK(m.accuracy <= 1.0);
    CHECK(m.macro_f1 >= 0.0);
    CHECK(m.macro_f1 <= 1.0);
    CHECK(m.kappa <= 1.0);
    CHECK(m.macro_f1 == doctest::Approx(o.macro_f1).epsilon(1e-12));
    if (std::isfinite(o.kappa)) CHECK(m.kappa == doctest::Approx(o.kappa).epsilon(1e-9));
  }
}

TEST_CASE("kappa edge cases") {
  ConfusionMatrix perfect;
  for (int k = 0; k < 5; ++k) perfect.add(static_cast<Stage>(k), static_cast<Stage>(k), 4);
  CHECK(compute_metrics(perfect).kappa == doctest::Approx(1.0));
  CHECK(compute_metrics(perfect).macro_f1 == doctest::Approx(1.0));

  ConfusionMatrix single;
  single.add(Stage::N2, Stage::N2, 9);
  const Metrics s = compute_metrics(single);
  CHECK(s.kappa == 1.0);
  CHECK(s.accuracy == 1.0);

  // Predictions independent of the reference: chance-level kappa is 0.
  ConfusionMatrix chance;
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) chance.add(static_cast<Stage>(r), static_cast<Stage>(c), 5);
  }
  CHECK(std::abs(compute_metrics(chance).kappa) < 1e-12);

  // Constant W prediction on a balanced reference.
  ConfusionMatrix constant;
  for (int r = 0; r < 5; ++r) constant.add(static_cast<Stage>(r), Stage::W, 7);
  CHECK(compute_metrics(constant).kappa == 0.0);

  ConfusionMatrix swapped;
  swapped.add(Stage::W, Stage::N1, 5);
  swapped.add(Stage::N1, Stage::W, 5);
  CHECK(compute_metrics(swapped).kappa == doctest::Approx(-1.0));
  CHECK_THROWS_AS(compute_metrics(ConfusionMatrix{}), DataError);
}

TEST_CASE("transition split") {
  const std::vector<Stage> ref{Stage::W, Stage::W, Stage::N1, Stage::N1, Stage::N1, Stage::REM};
  CHECK(transition_split(ref) == std::vector<bool>{false, true, true, false, true, true});
  const std::vector<Stage> pred{Stage::W, Stage::N1, Stage::N1, Stage::N2, Stage::N1, Stage::REM};
  const TransitionReport r = transition_errors(ref, pred);
  CHECK(r.transitioning_count == 4);
  CHECK(r.stable_count == 2);
  CHECK(r.transitioning_error == doctest::Approx(0.25));
  CHECK(r.stable_error == doctest::Approx(0.5));
  CHECK(transition_split(std::vector<Stage>{Stage::N2}) == std::vector<bool>{false});
  CHECK_THROWS_AS(transition_errors(ref, std::vector<Stage>{Stage::W}), DataError);
}

TEST_CASE("writers") {
  ConfusionMatrix cm;
  cm.add(Stage::W, Stage::W, 3);
  cm.add(Stage::REM, Stage::N1, 1);
  std::ostringstream csv;
  write_confusion_csv(csv, cm);
  CHECK(csv.str().rfind("reference,W,N1,N2,N3,REM\n", 0) == 0);
  CHECK(csv.str().find("W,3,0,0,0,0") != std::string::npos);
  CHECK(csv.str().find("REM,0,1,0,0,0") != std::string::npos);

  const Metrics m = compute_metrics(cm);
  const auto j = nlohmann::json::parse(metrics_json(m, cm));
  for (const char* key : {"accuracy", "macro_f1", "kappa", "sensitivity", "specificity",
                          "class_f1", "confusion_matrix"}) {
    CHECK(j.contains(key));
  }
  CHECK(j["accuracy"].get<double>() == doctest::Approx(0.75));
  CHECK(j["confusion_matrix"][4][1].get<int>() == 1);

  SlidingPrediction p;
  p.hypnogram = {Stage::W, Stage::N3};
  p.log_scores = Matrix::Constant(2, 5, -1.5);
  std::ostringstream hyp;
  write_hypnogram_csv(hyp, p, std::vector<Stage>{Stage::W, Stage::N2});
  std::istringstream lines(hyp.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line == "epoch_index,reference_label,predicted_label,log_W,log_N1,log_N2,log_N3,log_REM");
  std::getline(lines, line);
  CHECK(line.rfind("0,W,W,", 0) == 0);
  std::getline(lines, line);
  CHECK(line.rfind("1,N2,N3,", 0) == 0);
}
