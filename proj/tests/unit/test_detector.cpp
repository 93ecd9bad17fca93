// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "bater/artifact.hpp"
#include "bater/attacks.hpp"
#include "bater/detector.hpp"
#include "bater/errors.hpp"
#include "bater/roc.hpp"
#include "support.hpp"

using namespace bater;
using namespace bater::testing;

namespace {

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  return v[static_cast<std::size_t>(q * static_cast<double>(v.size() - 1))];
}

PcaProjection identity_pca(const BnnModel& model, std::size_t tap, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const Tensor rows = random_tensor({64, model.layers().front().weight.mu.rows()}, gen, 0.0, 1.0);
  return fit_tap_pcas(model, rows, std::vector<std::size_t>{tap}, 3, seed).front();
}

// Small trained BNN on synthetic blobs, shared by the end-to-end checks.
BnnModel train_blobs(const Dataset& data) {
  ModelSpec spec;
  spec.input_dim = 10;
  spec.hidden = {16, 16};
  spec.class_count = 3;
  spec.init_log_std = -3.0;
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 32;
  cfg.kl_scale_mode = KlScaleMode::per_example;
  cfg.seed = 4;
  return train(data.train, spec, cfg).model;
}

struct Trained {
  Dataset data = synth_dataset(3, 2400, 10, 6.0, 17);
  BnnModel model = train_blobs(data);
  DetectorConfig config;

  Trained() {
    config.components = 4;
    config.passes = 4;
    config.n_ref = 100;
    config.subsets = 5;
    config.select = 3;
    config.pca_rows = 500;
    config.seed = 9;
  }
};

const Trained& trained() {
  static const Trained t;
  return t;
}

}  // namespace

TEST_CASE("simulated distributions pool k*B projected values") {
  const BnnModel m = small_model({5, 7, 3}, -1.0, 3);
  const PcaProjection pca = identity_pca(m, 1, 2);
  const Tensor x = Tensor::matrix({{0.1, 0.5, 0.9, 0.3, 0.7}});
  Rng rng(1);
  for (int b : {1, 2, 4, 7}) CHECK(simulate_distribution(m, x, 1, b, pca, rng).size() == 3 * static_cast<std::size_t>(b));
  CHECK_THROWS_AS(simulate_distribution(m, x, 1, 0, pca, rng), ContractError);

  const BnnModel twin = m.deterministic_twin();
  const PcaProjection tpca = identity_pca(twin, 1, 2);
  Rng r1(5), r3(6);
  const EmpiricalSample one = simulate_distribution(twin, x, 1, 1, tpca, r1);
  const EmpiricalSample three = simulate_distribution(twin, x, 1, 3, tpca, r3);
  for (std::size_t i = 0; i < three.size(); ++i) CHECK(three.values()[i] == one.values()[i / 3]);
  CHECK(wasserstein1(one, three) == 0.0);

  Rng ra(11), rb(11);
  const auto a = simulate_distribution(m, x, 1, 4, pca, ra), b = simulate_distribution(m, x, 1, 4, pca, rb);
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin(), b.values().end()));
}

TEST_CASE("stochastic passes give nondegenerate samples") {
  const BnnModel m = small_model({5, 7, 3}, -2.0, 3);
  std::mt19937_64 gen(8);
  const Tensor rows = random_tensor({100, 5}, gen, 0.0, 1.0);
  const std::vector<std::size_t> taps{0};
  const auto pcas = fit_tap_pcas(m, rows, taps, 3, 1);
  Rng rng(2);
  for (std::size_t r = 0; r < 100; ++r) {
    const auto s = simulate_distribution(m, rows.slice_rows(r, r + 1), 0, 4, pcas[0], rng);
    std::vector<double> v(s.values().begin(), s.values().end());
    CHECK(std::unique(v.begin(), v.end()) - v.begin() > 1);
  }
}

TEST_CASE("pooled simulation is reproducible and B-independent for the twin") {
  const BnnModel twin = small_model({5, 7, 3}, -1.0, 4).deterministic_twin();
  std::mt19937_64 gen(9);
  const Tensor rows = random_tensor({10, 5}, gen, 0.0, 1.0);
  const std::vector<std::size_t> taps{0, 2};
  const auto pcas = fit_tap_pcas(twin, rows, taps, 2, 1);
  const auto b1 = simulate_pools(twin, rows, taps, pcas, 1, 3, "x");
  const auto b5 = simulate_pools(twin, rows, taps, pcas, 5, 3, "x");
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t t = 0; t < 2; ++t) CHECK(wasserstein1(b1[r][t], b5[r][t]) == 0.0);
}

TEST_CASE("reference store sizes, seeding and class coverage") {
  const Dataset data = synth_dataset(3, 600, 6, 3.0, 5);
  const BnnModel m = small_model({6, 8, 3}, -2.0, 6);
  const std::vector<std::size_t> taps{0, 2};
  const auto pcas = fit_tap_pcas(m, data.train.x.slice_rows(0, 100), taps, 3, 1);
  const ReferenceStore store = build_reference(m, data.train, taps, pcas, 40, 4, 2, 7);
  CHECK(store.samples.size() == 3 * 2 * 4);
  for (const auto& s : store.samples) CHECK(s.size() == (40 / 4) * 3 * 2);

  const ReferenceStore single = build_reference(m, data.train, taps, pcas, 40, 1, 2, 7);
  CHECK(single.samples.size() == 3 * 2);
  for (const auto& s : single.samples) CHECK(s.size() == 40 * 3 * 2);

  const ReferenceStore again = build_reference(m, data.train, taps, pcas, 40, 4, 2, 7);
  for (std::size_t i = 0; i < store.samples.size(); ++i)
    CHECK(std::equal(store.samples[i].values().begin(), store.samples[i].values().end(),
                     again.samples[i].values().begin(), again.samples[i].values().end()));

  CHECK_THROWS_AS(build_reference(m, data.train, taps, pcas, 10000, 4, 2, 7), ContractError);
  CHECK_THROWS_AS(build_reference(m, data.train, taps, pcas, 3, 4, 2, 7), ContractError);
}

TEST_CASE("references from different seeds sit closer than references of other classes") {
  const Trained& t = trained();
  const DetectorBasis basis = build_basis(t.model, t.data.train, t.config);
  const ReferenceStore other = build_reference(t.model, t.data.train, basis.taps, basis.pcas, t.config.n_ref,
                                               t.config.subsets, t.config.passes, t.config.seed + 1);
  const std::size_t logits = t.model.logit_tap();
  const std::size_t pos = basis.references.position(logits);
  std::vector<double> same, cross;
  for (int c = 0; c < 3; ++c)
    for (std::size_t m = 0; m < t.config.subsets; ++m) {
      same.push_back(wasserstein1(basis.references.sample(c, pos, m), other.sample(c, pos, m)));
      for (int d = 0; d < 3; ++d)
        if (d != c) cross.push_back(wasserstein1(basis.references.sample(c, pos, m), other.sample(d, pos, m)));
    }
  const double cross_median = quantile(cross, 0.5);
  for (double s : same) CHECK(s < cross_median);
}

TEST_CASE("aggregation statistics") {
  const std::vector<double> d{0.2, 0.5};
  CHECK(aggregate(d, Statistic::min) == 0.2);
  CHECK(aggregate(d, Statistic::mean) == doctest::Approx(0.35).epsilon(1e-15));
  const std::vector<double> one{0.7};
  CHECK(aggregate(one, Statistic::min) == aggregate(one, Statistic::mean));
  CHECK_THROWS(aggregate(std::vector<double>{}, Statistic::min));
  CHECK(parse_statistic("mean") == Statistic::mean);
  CHECK_THROWS_AS(parse_statistic("median"), ConfigError);

  const Dataset data = synth_dataset(2, 200, 4, 3.0, 2);
  const BnnModel m = small_model({4, 5, 2}, -2.0, 1);
  const std::vector<std::size_t> taps{1};
  const auto pcas = fit_tap_pcas(m, data.train.x, taps, 2, 1);
  const ReferenceStore store = build_reference(m, data.train, taps, pcas, 20, 1, 2, 3);
  const auto pools = simulate_pools(m, data.test.x.slice_rows(0, 5), taps, pcas, 2, 1, "s");
  for (const auto& p : pools)
    CHECK(dispersion_score(p[0], 0, 0, store, Statistic::min) == dispersion_score(p[0], 0, 0, store, Statistic::mean));
}

TEST_CASE("reference members score like held-out naturals") {
  const Trained& t = trained();
  const DetectorBasis basis = build_basis(t.model, t.data.train, t.config);
  const std::size_t pos = basis.references.position(t.model.logit_tap());
  const Tensor holdout = t.data.test.x;
  const auto nat_classes = predict_batch(t.model, holdout, PredictionRule{4, 9, 128}).labels;
  const Tensor nat = basis_features(t.model, basis, holdout, nat_classes, t.config, "holdout");
  std::vector<double> nat_scores;
  for (std::size_t r = 0; r < nat.rows(); ++r) nat_scores.push_back(nat.at(r, pos));
  const double p90 = quantile(nat_scores, 0.9);

  // Train rows of class 0 include the reference draws; their typical score stays below
  // the natural 90th percentile.
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < t.data.train.size() && members.size() < 50; ++i)
    if (t.data.train.y[i] == 0) members.push_back(i);
  const LabeledSet chosen = t.data.train.subset(members);
  const Tensor f = basis_features(t.model, basis, chosen.x, chosen.y, t.config, "members");
  std::vector<double> member_scores;
  for (std::size_t r = 0; r < f.rows(); ++r) member_scores.push_back(f.at(r, pos));
  CHECK(quantile(member_scores, 0.5) < p90);
}

TEST_CASE("layer selection ranks by cross-validated AUC") {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t n = 100;
  Tensor f(Shape{n, 4});
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(i % 2);
    f.at(i, 0) = noise(gen);
    f.at(i, 1) = noise(gen);
    f.at(i, 2) = labels[i];
    f.at(i, 3) = noise(gen);
  }
  const LayerSelection s = select_layers(f, labels, 2, 5, 1);
  REQUIRE(s.order.size() == 2);
  CHECK(s.order[0] == 2);
  CHECK(s.cv_auc[2] == 1.0);

  Tensor pure(Shape{n, 5});
  for (double& v : pure.data()) v = noise(gen);
  for (std::size_t m = 1; m <= 5; ++m) {
    const LayerSelection p = select_layers(pure, labels, m, 5, 2);
    CHECK(p.order.size() == m);
    std::vector<std::size_t> sorted = p.order;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::unique(sorted.begin(), sorted.end()) == sorted.end());
    CHECK(sorted.back() < 5);
  }

  Tensor tied(Shape{n, 3});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) tied.at(i, c) = labels[i];
  CHECK(select_layers(tied, labels, 3, 5, 1).order == std::vector<std::size_t>{0, 1, 2});

  CHECK_THROWS_AS(select_layers(f, labels, 0, 5, 1), ContractError);
  CHECK_THROWS_AS(select_layers(f, labels, 5, 5, 1), ContractError);
  const std::vector<int> one_class(n, 0);
  CHECK_THROWS_AS(select_layers(f, one_class, 2, 5, 1), ContractError);
}

TEST_CASE("end-to-end detector behaviour") {
  const Trained& t = trained();
  CHECK(accuracy(t.model, t.data.test, PredictionRule{4, 1, 128}) > 0.9);
  const DetectorBasis basis = build_basis(t.model, t.data.train, t.config);

  // Naturals: the correctly classified half of the test portion; adversarials from PGD.
  const PredictionRule rule{4, 2, 128};
  const auto half = t.data.test.size() / 2;
  std::vector<std::size_t> first(half);
  std::iota(first.begin(), first.end(), 0);
  const LabeledSet fit_set = t.data.test.subset(first);
  AttackSpec spec;
  spec.kind = AttackKind::pgd;
  spec.epsilon = 0.3;
  spec.step_size = 0.01;
  spec.steps = 40;
  spec.grad_passes = 4;
  spec.seed = 3;
  const AdvBatch adv = pgd(t.model, fit_set.x, fit_set.y, spec, rule);
  CHECK(adv.success_rate() > 0.5);

  const auto nat_classes = predict_batch(t.model, fit_set.x, rule).labels;
  DetectorConfig cfg = t.config;
  const Tensor nat_f = basis_features(t.model, basis, fit_set.x, nat_classes, cfg, "fit-natural");
  const auto adv_classes = predict_batch(t.model, adv.perturbed, rule).labels;
  const Tensor adv_f = basis_features(t.model, basis, adv.perturbed, adv_classes, cfg, "fit-adversarial");
  const DetectorModel det = assemble_detector(t.model, basis, nat_f, adv_f, cfg);
  CHECK(det.taps.size() == 3);

  // Adversarials score higher on average than naturals.
  const auto nat_v = detect_batch(t.model, det, fit_set.x, "check-natural");
  const auto adv_v = detect_batch(t.model, det, adv.perturbed, "check-adversarial");
  double nat_mean = 0.0, adv_mean = 0.0;
  for (const auto& v : nat_v) nat_mean += v.score / static_cast<double>(nat_v.size());
  for (const auto& v : adv_v) adv_mean += v.score / static_cast<double>(adv_v.size());
  CHECK(adv_mean > nat_mean);
  for (const auto& v : adv_v) {
    CHECK(v.score >= 0.0);
    CHECK(v.score <= 1.0);
    CHECK(v.z == (v.score >= det.threshold ? 1 : 0));
  }

  SUBCASE("threshold at FPR 0.05 transfers to held-out naturals") {
    // Same seed draws the same class means, so a larger set gives more naturals from the
    // same distribution. Calibrate on one half of the correctly classified rows, measure on the other.
    const Dataset big = synth_dataset(3, 12000, 10, 6.0, 17);
    const auto hv = detect_batch(t.model, det, big.test.x, "holdout");
    std::vector<double> calibration, measured;
    for (std::size_t i = 0; i < hv.size(); ++i) {
      if (hv[i].predicted_class != big.test.y[i]) continue;
      (i % 2 == 0 ? calibration : measured).push_back(hv[i].score);
    }
    REQUIRE(measured.size() > 1000);
    std::vector<double> scores = calibration;
    std::vector<int> labels(calibration.size(), 0);
    for (const auto& v : adv_v) {
      scores.push_back(v.score);
      labels.push_back(1);
    }
    const double threshold = threshold_at_fpr(roc_auc(scores, labels), 0.05);
    double flagged = 0.0;
    for (double v : measured) flagged += v >= threshold ? 1.0 : 0.0;
    CHECK(std::abs(flagged / static_cast<double>(measured.size()) - 0.05) <= 0.02);
  }

  SUBCASE("zero weights give score one half") {
    DetectorModel flat = det;
    std::fill(flat.logistic.weights.begin(), flat.logistic.weights.end(), 0.0);
    flat.logistic.bias = 0.0;
    for (const auto& v : detect_batch(t.model, flat, adv.perturbed.slice_rows(0, 20))) CHECK(v.score == 0.5);
  }

  SUBCASE("scaling raw features leaves verdicts unchanged") {
    Tensor nat_s = nat_f, adv_s = adv_f;
    for (double& v : nat_s.data()) v *= 37.0;
    for (double& v : adv_s.data()) v *= 37.0;
    const DetectorModel scaled = assemble_detector(t.model, basis, nat_s, adv_s, cfg);
    CHECK(scaled.taps == det.taps);
    Tensor chosen(Shape{adv_f.rows(), det.taps.size()}), chosen_s(Shape{adv_f.rows(), det.taps.size()});
    for (std::size_t r = 0; r < adv_f.rows(); ++r)
      for (std::size_t i = 0; i < det.taps.size(); ++i) {
        const std::size_t col = std::find(basis.taps.begin(), basis.taps.end(), det.taps[i]) - basis.taps.begin();
        chosen.at(r, i) = adv_f.at(r, col);
        chosen_s.at(r, i) = adv_s.at(r, col);
      }
    const auto p = det.logistic.predict(chosen), ps = scaled.logistic.predict(chosen_s);
    for (std::size_t r = 0; r < p.size(); ++r) {
      CHECK(std::abs(p[r] - ps[r]) < 1e-9);
      CHECK((p[r] >= 0.5) == (ps[r] >= 0.5));
    }
  }

  SUBCASE("detector round-trips through manifest and blob") {
    const auto stem = std::filesystem::temp_directory_path() / "bater_test_detector";
    save_detector(det, stem);
    const DetectorModel back = load_detector(stem);
    CHECK(back.taps == det.taps);
    CHECK(back.tap_names == det.tap_names);
    const auto a = detect_batch(t.model, det, adv.perturbed.slice_rows(0, 30));
    const auto b = detect_batch(t.model, back, adv.perturbed.slice_rows(0, 30));
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].score == b[i].score);
      CHECK(a[i].distances == b[i].distances);
    }
    const std::string csv = verdict_csv(det, a);
    std::string header = "index,predicted_class";
    for (const auto& n : det.tap_names) header += ",d_" + n;
    header += ",score,z\n";
    CHECK(csv.substr(0, header.size()) == header);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 31);
    std::filesystem::remove(manifest_path(stem));
    std::filesystem::remove(blob_path(stem));
  }
}
