// SPDX-License-Identifier: Apache-2.0
#include "bater/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "bater/artifact.hpp"
#include "bater/errors.hpp"
#include "bater/parallel.hpp"
#include "bater/roc.hpp"

namespace bater {
namespace {

constexpr std::size_t kPoolChunk = 128;

std::vector<std::size_t> resolve_taps(const BnnModel& model, std::span<const std::size_t> requested) {
  std::vector<std::size_t> taps(requested.begin(), requested.end());
  if (taps.empty()) {
    taps.resize(model.tap_count());
    std::iota(taps.begin(), taps.end(), 0);
  }
  for (std::size_t t : taps) model.tap_width(t);  // validates
  return taps;
}

std::string join(std::span<const std::size_t> values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? " " : "") + std::to_string(values[i]);
  return out;
}

std::vector<std::size_t> split_sizes(std::string_view text) {
  std::vector<std::size_t> out;
  std::istringstream in{std::string(text)};
  std::size_t v = 0;
  while (in >> v) out.push_back(v);
  return out;
}

}  // namespace

std::string statistic_name(Statistic s) { return s == Statistic::min ? "min" : "mean"; }

Statistic parse_statistic(std::string_view name) {
  if (name == "min") return Statistic::min;
  if (name == "mean") return Statistic::mean;
  throw ConfigError("unknown statistic '" + std::string(name) + "' (expected min or mean)");
}

const EmpiricalSample& ReferenceStore::sample(int c, std::size_t tap_pos, std::size_t subset) const {
  if (c < 0 || c >= class_count) throw IndexError("reference class " + std::to_string(c) + " out of range");
  if (tap_pos >= taps.size() || subset >= subsets) throw IndexError("reference tap or subset out of range");
  return samples[(static_cast<std::size_t>(c) * taps.size() + tap_pos) * subsets + subset];
}

std::size_t ReferenceStore::position(std::size_t tap) const {
  const auto it = std::find(taps.begin(), taps.end(), tap);
  if (it == taps.end()) throw IndexError("tap " + std::to_string(tap) + " has no reference");
  return static_cast<std::size_t>(it - taps.begin());
}

ReferenceStore ReferenceStore::restrict_to(std::span<const std::size_t> positions) const {
  ReferenceStore out;
  out.class_count = class_count;
  out.subsets = subsets;
  out.n_ref = n_ref;
  for (std::size_t p : positions) out.taps.push_back(taps.at(p));
  for (int c = 0; c < class_count; ++c)
    for (std::size_t p : positions)
      for (std::size_t m = 0; m < subsets; ++m) out.samples.push_back(sample(c, p, m));
  return out;
}

std::vector<PcaProjection> fit_tap_pcas(const BnnModel& model, const Tensor& rows, std::span<const std::size_t> taps,
                                        std::size_t k, std::uint64_t seed) {
  const std::size_t n = rows.rows();
  std::vector<Tensor> acts;
  for (std::size_t t : taps) acts.emplace_back(Shape{n, model.tap_width(t)});
  for_each_chunk(n, 256, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    auto rng = make_stream(seed, "pca", chunk);
    const auto out = forward_taps(model, sample_network(model, rng), rows.slice_rows(begin, end));
    for (std::size_t i = 0; i < taps.size(); ++i) {
      const Tensor& a = out[taps[i]];
      std::copy(a.data().begin(), a.data().end(), acts[i].raw() + begin * a.cols());
    }
  });
  std::vector<PcaProjection> pcas;
  for (std::size_t i = 0; i < taps.size(); ++i) pcas.push_back(fit_pca(acts[i], std::min(k, acts[i].cols()), taps[i]));
  return pcas;
}

EmpiricalSample simulate_distribution(const BnnModel& model, const Tensor& x, std::size_t tap, int passes,
                                      const PcaProjection& pca, Rng& rng) {
  if (passes < 1) throw ContractError("simulate_distribution needs at least one pass");
  if (x.rank() != 2 || x.rows() != 1) throw DimensionError("simulate_distribution expects a single row");
  model.tap_width(tap);
  std::vector<double> values;
  values.reserve(pca.k() * static_cast<std::size_t>(passes));
  for (int p = 0; p < passes; ++p) {
    const Tensor projected = pca.project(forward_taps(model, sample_network(model, rng), x)[tap]);
    values.insert(values.end(), projected.data().begin(), projected.data().end());
  }
  return EmpiricalSample(std::move(values), "test_point");
}

std::vector<std::vector<EmpiricalSample>> simulate_pools(const BnnModel& model, const Tensor& x,
                                                         std::span<const std::size_t> taps,
                                                         std::span<const PcaProjection> pcas, int passes,
                                                         std::uint64_t seed, std::string_view stage) {
  if (passes < 1) throw ContractError("simulate_pools needs at least one pass");
  if (pcas.size() != taps.size()) throw DimensionError("one projection per tap is required");
  const std::size_t n = x.rows();
  std::vector<std::vector<EmpiricalSample>> out(n);
  for_each_chunk(n, kPoolChunk, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    auto rng = make_stream(seed, stage, chunk);
    const Tensor rows = x.slice_rows(begin, end);
    std::vector<std::vector<std::vector<double>>> pools(end - begin, std::vector<std::vector<double>>(taps.size()));
    for (int p = 0; p < passes; ++p) {
      const auto acts = forward_taps(model, sample_network(model, rng), rows);
      for (std::size_t i = 0; i < taps.size(); ++i) {
        const Tensor projected = pcas[i].project(acts[taps[i]]);
        for (std::size_t r = 0; r < rows.rows(); ++r) {
          const auto row = projected.row(r);
          pools[r][i].insert(pools[r][i].end(), row.begin(), row.end());
        }
      }
    }
    for (std::size_t r = 0; r < pools.size(); ++r)
      for (auto& pool : pools[r]) out[begin + r].emplace_back(std::move(pool), "test_point");
  });
  return out;
}

ReferenceStore build_reference(const BnnModel& model, const LabeledSet& train, std::span<const std::size_t> taps,
                               std::span<const PcaProjection> pcas, std::size_t n_ref, std::size_t subsets,
                               int passes, std::uint64_t seed) {
  if (subsets < 1) throw ContractError("reference store needs at least one subset");
  if (n_ref < subsets) throw ContractError("n_ref must be at least the subset count");
  if (pcas.size() != taps.size()) throw DimensionError("one projection per tap is required");
  if (passes < 1) throw ContractError("build_reference needs at least one pass");
  const int classes = model.class_count();
  ReferenceStore store;
  store.class_count = classes;
  store.subsets = subsets;
  store.n_ref = n_ref;
  store.taps.assign(taps.begin(), taps.end());

  std::vector<std::vector<std::size_t>> picks(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    auto& idx = picks[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < train.size(); ++i)
      if (train.y[i] == c) idx.push_back(i);
    if (idx.size() < n_ref)
      throw ContractError("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                          " training points, fewer than n_ref=" + std::to_string(n_ref));
    auto rng = make_stream(seed, "reference-pick", static_cast<std::uint64_t>(c));
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(n_ref);
  }

  const std::size_t cells = static_cast<std::size_t>(classes) * subsets;
  std::vector<std::vector<std::vector<double>>> pools(cells, std::vector<std::vector<double>>(taps.size()));
  for_each_chunk(cells, 1, [&](std::size_t cell, std::size_t, std::size_t) {
    const std::size_t c = cell / subsets, m = cell % subsets;
    const auto& idx = picks[c];
    const std::size_t lo = m * n_ref / subsets, hi = (m + 1) * n_ref / subsets;
    const LabeledSet rows = train.subset(std::span<const std::size_t>(idx.data() + lo, hi - lo));
    auto rng = make_stream(seed, "reference", cell);
    for (int p = 0; p < passes; ++p) {
      const auto acts = forward_taps(model, sample_network(model, rng), rows.x);
      for (std::size_t i = 0; i < taps.size(); ++i) {
        const Tensor projected = pcas[i].project(acts[taps[i]]);
        pools[cell][i].insert(pools[cell][i].end(), projected.data().begin(), projected.data().end());
      }
    }
  });
  for (int c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < taps.size(); ++i)
      for (std::size_t m = 0; m < subsets; ++m)
        store.samples.emplace_back(std::move(pools[static_cast<std::size_t>(c) * subsets + m][i]),
                                   "reference " + std::to_string(c) + "/" + std::to_string(m));
  return store;
}

double aggregate(std::span<const double> distances, Statistic statistic) {
  if (distances.empty()) throw ContractError("nothing to aggregate");
  if (statistic == Statistic::min) return *std::min_element(distances.begin(), distances.end());
  return std::accumulate(distances.begin(), distances.end(), 0.0) / static_cast<double>(distances.size());
}

double dispersion_score(const EmpiricalSample& sample, int c, std::size_t tap_pos, const ReferenceStore& store,
                        Statistic statistic) {
  std::vector<double> distances;
  for (std::size_t m = 0; m < store.subsets; ++m) distances.push_back(wasserstein1(sample, store.sample(c, tap_pos, m)));
  return aggregate(distances, statistic);
}

LayerSelection select_layers(const Tensor& features, std::span<const int> labels, std::size_t m, std::size_t folds,
                             std::uint64_t seed, const LogisticConfig& logistic) {
  if (features.rank() != 2 || features.rows() != labels.size())
    throw DimensionError("select_layers: features and labels disagree");
  const std::size_t n = features.rows(), width = features.cols();
  if (m < 1 || m > width) throw ContractError("select_layers: m must lie in [1, " + std::to_string(width) + "]");
  if (folds < 2) throw ContractError("select_layers needs at least two folds");

  // Stratified, seeded fold assignment.
  std::vector<std::size_t> fold_of(n);
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i)
      if (labels[i] == cls) members.push_back(i);
    auto rng = make_stream(seed, "folds", static_cast<std::uint64_t>(cls));
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i = 0; i < members.size(); ++i) fold_of[members[i]] = i % folds;
  }
  for (std::size_t f = 0; f < folds; ++f) {
    int seen[2] = {0, 0};
    for (std::size_t i = 0; i < n; ++i)
      if (fold_of[i] == f) seen[labels[i] ? 1 : 0] = 1;
    if (!seen[0] || !seen[1])
      throw ContractError("select_layers: fold " + std::to_string(f) + " holds a single class");
  }

  LayerSelection out;
  out.cv_auc.assign(width, 0.0);
  for (std::size_t col = 0; col < width; ++col) {
    double total = 0.0;
    for (std::size_t f = 0; f < folds; ++f) {
      std::vector<double> train_x, test_x;
      std::vector<int> train_y, test_y;
      for (std::size_t i = 0; i < n; ++i) {
        auto& xs = fold_of[i] == f ? test_x : train_x;
        auto& ys = fold_of[i] == f ? test_y : train_y;
        xs.push_back(features[i * width + col]);
        ys.push_back(labels[i]);
      }
      std::vector<double> scores(test_x.size(), 0.5);
      const std::size_t train_n = train_x.size();
      const Tensor train_t(Shape{train_n, 1}, std::move(train_x));
      const LogisticModel fit = fit_logistic(train_t, train_y, logistic);
      for (std::size_t i = 0; i < test_x.size(); ++i) scores[i] = fit.predict_row(std::span<const double>(&test_x[i], 1));
      total += roc_auc(scores, test_y).auc;
    }
    out.cv_auc[col] = total / static_cast<double>(folds);
  }
  out.order.resize(width);
  std::iota(out.order.begin(), out.order.end(), 0);
  std::stable_sort(out.order.begin(), out.order.end(),
                   [&](std::size_t a, std::size_t b) { return out.cv_auc[a] > out.cv_auc[b]; });
  out.order.resize(m);
  return out;
}

DetectorBasis build_basis(const BnnModel& model, const LabeledSet& train, const DetectorConfig& config) {
  DetectorBasis basis;
  basis.taps = resolve_taps(model, config.candidate_taps);
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto rng = make_stream(config.seed, "pca-rows");
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(config.pca_rows, idx.size()));
  std::sort(idx.begin(), idx.end());
  basis.pcas = fit_tap_pcas(model, train.subset(idx).x, basis.taps, config.components, config.seed);
  basis.references = build_reference(model, train, basis.taps, basis.pcas, config.n_ref, config.subsets,
                                     config.passes, config.seed);
  return basis;
}

Tensor basis_features(const BnnModel& model, const DetectorBasis& basis, const Tensor& x, std::span<const int> classes,
                      const DetectorConfig& config, std::string_view stage) {
  if (classes.size() != x.rows()) throw DimensionError("one class per row is required");
  const auto pools = simulate_pools(model, x, basis.taps, basis.pcas, config.passes, config.seed, stage);
  const std::size_t width = basis.taps.size();
  Tensor out(Shape{x.rows(), width});
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t t = 0; t < width; ++t)
      out[r * width + t] = dispersion_score(pools[r][t], classes[r], t, basis.references, config.statistic);
  return out;
}

DetectorModel assemble_detector(const BnnModel& model, const DetectorBasis& basis, const Tensor& natural_features,
                                const Tensor& adversarial_features, const DetectorConfig& config) {
  const std::size_t width = basis.taps.size();
  if (natural_features.cols() != width || adversarial_features.cols() != width)
    throw DimensionError("feature width does not match the basis taps");
  const std::size_t n0 = natural_features.rows(), n1 = adversarial_features.rows();
  Tensor stacked(Shape{n0 + n1, width});
  std::copy(natural_features.data().begin(), natural_features.data().end(), stacked.raw());
  std::copy(adversarial_features.data().begin(), adversarial_features.data().end(), stacked.raw() + n0 * width);
  std::vector<int> labels(n0, 0);
  labels.resize(n0 + n1, 1);

  const LayerSelection selection =
      select_layers(stacked, labels, std::min(config.select, width), config.folds, config.seed, config.logistic);
  Tensor chosen(Shape{n0 + n1, selection.order.size()});
  for (std::size_t r = 0; r < n0 + n1; ++r)
    for (std::size_t i = 0; i < selection.order.size(); ++i)
      chosen[r * selection.order.size() + i] = stacked[r * width + selection.order[i]];

  DetectorModel detector;
  for (std::size_t pos : selection.order) {
    detector.taps.push_back(basis.taps[pos]);
    detector.tap_names.push_back(model.tap_name(basis.taps[pos]));
    detector.pcas.push_back(basis.pcas[pos]);
  }
  detector.references = basis.references.restrict_to(selection.order);
  detector.statistic = config.statistic;
  detector.logistic = fit_logistic(chosen, labels, config.logistic);
  detector.passes = config.passes;
  detector.threshold = config.threshold;
  detector.seed = config.seed;
  detector.candidate_auc = selection.cv_auc;
  return detector;
}

PredictionRule detector_rule(const DetectorModel& detector) { return PredictionRule{detector.passes, detector.seed, 128}; }

DetectorModel fit_detector(const BnnModel& model, const LabeledSet& train, const Tensor& naturals,
                           const Tensor& adversarials, const DetectorConfig& config) {
  const DetectorBasis basis = build_basis(model, train, config);
  const PredictionRule rule{config.passes, config.seed, 128};
  const auto nat_classes = predict_batch(model, naturals, rule).labels;
  const auto adv_classes = predict_batch(model, adversarials, rule).labels;
  return assemble_detector(model, basis, basis_features(model, basis, naturals, nat_classes, config, "fit-natural"),
                           basis_features(model, basis, adversarials, adv_classes, config, "fit-adversarial"), config);
}

std::vector<Verdict> detect_batch(const BnnModel& model, const DetectorModel& detector, const Tensor& x,
                                  std::string_view stage) {
  if (detector.taps.empty()) throw ContractError("detector has no selected layers");
  const auto classes = predict_batch(model, x, detector_rule(detector)).labels;
  const auto pools = simulate_pools(model, x, detector.taps, detector.pcas, detector.passes, detector.seed, stage);
  std::vector<Verdict> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    Verdict& v = out[r];
    v.predicted_class = classes[r];
    for (std::size_t t = 0; t < detector.taps.size(); ++t)
      v.distances.push_back(dispersion_score(pools[r][t], classes[r], t, detector.references, detector.statistic));
    v.score = detector.logistic.predict_row(v.distances);
    v.z = v.score >= detector.threshold ? 1 : 0;
  }
  return out;
}

Verdict detect(const Tensor& x, const DetectorModel& detector, const BnnModel& model) {
  return detect_batch(model, detector, x).front();
}

void save_detector(const DetectorModel& detector, const std::filesystem::path& stem,
                   const std::vector<std::pair<std::string, std::string>>& extra) {
  Manifest manifest("bater-detector", kDetectorFormatVersion);
  manifest.set("taps", join(detector.taps));
  std::string names;
  for (const auto& n : detector.tap_names) names += (names.empty() ? "" : " ") + n;
  manifest.set("tap_names", names);
  manifest.set("statistic", statistic_name(detector.statistic));
  manifest.set("passes", detector.passes);
  manifest.set("threshold", detector.threshold);
  manifest.set("seed", detector.seed);
  manifest.set("class_count", detector.references.class_count);
  manifest.set("subsets", static_cast<std::uint64_t>(detector.references.subsets));
  manifest.set("n_ref", static_cast<std::uint64_t>(detector.references.n_ref));
  manifest.set("candidates", static_cast<std::uint64_t>(detector.candidate_auc.size()));
  manifest.set("logistic_iterations", detector.logistic.iterations);
  manifest.set("logistic_grad_norm", detector.logistic.grad_norm);
  for (const auto& [k, v] : extra) manifest.set(k, v);

  BlobWriter blob;
  for (const auto& pca : detector.pcas) {
    blob.put_u64(pca.layer_index);
    blob.put_u64(pca.dim());
    blob.put_doubles(pca.mean);
    blob.put_tensor(pca.components);
    blob.put_doubles(pca.explained_variance);
  }
  for (const auto& s : detector.references.samples) {
    blob.put_u64(s.size());
    blob.put_doubles(s.values());
  }
  blob.put_doubles(detector.logistic.weights);
  blob.put_f64(detector.logistic.bias);
  blob.put_doubles(detector.logistic.feature_mean);
  blob.put_doubles(detector.logistic.feature_std);
  const std::vector<int> active(detector.logistic.active.begin(), detector.logistic.active.end());
  blob.put_ints(active);
  blob.put_doubles(detector.candidate_auc);
  write_artifact(stem, std::move(manifest), blob);
}

DetectorModel load_detector(const std::filesystem::path& stem) {
  auto [manifest, blob] = read_artifact(stem, "bater-detector", kDetectorFormatVersion);
  DetectorModel d;
  d.taps = split_sizes(manifest.get("taps"));
  std::istringstream names(manifest.get("tap_names"));
  for (std::string n; names >> n;) d.tap_names.push_back(n);
  if (d.taps.empty() || d.tap_names.size() != d.taps.size()) throw FormatError("detector tap list is malformed", 0);
  d.statistic = parse_statistic(manifest.get("statistic"));
  d.passes = static_cast<int>(manifest.get_int("passes"));
  d.threshold = manifest.get_double("threshold");
  d.seed = manifest.get_uint("seed");
  for (std::size_t i = 0; i < d.taps.size(); ++i) {
    PcaProjection pca;
    pca.layer_index = blob.get_u64();
    const std::size_t dim = blob.get_u64();
    pca.mean = blob.get_doubles(dim);
    pca.components = blob.get_tensor();
    if (pca.components.rank() != 2 || pca.components.rows() != dim) throw FormatError("bad PCA block", blob.offset());
    pca.explained_variance = blob.get_doubles(pca.components.cols());
    d.pcas.push_back(std::move(pca));
  }
  auto& refs = d.references;
  refs.class_count = static_cast<int>(manifest.get_int("class_count"));
  refs.subsets = manifest.get_uint("subsets");
  refs.n_ref = manifest.get_uint("n_ref");
  refs.taps = d.taps;
  const std::size_t count = static_cast<std::size_t>(refs.class_count) * refs.taps.size() * refs.subsets;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t size = blob.get_u64();
    refs.samples.emplace_back(blob.get_doubles(size), "reference");
  }
  const std::size_t f = d.taps.size();
  d.logistic.weights = blob.get_doubles(f);
  d.logistic.bias = blob.get_f64();
  d.logistic.feature_mean = blob.get_doubles(f);
  d.logistic.feature_std = blob.get_doubles(f);
  for (int a : blob.get_ints(f)) d.logistic.active.push_back(static_cast<std::uint8_t>(a != 0));
  d.logistic.iterations = static_cast<int>(manifest.get_int("logistic_iterations"));
  d.logistic.grad_norm = manifest.get_double("logistic_grad_norm");
  d.candidate_auc = blob.get_doubles(manifest.get_uint("candidates"));
  if (!blob.at_end()) throw FormatError("trailing bytes in detector", blob.offset());
  return d;
}

std::string verdict_csv(const DetectorModel& detector, std::span<const Verdict> verdicts) {
  std::ostringstream out;
  out << "index,predicted_class";
  for (const auto& n : detector.tap_names) out << ",d_" << n;
  out << ",score,z\n";
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    const Verdict& v = verdicts[i];
    out << i << ',' << v.predicted_class;
    for (double d : v.distances) out << ',' << format_double(d);
    out << ',' << format_double(v.score) << ',' << v.z << '\n';
  }
  return out.str();
}

}  // namespace bater
