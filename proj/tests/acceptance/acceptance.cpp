// SPDX-License-Identifier: Apache-2.0
// One PASS/FAIL line per acceptance criterion. Criteria 6-11 share one MNIST
// pipeline run; criterion 12 reruns every CLI stage twice on a reduced config.
//
// Usage: acceptance [--only N[,N...]] [--out DIR]

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "bater/artifact.hpp"
#include "bater/attacks.hpp"
#include "bater/config.hpp"
#include "bater/errors.hpp"
#include "bater/eval.hpp"
#include "bater/parallel.hpp"
#include "bater/roc.hpp"
#include "bater/theory.hpp"
#include "bater/wasserstein.hpp"
#include "support.hpp"

using namespace bater;
using namespace bater::testing;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void verdict(int n, bool pass, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", n, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

unsigned hardware_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::string fmt(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double unary_error(const Tensor& at, const std::function<NodeRef(Graph&, NodeRef)>& body) {
  auto value = [&](const Tensor& v) {
    Graph g;
    return g.value(body(g, g.variable(v))).item();
  };
  Graph g;
  const NodeRef v = g.variable(at);
  return finite_difference_error(value, at, g.backprop(body(g, v)).wrt(v));
}

void criterion1() {
  const auto start = Clock::now();
  std::mt19937_64 rng(17);
  Tensor away = random_tensor({3, 4}, rng, 0.2, 1.0);
  for (std::size_t i = 0; i < away.size(); i += 2) away[i] = -away[i];
  const Tensor other = random_tensor({3, 4}, rng);
  const int labels[] = {1, 3, 0};
  const Tensor w = random_tensor({4, 2}, rng), w2 = random_tensor({4, 2}, rng), b = random_tensor({2}, rng);
  std::vector<std::function<NodeRef(Graph&, NodeRef)>> ops = {
      [](Graph& g, NodeRef v) { return g.reduce_sum(g.mul(g.relu(v), g.relu(v))); },
      [&](Graph& g, NodeRef v) { return g.softmax_cross_entropy(v, labels); },
      [&](Graph& g, NodeRef v) { return g.reduce_sum(g.mul(g.add(v, g.constant(other)), g.sub(v, g.constant(other)))); },
      [](Graph& g, NodeRef v) { return g.reduce_sum(g.shift(g.scale(v, 2.5), -1)); },
      [](Graph& g, NodeRef v) { return g.reduce_sum(g.exp(v)); },
      [](Graph& g, NodeRef v) { return g.reduce_sum(g.mul(g.tanh(v), v)); },
      [](Graph& g, NodeRef v) { return g.reduce_sum(g.clamp(g.scale(v, 3), -1.5, 1.5)); },
      [](Graph& g, NodeRef v) { return g.reduce_sum(g.mul(g.row_sum(v), g.row_sum(v))); },
      [](Graph& g, NodeRef v) { return g.l2_norm(v); },
      [&](Graph& g, NodeRef v) { return g.reduce_sum(g.hinge_margin(v, labels, 2.0)); },
      [](Graph& g, NodeRef v) { return g.reduce_sum(g.pairwise_spread(v)); },
      [&](Graph& g, NodeRef v) {
        const NodeRef z = g.affine(v, g.constant(w2), g.constant(b));
        return g.reduce_sum(g.mul(z, z));
      },
  };
  double worst_op = 0.0;
  for (const auto& op : ops) worst_op = std::max(worst_op, unary_error(away, op));
  worst_op = std::max(worst_op, unary_error(w, [&](Graph& g, NodeRef v) {
                        const NodeRef z = g.affine(g.constant(away), v, g.constant(b));
                        return g.reduce_sum(g.mul(z, z));
                      }));
  worst_op = std::max(worst_op, unary_error(b, [&](Graph& g, NodeRef v) {
                        const NodeRef z = g.affine(g.constant(away), g.constant(w), v);
                        return g.reduce_sum(g.mul(z, z));
                      }));

  // ELBO with frozen noise, every parameter block.
  const BnnModel model = small_model({5, 4, 3}, -1.5, 7);
  std::mt19937_64 gen(3);
  const Tensor x = random_tensor({6, 5}, gen, 0.0, 1.0);
  const std::vector<int> y{0, 1, 2, 2, 1, 0};
  Rng nrng(4);
  const std::vector<NetworkNoise> noise{draw_noise(model, nrng), draw_noise(model, nrng)};
  const ElboResult base = elbo_with_noise(x, y, model, noise, 0.01);
  double worst_elbo = 0.0;
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const DenseLayer& layer = model.layers()[l];
    const Tensor* blocks[] = {&layer.weight.mu, &layer.weight.log_std, &layer.bias.mu, &layer.bias.log_std};
    const Tensor* grads[] = {&base.grad.weight_mu[l], &base.grad.weight_log_std[l], &base.grad.bias_mu[l],
                             &base.grad.bias_log_std[l]};
    for (int blk = 0; blk < 4; ++blk) {
      auto loss = [&](const Tensor& v) {
        std::vector<DenseLayer> layers = model.layers();
        Tensor* t = blk == 0 ? &layers[l].weight.mu
                    : blk == 1 ? &layers[l].weight.log_std
                    : blk == 2 ? &layers[l].bias.mu
                               : &layers[l].bias.log_std;
        *t = v;
        return elbo_with_noise(x, y, BnnModel(layers, model.class_count(), model.prior_std()), noise, 0.01).loss;
      };
      worst_elbo = std::max(worst_elbo, finite_difference_error(loss, *blocks[blk], *grads[blk], 1e-5));
    }
  }

  // C&W inner objective in tanh space.
  const BnnModel m = small_model({5, 6, 3}, -2.0, 31);
  const Tensor cx = random_tensor({3, 5}, gen, 0.1, 0.9), cw = random_tensor({3, 5}, gen, -1.0, 1.0);
  const std::vector<int> cy{0, 1, 2};
  const std::vector<double> c{0.5, 2.0, 10.0};
  Rng drng(6);
  const NetworkDraw draw = sample_network(m, drng);
  const CwObjective obj = cw_objective(m, draw, cw, cx, cy, c, 0.5);
  const double worst_cw = finite_difference_error(
      [&](const Tensor& v) { return cw_objective(m, draw, v, cx, cy, c, 0.5).value; }, cw, obj.grad);

  // Restricted-PGD objective with respect to the input under one fixed draw.
  const LossFn rloss = restricted_loss(0.3);
  const double worst_r = unary_error(cx, [&](Graph& g, NodeRef v) { return rloss(g, record_logits(g, v, m, draw), cy); });

  const double t = seconds_since(start);
  verdict(1, worst_op < 1e-5 && worst_elbo < 1e-4 && worst_cw < 1e-5 && worst_r < 1e-5 && t < 60,
          "max rel err ops " + sci(worst_op) + ", ELBO " + sci(worst_elbo) + ", C&W " + sci(worst_cw) +
              ", restricted " + sci(worst_r) + "; " + fmt(t, 1) + " s");
}

std::vector<double> random_multiset(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> size(1, 50), grid(-20, 20);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::vector<double> v(static_cast<std::size_t>(size(rng)));
  const bool ties = rng() % 3 == 0;
  for (double& x : v) x = ties ? grid(rng) * 0.25 : u(rng);
  return v;
}

void criterion2() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  double worst_lp = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_multiset(rng), b = random_multiset(rng);
    worst_lp = std::max(worst_lp, std::abs(wasserstein1(a, b) - transport_lp(a, b)));
  }
  std::size_t axiom_failures = 0;
  std::uniform_real_distribution<double> shift(-5.0, 5.0);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_multiset(rng), b = random_multiset(rng), c = random_multiset(rng);
    const double ab = wasserstein1(a, b), ba = wasserstein1(b, a), ac = wasserstein1(a, c), cb = wasserstein1(c, b);
    bool ok = ab == ba && ab >= 0.0 && wasserstein1(a, a) == 0.0 && ab <= ac + cb + 1e-9;
    // Shift by a multiple of 1/4 so the translated points stay exactly representable.
    const double k = std::round(shift(rng) * 4.0) / 4.0;
    auto moved = [&](std::vector<double> v) {
      for (double& x : v) x += k;
      return v;
    };
    std::vector<double> ga(a.size()), gb(b.size());
    for (std::size_t j = 0; j < a.size(); ++j) ga[j] = std::round(a[j] * 4.0) / 4.0;
    for (std::size_t j = 0; j < b.size(); ++j) gb[j] = std::round(b[j] * 4.0) / 4.0;
    ok = ok && wasserstein1(moved(ga), moved(gb)) == wasserstein1(ga, gb);
    axiom_failures += !ok;
  }
  const double t = seconds_since(start);
  verdict(2, worst_lp < 1e-9 && axiom_failures == 0 && t < 60,
          "max |W1 - LP| " + sci(worst_lp) + " over 1000 pairs, " + std::to_string(axiom_failures) +
              " axiom failures over 1000 triples; " + fmt(t, 1) + " s");
}

void criterion3() {
  const auto start = Clock::now();
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> size(2, 200);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  double worst = 0.0;
  std::size_t transform_failures = 0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = static_cast<std::size_t>(size(rng));
    std::vector<double> s(n);
    std::vector<int> l(n);
    const bool ties = i % 4 == 0;
    for (std::size_t j = 0; j < n; ++j) {
      s[j] = ties ? std::round(u(rng) * 2.0) : u(rng);
      l[j] = static_cast<int>(rng() % 2);
    }
    l[0] = 0;
    l[1] = 1;
    const double auc = roc_auc(s, l).auc;
    worst = std::max(worst, std::abs(auc - pairwise_auc(s, l)));
    std::vector<double> t(n);
    for (std::size_t j = 0; j < n; ++j) t[j] = std::exp(3.0 * s[j]) + 7.0;
    transform_failures += roc_auc(t, l).auc != auc;
  }
  const double secs = seconds_since(start);
  verdict(3, worst < 1e-12 && transform_failures == 0 && secs < 60,
          "max |AUC - pairwise| " + sci(worst) + " over 200 sets, " + std::to_string(transform_failures) +
              " monotone-transform mismatches; " + fmt(secs, 1) + " s");
}

void criterion4() {
  const auto start = Clock::now();
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> mu(-2.0, 2.0), s(-3.0, 1.0);
  int bad = 0;
  double worst_z = 0.0;
  for (int i = 0; i < 20; ++i) {
    const double m = mu(rng), ls = s(rng);
    const double closed = kl_to_prior({Tensor::vector({m}), Tensor::vector({ls})}, 1.0);
    const auto [est, se] = mc_kl(m, ls, 1.0, 1000000, 100 + i);
    const double z = std::abs(closed - est) / se;
    worst_z = std::max(worst_z, z);
    bad += z > 3.0;
  }
  const double t = seconds_since(start);
  verdict(4, bad == 0 && t < 60,
          std::to_string(20 - bad) + "/20 settings within 3 SE (worst " + fmt(worst_z, 2) + " SE); " + fmt(t, 1) + " s");
}

void criterion5() {
  const auto start = Clock::now();
  FamilySpec f;
  const PropositionReport r = verify_proposition(f, 500, 10000, 5);
  const double t = seconds_since(start);
  verdict(5, r.hold_rate >= 0.95 && t < 300,
          "hold rate " + fmt(r.hold_rate) + " over 500 trials, median margin " + fmt(r.median_margin, 5) + "; " +
              fmt(t, 1) + " s");
}

const ReportRow* find_row(const std::vector<ReportRow>& rows, const std::string& attack, const std::string& variant) {
  for (const auto& r : rows)
    if (r.attack == attack && r.variant == variant) return &r;
  return nullptr;
}

void mnist_criteria(const std::set<int>& wanted, const fs::path& out) {
  if (std::none_of(wanted.begin(), wanted.end(), [](int n) { return n >= 6 && n <= 11; })) return;
  RunConfig cfg;
  cfg.set("run.jobs", std::to_string(hardware_jobs()));
  set_max_jobs(static_cast<unsigned>(cfg.get_uint("run.jobs")));
  const auto start = Clock::now();
  const Dataset data = prepare_dataset(cfg);
  RunConfig full = cfg;
  full.set("data.test_limit", "0");
  const Dataset all_test = prepare_dataset(full);
  const BnnModel model = train_model(cfg, data, LayerKind::variational);
  const double train_secs = seconds_since(start);
  const double acc = accuracy(model, all_test.test, prediction_rule(cfg, model));
  if (wanted.count(6))
    verdict(6, acc >= 0.95 && train_secs <= 900,
            "test accuracy " + fmt(acc, 4) + " on " + std::to_string(all_test.test.size()) + " points, trained in " +
                fmt(train_secs, 0) + " s");
  if (!(wanted.count(7) || wanted.count(8) || wanted.count(9) || wanted.count(10) || wanted.count(11))) return;

  BenchmarkOptions opt;
  opt.model = model;
  opt.ablation = wanted.count(9) > 0;
  opt.out_dir = out;
  fs::create_directories(out);
  const BenchmarkResult res = run_benchmark(cfg, opt);
  const double total = seconds_since(start);
  write_text_file(out / "acceptance_report.txt", report_table(res.report.rows));

  auto batch = [&](const std::string& name) -> const AdvBatch& {
    for (const auto& [n, b] : res.batches)
      if (n == name) return b;
    throw ContractError("no batch for " + name);
  };
  auto mean_l2 = [](const AdvBatch& b) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < b.size(); ++i)
      if (b.adversarial[i]) s += b.l2[i], ++n;
    return n ? s / static_cast<double>(n) : 0.0;
  };
  const AdvBatch &fgsm = batch("fgsm"), &pgd = batch("pgd"), &cw0 = batch("cw0");
  verdict(7,
          pgd.success_rate() >= 0.85 && fgsm.success_rate() >= 0.5 && cw0.success_rate() >= 0.9 &&
              mean_l2(cw0) < mean_l2(fgsm),
          "success PGD " + fmt(pgd.success_rate()) + ", FGSM " + fmt(fgsm.success_rate()) + ", C&W k=0 " +
              fmt(cw0.success_rate()) + "; mean rms l2 C&W " + fmt(mean_l2(cw0), 4) + " vs FGSM " +
              fmt(mean_l2(fgsm), 4));

  const ReportRow *r_pgd = find_row(res.report.rows, "pgd", "bnn"), *r_fgsm = find_row(res.report.rows, "fgsm", "bnn"),
                  *r_cw0 = find_row(res.report.rows, "cw0", "bnn"), *r_cw10 = find_row(res.report.rows, "cw10", "bnn");
  verdict(8, r_pgd->auc >= 0.90 && r_fgsm->auc >= 0.90 && r_cw0->auc >= 0.85 && total <= 1800,
          "AUC PGD " + fmt(r_pgd->auc) + ", FGSM " + fmt(r_fgsm->auc) + ", C&W k=0 " + fmt(r_cw0->auc) +
              "; full pipeline " + fmt(total, 0) + " s");

  if (res.ablation) {
    const double diff = res.ablation->mean_bnn - res.ablation->mean_dnn;
    verdict(9, diff >= 0.03,
            "mean per-class AUC BNN " + fmt(res.ablation->mean_bnn) + " vs twin " + fmt(res.ablation->mean_dnn) +
                " (difference " + fmt(diff) + ")");
  }

  const ReportRow *wb_pgd = find_row(res.report.rows, "pgd", "last3"), *wb_r = find_row(res.report.rows, "rpgd", "last3");
  const BnnModel& m = *opt.model;
  const std::vector<std::size_t> final_tap{m.logit_tap()};
  auto adversarial_rows = [](const AdvBatch& b) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < b.size(); ++i)
      if (b.adversarial[i]) idx.push_back(i);
    return b.perturbed.gather_rows(idx);
  };
  const AdvBatch& rpgd = batch("rpgd");
  const double std_pgd = median(activation_std_profile(m, adversarial_rows(pgd), final_tap, 4, 5)[0]);
  const double std_r = median(activation_std_profile(m, adversarial_rows(rpgd), final_tap, 4, 5)[0]);
  verdict(10, wb_r->auc < wb_pgd->auc && std_r < std_pgd,
          "last-three-tap AUC restricted PGD " + fmt(wb_r->auc) + " vs PGD " + fmt(wb_pgd->auc) +
              "; median final-layer std " + fmt(std_r, 4) + " vs " + fmt(std_pgd, 4));

  verdict(11, r_cw10->auc >= r_cw0->auc - 0.05,
          "AUC C&W k=10 " + fmt(r_cw10->auc) + " vs k=0 " + fmt(r_cw0->auc) + " (k=20 " +
              fmt(find_row(res.report.rows, "cw20", "bnn")->auc) + ")");
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(BATER_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

void criterion12(const fs::path& out) {
  const auto start = Clock::now();
  const fs::path root = out / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  // Reduced MNIST recipe so that every stage runs twice in a few minutes.
  write_text_file(root / "reduced.cfg",
                  "[data]\ntest_limit = 300\n[model]\nhidden = 64\n[train]\nepochs = 2\n[attack]\n"
                  "names = fgsm,pgd,cw0,rpgd\ngrad_passes = 2\n[attack.pgd]\nsteps = 5\n[attack.cw]\nsteps = 10\n"
                  "binary_search_steps = 2\n[detector]\nn_ref = 40\npca_rows = 300\n[theory]\ntrials = 20\n"
                  "mc_samples = 500\n");
  const std::vector<std::string> stages = {"train",
                                           "train --twin",
                                           "attack --name all",
                                           "detect-fit --attack pgd",
                                           "detect-fit --attack pgd --white-box",
                                           "detect-eval --attack pgd",
                                           "detect-eval --attack rpgd --detector pgd_last3",
                                           "ablation",
                                           "theory-check",
                                           "report"};
  std::string failed;
  for (const char* run : {"a", "b"}) {
    const std::string common = " --config " + (root / "reduced.cfg").string() + " --seed 11 --out " +
                               (root / run).string() + " --jobs " + (run[0] == 'a' ? "1" : std::to_string(std::max(3u, hardware_jobs())));
    for (const auto& stage : stages)
      if (run_cli(stage + common, root / "stage.log") != 0 && failed.empty())
        failed = stage + ": " + read_text_file(root / "stage.log");
  }
  std::size_t files = 0, differing = 0;
  std::string first_diff;
  if (failed.empty())
    for (const auto& e : fs::directory_iterator(root / "a")) {
      ++files;
      const fs::path twin = root / "b" / e.path().filename();
      if (!fs::exists(twin) || read_binary_file(e.path()) != read_binary_file(twin)) {
        ++differing;
        if (first_diff.empty()) first_diff = e.path().filename().string();
      }
    }
  const double t = seconds_since(start);
  if (!failed.empty()) {
    verdict(12, false, "stage failed: " + failed);
    return;
  }
  verdict(12, differing == 0 && files > 0,
          std::to_string(files) + " artifacts from " + std::to_string(stages.size()) + " stages compared, " +
              std::to_string(differing) + " differ" + (first_diff.empty() ? "" : " (first: " + first_diff + ")") +
              "; " + fmt(t, 0) + " s");
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  fs::path out = fs::temp_directory_path() / "bater_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::stringstream list(argv[++i]);
      std::string item;
      while (std::getline(list, item, ',')) wanted.insert(std::stoi(item));
    } else if (arg == "--out" && i + 1 < argc) {
      out = argv[++i];
    } else {
      std::fprintf(stderr, "usage: acceptance [--only N[,N...]] [--out DIR]\n");
      return 2;
    }
  }
  if (wanted.empty())
    for (int n = 1; n <= 12; ++n) wanted.insert(n);

  try {
    if (wanted.count(1)) criterion1();
    if (wanted.count(2)) criterion2();
    if (wanted.count(3)) criterion3();
    if (wanted.count(4)) criterion4();
    if (wanted.count(5)) criterion5();
    mnist_criteria(wanted, out / "mnist");
    if (wanted.count(12)) criterion12(out);
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance run aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
