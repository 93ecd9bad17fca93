// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>

#include "bater/artifact.hpp"
#include "bater/eval.hpp"

using namespace bater;
namespace fs = std::filesystem;

#ifndef BATER_CLI_PATH
#error "BATER_CLI_PATH must name the bater executable"
#endif

namespace {

const char* kConfig = R"(# small synthetic recipe
[data]
source = synthetic
synth_n = 1200
synth_dim = 10
test_limit = 0
[model]
hidden = 16
[train]
epochs = 15
[attack]
names = fgsm,pgd
grad_passes = 2
[attack.pgd]
steps = 10
[detector]
components = 4
n_ref = 40
pca_rows = 300
[theory]
trials = 20
mc_samples = 500
)";

struct Run {
  int status = -1;
  std::string output;
};

fs::path root() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "bater_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    write_text_file(d / "recipe.cfg", kConfig);
    return d;
  }();
  return dir;
}

Run cli(const std::string& args) {
  const fs::path log = root() / "last.log";
  const std::string cmd = std::string(BATER_CLI_PATH) + " --config " + (root() / "recipe.cfg").string() + " " + args +
                          " > " + log.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  Run r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.output = read_text_file(log);
  return r;
}

std::map<std::string, std::string> checksums(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto bytes = read_binary_file(e.path());
    out[e.path().filename().string()] = hex32(crc32(bytes));
  }
  return out;
}

}  // namespace

TEST_CASE("full synthetic recipe through the command line") {
  const std::string out = "--out " + (root() / "full").string();
  const fs::path dir = root() / "full";
  Run r = cli("train " + out);
  REQUIRE_MESSAGE(r.status == 0, r.output);
  CHECK(artifact_exists(dir / "model"));
  CHECK(fs::exists(dir / "train_curve.csv"));

  r = cli("attack --name pgd " + out);
  REQUIRE_MESSAGE(r.status == 0, r.output);
  CHECK(r.output.find("attack pgd: success") != std::string::npos);

  const auto before = checksums(dir);
  r = cli("detect-fit --attack pgd " + out);
  REQUIRE_MESSAGE(r.status == 0, r.output);
  r = cli("detect-eval --attack pgd " + out);
  REQUIRE_MESSAGE(r.status == 0, r.output);
  CHECK(fs::exists(dir / "roc_pgd_bnn.csv"));
  CHECK(read_text_file(dir / "roc_pgd_bnn.csv").rfind("threshold,fpr,tpr\n", 0) == 0);
  CHECK(read_text_file(dir / "verdicts_pgd_bnn.csv").rfind("index,predicted_class,d_", 0) == 0);

  r = cli("detect-fit --attack pgd --white-box " + out);
  REQUIRE_MESSAGE(r.status == 0, r.output);
  r = cli("detect-eval --attack pgd --detector pgd_last3 " + out);
  REQUIRE_MESSAGE(r.status == 0, r.output);

  // Earlier artifacts are inputs only.
  const auto after = checksums(dir);
  for (const auto& [file, sum] : before) CHECK_MESSAGE(after.at(file) == sum, file);

  r = cli("report " + out);
  REQUIRE_MESSAGE(r.status == 0, r.output);
  const auto rows = parse_report_csv(read_text_file(dir / "report.csv"));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].attack == "pgd");
  CHECK(rows[0].variant == "bnn");
  CHECK(rows[1].variant == "last3");
  for (const auto& row : rows) {
    CHECK(row.auc >= 0.0);
    CHECK(row.auc <= 1.0);
  }
  CHECK(fs::exists(dir / "report.txt"));
  CHECK(read_text_file(dir / "report.csv.meta").find("config_digest = ") == 0);

  SUBCASE("report refuses mixed digests unless forced") {
    r = cli("report --set train.epochs=16 " + out);
    CHECK(r.status == 2);
    CHECK(r.output.find("--force") != std::string::npos);
    r = cli("report --force --set train.epochs=16 " + out);
    CHECK(r.status == 0);
  }

  SUBCASE("acceptance gate sets the exit status") {
    r = cli("report --force --set eval.gate_auc=1.01 " + out);
    CHECK(r.status == 5);
    CHECK(r.output.find("gate failed") != std::string::npos);
  }

  SUBCASE("ablation and theory check") {
    r = cli("ablation " + out);
    REQUIRE_MESSAGE(r.status == 0, r.output);
    CHECK(read_text_file(dir / "ablation.csv").find("auc_bnn") != std::string::npos);
    r = cli("theory-check " + out);
    REQUIRE_MESSAGE(r.status == 0, r.output);
    CHECK(read_text_file(dir / "theory.csv").rfind("lhs,rhs,margin,hold\n", 0) == 0);
  }
}

TEST_CASE("missing dependencies exit with status 3 and name the path") {
  const fs::path dir = root() / "empty";
  const Run r = cli("detect-fit --attack pgd --out " + dir.string());
  CHECK(r.status == 3);
  CHECK(r.output.find(manifest_path(dir / "model").string()) != std::string::npos);
}

TEST_CASE("configuration and usage errors") {
  CHECK(cli("train --set train.nonsense=1 --out " + (root() / "x").string()).status == 2);
  CHECK(cli("train --set train.epochs=-1 --out " + (root() / "x").string()).status == 2);
  CHECK(cli("train --no-such-flag").status != 0);
  CHECK(cli("frobnicate").status != 0);
  CHECK(cli("detect-fit").status != 0);
}

TEST_CASE("same seed gives identical artifacts regardless of worker count") {
  const fs::path a = root() / "seed_a", b = root() / "seed_b";
  for (const auto& [dir, jobs] : {std::pair{a, 1}, std::pair{b, 3}}) {
    const std::string common = " --seed 7 --jobs " + std::to_string(jobs) + " --out " + dir.string();
    Run r = cli("train" + common);
    REQUIRE_MESSAGE(r.status == 0, r.output);
    r = cli("attack --name fgsm" + common);
    REQUIRE_MESSAGE(r.status == 0, r.output);
    r = cli("detect-fit --attack fgsm" + common);
    REQUIRE_MESSAGE(r.status == 0, r.output);
  }
  const auto sa = checksums(a), sb = checksums(b);
  CHECK(sa.size() == sb.size());
  for (const auto& [file, sum] : sa) CHECK_MESSAGE(sb.at(file) == sum, file);
}
