#include <doctest.h>

#include "lavig/cli.hpp"
#include "lavig/lvgf.hpp"
#include "lavig/metrics.hpp"
#include "test_util.hpp"

using namespace lavig;
using lavig::testing::slurp;
using lavig::testing::TempDir;
using lavig::testing::tree_digest;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"(data.height = 16
data.width = 32
data.time_frames = 8
data.clip_frames = 5
vae.channels = 4,4,8,8
vae.groups = 4
vqvae.channels = 4,4,8,8
vqvae.groups = 4
vqvae.codebook_size = 16
vdit.hidden_dim = 16
vdit.layers = 2
vdit.heads = 2
vdit.t_embed_dim = 8
diffusion.sample_steps = 4
rollout.context_frames = 3
rollout.pred_frames = 1
rollout.steps = 2
train.vae.epochs = 2
train.vae.batch_size = 4
train.vqvae.epochs = 2
train.vqvae.batch_size = 4
train.vdit.epochs = 2
train.finetune.epochs = 2
)";

int run(std::initializer_list<std::string> args) { return cli::run(std::vector<std::string>(args)); }

std::string p(const fs::path& x) { return x.string(); }

/// Every stage of the tiny pipeline into `out`; returns the first non-zero exit code.
int pipeline(const fs::path& cfg, const fs::path& out) {
  const std::string c = p(cfg), o = p(out);
  for (const auto& args : std::vector<std::vector<std::string>>{
           {"gen-data", "--config", c, "--out", o + "/data", "--n-cases", "5"},
           {"gen-data", "--config", c, "--out", o + "/truth", "--n-cases", "5", "--set", "data.clip_frames=6"},
           {"train-vae", "--config", c, "--data", o + "/data", "--out", o + "/vae"},
           {"train-vqvae", "--config", c, "--data", o + "/data", "--out", o + "/vq"},
           {"train-vdit", "--config", c, "--data", o + "/data", "--out", o + "/vd", "--vae", o + "/vae", "--vqvae",
            o + "/vq"},
           {"finetune-ar", "--config", c, "--data", o + "/data", "--out", o + "/ft", "--init", o + "/vd"},
           {"sample", "--config", c, "--ckpt", o + "/ft", "--n", "2", "--seed", "4", "--out", o + "/sample"},
           {"rollout", "--config", c, "--ckpt", o + "/ft", "--context", o + "/data", "--cases", "all", "--seed", "2",
            "--out", o + "/roll"},
           {"eval", "--config", c, "--pred", o + "/roll", "--truth", o + "/truth", "--out", o + "/eval"},
           {"report", "--config", c, "--in", o + "/eval", "--out", o + "/report", "--pred", o + "/roll", "--truth",
            o + "/truth"},
       }) {
    const int rc = cli::run(args);
    if (rc != 0) return rc;
  }
  return 0;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  TempDir dir("cli_usage");
  CHECK(run({}) == cli::kExitUsage);
  CHECK(run({"frobnicate"}) == cli::kExitUsage);
  CHECK(run({"--help"}) == cli::kExitOk);
  CHECK(run({"gen-data", "--out", p(dir / "d")}) == cli::kExitUsage);
  CHECK(run({"gen-data", "--out", p(dir / "d"), "--n-cases", "0"}) == cli::kExitUsage);
  CHECK(run({"gen-data", "--out", p(dir / "d"), "--n-cases", "4", "--set", "no.such.key=1"}) == cli::kExitUsage);
  CHECK(run({"gen-data", "--out", p(dir / "d"), "--n-cases", "4", "--set", "seed"}) == cli::kExitUsage);
  CHECK(run({"gen-data", "--out", p(dir / "d"), "--n-cases", "4", "--config", p(dir / "missing.cfg")}) ==
        cli::kExitUsage);
  CHECK(!fs::exists(dir / "d"));
}

TEST_CASE("gen-data writes deterministic 17-frame clips") {
  TempDir dir("cli_gen");
  REQUIRE(run({"gen-data", "--out", p(dir / "a"), "--n-cases", "3"}) == 0);
  REQUIRE(run({"gen-data", "--out", p(dir / "b"), "--n-cases", "3"}) == 0);
  CHECK(tree_digest(dir / "a") == tree_digest(dir / "b"));
  CHECK(lvgf::load_tensor(dir / "a" / "case_0002_sat.lvgf").shape() == Shape{17, 1, 32, 64});
  CHECK(lvgf::load_tensor(dir / "a" / "norm.lvgf").shape() == Shape{4});
  CHECK(fs::exists(dir / "a" / "config.txt"));
  REQUIRE(run({"gen-data", "--out", p(dir / "c"), "--n-cases", "3", "--set", "seed=8"}) == 0);
  CHECK(slurp(dir / "a" / "case_0000_dp.lvgf") != slurp(dir / "c" / "case_0000_dp.lvgf"));
}

TEST_CASE("missing stage dependencies exit with 2") {
  TempDir dir("cli_deps");
  std::ofstream(dir / "tiny.cfg") << kTiny;
  const std::string c = p(dir / "tiny.cfg"), d = p(dir / "data");
  REQUIRE(run({"gen-data", "--config", c, "--out", d, "--n-cases", "4"}) == 0);
  CHECK(run({"train-vdit", "--config", c, "--data", d, "--out", p(dir / "vd"), "--vqvae", p(dir / "vq")}) ==
        cli::kExitUsage);
  CHECK(run({"train-vdit", "--config", c, "--data", d, "--out", p(dir / "vd"), "--vae", p(dir / "nope"), "--vqvae",
             p(dir / "nope")}) == cli::kExitUsage);
  CHECK(run({"finetune-ar", "--config", c, "--data", d, "--out", p(dir / "ft")}) == cli::kExitUsage);
  CHECK(run({"finetune-ar", "--config", c, "--data", d, "--out", p(dir / "ft"), "--init", p(dir / "nope")}) ==
        cli::kExitUsage);
  CHECK(run({"sample", "--ckpt", p(dir / "nope"), "--n", "1", "--out", p(dir / "s")}) != cli::kExitOk);
}

TEST_CASE("eval of a dataset against itself is perfect") {
  TempDir dir("cli_eval");
  std::ofstream(dir / "tiny.cfg") << kTiny;
  const std::string c = p(dir / "tiny.cfg"), d = p(dir / "data");
  REQUIRE(run({"gen-data", "--config", c, "--out", d, "--n-cases", "4"}) == 0);
  REQUIRE(run({"eval", "--config", c, "--pred", d, "--truth", d, "--plan", "3,1,2", "--out", p(dir / "ev")}) == 0);
  const auto rep = metrics::MetricReport::from_csv(slurp(dir / "ev" / "metrics.csv"));
  CHECK(rep.rows.size() == 20u);
  for (const auto& r : rep.rows) {
    if (r.metric == "MSE") CHECK(r.mean == 0.0);
    if (r.metric == "SSIM") CHECK(r.mean == 1.0);
    if (r.metric == "PSNR") CHECK(r.mean == metrics::kPsnrCap);
  }
  CHECK(slurp(dir / "ev" / "config.txt").find("rollout.steps=2\n") != std::string::npos);

  // Plans longer than the clips, bad plans, and predictions without ground truth.
  CHECK(run({"eval", "--pred", d, "--truth", d, "--plan", "3,1,3", "--out", p(dir / "e2")}) == cli::kExitFailure);
  CHECK(run({"eval", "--pred", d, "--truth", d, "--plan", "3,1", "--out", p(dir / "e2")}) == cli::kExitUsage);
  fs::create_directories(dir / "extra");
  fs::copy_file(dir / "data" / "case_0000_sat.lvgf", dir / "extra" / "case_0009_sat.lvgf");
  fs::copy_file(dir / "data" / "case_0000_dp.lvgf", dir / "extra" / "case_0009_dp.lvgf");
  CHECK(run({"eval", "--pred", p(dir / "extra"), "--truth", d, "--plan", "3,1,2", "--out", p(dir / "e3")}) ==
        cli::kExitFailure);
}

TEST_CASE("the full pipeline is byte-identical across reruns") {
  TempDir dir("cli_pipeline");
  std::ofstream(dir / "tiny.cfg") << kTiny;
  REQUIRE(pipeline(dir / "tiny.cfg", dir / "a") == 0);
  REQUIRE(pipeline(dir / "tiny.cfg", dir / "b") == 0);
  for (const char* sub : {"data", "vae", "vq", "vd", "ft", "sample", "roll", "eval", "report"}) {
    INFO(sub);
    CHECK(tree_digest(dir / "a" / sub) == tree_digest(dir / "b" / sub));
    CHECK(fs::exists(dir / "a" / sub / "config.txt"));
  }

  const fs::path a = dir / "a";
  CHECK(lvgf::load_tensor(a / "roll" / "case_0004_sat.lvgf").shape() == Shape{5, 1, 16, 32});
  CHECK(lvgf::load_tensor(a / "sample" / "case_0001_dp.lvgf").shape() == Shape{5, 1, 16, 32});
  CHECK(fs::exists(a / "roll" / "images" / "case_0004" / "dp_f04.pgm"));
  CHECK(fs::exists(a / "report" / "strips" / "case_0000_sat.pgm"));
  CHECK(slurp(a / "report" / "summary.txt") == slurp(a / "eval" / "summary.txt"));
  // Commands never touch their inputs.
  const std::string before = tree_digest(a / "data");
  REQUIRE(run({"rollout", "--ckpt", p(a / "ft"), "--context", p(a / "data"), "--seed", "2", "--out", p(dir / "r2")}) ==
          0);
  CHECK(tree_digest(a / "data") == before);
  CHECK(run({"rollout", "--ckpt", p(a / "ft"), "--context", p(a / "data"), "--plan", "3,3,1", "--out",
             p(dir / "r3")}) == cli::kExitUsage);
  CHECK(run({"rollout", "--ckpt", p(a / "vd" / "checkpoint"), "--context", p(a / "data"), "--cases", "99", "--out",
             p(dir / "r4")}) == cli::kExitUsage);
}
