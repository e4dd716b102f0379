#include <catch_amalgamated.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(ORIENT_CLI) + " " + args + " 2>/dev/null";
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p);
  std::string out;
  std::array<char, 4096> buf;
  while (std::size_t n = fread(buf.data(), 1, buf.size(), p)) out.append(buf.data(), n);
  const int status = pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "orient_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    std::ofstream(d / "tiny.json") << R"({
  "model": {"input_size": 32, "channels": [4, 4, 8, 8]},
  "data": {"num_subjects": 3, "samples_per_subject": 8, "image_size": 32},
  "epochs": 1, "batch_size": 4, "folds": [0]
})";
    return d;
  }();
  return dir;
}

std::string tiny() { return "-c " + (workdir() / "tiny.json").string(); }

}  // namespace

TEST_CASE("usage and configuration errors exit with 2") {
  CHECK(run("").code == 2);
  CHECK(run("train").code == 2);
  CHECK(run("train -c /nonexistent/cfg.json").code == 2);
  CHECK(run("train " + tiny() + " -s model.variant=E").code == 2);
  CHECK(run("train " + tiny() + " -s model.nonsense=1").code == 2);
  CHECK(run("verify --criteria 9").code == 2);
  CHECK(run("--help").code == 0);
}

TEST_CASE("param-count lists every variant") {
  auto r = run("param-count");
  REQUIRE(r.code == 0);
  for (const char* v : {"\nA ", "\nB ", "\nC ", "\nD "}) CHECK(r.out.find(v) != std::string::npos);
}

TEST_CASE("train is reproducible and refuses to overwrite") {
  const fs::path a = workdir() / "run_a", b = workdir() / "run_b";
  REQUIRE(run("train " + tiny() + " -o " + a.string()).code == 0);
  REQUIRE(run("train " + tiny() + " -o " + b.string()).code == 0);
  const std::string csv = slurp(a / "B" / "seed_0" / "metrics.csv");
  CHECK(csv.rfind("fold,epoch,split,", 0) == 0);
  CHECK(csv == slurp(b / "B" / "seed_0" / "metrics.csv"));
  CHECK(slurp(a / "summary.json") == slurp(b / "summary.json"));
  CHECK(fs::exists(a / "config.echo.json"));
  CHECK(run("train " + tiny() + " -o " + a.string()).code == 1);
}

TEST_CASE("gen-data, eval and dump-attn") {
  const fs::path data = workdir() / "data", out = workdir() / "run_eval";
  REQUIRE(run("gen-data " + tiny() + " -o " + data.string()).code == 0);
  CHECK(fs::exists(data / "manifest.json"));
  REQUIRE(run("train " + tiny() + " -o " + out.string()).code == 0);
  const std::string ckpt = (out / "B" / "seed_0" / "fold_0").string();

  auto ev = run("eval " + tiny() + " --checkpoint " + ckpt + " --data " + data.string() + " --subjects 0");
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("samples   8") != std::string::npos);
  CHECK(ev.out.find("accuracy") != std::string::npos);

  auto dump = run("dump-attn " + tiny() + " --checkpoint " + ckpt + ".json --sample 3");
  REQUIRE(dump.code == 0);
  CHECK(dump.out.rfind("block_index,channel,line_index,value\n", 0) == 0);
  std::istringstream is(dump.out);
  std::string line;
  std::getline(is, line);
  std::size_t rows = 0;
  while (std::getline(is, line)) ++rows;
  // block grids 16,8,4,2 at 32px; theta near pi/4 keeps the dominant step at
  // 1, giving 2N-1 lines per channel (widths 4,4,8,8)
  CHECK(rows == 4 * 31 + 4 * 15 + 8 * 7 + 8 * 3);
  CHECK(run("dump-attn " + tiny() + " --checkpoint " + ckpt + " --sample 999").code == 2);
  CHECK(run("eval " + tiny() + " --checkpoint " + (workdir() / "missing").string()).code == 1);
}

TEST_CASE("sweep-theta writes one row per grid value") {
  auto r = run("sweep-theta " + tiny() + " --grid 0.5,1.5");
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("theta,mean_acc,mean_f1\n0.5,", 0) == 0);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 3);
  CHECK(run("sweep-theta " + tiny() + " --grid 0.5,x").code == 2);
}
