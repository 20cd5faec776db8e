#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lpaint/archive.hpp"
#include "lpaint/image.hpp"
#include "lpaint/pipeline.hpp"
#include "oracles.hpp"

using namespace lpaint;
namespace fs = std::filesystem;

namespace {

struct Run {
  int status = 0;
  std::string output;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(LPAINT_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
  const int raw = ::pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("invert, edit and zero-step adapt chain") {
    lpaint::testing::TempDir dir;
    const fs::path model = lpaint::testing::model_dir();
    const fs::path image = dir.path / "scene.png";
    spit(image, lpaint::testing::scene_png(21));

    Run r = cli("invert --image " + q(image) + " --checkpoint " + q(model) + " --steps 5 --out " + q(dir.path / "z.arc"));
    REQUIRE(r.status == 0);
    CHECK(r.output.find("psnr") != std::string::npos);
    const LatentCode z = latent_from_archive(Archive::load(dir.path / "z.arc"));

    spit(dir.path / "none.json", "[]");
    r = cli("edit --z " + q(dir.path / "z.arc") + " --ops " + q(dir.path / "none.json") + " --checkpoint " + q(model) +
            " --out " + q(dir.path / "same.arc") + " --render " + q(dir.path / "g.png"));
    REQUIRE(r.status == 0);
    CHECK(latent_from_archive(Archive::load(dir.path / "same.arc")).values == z.values);

    spit(dir.path / "ops.json", nlohmann::json::array({lpaint::testing::block_op("draw", "tree")}).dump());
    r = cli("edit --z " + q(dir.path / "z.arc") + " --ops " + q(dir.path / "ops.json") + " --checkpoint " + q(model) +
            " --out " + q(dir.path / "ze.arc") + " --render " + q(dir.path / "ge.png"));
    REQUIRE(r.status == 0);
    CHECK_FALSE(latent_from_archive(Archive::load(dir.path / "ze.arc")).values == z.values);

    r = cli("adapt --z " + q(dir.path / "ze.arc") + " --image " + q(image) + " --ops " + q(dir.path / "ops.json") +
            " --checkpoint " + q(model) + " --steps 0 --out " + q(dir.path / "a0.png"));
    REQUIRE(r.status == 0);
    CHECK(slurp(dir.path / "a0.png") == slurp(dir.path / "ge.png"));

    r = cli("adapt --z " + q(dir.path / "ze.arc") + " --image " + q(image) + " --ops " + q(dir.path / "ops.json") +
            " --checkpoint " + q(model) + " --steps 5 --out " + q(dir.path / "a5.png") + " --trace " +
            q(dir.path / "trace.csv"));
    REQUIRE(r.status == 0);
    const std::string trace = slurp(dir.path / "trace.csv");
    CHECK(trace.rfind("step,loss\n", 0) == 0);
    CHECK(std::count(trace.begin(), trace.end(), '\n') == 7);
  }

  TEST_CASE("fixtures and eval") {
    lpaint::testing::TempDir dir;
    const fs::path model = lpaint::testing::model_dir();
    Run r = cli("fixtures --checkpoint " + q(model) + " --count 2 --out " + q(dir.path / "fx"));
    REQUIRE(r.status == 0);
    CHECK(list_fixture_dirs(dir.path / "fx").size() == 2);
    r = cli("eval --fixtures " + q(dir.path / "fx") + " --methods naive,laplacian,poisson --out " + q(dir.path / "m.csv"));
    REQUIRE(r.status == 0);
    const std::string csv = slurp(dir.path / "m.csv");
    CHECK(csv.rfind("method,fixture,psnr_out,seam_energy,wall_ms\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
  }

  TEST_CASE("failures exit non-zero with a message") {
    Run r = cli("invert --image /nonexistent.png --checkpoint " + q(lpaint::testing::model_dir()));
    CHECK(r.status == 1);
    CHECK(r.output.rfind("error:", 0) == 0);
    r = cli("invert --image x.png --checkpoint no-such-model");
    CHECK(r.status == 1);
    CHECK(cli("").status != 0);
  }
}
