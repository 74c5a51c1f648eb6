// Exercises the installed command-line surface: subcommands, exit codes,
// output naming. argv[1] is the CLI binary path.
#include <unistd.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "m2m/flo.hpp"
#include "m2m/image.hpp"
#include "m2m/metrics.hpp"
#include "m2m/mixer.hpp"
#include "m2m/params.hpp"
#include "m2m/tensor.hpp"
#include "test_util.hpp"

namespace {

int g_failures = 0;

void check(bool ok, const std::string& what) {
  std::printf("[%s] %s\n", ok ? "ok" : "FAIL", what.c_str());
  if (!ok) ++g_failures;
}

int run(const std::string& cmd) {
  int status = std::system((cmd + " > cli_stdout.txt 2> cli_stderr.txt").c_str());
  return WEXITSTATUS(status);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: test_cli <cli-binary>\n");
    return 2;
  }
  const std::string cli =
      "'" + std::filesystem::absolute(argv[1]).string() + "'";
  auto dir = std::filesystem::temp_directory_path() /
             ("m2m_cli_test_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  std::filesystem::current_path(dir);

  std::mt19937_64 rng(71);
  const int hw = 16;
  std::uniform_int_distribution<int> byte(0, 255);
  std::vector<double> v0(3 * hw * hw), v1(3 * hw * hw);
  for (double& v : v0) v = byte(rng) / 255.0;
  for (double& v : v1) v = byte(rng) / 255.0;
  m2m::diff::Tensor i0 = m2m::diff::Tensor::from_data({3, hw, hw}, v0);
  m2m::diff::Tensor i1 = m2m::diff::Tensor::from_data({3, hw, hw}, v1);
  m2m::io::write_png("a.png", i0);
  m2m::io::write_png("b.png", i1);
  m2m::io::write_flo("f01.flo", m2m::diff::Tensor::full({2, hw, hw}, 0.7));
  m2m::io::write_flo("f10.flo", m2m::diff::Tensor::full({2, hw, hw}, -0.7));

  // interpolate --factor 8 emits the seven pinned file names
  int rc = run(cli +
               " interpolate --frame0 a.png --frame1 b.png --flow01 f01.flo"
               " --flow10 f10.flo --factor 8 --out out8");
  check(rc == 0, "interpolate --factor 8 exits 0");
  const char* names[] = {"frame_t0.125.png", "frame_t0.25.png",
                         "frame_t0.375.png", "frame_t0.5.png",
                         "frame_t0.625.png", "frame_t0.75.png",
                         "frame_t0.875.png"};
  bool all_named = true;
  int count = 0;
  for (const char* n : names)
    all_named = all_named && std::filesystem::exists("out8/" + std::string(n));
  for (auto& e : std::filesystem::directory_iterator("out8"))
    if (e.path().extension() == ".png") ++count;
  check(all_named && count == 7, "factor 8 writes exactly the 7 named frames");
  check(std::filesystem::exists("out8/manifest.txt"), "manifest written");

  // metrics output matches the library calls
  rc = run(cli + " metrics a.png b.png");
  check(rc == 0, "metrics exits 0");
  {
    char expect[128];
    std::snprintf(expect, sizeof(expect), "psnr_db = %.6f\nssim = %.6f\n",
                  m2m::metrics::psnr(i0, i1), m2m::metrics::ssim(i0, i1));
    check(read_file("cli_stdout.txt") == expect,
          "metrics prints the library psnr/ssim values");
  }

  // validation failures exit 1, I/O failures exit 2
  rc = run(cli + " interpolate --frame0 a.png --frame1 b.png --flow01 f01.flo"
                 " --flow10 f10.flo --factor 8 --out bad --times 0.5");
  check(rc == 1, "conflicting --times/--factor exits 1");
  rc = run(cli + " interpolate --frame0 a.png --frame1 b.png --flow01 nope.flo"
                 " --flow10 f10.flo --factor 2 --out bad");
  check(rc == 2, "missing flow file exits 2");
  rc = run(cli + " interpolate --no-such-flag");
  check(rc == 1, "unknown flag exits 1");
  rc = run(cli + " sweep --frame0 a.png --frame1 b.png --flow01 f01.flo"
                 " --flow10 f10.flo --truth a.png --patch-size 8 --out sw");
  check(rc == 0, "sweep exits 0");
  check(read_file("sw/sweep.csv").rfind("ratio,psnr_db,ssim,unshared_flops\n", 0) == 0,
        "sweep CSV header is pinned");

  // sweep with a trained parameter container (zero-head network: the
  // refined rows must match the unrefined psnr at every ratio)
  {
    std::mt19937_64 prng(5);
    m2m::mixer::PRNConfig cfg;
    cfg.patch_side = 8;
    auto ctx = m2m::mixer::ContextEncoderParams::make(cfg, 3, prng);
    auto prn = m2m::mixer::PRNParams::make(cfg, 3, prng);
    m2m::diff::ParamPack pack;
    prn.register_into(pack, "prn");
    ctx.register_into(pack, "ctx");
    pack.save("prn.m2mp");
    rc = run(cli + " sweep --frame0 a.png --frame1 b.png --flow01 f01.flo"
                   " --flow10 f10.flo --truth a.png --patch-size 8"
                   " --prn-params prn.m2mp --ratios 0 1 --out swp");
    check(rc == 0, "sweep with --prn-params exits 0");
    std::string csv = read_file("swp/sweep.csv");
    std::istringstream lines(csv);
    std::string header, row0, row1;
    std::getline(lines, header);
    std::getline(lines, row0);
    std::getline(lines, row1);
    auto psnr_of = [](const std::string& row) {
      auto a = row.find(','), b = row.find(',', row.find(',') + 1);
      return row.substr(a + 1, b - a - 1);
    };
    check(!row0.empty() && !row1.empty() && psnr_of(row0) == psnr_of(row1),
          "zero-head network sweep leaves psnr unchanged across ratios");
  }

  // selftest runs the full property suite
  rc = run(cli + " selftest --seed 11");
  check(rc == 0, "selftest exits 0");

  std::filesystem::current_path(std::filesystem::temp_directory_path());
  std::filesystem::remove_all(dir);
  if (g_failures == 0) {
    std::printf("cli surface ok\n");
    return 0;
  }
  std::printf("%d cli checks FAILED\n", g_failures);
  return 1;
}
