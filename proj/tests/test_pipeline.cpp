#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <png.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "m2m/flo.hpp"
#include "m2m/image.hpp"
#include "m2m/interpolate.hpp"
#include "m2m/metrics.hpp"
#include "m2m/ops.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using m2m::diff::Tensor;
using namespace m2m;
using testutil::bits_equal;
using testutil::max_abs_diff;
using testutil::rand_tensor;

namespace {

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() /
             ("m2m_pipeline_test_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir;
}

Tensor quantized_image(int c, int h, int w, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> byte(0, 255);
  std::vector<double> v(static_cast<std::size_t>(c) * h * w);
  for (double& x : v) x = byte(rng) / 255.0;
  return Tensor::from_data({c, h, w}, v);
}

void write_gray16_png(const std::string& path, int h, int w) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  REQUIRE(f != nullptr);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  png_init_io(png, f);
  png_set_IHDR(png, info, w, h, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 2, 0x42);
  for (int y = 0; y < h; ++y) png_write_row(png, row.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

}  // namespace

TEST_CASE("flo round trip is bitwise") {
  auto dir = temp_dir();
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<float> dist(-32.0f, 32.0f);
  std::vector<double> v(2 * 11 * 7);
  for (double& x : v) x = static_cast<double>(dist(rng));
  Tensor flow = Tensor::from_data({2, 11, 7}, v);
  std::string path = (dir / "a.flo").string();
  io::write_flo(path, flow);
  CHECK(bits_equal(io::read_flo(path), flow));

  // the file itself round trips byte for byte
  Tensor again = io::read_flo(path);
  std::string path2 = (dir / "b.flo").string();
  io::write_flo(path2, again);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);
}

TEST_CASE("flo error taxonomy") {
  auto dir = temp_dir();
  SUBCASE("bad magic") {
    std::ofstream out(dir / "bad_magic.flo", std::ios::binary);
    float wrong_magic = 1.25f;
    out.write(reinterpret_cast<const char*>(&wrong_magic), 4);
    std::int32_t d[2] = {2, 2};
    out.write(reinterpret_cast<const char*>(d), 8);
    out.close();
    try {
      io::read_flo((dir / "bad_magic.flo").string());
      FAIL("expected flo_error");
    } catch (const io::flo_error& e) {
      CHECK(e.kind() == io::FloErrorKind::bad_magic);
    }
  }
  SUBCASE("truncated payload") {
    std::ofstream out(dir / "trunc.flo", std::ios::binary);
    float magic = 202021.25f;
    std::int32_t d[2] = {3, 3};
    out.write(reinterpret_cast<const char*>(&magic), 4);
    out.write(reinterpret_cast<const char*>(d), 8);
    float some[5] = {0, 1, 2, 3, 4};
    out.write(reinterpret_cast<const char*>(some), sizeof(some));
    out.close();
    try {
      io::read_flo((dir / "trunc.flo").string());
      FAIL("expected flo_error");
    } catch (const io::flo_error& e) {
      CHECK(e.kind() == io::FloErrorKind::truncated);
    }
  }
  SUBCASE("non-positive dimensions") {
    std::ofstream out(dir / "dims.flo", std::ios::binary);
    float magic = 202021.25f;
    std::int32_t d[2] = {-4, 3};
    out.write(reinterpret_cast<const char*>(&magic), 4);
    out.write(reinterpret_cast<const char*>(d), 8);
    out.close();
    try {
      io::read_flo((dir / "dims.flo").string());
      FAIL("expected flo_error");
    } catch (const io::flo_error& e) {
      CHECK(e.kind() == io::FloErrorKind::bad_dims);
    }
  }
  SUBCASE("missing file") {
    try {
      io::read_flo((dir / "missing.flo").string());
      FAIL("expected flo_error");
    } catch (const io::flo_error& e) {
      CHECK(e.kind() == io::FloErrorKind::io);
    }
  }
}

TEST_CASE("image round trips and depth limits") {
  auto dir = temp_dir();
  std::mt19937_64 rng(62);
  Tensor img = quantized_image(3, 9, 13, rng);

  SUBCASE("ppm binary round trip is bitwise at 8 bits") {
    std::string path = (dir / "img.ppm").string();
    io::write_ppm(path, img);
    CHECK(bits_equal(io::read_ppm(path), img));
  }
  SUBCASE("png is lossless at 8 bits") {
    std::string path = (dir / "img.png").string();
    io::write_png(path, img);
    CHECK(bits_equal(io::read_png(path), img));
  }
  SUBCASE("extreme values map to the byte endpoints") {
    Tensor extremes = Tensor::from_data({3, 1, 2}, {0.0, 1.0, 0.0, 1.0, 0.0, 1.0});
    std::string path = (dir / "ends.ppm").string();
    io::write_ppm(path, extremes);
    Tensor back = io::read_ppm(path);
    CHECK(back.at({0, 0, 0}) == 0.0);
    CHECK(back.at({0, 0, 1}) == 1.0);
  }
  SUBCASE("16-bit inputs are rejected as unsupported depth") {
    std::string p16 = (dir / "deep.png").string();
    write_gray16_png(p16, 4, 4);
    try {
      io::read_png(p16);
      FAIL("expected image_error");
    } catch (const io::image_error& e) {
      CHECK(e.kind() == io::ImageErrorKind::unsupported_depth);
    }
    std::ofstream out(dir / "deep.ppm", std::ios::binary);
    out << "P6\n2 2\n65535\n";
    std::vector<char> payload(2 * 2 * 3 * 2, 0x11);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    out.close();
    try {
      io::read_ppm((dir / "deep.ppm").string());
      FAIL("expected image_error");
    } catch (const io::image_error& e) {
      CHECK(e.kind() == io::ImageErrorKind::unsupported_depth);
    }
  }
}

TEST_CASE("psnr examples") {
  std::mt19937_64 rng(63);
  Tensor a = rand_tensor({3, 8, 8}, 0.0, 1.0, rng);
  CHECK(metrics::psnr(a, a) == 99.0);
  CHECK(metrics::psnr(Tensor::zeros({3, 8, 8}), Tensor::full({3, 8, 8}, 1.0)) ==
        doctest::Approx(0.0));
  Tensor b = diff::add_scalar(Tensor::zeros({1, 4, 4}), 0.1);
  CHECK(metrics::psnr(Tensor::zeros({1, 4, 4}), b) ==
        doctest::Approx(20.0).epsilon(1e-9));
  CHECK_THROWS_AS(metrics::psnr(a, Tensor::zeros({3, 8, 9})),
                  std::invalid_argument);
}

TEST_CASE("ssim matches an independent implementation to 1e-6") {
  std::mt19937_64 rng(64);
  SUBCASE("identical frames give exactly 1") {
    Tensor a = rand_tensor({3, 16, 16}, 0.0, 1.0, rng);
    CHECK(metrics::ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("constant vs constant + 0.1") {
    Tensor a = Tensor::full({3, 16, 16}, 0.4);
    Tensor b = Tensor::full({3, 16, 16}, 0.5);
    CHECK(metrics::ssim(a, b) ==
          doctest::Approx(oracle::reference_ssim(a, b)).epsilon(1e-6));
  }
  SUBCASE("random frames, color and gray") {
    for (int c : {1, 3}) {
      Tensor a = rand_tensor({c, 14, 18}, 0.0, 1.0, rng);
      Tensor b = diff::clamp01(diff::add(a, rand_tensor({c, 14, 18}, -0.3, 0.3, rng)));
      double got = metrics::ssim(a, b);
      double want = oracle::reference_ssim(a, b);
      CHECK(std::fabs(got - want) <= 1e-6);
      CHECK((got >= -1.0 && got <= 1.0));
    }
  }
  SUBCASE("frames below the window size are rejected") {
    Tensor small = Tensor::zeros({3, 8, 8});
    CHECK_THROWS_AS(metrics::ssim(small, small), std::invalid_argument);
  }
}

TEST_CASE("manifest serialization round trips losslessly") {
  pipe::RunManifest m;
  m.set("version", std::string(pipe::kVersion));
  m.set("alpha", 1.25);
  m.set("hole_ratio", 0.00048828125);
  m.set("frames", static_cast<std::uint64_t>(7));
  std::string text = m.serialize();
  pipe::RunManifest parsed = pipe::RunManifest::parse(text);
  CHECK(parsed.serialize() == text);
  CHECK(*parsed.get("alpha") == "1.25");
  auto dir = temp_dir();
  m.save((dir / "manifest.txt").string());
  CHECK(pipe::RunManifest::load((dir / "manifest.txt").string()).serialize() ==
        text);
}

TEST_CASE("replicate_flow jitter pattern") {
  Tensor flow = Tensor::zeros({2, 2, 2});
  auto plain = pipe::replicate_flow(flow, 4, false);
  for (const Tensor& f : plain)
    for (double v : f.data()) CHECK(v == 0.0);
  auto jittered = pipe::replicate_flow(flow, 4, true);
  const double expect[4][2] = {{0.5, 0.5}, {0.5, -0.5}, {-0.5, 0.5}, {-0.5, -0.5}};
  for (int n = 0; n < 4; ++n) {
    CHECK(jittered[n].data()[0] == expect[n][0]);
    CHECK(jittered[n].data()[4] == expect[n][1]);
  }
  auto single = pipe::replicate_flow(flow, 1, true);
  for (double v : single[0].data()) CHECK(v == 0.0);
}

TEST_CASE("interpolation requests validate their inputs") {
  pipe::InterpolationRequest req;
  req.frame0_path = "a.png";
  req.frame1_path = "b.png";
  req.flow01_paths = {"f.flo"};
  req.flow10_paths = {"g.flo"};
  SUBCASE("factor or times required") {
    CHECK_THROWS_AS(req.validate(), std::invalid_argument);
  }
  SUBCASE("times outside (0,1)") {
    req.times = {0.0};
    CHECK_THROWS_AS(req.validate(), std::invalid_argument);
    req.times = {1.0};
    CHECK_THROWS_AS(req.validate(), std::invalid_argument);
  }
  SUBCASE("times must increase") {
    req.times = {0.5, 0.25};
    CHECK_THROWS_AS(req.validate(), std::invalid_argument);
    req.times = {0.25, 0.25};
    CHECK_THROWS_AS(req.validate(), std::invalid_argument);
  }
  SUBCASE("factor resolves to k/n") {
    req.factor = 4;
    req.validate();
    auto ts = req.resolve_times();
    REQUIRE(ts.size() == 3);
    CHECK(ts[0] == doctest::Approx(0.25));
    CHECK(ts[1] == doctest::Approx(0.5));
    CHECK(ts[2] == doctest::Approx(0.75));
  }
}

TEST_CASE("interpolate end to end") {
  auto dir = temp_dir();
  std::mt19937_64 rng(65);
  const int hw = 32;
  Tensor i0 = quantized_image(3, hw, hw, rng);
  Tensor i1 = quantized_image(3, hw, hw, rng);
  io::write_png((dir / "f0.png").string(), i0);
  io::write_png((dir / "f1.png").string(), i1);
  Tensor flow = Tensor::full({2, hw, hw}, 0.6);
  io::write_flo((dir / "f01.flo").string(), flow);
  io::write_flo((dir / "f10.flo").string(), diff::scale(flow, -1.0));

  pipe::InterpolationRequest req;
  req.frame0_path = (dir / "f0.png").string();
  req.frame1_path = (dir / "f1.png").string();
  req.flow01_paths = {(dir / "f01.flo").string()};
  req.flow10_paths = {(dir / "f10.flo").string()};
  req.out_dir = (dir / "out").string();

  SUBCASE("factor 2 emits exactly one frame at t = 0.5") {
    req.factor = 2;
    pipe::InterpolationResult r = pipe::interpolate(req);
    REQUIRE(r.times.size() == 1);
    CHECK(r.times[0] == 0.5);
    CHECK(std::filesystem::exists(dir / "out" / "frame_t0.5.png"));
    CHECK(std::filesystem::exists(dir / "out" / "manifest.txt"));
    for (double v : r.frames[0].data()) CHECK((v >= 0.0 && v <= 1.0));
  }
  SUBCASE("identical frames and zero flows reproduce the input") {
    io::write_png((dir / "same.png").string(), i0);
    io::write_flo((dir / "zero.flo").string(), Tensor::zeros({2, hw, hw}));
    req.frame0_path = (dir / "same.png").string();
    req.frame1_path = (dir / "same.png").string();
    req.flow01_paths = {(dir / "zero.flo").string()};
    req.flow10_paths = {(dir / "zero.flo").string()};
    req.factor = 8;
    req.out_dir.clear();
    pipe::InterpolationResult r = pipe::interpolate(req);
    REQUIRE(r.times.size() == 7);
    for (std::size_t i = 0; i < r.frames.size(); ++i) {
      CHECK(r.hole_ratios[i] == 0.0);
      CHECK(max_abs_diff(r.frames[i], i0) <= 1e-12);
    }
  }
  SUBCASE("ledger: total(n) = shared + n * unshared exactly") {
    std::uint64_t shared = 0, unshared = 0;
    bool first = true;
    for (int n : {1, 2, 8, 16}) {
      pipe::InterpolationRequest rn = req;
      rn.out_dir.clear();
      rn.factor = 0;
      rn.times.clear();
      for (int k = 1; k <= n; ++k)
        rn.times.push_back(static_cast<double>(k) / (n + 1));
      pipe::InterpolationResult r = pipe::interpolate(rn);
      REQUIRE(r.ledger.per_frame().size() == static_cast<std::size_t>(n));
      for (std::uint64_t pf : r.ledger.per_frame())
        CHECK(pf == r.ledger.per_frame()[0]);
      if (first) {
        shared = r.ledger.shared();
        unshared = r.ledger.per_frame()[0];
        first = false;
      }
      CHECK(r.ledger.shared() == shared);  // shared independent of the times
      CHECK(r.ledger.total() == shared + static_cast<std::uint64_t>(n) * unshared);
    }
  }
  SUBCASE("ledger linearity holds with selective refinement enabled") {
    std::uint64_t shared = 0, unshared = 0;
    bool first = true;
    for (int n : {1, 2, 4}) {
      pipe::InterpolationRequest rn = req;
      rn.out_dir.clear();
      rn.ssr_ratio = 0.5;
      rn.patch_side = 8;
      rn.factor = 0;
      for (int k = 1; k <= n; ++k)
        rn.times.push_back(static_cast<double>(k) / (n + 1));
      pipe::InterpolationResult r = pipe::interpolate(rn);
      for (std::uint64_t pf : r.ledger.per_frame())
        CHECK(pf == r.ledger.per_frame()[0]);
      if (first) {
        shared = r.ledger.shared();
        unshared = r.ledger.per_frame()[0];
        first = false;
      }
      CHECK(r.ledger.total() == shared + static_cast<std::uint64_t>(n) * unshared);
    }
  }
  SUBCASE("mismatched resolutions are rejected") {
    io::write_png((dir / "small.png").string(), quantized_image(3, 16, 16, rng));
    req.frame1_path = (dir / "small.png").string();
    req.factor = 2;
    CHECK_THROWS_AS(pipe::interpolate(req), std::invalid_argument);
  }
  SUBCASE("manifest echoes the ledger and hole ratios") {
    req.factor = 4;
    pipe::InterpolationResult r = pipe::interpolate(req);
    CHECK(*r.manifest.get("ledger.frames") == "3");
    CHECK(r.manifest.get("frame[0].hole_ratio") != nullptr);
    CHECK(r.manifest.get("frame[2].unshared_macs") != nullptr);
    CHECK(*r.manifest.get("ledger.total_macs") ==
          std::to_string(r.ledger.total()));
  }
}

TEST_CASE("time formatting matches the file naming contract") {
  CHECK(pipe::format_time(0.125) == "0.125");
  CHECK(pipe::format_time(0.5) == "0.5");
  CHECK(pipe::format_time(0.875) == "0.875");
}
