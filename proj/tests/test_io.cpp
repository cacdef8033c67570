#include <cmath>
#include <random>

#include "doctest.h"
#include "mtcurv/config.hpp"
#include "mtcurv/error.hpp"
#include "mtcurv/io.hpp"
#include "test_util.hpp"

using namespace mtcurv;

namespace {

Field<float> random_map(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  Field<float> f(h, w);
  for (auto& v : f.storage()) v = u(rng);
  return f;
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("png16 round trip quantises to 1/65535") {
    test::TempDir dir;
    auto f = random_map(13, 21, 1);
    f(0, 0) = -0.5f;
    f(0, 1) = 1.5f;
    io::write_png16(dir.path / "a.png", f);
    const auto g = io::read_png16(dir.path / "a.png");
    REQUIRE(g.height() == 13);
    REQUIRE(g.width() == 21);
    CHECK(g(0, 0) == 0.0f);
    CHECK(g(0, 1) == 1.0f);
    for (std::size_t i = 2; i < f.size(); ++i)
      CHECK(std::abs(g.values()[i] - f.values()[i]) <= 0.5f / 65535 + 1e-7f);
    io::write_png16(dir.path / "b.png", g);
    CHECK(io::read_png16(dir.path / "b.png") == g);
    CHECK(io::read_bytes(dir.path / "a.png") == io::read_bytes(dir.path / "b.png"));
  }

  TEST_CASE("png errors name the path") {
    test::TempDir dir;
    io::write_text(dir.path / "bad.png", "not a png");
    try {
      io::read_png16(dir.path / "bad.png");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("bad.png") != std::string::npos);
    }
    CHECK_THROWS_AS(io::read_png16(dir.path / "missing.png"), DataError);
  }

  TEST_CASE("rgb png") {
    test::TempDir dir;
    std::vector<io::Rgb> px{{255, 0, 0}, {0, 255, 0}, {0, 0, 255}, {10, 20, 30}, {0, 0, 0}, {1, 2, 3}};
    io::write_png_rgb(dir.path / "c.png", 2, 3, px);
    std::size_t h = 0, w = 0;
    const auto back = io::read_png_rgb(dir.path / "c.png", h, w);
    CHECK(h == 2);
    CHECK(w == 3);
    for (std::size_t i = 0; i < px.size(); ++i) {
      CHECK(back[i].r == px[i].r);
      CHECK(back[i].g == px[i].g);
      CHECK(back[i].b == px[i].b);
    }
  }

  TEST_CASE("mtcv layout and corruption") {
    const auto f = random_map(3, 5, 2);
    const auto bytes = io::encode_mtcv(f);
    REQUIRE(bytes.size() == 4 + 1 + 1 + 4 + 4 + 15 * 4);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "MTCV");
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);
    CHECK(bytes[6] == 3);
    CHECK(bytes[10] == 5);
    CHECK(io::decode_mtcv(bytes, "x") == f);

    auto cut = bytes;
    cut.resize(20);
    try {
      io::decode_mtcv(cut, "cut.mtcv");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(e.offset() >= 14);
      CHECK(std::string(e.what()).find("cut.mtcv") != std::string::npos);
    }
    auto magic = bytes;
    magic[1] = 'X';
    CHECK_THROWS_AS(io::decode_mtcv(magic, "m"), DataError);
    auto version = bytes;
    version[4] = 9;
    CHECK_THROWS_AS(io::decode_mtcv(version, "v"), DataError);
    auto extra = bytes;
    extra.push_back(0);
    CHECK_THROWS_AS(io::decode_mtcv(extra, "e"), DataError);

    test::TempDir dir;
    io::write_mtcv(dir.path / "f.mtcv", f);
    CHECK(io::read_mtcv(dir.path / "f.mtcv") == f);
  }
}

TEST_SUITE("config") {
  TEST_CASE("run config round trip") {
    config::RunConfig c;
    c.gen.height = 64;
    c.gen.width = 96;
    c.gen.seed = 11;
    c.gen.set_variant(synthsim::Variant::Complex);
    c.train.lr = 3e-4;
    c.train.max_epochs = 12;
    c.train.patience = 5;
    c.train.loss = losses::LossSpec::preset("huber_grad");
    c.train.loss.huber_delta = 0.2;
    c.train.model.arch = model::Arch::MTCurvNoRes;
    c.train.split_seed = 3;
    const auto j = config::to_json(c);
    CHECK(config::run_config_from_json(j) == c);
    CHECK(config::run_config_from_json(config::json::parse(j.dump())) == c);
    const auto inf = config::to_json(synthsim::GenConfig{.persistence_length = INFINITY});
    CHECK(std::isinf(config::gen_config_from_json(config::json::parse(inf.dump())).persistence_length));
  }

  TEST_CASE("partial overrides keep the base") {
    const auto c = config::run_config_from_json(config::json::parse(
        R"({"train": {"max_epochs": 7, "patience": 3}, "loss": "mse_lap", "model": {"arch": "unet"}})"));
    CHECK(c.train.max_epochs == 7);
    CHECK(c.train.batch_size == 2);
    CHECK(c.train.loss == losses::LossSpec::preset("mse_lap"));
    CHECK(c.train.model.arch == model::Arch::UNet);
    CHECK(c.gen == synthsim::GenConfig{});
  }

  TEST_CASE("bad configs") {
    using config::json;
    CHECK_THROWS_AS(config::run_config_from_json(json::parse(R"({"trian": {}})")), DomainError);
    CHECK_THROWS_AS(config::run_config_from_json(json::parse(R"({"train": {"lr": "fast"}})")),
                    DomainError);
    CHECK_THROWS_AS(config::run_config_from_json(json::parse(R"({"gen": {"image_size": [4]}})")),
                    DomainError);
    CHECK_THROWS_AS(config::run_config_from_json(json::parse(R"({"loss": "ssim"})")), DomainError);
    try {
      config::run_config_from_json(json::parse(R"({"model": {"depht": 3}})"));
      FAIL("expected DomainError");
    } catch (const DomainError& e) {
      CHECK(std::string(e.what()).find("depht") != std::string::npos);
    }
    test::TempDir dir;
    io::write_text(dir.path / "c.json", "{\"train\": ");
    CHECK_THROWS_AS(config::load_run_config(dir.path / "c.json"), DataError);
    CHECK_THROWS_AS(config::load_run_config(dir.path / "none.json"), DataError);
  }
}
