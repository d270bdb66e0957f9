#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vaebo/config.hpp"
#include "vaebo/error.hpp"
#include "vaebo/pipeline.hpp"

using namespace vaebo;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("vaebo_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

config::RunConfig tiny_config() {
  auto flat = config::FlatConfig::parse(R"(
mesh.width = 8
mesh.height = 8
mesh.segments = 2
sim.n_steps = 120
lead.n_leads = 16
datagen.count = 40
vae.hidden = 16
vae.epochs = 2
vae.batch_size = 10
bo.budget = 6
bo.n_init = 3
bo.candidate_count = 64
bo.restarts = 1
experiment.cases = 2
experiment.methods = ei,fs
)");
  return config::RunConfig::from_flat(flat);
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("flat parsing") {
    const auto c = config::FlatConfig::parse("# comment\nrun.seed = 5\n\n  bo.budget=20  # trailing\n");
    CHECK(c.values().at("run.seed") == "5");
    CHECK(c.values().at("bo.budget") == "20");
    CHECK_THROWS_WITH_AS(config::FlatConfig::parse("run.seed = 1\nnonsense\n"), doctest::Contains("line 2"),
                         std::invalid_argument);
    CHECK_THROWS_AS(config::FlatConfig::parse("seed = 1\n"), std::invalid_argument);
    CHECK_THROWS_AS(config::FlatConfig::parse("run.seed = 1\nrun.seed = 2\n"), std::invalid_argument);
  }

  TEST_CASE("assignments override values") {
    auto c = config::FlatConfig::parse("bo.budget = 20\n");
    c.set_assignment("bo.budget=30");
    CHECK(config::RunConfig::from_flat(c).bo.budget == 30);
    CHECK_THROWS_AS(c.set_assignment("bo.budget"), std::invalid_argument);
  }

  TEST_CASE("typed conversion") {
    const auto cfg = config::RunConfig::from_flat(config::FlatConfig::parse(
        "run.seed = 9\nbo.acquisition = ei_postk\nnoise.snr_db = inf\nexperiment.methods = ei, fs\nsim.stim_nodes = 0,3\n"));
    CHECK(cfg.seed == 9);
    CHECK(cfg.bo.acquisition == bayesopt::Acquisition::ei_postk);
    CHECK(std::isinf(cfg.snr_db));
    CHECK(cfg.experiment.methods == std::vector<std::string>{"ei", "fs"});
    CHECK(cfg.ap.stim_nodes == std::vector<int>{0, 3});
    CHECK_THROWS_AS(config::RunConfig::from_flat(config::FlatConfig::parse("bo.nonsense = 1\n")), std::invalid_argument);
    CHECK_THROWS_AS(config::RunConfig::from_flat(config::FlatConfig::parse("bo.budget = many\n")), std::invalid_argument);
  }

  TEST_CASE("round trip through text") {
    const auto cfg = tiny_config();
    const auto again = config::RunConfig::from_flat(config::FlatConfig::parse(cfg.to_flat().to_text()));
    CHECK(again.to_flat().to_text() == cfg.to_flat().to_text());
  }

  TEST_CASE("validation") {
    auto cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.bo.n_init = 10;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.ap.dt = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.experiment.methods = {"nope"};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK(config::is_method("fs"));
    CHECK(config::is_method("ei_isotropic"));
    CHECK_FALSE(config::is_method("bo"));
  }
}

TEST_SUITE("pipeline") {
  TEST_CASE("graymap round trip") {
    pipeline::Image img{3, 2, {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}};
    const auto back = pipeline::image_from_pgm(pipeline::image_to_pgm(img));
    CHECK(back.width == 3);
    CHECK(back.height == 2);
    for (int i = 0; i < 6; ++i) CHECK(std::abs(back.values[i] - img.values[i]) <= 0.5 / 255 + 1e-12);
    CHECK_THROWS(pipeline::image_from_pgm("P5\n1 1\n255\n0\n"));
  }

  TEST_CASE("median") {
    CHECK(pipeline::median({3, 1, 2}) == 2.0);
    CHECK(pipeline::median({4, 1, 3, 2}) == 2.5);
    CHECK(pipeline::median({1, std::nan(""), 3}) == 2.0);
    CHECK(std::isnan(pipeline::median({})));
  }

  TEST_CASE("metadata sidecars and fingerprints") {
    const auto dir = fresh_dir("meta");
    const std::string artifact = (dir / "thing.bin").string();
    pipeline::write_meta(artifact, {"dataset", "abc", 7, {{"scale_low", 0.15}}});
    const auto m = pipeline::read_meta(artifact);
    CHECK(m.kind == "dataset");
    CHECK(m.seed == 7);
    CHECK(m.extra.at("scale_low") == 0.15);
    CHECK_NOTHROW(pipeline::check_fingerprint(m, "abc", "dataset"));
    CHECK_THROWS_AS(pipeline::check_fingerprint(m, "xyz", "dataset"), FingerprintMismatch);
    CHECK_THROWS_AS(pipeline::read_meta((dir / "missing.bin").string()), CorruptFile);
  }

  TEST_CASE("phantoms are reproducible and sized within the range") {
    const auto cfg = tiny_config();
    const auto mesh = pipeline::build_mesh(cfg);
    const auto fwd = pipeline::build_forward(cfg, mesh);
    const auto a = pipeline::make_phantom(cfg, mesh, fwd, 1);
    const auto b = pipeline::make_phantom(cfg, mesh, fwd, 1);
    CHECK(a.truth == b.truth);
    CHECK(a.measured.y == b.measured.y);
    CHECK(a.size_fraction >= cfg.experiment.size_min);
    CHECK(a.size_fraction <= cfg.experiment.size_max);
    CHECK(pipeline::make_phantom(cfg, mesh, fwd, 0).truth != a.truth);
  }

  TEST_CASE("small experiment writes one row per case and method") {
    const auto cfg = tiny_config();
    const auto mesh = pipeline::build_mesh(cfg);
    const auto data = pipeline::build_dataset(cfg, mesh);
    const auto model = pipeline::train_vae(cfg, data);
    pipeline::ExperimentInputs inputs;
    inputs.model = &model;
    const auto dir = fresh_dir("experiment");
    const auto r = pipeline::run_experiment(cfg, inputs, dir.string());
    REQUIRE(r.rows.size() == 4);
    CHECK(r.rows[0].case_index == 0);
    CHECK(r.rows[0].method == "ei");
    CHECK(r.rows[1].method == "fs");
    for (const auto& row : r.rows) {
      CHECK(row.error.empty());
      CHECK(row.eval_count == cfg.bo.budget);
    }
    std::ifstream csv(dir / "results.csv");
    std::string line;
    int lines = 0;
    while (std::getline(csv, line)) ++lines;
    CHECK(lines == 5);
    CHECK(fs::exists(dir / "summary.json"));
    CHECK(fs::exists(dir / "images" / "case000_truth.pgm"));
    CHECK(fs::exists(dir / "logs" / "case001_fs.jsonl"));
    CHECK(pipeline::rows_to_csv(r.rows).find("case,method") == 0);
  }
}
