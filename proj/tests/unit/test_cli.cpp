/**
 * Copyright 2026 The signreg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "signreg/cli.hpp"
#include "signreg/evalharness.hpp"

using namespace signreg;
using namespace signreg::cli;
namespace fs = std::filesystem;

namespace {

fs::path workdir(const std::string& name) {
  const char* base = std::getenv("SIGNREG_TEST_WORKDIR");
  const fs::path dir = (base ? fs::path(base) : fs::temp_directory_path() / "signreg_test_cli") / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const auto p = dir / "run.ini";
  std::ofstream(p) << text;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const char* kBase = R"([run]
output_dir = out

[dataset]
kind = blobs
classes = 3
samples_per_class = 12
height = 6
width = 6
separation = 10

[model]
arch = small-mlp
hidden = 8

[train]
epochs = 2
batch_size = 8
)";

const char* kSign = R"(
[strategy]
name = sign
sign_k = 1
sign_step_scale = 0.01

[source]
arch = small-mlp
hidden = 8
epochs = 1
batch_size = 8
)";

struct Streams {
  std::ostringstream out, err;
};

}  // namespace

TEST_CASE("unknown keys and sections are rejected with their name") {
  CHECK_THROWS_WITH_AS(parse_config(std::string(kBase) + "bogus = 1\n"), doctest::Contains("train.bogus"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config(std::string(kBase) + "[extra]\nx = 1\n"), doctest::Contains("extra"), ConfigError);
  CHECK_THROWS_AS(parse_config(std::string(kBase) + "[strategy]\nname = cutout\n"), ConfigError);
}

TEST_CASE("resolved configs parse back to the same text") {
  const auto cfg = parse_config(std::string(kBase) + kSign);
  const auto text = to_ini(cfg);
  CHECK(to_ini(parse_config(text)) == text);
  CHECK(cfg.sign.size() == 1);
  CHECK(cfg.source.has_value());
}

TEST_CASE("config errors exit 1") {
  const auto dir = workdir("config_errors");
  Streams s;
  const auto missing = write_config(dir, "[dataset]\nkind = cifar10\npath = nowhere\n");
  CHECK(cmd_train(missing, s.out, s.err) == kExitConfig);
  CHECK(s.err.str().find("dataset.path") != std::string::npos);

  const auto no_source = write_config(dir, std::string(kBase) + "[strategy]\nname = sign\n");
  CHECK(cmd_train(no_source, s.out, s.err) == kExitConfig);
  CHECK(cmd_train(dir / "absent.ini", s.out, s.err) == kExitConfig);
}

TEST_CASE("zero epochs exits 0 with an empty report") {
  const auto dir = workdir("zero_epochs");
  std::string text = kBase;
  text.replace(text.find("epochs = 2"), 10, "epochs = 0");
  text.replace(text.find("output_dir = out"), 16, "output_dir = " + (dir / "out").string());
  Streams s;
  REQUIRE(cmd_train(write_config(dir, text), s.out, s.err) == kExitOk);
  CHECK(fs::exists(dir / "out" / "model.ckpt"));
  std::ifstream csv(dir / "out" / "train_report.csv");
  std::string header, row;
  std::getline(csv, header);
  CHECK_FALSE(header.empty());
  CHECK_FALSE(std::getline(csv, row));
}

TEST_CASE("train, transform and eval end to end") {
  const auto dir = workdir("end_to_end");
  std::string text = std::string(kBase) + kSign + "\n[eval]\ncorruptions = pixel-off:3, gaussian:0:10\nrepeats = 2\nprojection = true\n";
  text.replace(text.find("output_dir = out"), 16, "output_dir = " + (dir / "out").string());
  const auto cfg = write_config(dir, text);
  Streams s;
  REQUIRE(cmd_train(cfg, s.out, s.err) == kExitOk);
  for (const char* f : {"model.ckpt", "source.ckpt", "sign_train.smpl", "train_report.csv", "train_report.json",
                        "timing.json", "config.resolved.ini"}) {
    CHECK(fs::exists(dir / "out" / f));
  }
  const auto train_smpl = load_samples(dir / "out" / "sign_train.smpl");
  CHECK(train_smpl.size() == 2 * 36);
  CHECK(train_smpl.back().provenance->kind == "sign");
  CHECK(train_smpl.back().provenance->source_checksum ==
        model_checksum(load_checkpoint(dir / "out" / "source.ckpt").model));

  // Rerun into a second directory: the reports are byte-identical.
  std::string again = text;
  again.replace(again.find((dir / "out").string()), (dir / "out").string().size(), (dir / "again").string());
  REQUIRE(cmd_train(write_config(dir / "..", again), s.out, s.err) == kExitOk);
  for (const char* f : {"model.ckpt", "train_report.csv", "train_report.json", "sign_train.smpl"}) {
    CHECK(slurp(dir / "out" / f) == slurp(dir / "again" / f));
  }

  // One sample in, K = 1: original plus one transformed copy.
  std::vector<Sample> one(1);
  one[0].image = Tensor::full({1, 6, 6}, 100.0);
  save_samples(dir / "one.smpl", one);
  REQUIRE(cmd_transform(cfg, dir / "out" / "model.ckpt", (dir / "one.smpl").string(), dir / "t.smpl", s.out, s.err) ==
          kExitOk);
  const auto t = load_samples(dir / "t.smpl");
  REQUIRE(t.size() == 2);
  CHECK(t[1].provenance->k == 1);
  CHECK(fs::exists(dir / "t.smpl.ini"));
  CHECK(cmd_transform(cfg, dir / "nope.ckpt", "test", dir / "u.smpl", s.out, s.err) == kExitConfig);

  std::vector<Sample> wrong(1);
  wrong[0].image = Tensor::full({1, 5, 5}, 1.0);
  save_samples(dir / "wrong.smpl", wrong);
  CHECK(cmd_transform(cfg, dir / "out" / "model.ckpt", (dir / "wrong.smpl").string(), dir / "w.smpl", s.out,
                      s.err) == kExitRuntime);

  Streams e;
  REQUIRE(cmd_eval(cfg, dir / "out" / "model.ckpt", e.out, e.err) == kExitOk);
  CHECK(e.out.str().find("pixel-off:3") != std::string::npos);
  CHECK(e.out.str().find("gaussian:0:10") != std::string::npos);
  const auto recs = read_records_csv((dir / "out" / "eval_samples.csv").string());
  CHECK(recs.size() == 3 * 3);
  CHECK(fs::exists(dir / "out" / "projection.csv"));
  CHECK(slurp(dir / "out" / "eval_report.json").find("\"corruption\"") != std::string::npos);
  CHECK(cmd_eval(cfg, dir / "nope.ckpt", e.out, e.err) == kExitConfig);
}

TEST_CASE("SIGNREG_THREADS overrides the config and is validated") {
  ::setenv(kThreadsEnv, "3", 1);
  CHECK(parse_config(kBase).threads == 3);
  ::setenv(kThreadsEnv, "zero", 1);
  CHECK_THROWS_AS(parse_config(kBase), ConfigError);
  ::unsetenv(kThreadsEnv);
  CHECK(parse_config(kBase).threads == 1);
}

TEST_CASE("repro lists its recipes and rejects unknown names") {
  Streams s;
  CHECK(cmd_repro("nonsense", {}, s.out, s.err) == kExitConfig);
  for (const auto& r : repro_recipes()) CHECK(s.err.str().find(r) != std::string::npos);
}
