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

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "signreg/cli.hpp"

namespace cli = signreg::cli;

int main(int argc, char** argv) {
  CLI::App app{"signreg: signed input regularization experiments"};
  app.require_subcommand(1);

  std::string config, checkpoint, input, output, recipe, cifar, out_dir;
  std::uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "Train a model as described by a config");
  train->add_option("config", config, "Experiment config (INI)")->required();

  auto* transform = app.add_subcommand("transform", "Write SIGN-transformed samples with provenance");
  transform->add_option("config", config, "Experiment config (INI)")->required();
  transform->add_option("checkpoint", checkpoint, "Source model checkpoint")->required();
  transform->add_option("input", input, "Sample container, or train / val / test of the configured dataset")
      ->required();
  transform->add_option("output", output, "Output sample container")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("config", config, "Experiment config (INI)")->required();
  eval->add_option("checkpoint", checkpoint, "Model checkpoint")->required();

  std::string recipes;
  for (const auto& r : cli::repro_recipes()) recipes += (recipes.empty() ? "" : ", ") + r;
  auto* repro = app.add_subcommand("repro", "Run a bundled desk-scale protocol");
  repro->add_option("recipe", recipe, "One of: " + recipes)->required();
  repro->add_option("--seed", seed, "Master seed");
  repro->add_option("--cifar", cifar, "CIFAR-10 binary directory (default: synthetic blobs)");
  repro->add_option("--out", out_dir, "Directory for report files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kExitConfig;
  }

  if (*train) return cli::cmd_train(config, std::cout, std::cerr);
  if (*transform) return cli::cmd_transform(config, checkpoint, input, output, std::cout, std::cerr);
  if (*eval) return cli::cmd_eval(config, checkpoint, std::cout, std::cerr);
  cli::ReproOptions options;
  options.seed = seed;
  if (!cifar.empty()) options.cifar_dir = cifar;
  if (!out_dir.empty()) options.output_dir = out_dir;
  return cli::cmd_repro(recipe, options, std::cout, std::cerr);
}
