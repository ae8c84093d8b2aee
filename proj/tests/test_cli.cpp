// Copyright (c) 2026 The mrfcount Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "mrf/config.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "mrf_test_cli";

struct Run {
  int code;
  std::string output;
};

Run mrfcount(const std::string& args) {
  fs::create_directories(kRoot);
  const auto log = kRoot / "out.txt";
  const std::string cmd = std::string("\"") + MRF_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string p(const fs::path& x) { return "\"" + x.string() + "\""; }

}  // namespace

TEST_CASE("synth writes a deterministic dataset") {
  fs::remove_all(kRoot);
  const auto a = kRoot / "a", b = kRoot / "b";
  REQUIRE(mrfcount("synth --images 5 --size 96 --count 5..30 --seed 7 --out " + p(a)).code == 0);
  REQUIRE(mrfcount("synth --images 5 --size 96 --count 5..30 --seed 7 --out " + p(b)).code == 0);
  std::size_t images = 0;
  for (const auto& e : fs::directory_iterator(a / "images")) {
    ++images;
    CHECK(slurp(e.path()) == slurp(b / "images" / e.path().filename()));
  }
  CHECK(images == 5);
  CHECK(slurp(a / "annotations.txt") == slurp(b / "annotations.txt"));

  const auto z = kRoot / "z";
  REQUIRE(mrfcount("synth --images 3 --size 64 --count 0..0 --out " + p(z)).code == 0);
  std::ifstream in(z / "annotations.txt");
  for (std::string line; std::getline(in, line);) CHECK(std::count(line.begin(), line.end(), '\t') == 3);
}

TEST_CASE("usage errors and exit codes") {
  CHECK(mrfcount("").code == 1);
  CHECK(mrfcount("frobnicate").code == 1);
  CHECK(mrfcount("synth --images 3").code == 1);
  CHECK(mrfcount("synth --count 9..2 --out " + p(kRoot / "bad")).code == 1);
  CHECK(mrfcount("check --suite nope").code == 1);
  CHECK(mrfcount("eval --config " + p(kRoot / "missing.cfg") + " --zero-model").code == 1);
  std::ofstream(kRoot / "typo.cfg") << "learning_rate = 0.1\n";
  auto r = mrfcount("eval --config " + p(kRoot / "typo.cfg") + " --zero-model");
  CHECK(r.code == 1);
  CHECK(r.output.find("learning_rate") != std::string::npos);
  std::ofstream(kRoot / "ok.cfg") << "seed = 1\n";
  CHECK(mrfcount("eval --config " + p(kRoot / "ok.cfg")).code == 1);  // neither checkpoint nor zero model
}

TEST_CASE("check suites pass") {
  auto r = mrfcount("check --suite shapes");
  CHECK(r.code == 0);
  CHECK(r.output.find("FAIL") == std::string::npos);
  CHECK(mrfcount("check --suite invariants").code == 0);
}

TEST_CASE("train, eval and predict round trip") {
  const auto data = kRoot / "data";
  REQUIRE(mrfcount("synth --images 40 --size 128 --count 5..25 --seed 3 --out " + p(data)).code == 0);
  const auto cfg = kRoot / "tiny.cfg";
  std::ofstream(cfg) << "base_width = 8\nrm_per_phase = 1,1,1\n"
                     << "train_annotations = " << (data / "annotations.txt").string() << "\n"
                     << "test_annotations = " << (data / "annotations.txt").string() << "\n"
                     << "samples = 64\nbatch_size = 8\nepochs = 2\nseed = 5\n"
                     << "out_dir = " << (kRoot / "run").string() << "\n";

  // The echoed configuration parses back to the same settings.
  auto zero = mrfcount("eval --threads 1 --config " + p(cfg) + " --zero-model");
  REQUIRE(zero.code == 0);
  const auto echoed = zero.output.substr(0, zero.output.find("images\t"));
  CHECK(mrf::parse_run_config(echoed) == mrf::load_run_config(cfg));

  // The zero predictor's error is the mean ground-truth count.
  double mean = 0;
  {
    std::ifstream in(data / "annotations.txt");
    std::size_t n = 0;
    for (std::string line; std::getline(in, line); ++n) {
      const auto last = line.rfind('\t');
      const std::string pts = line.substr(last + 1);
      mean += pts.empty() ? 0 : static_cast<double>(std::count(pts.begin(), pts.end(), ';') + 1);
    }
    mean /= static_cast<double>(n);
  }
  const auto mae_at = zero.output.find("MAE\t");
  REQUIRE(mae_at != std::string::npos);
  const double zero_mae = std::stod(zero.output.substr(mae_at + 4));
  CHECK(zero_mae == doctest::Approx(mean).epsilon(1e-12));
  CHECK(zero_mae == doctest::Approx(15.0).epsilon(0.15));

  auto train = mrfcount("train --threads 1 --config " + p(cfg));
  REQUIRE(train.code == 0);
  CHECK(fs::exists(kRoot / "run" / "best.ckpt"));
  CHECK(fs::exists(kRoot / "run" / "train.log"));

  auto ev = mrfcount("eval --config " + p(cfg) + " --checkpoint " + p(kRoot / "run" / "best.ckpt"));
  REQUIRE(ev.code == 0);
  const double trained_mae = std::stod(ev.output.substr(ev.output.find("MAE\t") + 4));
  INFO("trained " << trained_mae << " vs zero " << zero_mae);
  CHECK(trained_mae < zero_mae);

  REQUIRE(mrfcount("predict --config " + p(cfg) + " --checkpoint " + p(kRoot / "run" / "final.ckpt")).code == 0);
  std::ifstream dump(kRoot / "run" / "predictions.tsv");
  std::size_t lines = 0;
  std::string last;
  for (std::string l; std::getline(dump, l); ++lines) last = l;
  CHECK(lines == 41);
  CHECK(last.rfind("MAE\t", 0) == 0);

  // A checkpoint from a different architecture is rejected with both values named.
  const auto wide = kRoot / "wide.cfg";
  {
    std::string text = slurp(cfg);
    text.replace(text.find("base_width = 8"), 14, "base_width = 16");
    std::ofstream(wide) << text;
  }
  auto mismatch = mrfcount("eval --config " + p(wide) + " --checkpoint " + p(kRoot / "run" / "best.ckpt"));
  CHECK(mismatch.code == 2);
  CHECK(mismatch.output.find("base_width") != std::string::npos);
  CHECK(mismatch.output.find("16") != std::string::npos);
}
