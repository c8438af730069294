// Black-box contract tests for the command-line tool. The binary under test
// comes from the CTFR_CLI environment variable (set by the test harness), and
// every case works through a real on-disk pipeline in a scratch directory:
// gen-data -> train -> embed -> index, then the query-side commands.
//
// The corpus here is regenerated in-process with the exact config the CLI
// sees, which is how the cases learn valid caption/image ids for the held-out
// split without parsing binary artifacts.

#include <sys/wait.h>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ctfr/model.hpp"
#include "ctfr/synthetic.hpp"
#include "ctfr/training.hpp"
#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunOutcome {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  for (std::string line; std::getline(ss, line);)
    if (!line.empty()) out.push_back(line);
  return out;
}

// Runs `<binary> <args>` through the shell, capturing exit code and both
// streams via temp files (portable enough for a test, and keeps stderr and
// stdout strictly separate, which several cases assert on).
RunOutcome run_cli(const std::string& args, const fs::path& scratch) {
  const char* bin = std::getenv("CTFR_CLI");
  REQUIRE_MESSAGE(bin != nullptr, "CTFR_CLI must point at the built binary");
  const fs::path out_path = scratch / "stdout.txt";
  const fs::path err_path = scratch / "stderr.txt";
  const std::string cmd = std::string("\"") + bin + "\" " + args + " > " + out_path.string() +
                          " 2> " + err_path.string();
  const int status = std::system(cmd.c_str());
  RunOutcome r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out_path);
  r.err = read_file(err_path);
  return r;
}

// One shared pipeline, built lazily by the first case that needs it. Twelve
// images split 8/1/3 keeps every command under a second while still giving
// the held-out split several captions per direction.
struct Pipeline {
  fs::path dir;
  fs::path config;
  ctfr::Corpus corpus;                       // regenerated in-process
  std::vector<std::string> test_caption_ids; // queries for audio -> image
  std::vector<std::string> test_image_ids;   // targets (and reverse queries)
  bool built = false;
};

ctfr::CorpusConfig cli_corpus_config() {
  ctfr::CorpusConfig cfg;
  cfg.num_images = 12;
  cfg.captions_per_image = 2;
  cfg.num_concepts = 6;
  cfg.concepts_per_image = 2;
  cfg.signal_len = 24;
  cfg.roi_count = 4;
  cfg.roi_feature_dim = 6;
  cfg.noise_std = 0.05;
  cfg.seed = 5;  // must match the top-level seed in the config file
  cfg.split_counts = {{8, 1, 3}};
  return cfg;
}

ctfr::ModelConfig cli_model_config() {
  auto cfg = ctfr::ModelConfig::micro();
  return cfg;
}

Pipeline& pipeline() {
  static Pipeline p;
  if (p.built) return p;

  p.dir = fs::temp_directory_path() / "ctfr_cli_suite";
  fs::remove_all(p.dir);
  fs::create_directories(p.dir);

  auto corpus_cfg = cli_corpus_config();
  auto model_cfg = cli_model_config();
  ctfr::TrainConfig train_cfg;
  train_cfg.epochs = 2;
  train_cfg.batch_size = 2;
  train_cfg.seed = 5;

  json doc;
  doc["seed"] = 5;
  doc["model"] = json::parse(ctfr::to_json(model_cfg));
  doc["corpus"] = json::parse(ctfr::to_json(corpus_cfg));
  doc["train"] = json::parse(ctfr::to_json(train_cfg));
  doc["retrieval"] = {{"mode", "ctf"},      {"k", 3},        {"k_c", 3},
                      {"repeats", 2},       {"split", "test"}, {"direction", "audio_to_image"}};
  doc["paths"] = {{"corpus_dir", (p.dir / "corpus").string()},
                  {"checkpoint", (p.dir / "model.ckpt").string()},
                  {"history", (p.dir / "history.csv").string()},
                  {"audio_encodings", (p.dir / "audio.enc").string()},
                  {"image_encodings", (p.dir / "image.enc").string()},
                  {"index", (p.dir / "targets.idx").string()},
                  {"metrics", (p.dir / "metrics.json").string()},
                  {"bench", (p.dir / "bench.json").string()}};
  p.config = p.dir / "config.json";
  std::ofstream(p.config) << doc.dump(2) << "\n";

  p.corpus = ctfr::generate_corpus(corpus_cfg);
  for (auto ci : p.corpus.caption_indices_of(ctfr::Split::test))
    p.test_caption_ids.push_back(p.corpus.caption_ids[ci]);
  for (auto ii : p.corpus.image_indices_of(ctfr::Split::test))
    p.test_image_ids.push_back(p.corpus.image_ids[ii]);
  REQUIRE(p.test_caption_ids.size() == 6);
  REQUIRE(p.test_image_ids.size() == 3);

  const std::string base = "-c " + p.config.string() + " ";
  for (const char* step : {"gen-data", "train", "embed", "index"}) {
    auto r = run_cli(base + step, p.dir);
    REQUIRE_MESSAGE(r.exit_code == 0, (std::string(step) + " failed: " + r.err));
  }
  p.built = true;
  return p;
}

std::string base_args() { return "-c " + pipeline().config.string() + " "; }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("pipeline produces the expected artifacts") {
  auto& p = pipeline();
  for (const char* rel : {"corpus/manifest.json", "corpus/images.f64", "corpus/captions.f64",
                          "corpus/boxes.f64", "model.ckpt", "history.csv", "audio.enc",
                          "image.enc", "targets.idx"})
    CHECK_MESSAGE(fs::exists(p.dir / rel), rel);

  // 16 train captions / batch 2 = 8 steps per epoch, 2 epochs, plus a header.
  auto history = lines_of(read_file(p.dir / "history.csv"));
  REQUIRE(history.size() == 17);
  CHECK(history[0] == "step,lr,coarse_loss,fine_loss,total_loss");
}

TEST_CASE("help exits 0 and usage errors exit 2") {
  auto& p = pipeline();
  CHECK(run_cli("--help", p.dir).exit_code == 0);
  CHECK(run_cli("not-a-command", p.dir).exit_code == 2);
  CHECK(run_cli("retrieve", p.dir).exit_code == 2);  // missing required --query

  auto bad_key = run_cli(base_args() + "--set retrieval.nope=1 eval", p.dir);
  CHECK(bad_key.exit_code == 2);
  CHECK(bad_key.err.find("unknown config key") != std::string::npos);

  auto bad_mode = run_cli(base_args() + "--set retrieval.mode=fuzzy eval", p.dir);
  CHECK(bad_mode.exit_code == 2);
}

TEST_CASE("retrieve prints a ranked id/score line per hit") {
  auto& p = pipeline();
  const std::string query = p.test_caption_ids.front();
  auto r = run_cli(base_args() + "retrieve -q " + query, p.dir);
  REQUIRE_MESSAGE(r.exit_code == 0, r.err);

  auto ranked = lines_of(r.out);
  REQUIRE(ranked.size() == 3);  // k == 3 == held-out image count
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& line : ranked) {
    auto tab = line.find('\t');
    REQUIRE(tab != std::string::npos);
    const std::string id = line.substr(0, tab);
    CHECK(std::find(p.test_image_ids.begin(), p.test_image_ids.end(), id) !=
          p.test_image_ids.end());
    const double score = std::stod(line.substr(tab + 1));
    CHECK(score <= prev);  // best first
    prev = score;
  }
  // Instrumentation goes to stderr, never stdout.
  CHECK(r.err.find("cross-modal passes") != std::string::npos);
  CHECK(r.out.find("cross-modal") == std::string::npos);

  // The two-stage run rescored exactly the shortlist.
  CHECK(r.err.find("passes 3") != std::string::npos);

  auto coarse = run_cli(base_args() + "--set retrieval.mode=coarse retrieve -q " + query, p.dir);
  REQUIRE(coarse.exit_code == 0);
  CHECK(lines_of(coarse.out).size() == 3);
  CHECK(coarse.err.find("passes 0") != std::string::npos);
}

TEST_CASE("retrieve rejects bad requests with the documented exit codes") {
  auto& p = pipeline();
  const std::string query = p.test_caption_ids.front();

  // Shortlist smaller than the requested cutoff: configuration error.
  auto too_deep = run_cli(base_args() + "--set retrieval.k=50 retrieve -q " + query, p.dir);
  CHECK(too_deep.exit_code == 2);
  CHECK(too_deep.err.find("retrieval.k") != std::string::npos);

  // Unknown query id: configuration error.
  CHECK(run_cli(base_args() + "retrieve -q cap_999999", p.dir).exit_code == 2);

  // Missing model file: malformed/absent input data.
  auto no_ckpt = run_cli(
      base_args() + "--set paths.checkpoint=" + (p.dir / "nope.ckpt").string() +
          " retrieve -q " + query,
      p.dir);
  CHECK(no_ckpt.exit_code == 3);

  // Corrupted index: malformed input data.
  const fs::path bad_index = p.dir / "corrupt.idx";
  {
    std::string bytes = read_file(p.dir / "targets.idx");
    REQUIRE(bytes.size() > 8);
    bytes[0] = 'X';
    bytes[1] = 'X';
    std::ofstream(bad_index, std::ios::binary) << bytes;
  }
  auto corrupt = run_cli(base_args() + "--set paths.index=" + bad_index.string() +
                             " --set retrieval.mode=coarse retrieve -q " + query,
                         p.dir);
  CHECK(corrupt.exit_code == 3);
}

TEST_CASE("eval emits the fixed metric schema on stdout and to the metrics file") {
  auto& p = pipeline();
  auto r = run_cli(base_args() + "--set retrieval.mode=coarse eval", p.dir);
  REQUIRE_MESSAGE(r.exit_code == 0, r.err);

  auto doc = json::parse(r.out);
  for (const char* dir : {"audio_to_image", "image_to_audio", "averaged"}) {
    REQUIRE(doc.contains(dir));
    for (const char* k : {"R@1", "R@5", "R@10"}) {
      REQUIRE(doc[dir].contains(k));
      const double v = doc[dir][k].get<double>();
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK(doc["mode"] == "coarse");
  CHECK(doc["k_c"] == 0);  // shortlist size only applies to two-stage mode
  CHECK(doc["num_queries"] == 9);  // 6 captions + 3 images
  CHECK(json::parse(read_file(p.dir / "metrics.json")) == doc);
}

TEST_CASE("eval with a full-size shortlist matches exhaustive rescoring") {
  auto& p = pipeline();
  auto fine = run_cli(base_args() + "--set retrieval.mode=fine eval", p.dir);
  REQUIRE_MESSAGE(fine.exit_code == 0, fine.err);
  // k_c = 6 covers both target sets (3 images, 6 captions).
  auto ctf = run_cli(base_args() + "--set retrieval.mode=ctf --set retrieval.k_c=6 eval", p.dir);
  REQUIRE_MESSAGE(ctf.exit_code == 0, ctf.err);

  auto a = json::parse(fine.out);
  auto b = json::parse(ctf.out);
  for (const char* dir : {"audio_to_image", "image_to_audio", "averaged"})
    for (const char* k : {"R@1", "R@5", "R@10"})
      CHECK(a[dir][k].get<double>() == b[dir][k].get<double>());
  CHECK(a["mode"] == "fine");
  CHECK(b["mode"] == "ctf");
}

TEST_CASE("bench reports per-mode cross-modal pass counts") {
  auto& p = pipeline();
  auto r = run_cli(base_args() + "--set retrieval.k=2 --set retrieval.k_c=2 bench", p.dir);
  REQUIRE_MESSAGE(r.exit_code == 0, r.err);

  auto doc = json::parse(r.out);
  CHECK(doc["num_targets"] == 3);
  CHECK(doc["num_queries"] == 6);
  CHECK(doc["coarse"]["xmodal_passes_per_query"] == 0);
  CHECK(doc["fine"]["xmodal_passes_per_query"] == 3);   // every target
  CHECK(doc["ctf"]["xmodal_passes_per_query"] == 2);    // min(k_c, targets)
  for (const char* mode : {"coarse", "fine", "ctf"}) {
    CHECK(doc[mode]["mean_ms"].get<double>() >= 0.0);
    CHECK(doc[mode]["median_ms"].get<double>() >= 0.0);
  }
  CHECK(json::parse(read_file(p.dir / "bench.json")) == doc);
}

TEST_CASE("data-producing commands are idempotent") {
  auto& p = pipeline();
  const fs::path artifacts[] = {p.dir / "corpus" / "captions.f64", p.dir / "audio.enc",
                                p.dir / "image.enc", p.dir / "targets.idx",
                                p.dir / "metrics.json"};
  // eval ran in an earlier case; refresh metrics.json under a known mode.
  REQUIRE(run_cli(base_args() + "--set retrieval.mode=coarse eval", p.dir).exit_code == 0);

  std::vector<std::string> before;
  for (const auto& f : artifacts) before.push_back(read_file(f));

  REQUIRE(run_cli(base_args() + "gen-data", p.dir).exit_code == 0);
  REQUIRE(run_cli(base_args() + "embed", p.dir).exit_code == 0);
  REQUIRE(run_cli(base_args() + "index", p.dir).exit_code == 0);
  REQUIRE(run_cli(base_args() + "--set retrieval.mode=coarse eval", p.dir).exit_code == 0);

  for (std::size_t i = 0; i < std::size(artifacts); ++i)
    CHECK_MESSAGE(read_file(artifacts[i]) == before[i], artifacts[i].string());
}

TEST_CASE("seed overrides flow into generated data") {
  auto& p = pipeline();
  const fs::path alt = p.dir / "alt_corpus";
  auto r = run_cli(base_args() + "--set seed=6 --set paths.corpus_dir=" + alt.string() +
                       " gen-data",
                   p.dir);
  REQUIRE_MESSAGE(r.exit_code == 0, r.err);
  CHECK(r.err.find("effective seed: 6") != std::string::npos);
  CHECK(read_file(alt / "captions.f64") != read_file(p.dir / "corpus" / "captions.f64"));
}

}  // TEST_SUITE("cli")
