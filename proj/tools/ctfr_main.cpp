// Command-line surface: data generation, training, embedding, indexing,
// retrieval, evaluation, and benchmarking over one JSON config document.
//
// Conventions: logs go to standard error, data to files or standard output.
// Exit codes: 0 success, 1 runtime failure, 2 config error, 3 data/format
// error.
#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ctfr/errors.hpp"
#include "ctfr/evaluation.hpp"
#include "ctfr/io_util.hpp"
#include "ctfr/model.hpp"
#include "ctfr/objective.hpp"
#include "ctfr/retrieval.hpp"
#include "ctfr/synthetic.hpp"
#include "ctfr/training.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json default_config_doc() {
  return json{
      {"seed", 0},
      {"model", json::parse(ctfr::to_json(ctfr::ModelConfig{}))},
      {"train", json::parse(ctfr::to_json(ctfr::TrainConfig{}))},
      {"corpus", json::parse(ctfr::to_json(ctfr::CorpusConfig{}))},
      {"retrieval",
       {{"mode", "ctf"},
        {"k", 10},
        {"k_c", 100},
        {"repeats", 3},
        {"split", "test"},
        {"direction", "audio_to_image"}}},
      {"paths",
       {{"corpus_dir", "corpus"},
        {"checkpoint", "model.ckpt"},
        {"history", "history.csv"},
        {"audio_encodings", "audio.enc"},
        {"image_encodings", "image.enc"},
        {"index", "targets.idx"},
        {"metrics", "metrics.json"},
        {"bench", "bench.json"}}}};
}

// Deep-merges `overlay` onto `base` (objects recursively, scalars replace).
void merge_into(json& base, const json& overlay) {
  if (!overlay.is_object() || !base.is_object()) {
    base = overlay;
    return;
  }
  for (const auto& [key, value] : overlay.items()) {
    if (base.contains(key))
      merge_into(base[key], value);
    else
      base[key] = value;
  }
}

// Applies one dotted override like `train.batch_size=8`. The key must name a
// leaf that already exists (catches typos); the value text is parsed as JSON
// when possible, else taken as a string.
void apply_set(json& doc, const std::string& entry) {
  const auto eq = entry.find('=');
  if (eq == std::string::npos)
    throw ctfr::ConfigError("--set expects key=value, got '" + entry + "'");
  const std::string key = entry.substr(0, eq);
  const std::string text = entry.substr(eq + 1);

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (!node->is_object() || !node->contains(part))
      throw ctfr::ConfigError("--set: unknown config key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;  // bare strings need no quotes
  *node = std::move(value);
}

struct RunConfig {
  std::uint64_t seed = 0;
  ctfr::ModelConfig model;
  ctfr::TrainConfig train;
  ctfr::CorpusConfig corpus;

  std::string mode = "ctf";
  std::int64_t k = 10;
  std::int64_t k_c = 100;
  std::int64_t repeats = 3;
  ctfr::Split split = ctfr::Split::test;
  std::string direction = "audio_to_image";

  fs::path corpus_dir, checkpoint, history, audio_encodings, image_encodings, index_path,
      metrics_path, bench_path;
};

template <typename T>
T field(const json& obj, const char* name) {
  try {
    return obj.at(name).get<T>();
  } catch (const json::exception& e) {
    throw ctfr::ConfigError(std::string("config field '") + name + "': " + e.what());
  }
}

RunConfig materialize(const json& doc) {
  RunConfig cfg;
  cfg.seed = field<std::uint64_t>(doc, "seed");
  cfg.model = ctfr::model_config_from_json(doc.at("model").dump());
  cfg.train = ctfr::train_config_from_json(doc.at("train").dump());
  cfg.corpus = ctfr::corpus_config_from_json(doc.at("corpus").dump());
  // One seed drives everything: corpus generation, parameter init, shuffles.
  cfg.corpus.seed = cfg.seed;
  cfg.train.seed = cfg.seed;

  const json& r = doc.at("retrieval");
  cfg.mode = field<std::string>(r, "mode");
  cfg.k = field<std::int64_t>(r, "k");
  cfg.k_c = field<std::int64_t>(r, "k_c");
  cfg.repeats = field<std::int64_t>(r, "repeats");
  cfg.direction = field<std::string>(r, "direction");
  if (cfg.mode != "coarse" && cfg.mode != "fine" && cfg.mode != "ctf")
    throw ctfr::ConfigError("retrieval.mode must be coarse, fine, or ctf");
  if (cfg.k < 1) throw ctfr::ConfigError("retrieval.k must be >= 1");
  if (cfg.k_c < 1) throw ctfr::ConfigError("retrieval.k_c must be >= 1");
  if (cfg.repeats < 1) throw ctfr::ConfigError("retrieval.repeats must be >= 1");
  if (cfg.mode == "ctf" && cfg.k > cfg.k_c)
    throw ctfr::ConfigError("retrieval.k must be <= the coarse shortlist size retrieval.k_c");
  if (cfg.direction != "audio_to_image" && cfg.direction != "image_to_audio")
    throw ctfr::ConfigError("retrieval.direction must be audio_to_image or image_to_audio");
  try {
    cfg.split = ctfr::split_from_string(field<std::string>(r, "split"));
  } catch (const std::invalid_argument& e) {
    throw ctfr::ConfigError(e.what());
  }

  const json& p = doc.at("paths");
  cfg.corpus_dir = field<std::string>(p, "corpus_dir");
  cfg.checkpoint = field<std::string>(p, "checkpoint");
  cfg.history = field<std::string>(p, "history");
  cfg.audio_encodings = field<std::string>(p, "audio_encodings");
  cfg.image_encodings = field<std::string>(p, "image_encodings");
  cfg.index_path = field<std::string>(p, "index");
  cfg.metrics_path = field<std::string>(p, "metrics");
  cfg.bench_path = field<std::string>(p, "bench");
  return cfg;
}

RunConfig load_config(const std::optional<std::string>& config_path,
                      const std::vector<std::string>& sets) {
  json doc = default_config_doc();
  if (config_path) {
    std::ifstream f(*config_path);
    if (!f) throw ctfr::ConfigError("cannot open config file: " + *config_path);
    json file_doc = json::parse(f, nullptr, false);
    if (file_doc.is_discarded())
      throw ctfr::ConfigError("config file is not valid JSON: " + *config_path);
    if (!file_doc.is_object())
      throw ctfr::ConfigError("config file must hold a JSON object: " + *config_path);
    merge_into(doc, file_doc);
  }
  for (const auto& s : sets) apply_set(doc, s);
  auto cfg = materialize(doc);
  std::cerr << "effective seed: " << cfg.seed << "\n";
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  auto f = ctfr::io::open_output(path);
  f << text;
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

// --- subcommand bodies ------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg) {
  auto corpus = ctfr::generate_corpus(cfg.corpus);
  ctfr::write_corpus(corpus, cfg.corpus_dir);
  std::cerr << "wrote " << corpus.images.size() << " images / " << corpus.captions.size()
            << " captions to " << cfg.corpus_dir.string() << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  auto corpus = ctfr::read_corpus(cfg.corpus_dir);
  ctfr::Model model(cfg.model, cfg.seed);
  auto result = ctfr::train(model, corpus, cfg.train);
  model.save(cfg.checkpoint);
  ctfr::write_history_csv(cfg.history, result.history);
  std::cerr << "trained " << result.total_steps << " steps ("
            << result.steps_per_epoch << "/epoch); final loss "
            << result.history.back().total_loss << "\n"
            << "checkpoint: " << cfg.checkpoint.string()
            << "\nhistory: " << cfg.history.string() << "\n";
  return 0;
}

int cmd_embed(const RunConfig& cfg) {
  auto corpus = ctfr::read_corpus(cfg.corpus_dir);
  auto model = ctfr::Model::load(cfg.checkpoint);
  ctfr::EncodedAudioSet audio;
  for (auto ci : corpus.caption_indices_of(cfg.split)) {
    audio.ids.push_back(corpus.caption_ids[ci]);
    audio.encodings.push_back(model.encode_audio(corpus.captions[ci]));
  }
  ctfr::EncodedImageSet images;
  for (auto ii : corpus.image_indices_of(cfg.split)) {
    images.ids.push_back(corpus.image_ids[ii]);
    images.encodings.push_back(model.encode_image(corpus.images[ii]));
  }
  ctfr::write_audio_encodings(cfg.audio_encodings, audio);
  ctfr::write_image_encodings(cfg.image_encodings, images);
  std::cerr << "encoded split " << ctfr::to_string(cfg.split) << ": " << audio.ids.size()
            << " captions -> " << cfg.audio_encodings.string() << ", " << images.ids.size()
            << " images -> " << cfg.image_encodings.string() << "\n";
  return 0;
}

int cmd_index(const RunConfig& cfg) {
  ctfr::CoarseIndex index;
  if (cfg.direction == "audio_to_image")
    index = ctfr::build_index(ctfr::store_from(ctfr::read_image_encodings(cfg.image_encodings)));
  else
    index = ctfr::build_index(ctfr::store_from(ctfr::read_audio_encodings(cfg.audio_encodings)));
  ctfr::write_index(cfg.index_path, index);
  std::cerr << "indexed " << index.size() << " " << ctfr::to_string(index.modality)
            << " targets (d=" << index.dim() << ") -> " << cfg.index_path.string() << "\n";
  return 0;
}

int cmd_retrieve(const RunConfig& cfg, const std::string& query_id) {
  ctfr::RetrievalResult result;
  if (cfg.direction == "audio_to_image") {
    auto queries = ctfr::read_audio_encodings(cfg.audio_encodings);
    auto it = std::find(queries.ids.begin(), queries.ids.end(), query_id);
    if (it == queries.ids.end())
      throw ctfr::ConfigError("query id not present in " + cfg.audio_encodings.string() + ": " +
                              query_id);
    const auto& query = queries.encodings[it - queries.ids.begin()];
    if (cfg.mode == "coarse") {
      auto index = ctfr::read_index(cfg.index_path);
      result = ctfr::coarse_retrieve(query.cls_a.to_vec(), index, cfg.k);
    } else {
      auto model = ctfr::Model::load(cfg.checkpoint);
      auto store = ctfr::store_from(ctfr::read_image_encodings(cfg.image_encodings));
      if (cfg.mode == "fine") {
        result = ctfr::fine_retrieve(model, query, store, cfg.k);
      } else {
        auto index = ctfr::read_index(cfg.index_path);
        result = ctfr::ctf_retrieve(model, query, index, store, cfg.k_c, cfg.k);
      }
    }
  } else {
    auto queries = ctfr::read_image_encodings(cfg.image_encodings);
    auto it = std::find(queries.ids.begin(), queries.ids.end(), query_id);
    if (it == queries.ids.end())
      throw ctfr::ConfigError("query id not present in " + cfg.image_encodings.string() + ": " +
                              query_id);
    const auto& query = queries.encodings[it - queries.ids.begin()];
    if (cfg.mode == "coarse") {
      auto index = ctfr::read_index(cfg.index_path);
      result = ctfr::coarse_retrieve(query.cls_i.to_vec(), index, cfg.k);
    } else {
      auto model = ctfr::Model::load(cfg.checkpoint);
      auto store = ctfr::store_from(ctfr::read_audio_encodings(cfg.audio_encodings));
      if (cfg.mode == "fine") {
        result = ctfr::fine_retrieve(model, query, store, cfg.k);
      } else {
        auto index = ctfr::read_index(cfg.index_path);
        result = ctfr::ctf_retrieve(model, query, index, store, cfg.k_c, cfg.k);
      }
    }
  }
  std::cerr << "mode " << result.mode << ": coarse " << result.coarse_ms << " ms, fine "
            << result.fine_ms << " ms, cross-modal passes " << result.xmodal_passes << "\n";
  for (const auto& [id, score] : result.ranked) {
    char line[128];
    std::snprintf(line, sizeof line, "%s\t%.17g\n", id.c_str(), score);
    std::cout << line;
  }
  return 0;
}

ctfr::EvalInputs split_inputs(const ctfr::Model& model, const ctfr::Corpus& corpus,
                              ctfr::Split split) {
  ctfr::EvalInputs in;
  for (auto ci : corpus.caption_indices_of(split)) {
    in.caption_ids.push_back(corpus.caption_ids[ci]);
    in.caption_image_ids.push_back(corpus.caption_image_ids[ci]);
    in.caption_encodings.push_back(model.encode_audio(corpus.captions[ci]));
  }
  for (auto ii : corpus.image_indices_of(split)) {
    in.image_ids.push_back(corpus.image_ids[ii]);
    in.image_encodings.push_back(model.encode_image(corpus.images[ii]));
  }
  return in;
}

int cmd_eval(const RunConfig& cfg) {
  auto corpus = ctfr::read_corpus(cfg.corpus_dir);
  auto model = ctfr::Model::load(cfg.checkpoint);
  auto inputs = split_inputs(model, corpus, cfg.split);
  auto report = ctfr::evaluate_retrieval(model, inputs, cfg.mode, cfg.k_c);
  auto text = ctfr::to_json(report);
  write_text(cfg.metrics_path, text + "\n");
  std::cout << text << "\n";
  std::cerr << "metrics (" << cfg.mode << ", split " << ctfr::to_string(cfg.split) << ") -> "
            << cfg.metrics_path.string() << "\n";
  return 0;
}

int cmd_bench(const RunConfig& cfg) {
  auto corpus = ctfr::read_corpus(cfg.corpus_dir);
  auto model = ctfr::Model::load(cfg.checkpoint);
  auto inputs = split_inputs(model, corpus, cfg.split);
  auto store = ctfr::TargetStore{ctfr::Modality::image, inputs.image_ids, {}, inputs.image_encodings};
  auto index = ctfr::build_index(store);
  auto report =
      ctfr::bench(model, inputs.caption_encodings, index, store, cfg.k_c, cfg.k, cfg.repeats);
  auto mode_json = [](const ctfr::ModeBench& m) {
    return json{{"mean_ms", m.mean_ms},
                {"median_ms", m.median_ms},
                {"xmodal_passes_per_query", m.xmodal_passes_per_query}};
  };
  json doc{{"num_targets", report.num_targets},
           {"num_queries", report.num_queries},
           {"k", report.k},
           {"k_c", report.k_c},
           {"repeats", report.repeats},
           {"coarse", mode_json(report.coarse)},
           {"fine", mode_json(report.fine)},
           {"ctf", mode_json(report.ctf)}};
  auto text = doc.dump(2);
  write_text(cfg.bench_path, text + "\n");
  std::cout << text << "\n";
  std::cerr << "bench (" << report.num_queries << " queries x " << report.repeats
            << " repeats over " << report.num_targets << " targets) -> "
            << cfg.bench_path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal retrieval workbench: synthetic data, training, and "
               "coarse/fine/coarse-to-fine retrieval"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  std::vector<std::string> sets;
  std::string query_id;
  app.add_option("-c,--config", config_path, "JSON config file (defaults apply when omitted)")
      ->expected(1);
  app.add_option("--set", sets,
                 "override one config leaf, e.g. --set train.batch_size=8 (repeatable)");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus on disk");
  auto* train = app.add_subcommand("train", "train a model on the corpus' train split");
  auto* embed = app.add_subcommand("embed", "encode one corpus split with a trained model");
  auto* index = app.add_subcommand("index", "build the cached coarse index from encodings");
  auto* retrieve = app.add_subcommand("retrieve", "rank targets for one encoded query id");
  retrieve->add_option("-q,--query", query_id, "query id (caption or image id, per direction)")
      ->required();
  auto* eval = app.add_subcommand("eval", "compute recall metrics over one split");
  auto* bench = app.add_subcommand("bench", "compare per-query latency of the three modes");
  // Let --config / --set appear after the subcommand name as well.
  for (auto* sub : {gen, train, embed, index, retrieve, eval, bench}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and friends exit 0 via CLI11; real parse errors are config errors.
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const auto cfg = load_config(config_path, sets);
    if (gen->parsed()) return cmd_gen_data(cfg);
    if (train->parsed()) return cmd_train(cfg);
    if (embed->parsed()) return cmd_embed(cfg);
    if (index->parsed()) return cmd_index(cfg);
    if (retrieve->parsed()) return cmd_retrieve(cfg, query_id);
    if (eval->parsed()) return cmd_eval(cfg);
    if (bench->parsed()) return cmd_bench(cfg);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const ctfr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ctfr::FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    // Library precondition rejections trace back to configuration values.
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
