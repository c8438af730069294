#include "ctfr/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "ctfr/errors.hpp"
#include "ctfr/io_util.hpp"
#include "ctfr/rng.hpp"
#include "json.hpp"

namespace ctfr {

namespace {

constexpr char kBlobMagic[9] = "CTFRFP64";
constexpr std::uint64_t kBlobVersion = 1;
constexpr std::uint64_t kManifestVersion = 1;

std::string padded(const char* prefix, std::int64_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*lld", prefix, width, static_cast<long long>(i));
  return buf;
}

void write_blob(const std::filesystem::path& path, std::span<const double> data) {
  auto f = io::open_output(path);
  io::write_magic(f, kBlobMagic);
  io::write_u64(f, kBlobVersion);
  io::write_u64(f, data.size());
  io::write_f64s(f, data);
}

std::vector<double> read_blob(const std::filesystem::path& path, std::uint64_t expected_count) {
  auto f = io::open_input(path);
  io::expect_magic(f, kBlobMagic, path.filename().string());
  if (auto v = io::read_u64(f); v != kBlobVersion)
    throw FormatError(path.filename().string() + ": unsupported version " + std::to_string(v));
  const auto count = io::read_u64(f);
  if (count != expected_count)
    throw FormatError(path.filename().string() + ": holds " + std::to_string(count) +
                      " values, manifest implies " + std::to_string(expected_count));
  std::vector<double> data(count);
  io::read_f64s(f, data.data(), data.size());
  return data;
}

nlohmann::json config_to_json_obj(const CorpusConfig& cfg) {
  nlohmann::json j{{"num_images", cfg.num_images},
                   {"captions_per_image", cfg.captions_per_image},
                   {"num_concepts", cfg.num_concepts},
                   {"concepts_per_image", cfg.concepts_per_image},
                   {"signal_len", cfg.signal_len},
                   {"roi_count", cfg.roi_count},
                   {"roi_feature_dim", cfg.roi_feature_dim},
                   {"noise_std", cfg.noise_std},
                   {"seed", cfg.seed}};
  if (cfg.split_counts)
    j["split_counts"] = {(*cfg.split_counts)[0], (*cfg.split_counts)[1], (*cfg.split_counts)[2]};
  return j;
}

CorpusConfig config_from_json_obj(const nlohmann::json& j) {
  CorpusConfig cfg;
  try {
    cfg.num_images = j.value("num_images", cfg.num_images);
    cfg.captions_per_image = j.value("captions_per_image", cfg.captions_per_image);
    cfg.num_concepts = j.value("num_concepts", cfg.num_concepts);
    cfg.concepts_per_image = j.value("concepts_per_image", cfg.concepts_per_image);
    cfg.signal_len = j.value("signal_len", cfg.signal_len);
    cfg.roi_count = j.value("roi_count", cfg.roi_count);
    cfg.roi_feature_dim = j.value("roi_feature_dim", cfg.roi_feature_dim);
    cfg.noise_std = j.value("noise_std", cfg.noise_std);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("split_counts")) {
      auto arr = j.at("split_counts");
      if (!arr.is_array() || arr.size() != 3)
        throw ConfigError("corpus config: split_counts must be [train, dev, test]");
      cfg.split_counts = {{arr[0].get<std::int64_t>(), arr[1].get<std::int64_t>(),
                           arr[2].get<std::int64_t>()}};
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("corpus config: ") + e.what());
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

}  // namespace

std::array<std::int64_t, 3> CorpusConfig::effective_split_counts() const {
  if (split_counts) return *split_counts;
  const std::int64_t train = (7 * num_images) / 10;
  const std::int64_t dev = num_images / 10;
  return {train, dev, num_images - train - dev};
}

void CorpusConfig::validate() const {
  if (num_images < 1 || captions_per_image < 1 || num_concepts < 1 ||
      concepts_per_image < 1 || signal_len < 1 || roi_count < 1 || roi_feature_dim < 1)
    throw std::invalid_argument("corpus config: all counts must be >= 1");
  if (concepts_per_image > num_concepts)
    throw std::invalid_argument("corpus config: concepts_per_image must be <= num_concepts");
  if (motif_len() < 1)
    throw std::invalid_argument("corpus config: signal_len must fit one sample per concept");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std))
    throw std::invalid_argument("corpus config: noise_std must be finite and >= 0");
  if (split_counts) {
    const auto& s = *split_counts;
    if (s[0] < 0 || s[1] < 0 || s[2] < 0 || s[0] + s[1] + s[2] != num_images)
      throw std::invalid_argument("corpus config: split_counts must be >= 0 and sum to num_images");
  }
}

std::string to_json(const CorpusConfig& cfg) { return config_to_json_obj(cfg).dump(2); }

CorpusConfig corpus_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("corpus config: not valid JSON");
  if (!j.is_object()) throw ConfigError("corpus config: expected a JSON object");
  return config_from_json_obj(j);
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  throw std::invalid_argument("unknown split value");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "' (expected train, dev, or test)");
}

std::vector<std::size_t> Corpus::image_indices_of(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < image_splits.size(); ++i)
    if (image_splits[i] == s) out.push_back(i);
  return out;
}

std::vector<std::size_t> Corpus::caption_indices_of(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < caption_image_ids.size(); ++i)
    if (image_splits[image_index(caption_image_ids[i])] == s) out.push_back(i);
  return out;
}

std::size_t Corpus::image_index(const std::string& image_id) const {
  for (std::size_t i = 0; i < image_ids.size(); ++i)
    if (image_ids[i] == image_id) return i;
  throw std::invalid_argument("corpus: unknown image id '" + image_id + "'");
}

std::pair<Corpus, CorpusLatents> generate_corpus_with_latents(const CorpusConfig& cfg) {
  cfg.validate();
  CounterRng rng(cfg.seed);

  CorpusLatents latents;
  latents.concept_vectors = Mat(cfg.num_concepts, kLatentDim);
  {
    auto r = rng.fork("concepts");
    for (auto& x : latents.concept_vectors.v) x = r.normal(0.0, 1.0);
  }
  latents.motifs = Mat(cfg.num_concepts, cfg.motif_len());
  {
    auto r = rng.fork("motifs");
    for (auto& x : latents.motifs.v) x = r.normal(0.0, 1.0);
  }
  // Projection scaled so projected features keep unit-order variance.
  latents.roi_projection = Mat(cfg.roi_feature_dim, kLatentDim);
  {
    auto r = rng.fork("roi-projection");
    const double scale = 1.0 / std::sqrt(static_cast<double>(kLatentDim));
    for (auto& x : latents.roi_projection.v) x = r.normal(0.0, scale);
  }

  Corpus corpus;
  corpus.config = cfg;

  for (std::int64_t i = 0; i < cfg.num_images; ++i) {
    const std::string image_id = padded("img_", i, 5);
    corpus.image_ids.push_back(image_id);

    // The image's concept bag: a deterministic draw without replacement.
    std::vector<std::int64_t> all(static_cast<std::size_t>(cfg.num_concepts));
    std::iota(all.begin(), all.end(), 0);
    rng.fork("image-concepts:" + image_id).shuffle(all);
    std::vector<std::int64_t> chosen(all.begin(),
                                     all.begin() + static_cast<std::ptrdiff_t>(cfg.concepts_per_image));
    latents.image_concepts.push_back(chosen);

    ImageInput img;
    img.roi_features = Mat(cfg.roi_count, cfg.roi_feature_dim);
    auto noise = rng.fork("roi-noise:" + image_id);
    for (std::int64_t r = 0; r < cfg.roi_count; ++r) {
      const auto concept_row =
          chosen[static_cast<std::size_t>(r % cfg.concepts_per_image)];
      for (std::int64_t c = 0; c < cfg.roi_feature_dim; ++c) {
        double acc = 0.0;
        for (std::int64_t l = 0; l < kLatentDim; ++l)
          acc += latents.roi_projection.at(c, l) * latents.concept_vectors.at(concept_row, l);
        img.roi_features.at(r, c) = acc + noise.normal(0.0, cfg.noise_std);
      }
    }

    img.boxes = Mat(cfg.roi_count, 4);
    auto boxes_rng = rng.fork("boxes:" + image_id);
    for (std::int64_t r = 0; r < cfg.roi_count; ++r) {
      const double x1 = boxes_rng.uniform(0.0, 0.8);
      const double y1 = boxes_rng.uniform(0.0, 0.8);
      img.boxes.at(r, 0) = x1;
      img.boxes.at(r, 1) = y1;
      img.boxes.at(r, 2) = x1 + boxes_rng.uniform(0.1, 1.0 - x1);
      img.boxes.at(r, 3) = y1 + boxes_rng.uniform(0.1, 1.0 - y1);
    }
    corpus.images.push_back(std::move(img));
  }

  for (std::int64_t j = 0; j < cfg.num_captions(); ++j) {
    const std::int64_t owner = j / cfg.captions_per_image;
    const std::string caption_id = padded("cap_", j, 6);
    corpus.caption_ids.push_back(caption_id);
    corpus.caption_image_ids.push_back(corpus.image_ids[static_cast<std::size_t>(owner)]);

    auto order = latents.image_concepts[static_cast<std::size_t>(owner)];
    rng.fork("caption-order:" + caption_id).shuffle(order);
    latents.caption_concept_order.push_back(order);

    AudioInput cap;
    cap.signal.assign(static_cast<std::size_t>(cfg.signal_len), 0.0);
    const std::int64_t m = cfg.motif_len();
    for (std::int64_t slot = 0; slot < cfg.concepts_per_image; ++slot) {
      const auto concept_row = order[static_cast<std::size_t>(slot)];
      for (std::int64_t t = 0; t < m; ++t)
        cap.signal[static_cast<std::size_t>(slot * m + t)] = latents.motifs.at(concept_row, t);
    }
    auto noise = rng.fork("caption-noise:" + caption_id);
    for (auto& s : cap.signal) s += noise.normal(0.0, cfg.noise_std);
    corpus.captions.push_back(std::move(cap));
  }

  // Deterministic split by image: shuffle positions, cut at the counts.
  std::vector<std::int64_t> order(static_cast<std::size_t>(cfg.num_images));
  std::iota(order.begin(), order.end(), 0);
  rng.fork("split").shuffle(order);
  const auto counts = cfg.effective_split_counts();
  corpus.image_splits.assign(static_cast<std::size_t>(cfg.num_images), Split::test);
  std::int64_t cursor = 0;
  for (int s = 0; s < 3; ++s)
    for (std::int64_t c = 0; c < counts[static_cast<std::size_t>(s)]; ++c)
      corpus.image_splits[static_cast<std::size_t>(order[static_cast<std::size_t>(cursor++)])] =
          static_cast<Split>(s);

  return {std::move(corpus), std::move(latents)};
}

Corpus generate_corpus(const CorpusConfig& cfg) {
  return generate_corpus_with_latents(cfg).first;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& cfg = corpus.config;

  nlohmann::json manifest;
  manifest["format_version"] = kManifestVersion;
  manifest["config"] = config_to_json_obj(cfg);
  manifest["image_ids"] = corpus.image_ids;
  std::vector<std::string> split_names;
  for (auto s : corpus.image_splits) split_names.push_back(to_string(s));
  manifest["image_splits"] = split_names;
  manifest["caption_ids"] = corpus.caption_ids;
  manifest["caption_image_ids"] = corpus.caption_image_ids;
  manifest["arrays"] = {
      {"images.f64", {{"shape", {cfg.num_images, cfg.roi_count, cfg.roi_feature_dim}}}},
      {"boxes.f64", {{"shape", {cfg.num_images, cfg.roi_count, 4}}}},
      {"captions.f64", {{"shape", {cfg.num_captions(), cfg.signal_len}}}},
  };
  {
    auto f = io::open_output(dir / "manifest.json");
    const std::string text = manifest.dump(2);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    f.put('\n');
  }

  std::vector<double> images_flat, boxes_flat, captions_flat;
  for (const auto& img : corpus.images) {
    images_flat.insert(images_flat.end(), img.roi_features.v.begin(), img.roi_features.v.end());
    boxes_flat.insert(boxes_flat.end(), img.boxes.v.begin(), img.boxes.v.end());
  }
  for (const auto& cap : corpus.captions)
    captions_flat.insert(captions_flat.end(), cap.signal.begin(), cap.signal.end());
  write_blob(dir / "images.f64", images_flat);
  write_blob(dir / "boxes.f64", boxes_flat);
  write_blob(dir / "captions.f64", captions_flat);
}

Corpus read_corpus(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  {
    auto f = io::open_input(dir / "manifest.json");
    manifest = nlohmann::json::parse(f, nullptr, false);
    if (manifest.is_discarded()) throw FormatError("manifest.json: not valid JSON");
  }

  Corpus corpus;
  try {
    if (manifest.at("format_version").get<std::uint64_t>() != kManifestVersion)
      throw FormatError("manifest.json: unsupported format_version");
    corpus.config = config_from_json_obj(manifest.at("config"));
    corpus.image_ids = manifest.at("image_ids").get<std::vector<std::string>>();
    for (const auto& name : manifest.at("image_splits").get<std::vector<std::string>>())
      corpus.image_splits.push_back(split_from_string(name));
    corpus.caption_ids = manifest.at("caption_ids").get<std::vector<std::string>>();
    corpus.caption_image_ids = manifest.at("caption_image_ids").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }

  const auto& cfg = corpus.config;
  if (corpus.image_ids.size() != static_cast<std::size_t>(cfg.num_images) ||
      corpus.image_splits.size() != corpus.image_ids.size() ||
      corpus.caption_ids.size() != static_cast<std::size_t>(cfg.num_captions()) ||
      corpus.caption_image_ids.size() != corpus.caption_ids.size())
    throw FormatError("manifest.json: id lists disagree with the config counts");

  const auto images_flat = read_blob(
      dir / "images.f64",
      static_cast<std::uint64_t>(cfg.num_images * cfg.roi_count * cfg.roi_feature_dim));
  const auto boxes_flat =
      read_blob(dir / "boxes.f64", static_cast<std::uint64_t>(cfg.num_images * cfg.roi_count * 4));
  const auto captions_flat = read_blob(
      dir / "captions.f64", static_cast<std::uint64_t>(cfg.num_captions() * cfg.signal_len));

  const std::size_t per_image = static_cast<std::size_t>(cfg.roi_count * cfg.roi_feature_dim);
  const std::size_t per_boxes = static_cast<std::size_t>(cfg.roi_count * 4);
  for (std::int64_t i = 0; i < cfg.num_images; ++i) {
    ImageInput img;
    img.roi_features = Mat(cfg.roi_count, cfg.roi_feature_dim);
    std::copy_n(images_flat.begin() + static_cast<std::ptrdiff_t>(i * per_image), per_image,
                img.roi_features.v.begin());
    img.boxes = Mat(cfg.roi_count, 4);
    std::copy_n(boxes_flat.begin() + static_cast<std::ptrdiff_t>(i * per_boxes), per_boxes,
                img.boxes.v.begin());
    corpus.images.push_back(std::move(img));
  }
  const std::size_t per_caption = static_cast<std::size_t>(cfg.signal_len);
  for (std::int64_t j = 0; j < cfg.num_captions(); ++j) {
    AudioInput cap;
    cap.signal.resize(per_caption);
    std::copy_n(captions_flat.begin() + static_cast<std::ptrdiff_t>(j * per_caption), per_caption,
                cap.signal.begin());
    corpus.captions.push_back(std::move(cap));
  }
  return corpus;
}

}  // namespace ctfr
