#include "ctfr/evaluation.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

#include "ctfr/retrieval.hpp"
#include "json.hpp"

namespace ctfr {

std::vector<double> recall_at_k(const Rankings& rankings, const GoldMap& gold,
                                std::span<const std::int64_t> ks) {
  if (gold.empty()) throw std::invalid_argument("recall_at_k: gold map is empty");
  for (std::int64_t k : ks)
    if (k < 1) throw std::invalid_argument("recall_at_k: cutoffs must be >= 1");

  std::vector<double> hits(ks.size(), 0.0);
  for (const auto& [query_id, gold_ids] : gold) {
    if (gold_ids.empty())
      throw std::invalid_argument("recall_at_k: empty gold set for query '" + query_id + "'");
    auto it = rankings.find(query_id);
    if (it == rankings.end())
      throw std::invalid_argument("recall_at_k: no ranking for query '" + query_id + "'");
    const auto& ranked = it->second;
    // Rank of the first gold id, or one past the end when none is ranked.
    std::size_t first_hit = ranked.size();
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      if (gold_ids.count(ranked[r])) {
        first_hit = r;
        break;
      }
    }
    for (std::size_t i = 0; i < ks.size(); ++i)
      if (first_hit < static_cast<std::size_t>(ks[i])) hits[i] += 1.0;
  }
  const double n = static_cast<double>(gold.size());
  for (auto& h : hits) h /= n;
  return hits;
}

DirectionMetrics average_directions(const DirectionMetrics& a, const DirectionMetrics& b) {
  return {0.5 * (a.r1 + b.r1), 0.5 * (a.r5 + b.r5), 0.5 * (a.r10 + b.r10)};
}

std::string to_json(const MetricReport& report) {
  nlohmann::json j;
  auto direction = [](const DirectionMetrics& m) {
    return nlohmann::json{{"R@1", m.r1}, {"R@5", m.r5}, {"R@10", m.r10}};
  };
  j["audio_to_image"] = direction(report.audio_to_image);
  j["image_to_audio"] = direction(report.image_to_audio);
  j["averaged"] = direction(report.averaged);
  j["num_queries"] = report.num_queries;
  j["mode"] = report.mode;
  j["k_c"] = report.k_c;
  return j.dump(2);
}

void EvalInputs::validate() const {
  if (caption_ids.empty() || image_ids.empty())
    throw std::invalid_argument("EvalInputs: need at least one caption and one image");
  if (caption_image_ids.size() != caption_ids.size() ||
      caption_encodings.size() != caption_ids.size() ||
      image_encodings.size() != image_ids.size())
    throw std::invalid_argument("EvalInputs: parallel vectors disagree in length");
  std::unordered_set<std::string> images(image_ids.begin(), image_ids.end());
  if (images.size() != image_ids.size())
    throw std::invalid_argument("EvalInputs: duplicate image ids");
  for (const auto& owner : caption_image_ids)
    if (!images.count(owner))
      throw std::invalid_argument("EvalInputs: caption references unknown image '" + owner + "'");
}

namespace {

template <typename Query>
std::vector<std::string> ranked_ids(Model& model, const Query& query, const Vec& query_cls,
                                    const CoarseIndex& index, const TargetStore& store,
                                    const std::string& mode, std::int64_t k_c, std::int64_t k) {
  RetrievalResult result;
  if (mode == "coarse")
    result = coarse_retrieve(query_cls, index, k);
  else if (mode == "fine")
    result = fine_retrieve(model, query, store, k);
  else if (mode == "ctf")
    result = ctf_retrieve(model, query, index, store, k_c, std::min(k, k_c));
  else
    throw std::invalid_argument("evaluate_retrieval: unknown mode '" + mode +
                                "' (expected coarse, fine, or ctf)");
  std::vector<std::string> ids;
  ids.reserve(result.ranked.size());
  for (const auto& [id, score] : result.ranked) ids.push_back(id);
  return ids;
}

DirectionMetrics metrics_from(const Rankings& rankings, const GoldMap& gold) {
  static constexpr std::int64_t kCuts[3] = {1, 5, 10};
  auto r = recall_at_k(rankings, gold, kCuts);
  return {r[0], r[1], r[2]};
}

Vec vec_of(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

MetricReport evaluate_retrieval(Model& model, const EvalInputs& inputs, const std::string& mode,
                                std::int64_t k_c) {
  inputs.validate();
  if (mode == "ctf" && k_c < 1)
    throw std::invalid_argument("evaluate_retrieval: ctf mode needs k_c >= 1");

  TargetStore image_store;
  image_store.modality = Modality::image;
  image_store.ids = inputs.image_ids;
  image_store.images = inputs.image_encodings;
  auto image_index = build_index(image_store);

  TargetStore audio_store;
  audio_store.modality = Modality::audio;
  audio_store.ids = inputs.caption_ids;
  audio_store.audio = inputs.caption_encodings;
  auto audio_index = build_index(audio_store);

  const std::int64_t depth = 10;

  // Speech query → image targets: the gold image is the caption's owner.
  Rankings a2i_rankings;
  GoldMap a2i_gold;
  for (std::size_t i = 0; i < inputs.caption_ids.size(); ++i) {
    const auto& qid = inputs.caption_ids[i];
    a2i_gold[qid] = {inputs.caption_image_ids[i]};
    a2i_rankings[qid] =
        ranked_ids(model, inputs.caption_encodings[i], vec_of(inputs.caption_encodings[i].cls_a),
                   image_index, image_store, mode, k_c, depth);
  }

  // Image query → caption targets: any caption of the image is a hit.
  GoldMap i2a_gold;
  for (std::size_t i = 0; i < inputs.caption_ids.size(); ++i)
    i2a_gold[inputs.caption_image_ids[i]].insert(inputs.caption_ids[i]);
  Rankings i2a_rankings;
  for (std::size_t i = 0; i < inputs.image_ids.size(); ++i) {
    const auto& qid = inputs.image_ids[i];
    if (!i2a_gold.count(qid)) continue;  // image owns no caption in this split
    i2a_rankings[qid] =
        ranked_ids(model, inputs.image_encodings[i], vec_of(inputs.image_encodings[i].cls_i),
                   audio_index, audio_store, mode, k_c, depth);
  }

  MetricReport report;
  report.audio_to_image = metrics_from(a2i_rankings, a2i_gold);
  report.image_to_audio = metrics_from(i2a_rankings, i2a_gold);
  report.averaged = average_directions(report.audio_to_image, report.image_to_audio);
  report.num_queries =
      static_cast<std::int64_t>(a2i_rankings.size() + i2a_rankings.size());
  report.mode = mode;
  report.k_c = mode == "ctf" ? k_c : 0;
  return report;
}

}  // namespace ctfr
