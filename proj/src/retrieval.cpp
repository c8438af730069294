#include "ctfr/retrieval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "ctfr/errors.hpp"
#include "ctfr/io_util.hpp"
#include "ctfr/tensor.hpp"
#include "ctfr/topk.hpp"

namespace ctfr {

namespace {

constexpr char kIndexMagic[9] = "CTFRINDX";
constexpr char kEncodingsMagic[9] = "CTFRENCS";
constexpr std::uint64_t kIndexVersion = 1;
constexpr std::uint64_t kEncodingsVersion = 1;

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void require_unique_ids(const std::vector<std::string>& ids, const char* what) {
  std::unordered_set<std::string> seen;
  for (const auto& id : ids)
    if (!seen.insert(id).second)
      throw std::invalid_argument(std::string(what) + ": duplicate target id '" + id + "'");
}

std::vector<double> coarse_scores(const Vec& query_cls, const CoarseIndex& index) {
  if (index.size() == 0) throw std::invalid_argument("coarse_retrieve: index is empty");
  if (static_cast<std::int64_t>(query_cls.size()) != index.dim())
    throw std::invalid_argument("coarse_retrieve: query width does not match index");
  std::vector<double> scores(static_cast<std::size_t>(index.size()));
  for (std::int64_t i = 0; i < index.size(); ++i) {
    double acc = 0.0;
    for (std::int64_t c = 0; c < index.dim(); ++c)
      acc += index.cls_matrix.at(i, c) * query_cls[static_cast<std::size_t>(c)];
    scores[static_cast<std::size_t>(i)] = acc;
  }
  return scores;
}

// One cross-modal score per (query, target) pair, dispatching on which side
// of the fused scorer the stored modality fills.
double pair_score(Model& model, const AudioEncoding& query, const TargetStore& store,
                  std::int64_t i) {
  return model.fine_score(query, store.images[static_cast<std::size_t>(i)]).item();
}

double pair_score(Model& model, const ImageEncoding& query, const TargetStore& store,
                  std::int64_t i) {
  return model.fine_score(store.audio[static_cast<std::size_t>(i)], query).item();
}

void check_store_modality(const TargetStore& store, Modality expected, const char* what) {
  store.validate();
  if (store.modality != expected)
    throw std::invalid_argument(std::string(what) + ": query modality requires " +
                                to_string(expected) + " targets, store holds " +
                                to_string(store.modality));
}

template <typename Query>
RetrievalResult fine_retrieve_impl(Model& model, const Query& query, const TargetStore& store,
                                   std::int64_t k) {
  if (store.size() == 0) throw std::invalid_argument("fine_retrieve: target store is empty");
  if (k < 1) throw std::invalid_argument("fine_retrieve: k must be >= 1");
  RetrievalResult out;
  out.mode = "fine";
  const std::uint64_t passes_before = model.xmodal_passes();
  const auto start = Clock::now();
  std::vector<double> scores(static_cast<std::size_t>(store.size()));
  {
    NoGradGuard ng;
    for (std::int64_t i = 0; i < store.size(); ++i)
      scores[static_cast<std::size_t>(i)] = pair_score(model, query, store, i);
  }
  for (auto [idx, score] : topk(scores, std::min<std::int64_t>(k, store.size())))
    out.ranked.emplace_back(store.ids[static_cast<std::size_t>(idx)], score);
  out.fine_ms = ms_since(start);
  out.xmodal_passes = model.xmodal_passes() - passes_before;
  return out;
}

template <typename Query>
RetrievalResult ctf_retrieve_impl(Model& model, const Query& query, const Vec& query_cls,
                                  const CoarseIndex& index, const TargetStore& store,
                                  std::int64_t k_c, std::int64_t k) {
  if (k_c < 1) throw std::invalid_argument("ctf_retrieve: k_c must be >= 1");
  if (k > k_c)
    throw std::invalid_argument("ctf_retrieve: k must be <= the coarse shortlist size k_c");
  if (k < 1) throw std::invalid_argument("ctf_retrieve: k must be >= 1");
  if (index.target_ids != store.ids)
    throw std::invalid_argument("ctf_retrieve: index and target store list different ids");

  RetrievalResult out;
  out.mode = "ctf";

  const auto coarse_start = Clock::now();
  auto scores = coarse_scores(query_cls, index);
  auto shortlist = topk(scores, std::min<std::int64_t>(k_c, index.size()));
  out.coarse_ms = ms_since(coarse_start);

  const std::uint64_t passes_before = model.xmodal_passes();
  const auto fine_start = Clock::now();
  std::vector<std::pair<std::int64_t, double>> rescored;
  rescored.reserve(shortlist.size());
  {
    NoGradGuard ng;
    for (auto [idx, coarse_score] : shortlist)
      rescored.emplace_back(idx, pair_score(model, query, store, idx));
  }
  // Same ordering key as the exhaustive scorer (score desc, then original
  // target position asc), so a full-width shortlist reproduces it exactly.
  std::sort(rescored.begin(), rescored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (static_cast<std::int64_t>(rescored.size()) > k)
    rescored.resize(static_cast<std::size_t>(k));
  for (auto [idx, score] : rescored)
    out.ranked.emplace_back(store.ids[static_cast<std::size_t>(idx)], score);
  out.fine_ms = ms_since(fine_start);
  out.xmodal_passes = model.xmodal_passes() - passes_before;
  return out;
}

Vec cls_vec(const AudioEncoding& e) { return {e.cls_a.data().begin(), e.cls_a.data().end()}; }
Vec cls_vec(const ImageEncoding& e) { return {e.cls_i.data().begin(), e.cls_i.data().end()}; }

double median_of(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

ModeBench summarize(const std::vector<double>& times_ms, std::uint64_t passes) {
  ModeBench b;
  b.mean_ms = 0.0;
  for (double t : times_ms) b.mean_ms += t;
  b.mean_ms /= static_cast<double>(times_ms.size());
  b.median_ms = median_of(times_ms);
  b.xmodal_passes_per_query = passes;
  return b;
}

}  // namespace

std::string to_string(Modality m) { return m == Modality::audio ? "audio" : "image"; }

Modality modality_from_string(const std::string& s) {
  if (s == "audio") return Modality::audio;
  if (s == "image") return Modality::image;
  throw std::invalid_argument("unknown modality '" + s + "' (expected audio or image)");
}

void TargetStore::validate() const {
  const auto n = ids.size();
  if (n == 0) throw std::invalid_argument("TargetStore: empty");
  if (modality == Modality::audio) {
    if (audio.size() != n || !images.empty())
      throw std::invalid_argument("TargetStore: audio store must hold one audio encoding per id");
  } else {
    if (images.size() != n || !audio.empty())
      throw std::invalid_argument("TargetStore: image store must hold one image encoding per id");
  }
}

CoarseIndex build_index(Modality modality, std::vector<std::string> ids, Mat cls_rows) {
  if (ids.empty()) throw std::invalid_argument("build_index: no targets");
  if (cls_rows.rows != static_cast<std::int64_t>(ids.size()))
    throw std::invalid_argument("build_index: one summary row per id required");
  if (cls_rows.cols < 1) throw std::invalid_argument("build_index: empty summary vectors");
  require_unique_ids(ids, "build_index");
  CoarseIndex index;
  index.modality = modality;
  index.target_ids = std::move(ids);
  index.cls_matrix = std::move(cls_rows);
  return index;
}

CoarseIndex build_index(const TargetStore& store) {
  store.validate();
  const std::int64_t n = store.size();
  const bool is_audio = store.modality == Modality::audio;
  const std::int64_t d = is_audio ? store.audio[0].cls_a.size() : store.images[0].cls_i.size();
  Mat rows(n, d);
  for (std::int64_t i = 0; i < n; ++i) {
    auto src = is_audio ? store.audio[static_cast<std::size_t>(i)].cls_a.data()
                        : store.images[static_cast<std::size_t>(i)].cls_i.data();
    if (static_cast<std::int64_t>(src.size()) != d)
      throw std::invalid_argument("build_index: inconsistent summary width across targets");
    std::copy(src.begin(), src.end(), rows.v.begin() + i * d);
  }
  return build_index(store.modality, store.ids, std::move(rows));
}

RetrievalResult coarse_retrieve(const Vec& query_cls, const CoarseIndex& index, std::int64_t k) {
  if (k < 1) throw std::invalid_argument("coarse_retrieve: k must be >= 1");
  RetrievalResult out;
  out.mode = "coarse";
  const auto start = Clock::now();
  auto scores = coarse_scores(query_cls, index);
  for (auto [idx, score] : topk(scores, std::min<std::int64_t>(k, index.size())))
    out.ranked.emplace_back(index.target_ids[static_cast<std::size_t>(idx)], score);
  out.coarse_ms = ms_since(start);
  out.xmodal_passes = 0;
  return out;
}

RetrievalResult fine_retrieve(Model& model, const AudioEncoding& query, const TargetStore& store,
                              std::int64_t k) {
  check_store_modality(store, Modality::image, "fine_retrieve");
  return fine_retrieve_impl(model, query, store, k);
}

RetrievalResult fine_retrieve(Model& model, const ImageEncoding& query, const TargetStore& store,
                              std::int64_t k) {
  check_store_modality(store, Modality::audio, "fine_retrieve");
  return fine_retrieve_impl(model, query, store, k);
}

RetrievalResult ctf_retrieve(Model& model, const AudioEncoding& query, const CoarseIndex& index,
                             const TargetStore& store, std::int64_t k_c, std::int64_t k) {
  check_store_modality(store, Modality::image, "ctf_retrieve");
  return ctf_retrieve_impl(model, query, cls_vec(query), index, store, k_c, k);
}

RetrievalResult ctf_retrieve(Model& model, const ImageEncoding& query, const CoarseIndex& index,
                             const TargetStore& store, std::int64_t k_c, std::int64_t k) {
  check_store_modality(store, Modality::audio, "ctf_retrieve");
  return ctf_retrieve_impl(model, query, cls_vec(query), index, store, k_c, k);
}

BenchReport bench(Model& model, std::span<const AudioEncoding> queries, const CoarseIndex& index,
                  const TargetStore& store, std::int64_t k_c, std::int64_t k,
                  std::int64_t repeats) {
  if (queries.empty()) throw std::invalid_argument("bench: no queries");
  if (repeats < 1) throw std::invalid_argument("bench: repeats must be >= 1");
  BenchReport report;
  report.num_targets = store.size();
  report.num_queries = static_cast<std::int64_t>(queries.size());
  report.k = k;
  report.k_c = k_c;
  report.repeats = repeats;

  std::vector<double> coarse_t, fine_t, ctf_t;
  std::uint64_t coarse_p = 0, fine_p = 0, ctf_p = 0;
  for (std::int64_t r = 0; r < repeats; ++r) {
    for (const auto& q : queries) {
      auto qv = cls_vec(q);
      auto rc = coarse_retrieve(qv, index, k);
      coarse_t.push_back(rc.coarse_ms + rc.fine_ms);
      coarse_p = rc.xmodal_passes;
      auto rf = fine_retrieve(model, q, store, k);
      fine_t.push_back(rf.coarse_ms + rf.fine_ms);
      fine_p = rf.xmodal_passes;
      auto rx = ctf_retrieve(model, q, index, store, k_c, k);
      ctf_t.push_back(rx.coarse_ms + rx.fine_ms);
      ctf_p = rx.xmodal_passes;
    }
  }
  report.coarse = summarize(coarse_t, coarse_p);
  report.fine = summarize(fine_t, fine_p);
  report.ctf = summarize(ctf_t, ctf_p);
  return report;
}

// --- On-disk formats -------------------------------------------------------

void write_index(const std::filesystem::path& path, const CoarseIndex& index) {
  auto f = io::open_output(path);
  io::write_magic(f, kIndexMagic);
  io::write_u64(f, kIndexVersion);
  io::write_u64(f, index.modality == Modality::audio ? 0 : 1);
  io::write_u64(f, static_cast<std::uint64_t>(index.size()));
  io::write_u64(f, static_cast<std::uint64_t>(index.dim()));
  for (const auto& id : index.target_ids) io::write_string(f, id);
  io::write_f64s(f, index.cls_matrix.v);
}

CoarseIndex read_index(const std::filesystem::path& path) {
  auto f = io::open_input(path);
  io::expect_magic(f, kIndexMagic, "index file");
  if (auto v = io::read_u64(f); v != kIndexVersion)
    throw FormatError("index file: unsupported version " + std::to_string(v));
  const auto modality_code = io::read_u64(f);
  if (modality_code > 1) throw FormatError("index file: bad modality code");
  const auto n = io::read_u64(f);
  const auto d = io::read_u64(f);
  if (n == 0 || d == 0) throw FormatError("index file: empty geometry");
  CoarseIndex index;
  index.modality = modality_code == 0 ? Modality::audio : Modality::image;
  index.target_ids.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) index.target_ids.push_back(io::read_string(f));
  index.cls_matrix = Mat(static_cast<std::int64_t>(n), static_cast<std::int64_t>(d));
  io::read_f64s(f, index.cls_matrix.v.data(), index.cls_matrix.v.size());
  return index;
}

namespace {

// Shared layout for both encoding-set files: per entry an id plus one
// row-major matrix (audio: summary+low-res tokens; image: fused tokens).
void write_encoding_matrices(const std::filesystem::path& path, Modality modality,
                             const std::vector<std::string>& ids,
                             const std::vector<const Tensor*>& matrices) {
  if (ids.size() != matrices.size())
    throw std::invalid_argument("write_encodings: one matrix per id required");
  if (ids.empty()) throw std::invalid_argument("write_encodings: empty set");
  require_unique_ids(ids, "write_encodings");
  auto f = io::open_output(path);
  io::write_magic(f, kEncodingsMagic);
  io::write_u64(f, kEncodingsVersion);
  io::write_u64(f, modality == Modality::audio ? 0 : 1);
  io::write_u64(f, ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Tensor& t = *matrices[i];
    if (t.rank() != 2) throw std::invalid_argument("write_encodings: matrices must be rank 2");
    io::write_string(f, ids[i]);
    io::write_u64(f, static_cast<std::uint64_t>(t.rows()));
    io::write_u64(f, static_cast<std::uint64_t>(t.cols()));
    io::write_f64s(f, t.data());
  }
}

struct RawEncodingSet {
  std::vector<std::string> ids;
  std::vector<Mat> matrices;
};

RawEncodingSet read_encoding_matrices(const std::filesystem::path& path, Modality expected) {
  auto f = io::open_input(path);
  io::expect_magic(f, kEncodingsMagic, "encodings file");
  if (auto v = io::read_u64(f); v != kEncodingsVersion)
    throw FormatError("encodings file: unsupported version " + std::to_string(v));
  const auto modality_code = io::read_u64(f);
  if (modality_code > 1) throw FormatError("encodings file: bad modality code");
  const Modality modality = modality_code == 0 ? Modality::audio : Modality::image;
  if (modality != expected)
    throw FormatError("encodings file: holds " + to_string(modality) + " entries, expected " +
                      to_string(expected));
  const auto n = io::read_u64(f);
  if (n == 0) throw FormatError("encodings file: empty set");
  RawEncodingSet raw;
  for (std::uint64_t i = 0; i < n; ++i) {
    raw.ids.push_back(io::read_string(f));
    const auto rows = io::read_u64(f);
    const auto cols = io::read_u64(f);
    if (rows == 0 || cols == 0 || rows > (1u << 20) || cols > (1u << 20))
      throw FormatError("encodings file: implausible matrix shape");
    Mat m(static_cast<std::int64_t>(rows), static_cast<std::int64_t>(cols));
    io::read_f64s(f, m.v.data(), m.v.size());
    raw.matrices.push_back(std::move(m));
  }
  return raw;
}

Tensor first_row(const Tensor& matrix) {
  std::vector<double> head(matrix.data().begin(), matrix.data().begin() + matrix.cols());
  return Tensor::from_data({matrix.cols()}, std::move(head));
}

}  // namespace

void write_audio_encodings(const std::filesystem::path& path, const EncodedAudioSet& set) {
  std::vector<const Tensor*> mats;
  mats.reserve(set.encodings.size());
  for (const auto& e : set.encodings) mats.push_back(&e.cls_and_lo_res);
  write_encoding_matrices(path, Modality::audio, set.ids, mats);
}

EncodedAudioSet read_audio_encodings(const std::filesystem::path& path) {
  auto raw = read_encoding_matrices(path, Modality::audio);
  EncodedAudioSet set;
  set.ids = std::move(raw.ids);
  for (auto& m : raw.matrices) {
    AudioEncoding e;
    e.cls_and_lo_res = Tensor::from_mat(m);
    e.cls_a = first_row(e.cls_and_lo_res);
    // hi_res is a training-time intermediate; scoring never reads it, so a
    // deserialized encoding leaves it unset.
    set.encodings.push_back(std::move(e));
  }
  return set;
}

void write_image_encodings(const std::filesystem::path& path, const EncodedImageSet& set) {
  std::vector<const Tensor*> mats;
  mats.reserve(set.encodings.size());
  for (const auto& e : set.encodings) mats.push_back(&e.tokens);
  write_encoding_matrices(path, Modality::image, set.ids, mats);
}

EncodedImageSet read_image_encodings(const std::filesystem::path& path) {
  auto raw = read_encoding_matrices(path, Modality::image);
  EncodedImageSet set;
  set.ids = std::move(raw.ids);
  for (auto& m : raw.matrices) {
    ImageEncoding e;
    e.tokens = Tensor::from_mat(m);
    e.cls_i = first_row(e.tokens);
    set.encodings.push_back(std::move(e));
  }
  return set;
}

TargetStore store_from(const EncodedAudioSet& set) {
  TargetStore store;
  store.modality = Modality::audio;
  store.ids = set.ids;
  store.audio = set.encodings;
  store.validate();
  require_unique_ids(store.ids, "store_from");
  return store;
}

TargetStore store_from(const EncodedImageSet& set) {
  TargetStore store;
  store.modality = Modality::image;
  store.ids = set.ids;
  store.images = set.encodings;
  store.validate();
  require_unique_ids(store.ids, "store_from");
  return store;
}

}  // namespace ctfr
