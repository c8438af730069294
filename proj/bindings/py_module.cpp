// Python bindings for the retrieval workbench. The surface mirrors the C++
// library's main operations: synthetic corpus generation, the dual-path
// model, contrastive training, the three retrieval modes, and recall
// evaluation. Encodings, stores, and indexes stay opaque handles; plain data
// crosses the boundary as lists and dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstdint>
#include <string>
#include <vector>

#include "ctfr/evaluation.hpp"
#include "ctfr/model.hpp"
#include "ctfr/objective.hpp"
#include "ctfr/retrieval.hpp"
#include "ctfr/synthetic.hpp"
#include "ctfr/training.hpp"

namespace py = pybind11;
using namespace ctfr;

namespace {

Mat mat_from_rows(const std::vector<std::vector<double>>& rows, const char* what) {
  if (rows.empty()) throw std::invalid_argument(std::string(what) + ": needs at least one row");
  Mat m(static_cast<std::int64_t>(rows.size()), static_cast<std::int64_t>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size())
      throw std::invalid_argument(std::string(what) + ": ragged rows");
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      m.at(static_cast<std::int64_t>(r), static_cast<std::int64_t>(c)) = rows[r][c];
  }
  return m;
}

py::dict direction_dict(const DirectionMetrics& m) {
  py::dict d;
  d["R@1"] = m.r1;
  d["R@5"] = m.r5;
  d["R@10"] = m.r10;
  return d;
}

py::dict report_dict(const MetricReport& report) {
  py::dict d;
  d["audio_to_image"] = direction_dict(report.audio_to_image);
  d["image_to_audio"] = direction_dict(report.image_to_audio);
  d["averaged"] = direction_dict(report.averaged);
  d["num_queries"] = report.num_queries;
  d["mode"] = report.mode;
  d["k_c"] = report.k_c;
  return d;
}

EvalInputs encode_split(const Model& model, const Corpus& corpus, Split split) {
  EvalInputs in;
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

std::vector<std::pair<std::string, double>> ranked_of(const RetrievalResult& r) {
  return r.ranked;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cross-modal retrieval workbench: synthetic corpora, a dual-path "
            "speech/image model, contrastive training, and coarse/fine/two-stage "
            "retrieval";

  py::class_<ConvLayerSpec>(m, "ConvLayerSpec")
      .def(py::init([](std::int64_t channels, std::int64_t kernel, std::int64_t stride) {
             return ConvLayerSpec{channels, kernel, stride};
           }),
           py::arg("channels"), py::arg("kernel"), py::arg("stride"))
      .def_readwrite("channels", &ConvLayerSpec::channels)
      .def_readwrite("kernel", &ConvLayerSpec::kernel)
      .def_readwrite("stride", &ConvLayerSpec::stride);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_static("micro", &ModelConfig::micro)
      .def_readwrite("model_dim", &ModelConfig::model_dim)
      .def_readwrite("num_heads", &ModelConfig::num_heads)
      .def_readwrite("trm1_layers", &ModelConfig::trm1_layers)
      .def_readwrite("trm2_layers", &ModelConfig::trm2_layers)
      .def_readwrite("img_trm_layers", &ModelConfig::img_trm_layers)
      .def_readwrite("xtrm_blocks", &ModelConfig::xtrm_blocks)
      .def_readwrite("conv1", &ModelConfig::conv1)
      .def_readwrite("conv2", &ModelConfig::conv2)
      .def_readwrite("roi_feature_dim", &ModelConfig::roi_feature_dim)
      .def_readwrite("mlp_widths", &ModelConfig::mlp_widths)
      .def("to_json", [](const ModelConfig& cfg) { return to_json(cfg); });

  py::class_<CorpusConfig>(m, "CorpusConfig")
      .def(py::init<>())
      .def_readwrite("num_images", &CorpusConfig::num_images)
      .def_readwrite("captions_per_image", &CorpusConfig::captions_per_image)
      .def_readwrite("num_concepts", &CorpusConfig::num_concepts)
      .def_readwrite("concepts_per_image", &CorpusConfig::concepts_per_image)
      .def_readwrite("signal_len", &CorpusConfig::signal_len)
      .def_readwrite("roi_count", &CorpusConfig::roi_count)
      .def_readwrite("roi_feature_dim", &CorpusConfig::roi_feature_dim)
      .def_readwrite("noise_std", &CorpusConfig::noise_std)
      .def_readwrite("seed", &CorpusConfig::seed)
      .def_readwrite("split_counts", &CorpusConfig::split_counts)
      .def("to_json", [](const CorpusConfig& cfg) { return to_json(cfg); });

  py::class_<LossWeights>(m, "LossWeights")
      .def(py::init<>())
      .def_readwrite("lambda_c", &LossWeights::lambda_c)
      .def_readwrite("lambda_f", &LossWeights::lambda_f)
      .def_readwrite("delta", &LossWeights::delta);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("peak_lr", &TrainConfig::peak_lr)
      .def_readwrite("warmup_fraction", &TrainConfig::warmup_fraction)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("clip_norm", &TrainConfig::clip_norm)
      .def_readwrite("loss", &TrainConfig::loss)
      .def_readwrite("seed", &TrainConfig::seed)
      .def("to_json", [](const TrainConfig& cfg) { return to_json(cfg); });

  py::class_<Corpus>(m, "Corpus")
      .def_readonly("image_ids", &Corpus::image_ids)
      .def_readonly("caption_ids", &Corpus::caption_ids)
      .def_readonly("caption_image_ids", &Corpus::caption_image_ids)
      .def_property_readonly("config", [](const Corpus& c) { return c.config; })
      .def("image_ids_of",
           [](const Corpus& c, const std::string& split) {
             std::vector<std::string> out;
             for (auto i : c.image_indices_of(split_from_string(split)))
               out.push_back(c.image_ids[i]);
             return out;
           },
           py::arg("split"))
      .def("caption_ids_of",
           [](const Corpus& c, const std::string& split) {
             std::vector<std::string> out;
             for (auto i : c.caption_indices_of(split_from_string(split)))
               out.push_back(c.caption_ids[i]);
             return out;
           },
           py::arg("split"))
      .def("caption_signal",
           [](const Corpus& c, const std::string& caption_id) {
             for (std::size_t i = 0; i < c.caption_ids.size(); ++i)
               if (c.caption_ids[i] == caption_id) return c.captions[i].signal;
             throw std::invalid_argument("unknown caption id: " + caption_id);
           },
           py::arg("caption_id"), "Raw waveform samples of one caption")
      .def("image_features",
           [](const Corpus& c, const std::string& image_id) {
             const auto& img = c.images[c.image_index(image_id)];
             auto rows_of = [](const Mat& m) {
               std::vector<std::vector<double>> rows;
               for (std::int64_t r = 0; r < m.rows; ++r) {
                 std::vector<double> row;
                 for (std::int64_t col = 0; col < m.cols; ++col) row.push_back(m.at(r, col));
                 rows.push_back(std::move(row));
               }
               return rows;
             };
             return py::make_tuple(rows_of(img.roi_features), rows_of(img.boxes));
           },
           py::arg("image_id"), "(region features, boxes) of one image");

  m.def("generate_corpus", &generate_corpus, py::arg("config"),
        "Deterministically generate a paired speech/image corpus from shared "
        "latent concepts");
  m.def("write_corpus", &write_corpus, py::arg("corpus"), py::arg("directory"));
  m.def("read_corpus", &read_corpus, py::arg("directory"));

  py::class_<AudioEncoding>(m, "AudioEncoding")
      .def_property_readonly("summary",
                             [](const AudioEncoding& e) { return e.cls_a.to_vec(); });

  py::class_<ImageEncoding>(m, "ImageEncoding")
      .def_property_readonly("summary",
                             [](const ImageEncoding& e) { return e.cls_i.to_vec(); });

  py::class_<Model>(m, "Model")
      .def(py::init<ModelConfig, std::uint64_t>(), py::arg("config"), py::arg("seed"))
      .def_property_readonly("config", &Model::config)
      .def_property_readonly("min_signal_length", &Model::min_signal_length)
      .def_property_readonly("xmodal_passes", &Model::xmodal_passes)
      .def("reset_xmodal_passes", &Model::reset_xmodal_passes)
      .def("encode_audio",
           [](const Model& model, const std::vector<double>& signal) {
             return model.encode_audio(AudioInput{signal});
           },
           py::arg("signal"))
      .def("encode_image",
           [](const Model& model, const std::vector<std::vector<double>>& roi_features,
              const std::vector<std::vector<double>>& boxes) {
             ImageInput v{mat_from_rows(roi_features, "roi_features"),
                          mat_from_rows(boxes, "boxes")};
             return model.encode_image(v);
           },
           py::arg("roi_features"), py::arg("boxes"))
      .def("coarse_score",
           [](const Model&, const AudioEncoding& a, const ImageEncoding& v) {
             return coarse_score(a, v).item();
           },
           py::arg("audio"), py::arg("image"),
           "Dot product of the two summary vectors; no cross-modal pass")
      .def("fine_score",
           [](const Model& model, const AudioEncoding& a, const ImageEncoding& v) {
             return model.fine_score(a, v).item();
           },
           py::arg("audio"), py::arg("image"),
           "Joint score through the fusion stack; counts one cross-modal pass")
      .def("save", &Model::save, py::arg("path"))
      .def_static("load", &Model::load, py::arg("path"));

  m.def("train",
        [](Model& model, const Corpus& corpus, const TrainConfig& cfg) {
          const auto result = train(model, corpus, cfg);
          py::list history;
          for (const auto& row : result.history) {
            py::dict d;
            d["step"] = row.step;
            d["lr"] = row.lr;
            d["coarse_loss"] = row.coarse_loss;
            d["fine_loss"] = row.fine_loss;
            d["total_loss"] = row.total_loss;
            history.append(d);
          }
          return history;
        },
        py::arg("model"), py::arg("corpus"), py::arg("config"),
        "Optimize the model on the corpus' train split; returns per-step history rows");

  m.def("evaluate",
        [](Model& model, const Corpus& corpus, const std::string& split,
           const std::string& mode, std::int64_t k_c) {
          const auto inputs = encode_split(model, corpus, split_from_string(split));
          return report_dict(evaluate_retrieval(model, inputs, mode, k_c));
        },
        py::arg("model"), py::arg("corpus"), py::arg("split"), py::arg("mode"),
        py::arg("k_c") = 0,
        "Recall@{1,5,10} in both directions over one corpus split");

  py::class_<TargetStore>(m, "TargetStore")
      .def_property_readonly("ids", [](const TargetStore& s) { return s.ids; })
      .def("__len__", [](const TargetStore& s) { return s.size(); });

  py::class_<CoarseIndex>(m, "CoarseIndex")
      .def_property_readonly("ids", [](const CoarseIndex& i) { return i.target_ids; })
      .def("__len__", [](const CoarseIndex& i) { return i.size(); });

  m.def("image_store",
        [](const Model& model, const Corpus& corpus, const std::string& split) {
          const auto inputs = encode_split(model, corpus, split_from_string(split));
          return TargetStore{Modality::image, inputs.image_ids, {}, inputs.image_encodings};
        },
        py::arg("model"), py::arg("corpus"), py::arg("split"),
        "Encode one split's images as retrieval targets");

  m.def("audio_store",
        [](const Model& model, const Corpus& corpus, const std::string& split) {
          const auto inputs = encode_split(model, corpus, split_from_string(split));
          return TargetStore{Modality::audio, inputs.caption_ids, inputs.caption_encodings, {}};
        },
        py::arg("model"), py::arg("corpus"), py::arg("split"),
        "Encode one split's captions as retrieval targets");

  m.def("build_index", py::overload_cast<const TargetStore&>(&build_index), py::arg("store"),
        "Cache the targets' summary vectors for coarse scoring");

  py::class_<RetrievalResult>(m, "RetrievalResult")
      .def_property_readonly("ranked", &ranked_of)
      .def_readonly("mode", &RetrievalResult::mode)
      .def_readonly("coarse_ms", &RetrievalResult::coarse_ms)
      .def_readonly("fine_ms", &RetrievalResult::fine_ms)
      .def_readonly("xmodal_passes", &RetrievalResult::xmodal_passes);

  m.def("coarse_retrieve",
        [](const std::vector<double>& query_summary, const CoarseIndex& index, std::int64_t k) {
          return coarse_retrieve(query_summary, index, k);
        },
        py::arg("query_summary"), py::arg("index"), py::arg("k"));
  m.def("fine_retrieve",
        py::overload_cast<Model&, const AudioEncoding&, const TargetStore&, std::int64_t>(
            &fine_retrieve),
        py::arg("model"), py::arg("query"), py::arg("store"), py::arg("k"));
  m.def("fine_retrieve",
        py::overload_cast<Model&, const ImageEncoding&, const TargetStore&, std::int64_t>(
            &fine_retrieve),
        py::arg("model"), py::arg("query"), py::arg("store"), py::arg("k"));
  m.def("ctf_retrieve",
        py::overload_cast<Model&, const AudioEncoding&, const CoarseIndex&, const TargetStore&,
                          std::int64_t, std::int64_t>(&ctf_retrieve),
        py::arg("model"), py::arg("query"), py::arg("index"), py::arg("store"), py::arg("k_c"),
        py::arg("k"));
  m.def("ctf_retrieve",
        py::overload_cast<Model&, const ImageEncoding&, const CoarseIndex&, const TargetStore&,
                          std::int64_t, std::int64_t>(&ctf_retrieve),
        py::arg("model"), py::arg("query"), py::arg("index"), py::arg("store"), py::arg("k_c"),
        py::arg("k"));
}
