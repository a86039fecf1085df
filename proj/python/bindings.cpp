#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "datr/autodiff/checkpoint.hpp"
#include "datr/data/synthetic.hpp"
#include "datr/error.hpp"
#include "datr/evaluation/metrics.hpp"
#include "datr/io/binary.hpp"
#include "datr/service/service.hpp"
#include "datr/training/trainer.hpp"

namespace py = pybind11;
using namespace datr;

namespace {

py::array_t<double> to_array(std::span<const double> v, std::size_t rows, std::size_t cols) {
  py::array_t<double> out({rows, cols});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<train::TrainItem> items_for(const data::Corpus& c, const std::optional<std::vector<std::string>>& ids) {
  return train::make_items(c, ids ? *ids : c.video_ids());
}

}  // namespace

PYBIND11_MODULE(_datr, m) {
  m.doc() = "Dialogue-aware two-stage text-to-video retrieval";

  py::register_exception<Error>(m, "DatrError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  m.def(
      "generate_corpus",
      [](const std::string& out, std::size_t n_topics, std::size_t details, std::size_t videos, std::size_t n_frames,
         std::size_t d_in, std::size_t details_per_source, double noise, std::uint64_t seed) {
        data::SyntheticSpec s;
        s.n_topics = n_topics;
        s.details_per_topic = details;
        s.videos_per_detail = videos;
        s.n_frames = n_frames;
        s.d_in = d_in;
        s.details_per_source = details_per_source;
        s.noise_sigma = noise;
        s.seed = seed;
        const auto c = data::generate_synthetic_corpus(s);
        data::write_synthetic_corpus(out, c);
        return c.manifest.size();
      },
      py::arg("out_dir"), py::arg("n_topics") = 20, py::arg("details_per_topic") = 5, py::arg("videos_per_detail") = 3,
      py::arg("n_frames") = 32, py::arg("d_in") = 32, py::arg("details_per_source") = 3, py::arg("noise_sigma") = 0.1,
      py::arg("seed") = 0);

  m.def("validate_corpus", [](const std::string& dir) {
    const auto r = data::validate_corpus(dir);
    py::list violations;
    for (const auto& v : r.violations) violations.append(py::dict(py::arg("kind") = v.kind, py::arg("path") = v.path,
                                                                  py::arg("message") = v.message));
    return py::dict(py::arg("ok") = r.ok(), py::arg("videos") = r.videos, py::arg("triplets") = r.triplets,
                    py::arg("sources") = r.sources, py::arg("violations") = violations);
  });

  py::class_<data::Corpus>(m, "Corpus")
      .def(py::init(&data::Corpus::load), py::arg("dir"))
      .def_readonly("dir", &data::Corpus::dir)
      .def("video_ids", &data::Corpus::video_ids)
      .def_property_readonly("triplets", [](const data::Corpus& c) {
        py::list out;
        for (const auto& t : c.triplets) {
          out.append(py::dict(py::arg("id") = t.id, py::arg("video_id") = t.video_id, py::arg("q1") = t.q1,
                              py::arg("q2") = t.q2, py::arg("d_v") = t.d_v, py::arg("source_id") = t.source_id));
        }
        return out;
      });

  m.def(
      "grouped_split",
      [](const data::Corpus& c, std::uint64_t seed, double fraction) { return eval::grouped_split(c.manifest, seed, fraction).to_json(); },
      py::arg("corpus"), py::arg("seed") = 0, py::arg("test_fraction") = 0.2);

  m.def("compute_metrics", [](const std::vector<std::size_t>& ranks) { return eval::compute_metrics(ranks).to_json(); });

  py::class_<model::Model>(m, "Model")
      .def_static(
          "initialize",
          [](const data::Corpus& c, std::size_t d, std::size_t heads, std::size_t layers, std::size_t text_layers,
             std::uint64_t seed) {
            model::ModelConfig base;
            base.d = d;
            base.heads = heads;
            base.layers = layers;
            base.text_layers = text_layers;
            return model::Model::initialize(train::model_config_for(c, base), seed);
          },
          py::arg("corpus"), py::arg("d") = 64, py::arg("heads") = 8, py::arg("layers") = 6, py::arg("text_layers") = 2,
          py::arg("seed") = 0)
      .def_static("load", [](const std::string& path) { return model::Model::from_checkpoint(ad::load_checkpoint(path)); })
      .def("save", [](const model::Model& self, const std::string& path) { ad::save_checkpoint(path, self.to_checkpoint()); })
      .def("clone", &model::Model::clone)
      .def("hash", [](const model::Model& self) { return io::to_hex(retrieval::model_hash(self)); })
      .def("config_text", [](const model::Model& self) { return self.config().to_text(); })
      .def_property_readonly("tau", [](const model::Model& self) { return self.temperature.value(); })
      .def("encode_text", [](const model::Model& self, const std::string& text) {
        const auto z = model::encode_text(self, text);
        return to_array(z.data(), 1, z.numel());
      });

  m.def(
      "train_stage1",
      [](model::Model& model, const data::Corpus& c, std::optional<std::vector<std::string>> ids, std::size_t epochs,
         std::size_t batch_size, double lr, const std::string& loss, std::uint64_t seed) {
        train::TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.learning_rate = lr;
        cfg.loss = train::parse_contrastive_mode(loss);
        cfg.seed = seed;
        py::gil_scoped_release release;
        return train::train_stage1(model, items_for(c, ids), cfg).to_json();
      },
      py::arg("model"), py::arg("corpus"), py::arg("video_ids") = py::none(), py::arg("epochs") = 10,
      py::arg("batch_size") = 32, py::arg("learning_rate") = 1e-3, py::arg("loss") = "bidirectional", py::arg("seed") = 0);

  m.def(
      "train_stage2",
      [](model::Model& model, const data::Corpus& c, const retrieval::EmbeddingIndex& index,
         std::optional<std::vector<std::string>> ids, std::size_t epochs, std::size_t batch_size,
         std::size_t hard_negatives, std::size_t pool_negatives, std::size_t pool_from, const std::string& fusion,
         std::uint64_t seed) {
        train::TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.hard_negatives = hard_negatives;
        cfg.pool_negatives = pool_negatives;
        cfg.pool_negatives_from = pool_from;
        cfg.fusion = model::parse_fusion_mode(fusion);
        cfg.seed = seed;
        py::gil_scoped_release release;
        return train::train_stage2(model, items_for(c, ids), index, cfg).to_json();
      },
      py::arg("model"), py::arg("corpus"), py::arg("index"), py::arg("video_ids") = py::none(), py::arg("epochs") = 30,
      py::arg("batch_size") = 32, py::arg("hard_negatives") = 7, py::arg("pool_negatives") = 8,
      py::arg("pool_from") = 93, py::arg("fusion") = "full", py::arg("seed") = 0);

  py::class_<retrieval::EmbeddingIndex>(m, "Index")
      .def_static(
          "build",
          [](const data::Corpus& c, const model::Model& model, std::optional<std::vector<std::string>> ids) {
            return retrieval::build_index(c, ids ? *ids : c.video_ids(), model);
          },
          py::arg("corpus"), py::arg("model"), py::arg("video_ids") = py::none())
      .def_static("load", &retrieval::load_index)
      .def("save", [](const retrieval::EmbeddingIndex& self, const std::string& path) { retrieval::save_index(path, self); })
      .def_property_readonly("ids", &retrieval::EmbeddingIndex::ids)
      .def_property_readonly("dim", &retrieval::EmbeddingIndex::dim)
      .def("__len__", &retrieval::EmbeddingIndex::size)
      .def("matrix", [](const retrieval::EmbeddingIndex& self) { return to_array(self.matrix(), self.size(), self.dim()); });

  m.def(
      "stage1_retrieve",
      [](const std::string& query, const model::Model& model, const retrieval::EmbeddingIndex& index, std::size_t k) {
        std::vector<std::pair<std::string, double>> out;
        for (const auto& e : retrieval::stage1_retrieve(query, model, index, k).entries) out.emplace_back(e.video_id, e.stage1_score);
        return out;
      },
      py::arg("query"), py::arg("model"), py::arg("index"), py::arg("k") = 100);

  m.def(
      "evaluate",
      [](const data::Corpus& c, const std::vector<std::string>& test_videos, const model::Model& model,
         const retrieval::EmbeddingIndex& index, bool stage2, std::size_t k, const std::string& fusion) {
        eval::EvalConfig cfg;
        cfg.stage2 = stage2;
        cfg.k = k;
        cfg.fusion = model::parse_fusion_mode(fusion);
        py::gil_scoped_release release;
        return eval::evaluate(eval::triplets_for(c, test_videos), model, index, cfg).to_json();
      },
      py::arg("corpus"), py::arg("test_videos"), py::arg("model"), py::arg("index"), py::arg("stage2") = true,
      py::arg("k") = 100, py::arg("fusion") = "full");

  py::class_<service::Service>(m, "Service")
      .def(py::init([](std::size_t k, std::size_t mm, bool stage2, const std::string& fusion, double ttl) {
             service::ServiceConfig c;
             c.k = k;
             c.m = mm;
             c.stage2 = stage2;
             c.fusion = model::parse_fusion_mode(fusion);
             c.session_ttl_seconds = ttl;
             return std::make_unique<service::Service>(c);
           }),
           py::arg("K") = 100, py::arg("M") = 10, py::arg("stage2") = true, py::arg("fusion_mode") = "full",
           py::arg("session_ttl_seconds") = 1800.0)
      .def(
          "load",
          [](service::Service& self, const model::Model& model, const retrieval::EmbeddingIndex& index,
             const data::Corpus* corpus) { self.load(service::Snapshot::make(model.clone(), index, corpus)); },
          py::arg("model"), py::arg("index"), py::arg("corpus") = nullptr)
      .def(
          "handle",
          [](service::Service& self, const std::string& method, const std::string& path, const std::string& body) {
            py::gil_scoped_release release;
            const auto r = self.handle({method, path, body});
            return std::make_pair(r.status, r.body);
          },
          py::arg("method"), py::arg("path"), py::arg("body") = "");
}
