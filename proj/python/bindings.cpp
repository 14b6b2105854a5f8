#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cutrec/checkpoint.hpp"
#include "cutrec/config.hpp"
#include "cutrec/experiment.hpp"
#include "cutrec/similarity.hpp"
#include "cutrec/synthgen.hpp"

namespace py = pybind11;
using namespace cutrec;
using nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data().begin());
  return m;
}

Array to_array(const Matrix& m) {
  Array a({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), a.mutable_data());
  return a;
}

py::list records(const RawInteractions& r) {
  py::list out;
  for (const auto& rec : r.records) out.append(py::make_tuple(rec.user, rec.item));
  return out;
}

std::string run(const std::string& config_json, const std::string& base_dir,
                const std::string& out_dir, bool force, unsigned parallel) {
  auto cfg = experiment_config_from_json(json::parse(config_json), base_dir);
  py::gil_scoped_release release;
  return run_experiment(cfg, {out_dir, force, parallel, std::nullopt}).dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<OutputExistsError>(m, "OutputExistsError", PyExc_FileExistsError);

  m.def("resolve_config",
        [](const std::string& config_json, const std::string& base_dir) {
          return experiment_config_to_json(
                     experiment_config_from_json(json::parse(config_json), base_dir))
              .dump();
        },
        py::arg("config_json"), py::arg("base_dir") = "");

  m.def("run_experiment", &run, py::arg("config_json"), py::arg("base_dir"), py::arg("out_dir"),
        py::arg("force") = false, py::arg("parallel_seeds") = 1);

  m.def("generate",
        [](const std::string& synth_json) {
          auto [src, tgt] = generate(synth_config_from_json(json::parse(synth_json)));
          return py::make_tuple(records(src), records(tgt));
        },
        py::arg("synth_json"));

  m.def("cosine", [](const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine: length mismatch");
    return cosine(a, b);
  });

  m.def("similar_pairs",
        [](const Array& embeddings, const std::vector<std::uint32_t>& batch, double gamma) {
          auto oracle = SimilarityOracle::from_embeddings(to_matrix(embeddings), gamma);
          auto p = extract_pairs(batch, oracle);
          std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
          for (auto [x, y] : p.similar) out.emplace_back(p.users[x], p.users[y]);
          return py::make_tuple(p.users, out);
        },
        py::arg("embeddings"), py::arg("batch_users"), py::arg("gamma") = 0.9);

  m.def("contrastive_loss",
        [](const Array& reps, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& similar,
           double tau, bool normalize) {
          PairSets p;
          for (std::uint32_t u = 0; u < static_cast<std::uint32_t>(reps.shape(0)); ++u)
            p.users.push_back(u);
          p.similar = similar;
          auto r = contrastive_loss(to_matrix(reps), p, tau, normalize);
          return py::make_tuple(r.loss, to_array(r.grad));
        },
        py::arg("reps"), py::arg("similar"), py::arg("tau") = 0.1, py::arg("normalize") = false);

  m.def("total_loss", &total_loss, py::arg("target"), py::arg("source"), py::arg("contrastive"),
        py::arg("alpha"), py::arg("lam"));

  m.def("rank_items",
        [](const Array& users, const Array& items, std::uint32_t user,
           std::vector<std::uint32_t> mask, std::size_t k) {
          std::sort(mask.begin(), mask.end());
          return rank_items({to_matrix(users), to_matrix(items)}, user, mask, k);
        },
        py::arg("users"), py::arg("items"), py::arg("user"), py::arg("mask"), py::arg("k") = 10);

  auto sorted = [](std::vector<std::uint32_t> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  m.def("ndcg_at_k",
        [sorted](const std::vector<std::uint32_t>& topk, const std::vector<std::uint32_t>& test,
                 std::size_t k) { return ndcg_at_k(topk, sorted(test), k); },
        py::arg("topk"), py::arg("test"), py::arg("k") = 10);
  m.def("recall_at_k",
        [sorted](const std::vector<std::uint32_t>& topk, const std::vector<std::uint32_t>& test,
                 std::size_t k) { return recall_at_k(topk, sorted(test), k); },
        py::arg("topk"), py::arg("test"), py::arg("k") = 10);
  m.def("hr_at_k",
        [sorted](const std::vector<std::uint32_t>& topk, const std::vector<std::uint32_t>& test,
                 std::size_t k) { return hr_at_k(topk, sorted(test), k); },
        py::arg("topk"), py::arg("test"), py::arg("k") = 10);

  m.def("read_checkpoint", [](const std::string& path) {
    auto c = read_checkpoint(std::filesystem::path(path));
    py::dict tables;
    for (const auto& t : c.tables) tables[py::str(std::string(to_string(t.role)))] = to_array(t.values);
    py::dict out;
    out["meta"] = c.meta.dump();
    out["tables"] = tables;
    if (c.transform_weight) {
      out["transform_weight"] = to_array(*c.transform_weight);
      out["transform_bias"] = to_array(*c.transform_bias);
    }
    return out;
  });
}
