#include <optional>
#include <string>

#include <nlohmann/json.hpp>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "plarseg/errmap/error_mask.hpp"
#include "plarseg/loop/config.hpp"
#include "plarseg/loop/ledger.hpp"
#include "plarseg/loop/runner.hpp"
#include "plarseg/plar/distance.hpp"
#include "plarseg/plar/stats.hpp"
#include "plarseg/synth/dataset.hpp"

namespace py = pybind11;
using namespace plarseg;
using nlohmann::json;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

// Structured results cross the boundary as JSON text and come back as dicts.
py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::object& o) {
  return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

numkit::Tensor tensor_from(const FloatArray& a) {
  numkit::Shape shape;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(static_cast<int>(a.shape(i)));
  return numkit::Tensor(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> array_from(const numkit::Tensor& t) {
  std::vector<py::ssize_t> shape;
  for (int i = 0; i < t.rank(); ++i) shape.push_back(t.dim(i));
  py::array_t<float> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::array_t<std::uint8_t> mask_array(const errmap::ErrorMask& m) {
  py::array_t<std::uint8_t> out({m.height, m.width});
  std::copy(m.flags.begin(), m.flags.end(), out.mutable_data());
  return out;
}

errmap::ErrorMask mask_from(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw std::invalid_argument("mask must be 2-d");
  errmap::ErrorMask m;
  m.height = static_cast<int>(a.shape(0));
  m.width = static_cast<int>(a.shape(1));
  m.flags.assign(a.data(), a.data() + a.size());
  for (auto& f : m.flags) f = f != 0;
  return m;
}

py::array_t<std::uint8_t> labels_array(const synth::LabelMap& l) {
  py::array_t<std::uint8_t> out({l.height, l.width});
  std::copy(l.ids.begin(), l.ids.end(), out.mutable_data());
  return out;
}

py::list samples(const std::vector<synth::Sample>& v) {
  py::list out;
  for (const auto& s : v) {
    py::dict d;
    d["id"] = s.id;
    d["image"] = array_from(s.image);
    d["label"] = s.label ? py::object(labels_array(*s.label)) : py::none();
    out.append(d);
  }
  return out;
}

plar::ClassStats stats_from(const DoubleArray& x) {
  if (x.ndim() != 2 || x.shape(0) == 0) throw std::invalid_argument("samples must be a non-empty (n, d) array");
  const int n = static_cast<int>(x.shape(0)), d = static_cast<int>(x.shape(1));
  plar::StatsAccumulator acc(1, d);
  for (int i = 0; i < n; ++i) acc.add(0, Eigen::Map<const Eigen::VectorXd>(x.data() + static_cast<std::ptrdiff_t>(i) * d, d));
  return acc.finalize(plar::Level::F1).classes[0];
}

py::array_t<double> matrix_array(const Eigen::MatrixXd& a, bool two_d) {
  std::vector<py::ssize_t> shape{a.rows()};
  if (two_d) shape.push_back(a.cols());
  py::array_t<double> out(shape);
  auto* p = out.mutable_data();
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c) *p++ = a(r, c);
  return out;
}

Eigen::VectorXd vector_from(const DoubleArray& f) {
  return Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size()));
}

py::dict metrics_dict(const loop::RoundMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? py::object(py::float_(*v)) : py::none(); };
  py::dict d;
  d["round"] = m.round;
  d["iter"] = m.iter;
  d["miou_teacher"] = m.miou_teacher;
  d["miou_student"] = m.miou_student;
  d["pl_acc_before"] = m.pl_acc_before;
  d["pl_acc_after"] = m.pl_acc_after;
  d["pl_corrected_acc"] = opt(m.pl_corrected_acc);
  d["auto_precision"] = opt(m.auto_precision);
  d["auto_teacher_acc"] = opt(m.auto_teacher_acc);
  d["auto_pixels"] = m.auto_pixels;
  d["manual_pixels"] = m.manual_pixels;
  d["budget_spent"] = m.budget_spent;
  d["budget_total"] = m.budget_total;
  return d;
}

const char* status_name(loop::RunStatus s) {
  switch (s) {
    case loop::RunStatus::COMPLETED: return "completed";
    case loop::RunStatus::PAUSED: return "paused";
    case loop::RunStatus::STOPPED: return "stopped";
  }
  return "unknown";
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "plarseg native core";

  m.def(
      "loop_config",
      [](const py::object& cfg) { return to_py(loop::to_json(loop::loop_config_from_json(from_py(cfg)))); },
      py::arg("config"), "Normalise a run configuration, filling defaults.");

  m.def(
      "make_dataset",
      [](const py::object& spec) {
        const auto ds = synth::make_dataset(synth::dataset_spec_from_json(from_py(spec)));
        py::dict out;
        out["spec"] = to_py(synth::to_json(ds.spec));
        out["labelled"] = samples(ds.labelled);
        out["unlabelled"] = samples(ds.unlabelled);
        out["val"] = samples(ds.val);
        out["test"] = samples(ds.test);
        return out;
      },
      py::arg("spec"));

  m.def(
      "confidence_error_map",
      [](const FloatArray& prob, float tau) { return mask_array(errmap::confidence_error_map(tensor_from(prob), tau)); },
      py::arg("prob"), py::arg("tau") = 0.7f);
  m.def(
      "emd_error_map",
      [](const FloatArray& x, float threshold) { return mask_array(errmap::emd_error_map(tensor_from(x), threshold)); },
      py::arg("x"), py::arg("threshold") = 0.5f);
  m.def(
      "fuse", [](const py::array_t<std::uint8_t>& a, const py::array_t<std::uint8_t>& b) {
        return mask_array(errmap::fuse(mask_from(a), mask_from(b)));
      },
      py::arg("conf"), py::arg("emd"));

  m.def(
      "class_stats",
      [](const DoubleArray& x) {
        const auto s = stats_from(x);
        py::dict d;
        d["count"] = s.count;
        d["mean"] = matrix_array(s.mean, false);
        d["cov"] = matrix_array(s.cov, true);
        d["inverse"] = matrix_array(s.inverse, true);
        d["eps"] = s.eps;
        return d;
      },
      py::arg("samples"), "Population mean, covariance and regularised inverse of an (n, d) sample.");
  m.def(
      "euclid_distance", [](const DoubleArray& f, const DoubleArray& x) { return plar::euclid_distance(vector_from(f), stats_from(x)); },
      py::arg("feature"), py::arg("samples"));
  m.def(
      "maha_distance", [](const DoubleArray& f, const DoubleArray& x) { return plar::maha_distance(vector_from(f), stats_from(x)); },
      py::arg("feature"), py::arg("samples"));

  py::class_<loop::BudgetLedger>(m, "BudgetLedger")
      .def(py::init<std::int64_t>(), py::arg("total_pixels"))
      .def("open_round", &loop::BudgetLedger::open_round, py::arg("round"), py::arg("allowance") = std::nullopt)
      .def("reserve", &loop::BudgetLedger::reserve, py::arg("pixels"))
      .def("commit", &loop::BudgetLedger::commit, py::arg("reservation"), py::arg("pixels"), py::arg("image_id"),
           py::arg("oracle_kind") = "python")
      .def("release", &loop::BudgetLedger::release, py::arg("reservation"))
      .def_property_readonly("total", &loop::BudgetLedger::total)
      .def_property_readonly("spent", &loop::BudgetLedger::spent)
      .def_property_readonly("reserved", &loop::BudgetLedger::reserved)
      .def_property_readonly("available", &loop::BudgetLedger::available)
      .def("to_dict", [](const loop::BudgetLedger& l) { return to_py(l.to_json()); });

  py::class_<loop::LoopRunner>(m, "Runner")
      .def(py::init([](const py::object& cfg) {
             const auto c = loop::loop_config_from_json(from_py(cfg));
             return std::make_unique<loop::LoopRunner>(c, loop::prepare_dataset(c));
           }),
           py::arg("config"))
      .def_static(
          "resume", [](const std::string& dir) { return loop::LoopRunner::resume(dir); }, py::arg("checkpoint_dir"))
      .def(
          "run",
          [](loop::LoopRunner& r, std::optional<int> rounds) {
            loop::RunStatus s;
            {
              py::gil_scoped_release release;
              s = r.run(rounds);
            }
            return status_name(s);
          },
          py::arg("rounds") = std::nullopt)
      .def("save_checkpoint", [](const loop::LoopRunner& r, const std::string& dir) { r.save_checkpoint(dir); })
      .def("write_csvs", [](const loop::LoopRunner& r, const std::string& dir) { r.write_csvs(dir); })
      .def("metrics_csv", &loop::LoopRunner::metrics_csv)
      .def("losses_csv", &loop::LoopRunner::losses_csv)
      .def_property_readonly("next_round", &loop::LoopRunner::next_round)
      .def_property_readonly("config", [](const loop::LoopRunner& r) { return to_py(loop::to_json(r.config())); })
      .def_property_readonly("budget", [](const loop::LoopRunner& r) { return to_py(r.ledger().to_json()); })
      .def("metrics",
           [](const loop::LoopRunner& r) {
             py::list out;
             for (const auto& m : r.metrics()) out.append(metrics_dict(m));
             return out;
           })
      .def("losses",
           [](const loop::LoopRunner& r) {
             py::list out;
             for (const auto& l : r.losses()) {
               py::dict d;
               d["iter"] = l.iter;
               d["lr"] = l.lr;
               d["L_sup"] = l.l_sup;
               d["L_t"] = l.l_t;
               d["L_f"] = l.l_f;
               d["total"] = l.total;
               out.append(d);
             }
             return out;
           })
      .def(
          "evaluate",
          [](const loop::LoopRunner& r, const std::string& split, bool teacher) {
            const auto& ds = r.dataset();
            const std::vector<synth::Sample>* v = split == "val" ? &ds.val : split == "test" ? &ds.test : nullptr;
            if (!v) throw std::invalid_argument("split must be 'val' or 'test'");
            std::vector<const synth::Sample*> p;
            for (const auto& s : *v) p.push_back(&s);
            return to_py(eval::to_json(r.evaluate(p, teacher)));
          },
          py::arg("split") = "val", py::arg("teacher") = true)
      .def(
          "preview",
          [](const loop::LoopRunner& r, int index) {
            const auto& pool = r.unlabelled();
            if (index < 0 || index >= static_cast<int>(pool.size())) throw py::index_error("no such unlabelled image");
            const auto pv = r.preview(*pool[static_cast<std::size_t>(index)]);
            py::dict d;
            d["id"] = pool[static_cast<std::size_t>(index)]->id;
            d["prob_grid"] = array_from(pv.prob_grid);
            py::array_t<std::uint8_t> before({pv.before.height, pv.before.width}), after({pv.after.height, pv.after.width});
            std::copy(pv.before.cls.begin(), pv.before.cls.end(), before.mutable_data());
            std::copy(pv.after.cls.begin(), pv.after.cls.end(), after.mutable_data());
            d["before"] = before;
            d["after"] = after;
            return d;
          },
          py::arg("index"));
}
