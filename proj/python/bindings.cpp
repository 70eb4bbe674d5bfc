#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "persurv/coxph.hpp"
#include "persurv/cubical.hpp"
#include "persurv/distributions.hpp"
#include "persurv/error.hpp"
#include "persurv/fpca.hpp"
#include "persurv/imgio.hpp"
#include "persurv/pipeline.hpp"
#include "persurv/psurf.hpp"
#include "persurv/sedt.hpp"
#include "persurv/survstats.hpp"

namespace py = pybind11;
using namespace persurv;

namespace {

using LabelArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using FieldArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

LabelImage to_image(const LabelArray& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::kInvalidArgument, "label array must be 2-D");
  const auto h = static_cast<std::size_t>(a.shape(0));
  const auto w = static_cast<std::size_t>(a.shape(1));
  std::vector<Label> labels(w * h);
  const auto* p = a.data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (p[i] > 2) throw Error(ErrorCode::kInvalidLabel, "label " + std::to_string(p[i]) + " outside {0, 1, 2}");
    labels[i] = static_cast<Label>(p[i]);
  }
  return LabelImage(w, h, std::move(labels));
}

LabelArray from_image(const LabelImage& img) {
  LabelArray out({img.height(), img.width()});
  auto* p = out.mutable_data();
  for (std::size_t i = 0; i < img.size(); ++i) p[i] = static_cast<std::uint8_t>(img.labels()[i]);
  return out;
}

FieldArray from_field(const DistanceField& f) {
  FieldArray out({f.height(), f.width()});
  std::copy(f.values().begin(), f.values().end(), out.mutable_data());
  return out;
}

DistanceField to_field(const FieldArray& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::kInvalidArgument, "field array must be 2-D");
  std::vector<double> v(a.data(), a.data() + a.size());
  return DistanceField(static_cast<std::size_t>(a.shape(1)), static_cast<std::size_t>(a.shape(0)), std::move(v));
}

// Diagrams cross the boundary as (n, 3) arrays of dim, birth, death.
FieldArray from_diagram(const PersistenceDiagram& d) {
  FieldArray out({d.size(), std::size_t{3}});
  auto* p = out.mutable_data();
  for (const auto& pair : d.pairs) {
    *p++ = pair.dim;
    *p++ = pair.birth;
    *p++ = pair.death;
  }
  return out;
}

PersistenceDiagram to_diagram(const FieldArray& a) {
  if (a.ndim() != 2 || (a.size() > 0 && a.shape(1) != 3)) {
    throw Error(ErrorCode::kInvalidArgument, "diagram array must have shape (n, 3)");
  }
  PersistenceDiagram d;
  for (py::ssize_t i = 0; i < a.shape(0); ++i) {
    d.pairs.push_back({static_cast<int>(a.at(i, 0)), a.at(i, 1), a.at(i, 2)});
  }
  return d;
}

std::vector<SurvivalRecord> records(const std::vector<double>& time, const std::vector<bool>& event,
                                    const Eigen::MatrixXd& covariates) {
  if (time.size() != event.size() ||
      (covariates.size() > 0 && static_cast<std::size_t>(covariates.rows()) != time.size())) {
    throw Error(ErrorCode::kDimensionMismatch, "time, event and covariate rows differ in length");
  }
  std::vector<SurvivalRecord> out(time.size());
  for (std::size_t i = 0; i < time.size(); ++i) {
    out[i].patient_id = std::to_string(i);
    out[i].time = time[i];
    out[i].event = event[i];
    for (Eigen::Index j = 0; j < covariates.cols(); ++j) {
      out[i].covariates.push_back(covariates(static_cast<Eigen::Index>(i), j));
    }
  }
  return out;
}

py::dict km_dict(const KmCurve& c) {
  std::vector<double> t, s;
  std::vector<std::size_t> r, e;
  for (const auto& step : c.steps) {
    t.push_back(step.time);
    s.push_back(step.survival);
    r.push_back(step.at_risk);
    e.push_back(step.events);
  }
  py::dict d;
  d["time"] = t;
  d["survival"] = s;
  d["at_risk"] = r;
  d["events"] = e;
  return d;
}

py::object json_to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Topological shape features of label images and functional Cox models";

  static py::exception<Error> error_type(m, "PersurvError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object err = py::reinterpret_borrow<py::object>(error_type.ptr())(e.what());
      err.attr("code") = to_string(e.code());
      PyErr_SetObject(error_type.ptr(), err.ptr());
    }
  });

  m.def("load_label_image", [](const std::filesystem::path& p) { return from_image(load_label_image(p)); },
        py::arg("path"), "Label image as a (height, width) uint8 array: 0 normal, 1 tumor, 2 empty.");
  m.def("denoise", [](const LabelArray& a) { return from_image(denoise(to_image(a))); }, py::arg("labels"));
  m.def("sedt3", [](const LabelArray& a) { return from_field(sedt3(to_image(a))); }, py::arg("labels"));
  m.def("sedt2", [](const LabelArray& a) { return from_field(sedt2(to_image(a))); }, py::arg("labels"));

  m.def("persistence", [](const FieldArray& f) { return from_diagram(compute_persistence(to_field(f)).sorted()); },
        py::arg("field"), "Sublevel-set persistence of a distance field; rows are (dim, birth, death).");
  m.def("filter_finite", [](const FieldArray& d) { return from_diagram(filter_finite(to_diagram(d))); },
        py::arg("diagram"));

  py::class_<SurfaceGrid>(m, "SurfaceGrid")
      .def(py::init<long, long, long, long>(), py::arg("x_lo"), py::arg("x_hi"), py::arg("y_lo"), py::arg("y_hi"))
      .def_property_readonly("x_lo", &SurfaceGrid::x_lo)
      .def_property_readonly("x_hi", &SurfaceGrid::x_hi)
      .def_property_readonly("y_lo", &SurfaceGrid::y_lo)
      .def_property_readonly("y_hi", &SurfaceGrid::y_hi)
      .def("__len__", &SurfaceGrid::size)
      .def("points", [](const SurfaceGrid& g) {
        FieldArray out({g.size(), std::size_t{2}});
        auto* p = out.mutable_data();
        for (const auto& pt : g.points()) {
          *p++ = pt.x;
          *p++ = pt.y;
        }
        return out;
      });

  m.def(
      "shared_grid",
      [](const std::vector<FieldArray>& diagrams, double padding) {
        std::vector<PersistenceDiagram> ds;
        for (const auto& d : diagrams) ds.push_back(to_diagram(d));
        return shared_grid(ds, padding);
      },
      py::arg("diagrams"), py::arg("padding"));
  m.def("default_padding", &default_padding, py::arg("sigma"));
  m.def(
      "persistence_surface",
      [](const FieldArray& d, const SurfaceGrid& grid, double sigma, const std::string& kernel) {
        const auto s = persistence_surface(to_diagram(d), grid, sigma, kernel_from_string(kernel));
        return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(s.values.data(),
                                                                 static_cast<Eigen::Index>(s.values.size())));
      },
      py::arg("diagram"), py::arg("grid"), py::arg("sigma"), py::arg("kernel") = "standard-gaussian",
      "Surface values at grid.points(), in grid order.");

  py::class_<FpcaModel>(m, "FpcaModel")
      .def_readonly("mean", &FpcaModel::mean)
      .def_readonly("eigenvalues", &FpcaModel::eigenvalues)
      .def_readonly("eigenfunctions", &FpcaModel::eigenfunctions)
      .def_readonly("training_scores", &FpcaModel::training_scores)
      .def_readonly("n_samples", &FpcaModel::n_samples)
      .def("percent_variance", [](const FpcaModel& f, std::size_t k) { return percent_variance(f, k); })
      .def("project", [](const FpcaModel& f, const Eigen::VectorXd& v, std::size_t k) { return project(f, v, k); })
      .def("reconstruct", [](const FpcaModel& f, const Eigen::VectorXd& s) { return reconstruct(f, s); });
  m.def("fit_fpca", [](const SurfaceGrid& g, const Eigen::MatrixXd& x) { return fit_fpca(g, x); }, py::arg("grid"),
        py::arg("samples"), "FPCA of the rows of `samples` (surfaces on `grid`).");

  m.def(
      "fit_cox",
      [](const std::vector<double>& time, const std::vector<bool>& event, const Eigen::MatrixXd& covariates) {
        const auto data = records(time, event, covariates);
        const auto fit = fit_cox(data);
        py::dict d;
        d["coefficients"] = fit.coefficients;
        d["covariance"] = fit.covariance;
        d["log_partial_likelihood"] = fit.log_partial_likelihood;
        d["null_log_partial_likelihood"] = fit.null_log_partial_likelihood;
        d["iterations"] = fit.iterations;
        d["converged"] = fit.converged;
        return d;
      },
      py::arg("time"), py::arg("event"), py::arg("covariates"), "Efron-tie Cox fit.");
  m.def(
      "log_partial_likelihood",
      [](const std::vector<double>& time, const std::vector<bool>& event, const Eigen::MatrixXd& covariates,
         const Eigen::VectorXd& beta) { return log_partial_likelihood(records(time, event, covariates), beta); },
      py::arg("time"), py::arg("event"), py::arg("covariates"), py::arg("beta"));

  m.def(
      "kaplan_meier",
      [](const std::vector<double>& time, const std::vector<bool>& event) {
        return km_dict(kaplan_meier(records(time, event, Eigen::MatrixXd())));
      },
      py::arg("time"), py::arg("event"));
  m.def(
      "log_rank",
      [](const std::vector<double>& time, const std::vector<bool>& event, const std::vector<bool>& group) {
        if (group.size() != time.size()) throw Error(ErrorCode::kDimensionMismatch, "group length differs");
        const auto all = records(time, event, Eigen::MatrixXd());
        std::vector<SurvivalRecord> a, b;
        for (std::size_t i = 0; i < all.size(); ++i) (group[i] ? a : b).push_back(all[i]);
        const auto r = log_rank(a, b);
        py::dict d;
        d["statistic"] = r.statistic;
        d["df"] = r.df;
        d["p_value"] = r.p_value;
        return d;
      },
      py::arg("time"), py::arg("event"), py::arg("group"));
  m.def(
      "assign_risk_groups",
      [](const std::vector<double>& scores, const std::vector<std::string>& ids) {
        return assign_risk_groups(scores, ids);
      },
      py::arg("scores"), py::arg("patient_ids") = std::vector<std::string>{});
  m.def("chi_square_sf", &chi_square_sf, py::arg("x"), py::arg("df"));

  m.def(
      "run_study",
      [](const std::filesystem::path& config_path, const std::optional<std::filesystem::path>& out_dir,
         std::size_t threads) {
        const auto config = load_study_config(config_path);
        StudyReport report;
        {
          py::gil_scoped_release release;
          report = run_study(config, threads);
          if (out_dir) write_report(report, *out_dir);
        }
        return json_to_py(to_json(report));
      },
      py::arg("config"), py::arg("out_dir") = py::none(), py::arg("threads") = 1,
      "Runs a study from a config JSON; returns the report as a dict and optionally writes all artifacts.");
}
