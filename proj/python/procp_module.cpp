#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "procp/conformal.hpp"
#include "procp/methods.hpp"
#include "procp/simlab.hpp"

namespace py = pybind11;
using namespace procp;

namespace {

MaskedDataset make_dataset(const Eigen::MatrixXd& features, std::vector<std::uint8_t> mask,
                           std::vector<double> outcomes) {
  return MaskedDataset(FeatureMatrix(features), std::move(mask), std::move(outcomes));
}

WeightedDiscreteDist make_dist(const std::vector<std::pair<double, double>>& atoms) {
  std::vector<Atom> a;
  for (const auto& [v, w] : atoms) a.push_back({v, w});
  return WeightedDiscreteDist(std::move(a));
}

py::dict report_dict(const GuaranteeReport& r) {
  py::dict d;
  d["method"] = r.method;
  d["guarantee"] = to_string(r.type);
  d["alpha"] = r.alpha;
  d["epsilon"] = r.epsilon;
  d["delta"] = r.delta;
  d["delta_hat"] = r.delta_hat;
  d["effective_level"] = r.effective_level();
  d["approximate"] = r.approximate;
  d["n_missing"] = r.n_missing;
  d["warnings"] = r.warnings;
  return d;
}

}  // namespace

PYBIND11_MODULE(_procp, m) {
  m.doc() = "Simultaneous conformal prediction sets for outcomes missing at random";

  py::class_<MaskedDataset>(m, "MaskedDataset")
      .def(py::init(&make_dataset), py::arg("features"), py::arg("mask"), py::arg("outcomes"))
      .def("__len__", &MaskedDataset::size)
      .def_property_readonly("dim", &MaskedDataset::dim)
      .def_property_readonly("features", [](const MaskedDataset& d) { return Eigen::MatrixXd(d.features()); })
      .def_property_readonly("mask", &MaskedDataset::mask)
      .def_property_readonly("n_missing", &MaskedDataset::n_missing)
      .def_property_readonly("n_observed", &MaskedDataset::n_observed)
      .def("outcome", &MaskedDataset::outcome)
      .def("missing_indices", &MaskedDataset::missing_indices);

  m.def("weighted_quantile",
        [](const std::vector<std::pair<double, double>>& atoms, double level) {
          return weighted_quantile(make_dist(atoms), level);
        },
        py::arg("atoms"), py::arg("level"));
  m.def("tv_distance",
        [](const std::vector<std::pair<double, double>>& p, const std::vector<std::pair<double, double>>& q) {
          return tv_distance(make_dist(p), make_dist(q));
        });
  m.def("hypergeom_pmf", &hypergeom_pmf, py::arg("a"), py::arg("B"), py::arg("A"), py::arg("b"));

  m.def("odds_bin", &odds_bin, py::arg("propensity"), py::arg("epsilon"));
  m.def("assign_bins",
        [](const std::vector<double>& p, double eps) { return assign_bins(p, eps).bin_index; },
        py::arg("propensities"), py::arg("epsilon"));

  py::class_<MeanModel>(m, "MeanModel")
      .def(py::init<>())
      .def_readwrite("intercept", &MeanModel::intercept)
      .def_readwrite("coefficients", &MeanModel::coefficients)
      .def_readonly("ridge_penalty", &MeanModel::ridge_penalty)
      .def("predict", [](const MeanModel& mm, const std::vector<double>& x) { return mm.predict(x); });
  m.def("fit_mean_lsq", &fit_mean_lsq, py::arg("train"));
  m.def("residual_scores",
        [](const MeanModel& mean, const MaskedDataset& d) { return observed_scores(ScoreModel::residual(mean), d); },
        py::arg("mean"), py::arg("data"), "Residual scores |y - mu(x)|; NaN where the outcome is missing");

  py::class_<PropensityModel>(m, "PropensityModel")
      .def("__call__", [](const PropensityModel& p, const std::vector<double>& x) { return p(x); })
      .def("evaluate", [](const PropensityModel& p, const Eigen::MatrixXd& x) { return p.evaluate(FeatureMatrix(x)); })
      .def_property_readonly("intercept", &PropensityModel::intercept)
      .def_property_readonly("coefficients", &PropensityModel::coefficients)
      .def_property_readonly("bandwidth", &PropensityModel::bandwidth);
  m.def("fit_logistic", [](const MaskedDataset& d) { return fit_logistic(d); }, py::arg("train"));
  m.def("fit_kernel",
        [](const MaskedDataset& d, std::vector<double> grid) {
          if (grid.empty()) grid = default_bandwidth_grid(d);
          return fit_kernel(d, grid);
        },
        py::arg("train"), py::arg("bandwidth_grid") = std::vector<double>{});
  m.def("odds_diagnostic",
        [](const std::vector<double>& truth, const std::vector<double>& estimate) {
          const auto r = odds_diagnostic(truth, estimate);
          return py::make_tuple(r.max_abs_log_f, r.delta_hat);
        },
        py::arg("truth"), py::arg("estimate"), "Returns (max_abs_log_f, delta_hat)");

  py::class_<PredictionRule>(m, "PredictionRule")
      .def_readonly("thresholds", &PredictionRule::thresholds)
      .def_property_readonly("report", [](const PredictionRule& r) { return report_dict(r.report); })
      .def("threshold", &PredictionRule::threshold);

  m.def("build_rule",
        [](const std::string& method, const MaskedDataset& cal, const std::vector<double>& scores,
           const std::vector<double>& propensities, double alpha, double epsilon, double delta,
           std::size_t block_size) {
          MethodConfig c;
          c.method = parse_method(method);
          c.level = Level{alpha, epsilon, delta};
          c.block_size = block_size;
          return build_rule(c, cal, scores, propensities);
        },
        py::arg("method"), py::arg("cal"), py::arg("scores"), py::arg("propensities") = std::vector<double>{},
        py::arg("alpha") = 0.2, py::arg("epsilon") = 0.1, py::arg("delta") = 0.1, py::arg("block_size") = 0);

  m.def("mcar_pac_quantile",
        [](std::size_t n, std::size_t n0, double alpha, double delta) {
          const auto q = mcar_pac_quantile(n, n0, alpha, delta);
          py::dict d;
          d["k"] = q.k;
          d["infinite"] = q.infinite;
          d["tail"] = q.tail;
          d["p_max"] = q.p_max;
          d["pmf"] = q.pmf;
          return d;
        },
        py::arg("n"), py::arg("n_missing"), py::arg("alpha"), py::arg("delta"));

  m.def("run_study",
        [](const std::string& setting, const std::string& method, double alpha, double epsilon, std::size_t trials,
           std::uint64_t seed, std::size_t block_size, const std::string& propensity, std::size_t n) {
          const auto kind = parse_dgp_kind(setting);
          auto spec = kind == DgpKind::Setting1   ? DgpSpec::setting1(n, seed)
                      : kind == DgpKind::Setting2 ? DgpSpec::setting2(n, seed)
                                                  : DgpSpec::highdim(n, seed, substream_seed(seed, 1));
          StudyConfig c;
          c.method.method = parse_method(method);
          c.method.level = Level{alpha, epsilon, 0.1};
          c.method.block_size = block_size;
          c.propensity = parse_propensity_source(propensity);
          c.n_trials = trials;
          c.seed = seed;
          StudySummary s;
          {
            py::gil_scoped_release release;
            s = run_study(spec, c);
          }
          py::dict d;
          d["mean_coverage"] = s.coverage.mean;
          d["prob_meets"] = s.prob_meets.mean;
          d["prob_meets_se"] = s.prob_meets.se;
          d["mean_median_width"] = s.median_width.mean;
          std::vector<double> cov;
          for (const auto& t : s.trials) cov.push_back(t.coverage_proportion);
          d["coverage"] = cov;
          return d;
        },
        py::arg("setting") = "1", py::arg("method") = "pro-cp", py::arg("alpha") = 0.2, py::arg("epsilon") = 0.1,
        py::arg("trials") = 100, py::arg("seed") = 1, py::arg("block_size") = 50, py::arg("propensity") = "known",
        py::arg("n") = 500);

  m.def("generate",
        [](const std::string& setting, std::size_t n, std::uint64_t seed) {
          const auto kind = parse_dgp_kind(setting);
          auto spec = kind == DgpKind::Setting1   ? DgpSpec::setting1(n, seed)
                      : kind == DgpKind::Setting2 ? DgpSpec::setting2(n, seed)
                                                  : DgpSpec::highdim(n, seed, substream_seed(seed, 1));
          auto sim = generate(spec);
          return py::make_tuple(sim.data, sim.outcomes, sim.propensities);
        },
        py::arg("setting") = "1", py::arg("n") = 500, py::arg("seed") = 1,
        "Returns (dataset, full outcomes, true propensities)");
}
