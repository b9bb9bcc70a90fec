#include "procp/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

#include <CLI11.hpp>

#include "procp/csv.hpp"
#include "procp/record.hpp"

namespace procp {

namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void write_files_atomically(const std::vector<std::pair<std::string, std::string>>& files) {
  std::vector<std::string> temps;
  auto cleanup = [&] {
    std::error_code ec;
    for (const auto& t : temps) fs::remove(t, ec);
  };
  try {
    for (const auto& [path, content] : files) {
      const auto tmp = path + ".tmp." + std::to_string(::getpid());
      temps.push_back(tmp);
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw std::runtime_error("cannot open '" + tmp + "' for writing");
      out << content;
      out.close();
      if (!out) throw std::runtime_error("failed writing '" + tmp + "'");
    }
    for (std::size_t f = 0; f < files.size(); ++f) fs::rename(temps[f], files[f].first);
  } catch (...) {
    cleanup();
    throw;
  }
}

namespace {

struct PropensitySpec {
  enum class Kind { Column, Logistic, Kernel, Formula, File } kind;
  std::string argument;

  bool needs_training() const { return kind == Kind::Logistic || kind == Kind::Kernel; }
};

PropensitySpec parse_propensity_spec(const std::string& text) {
  if (text == "column") return {PropensitySpec::Kind::Column, {}};
  if (text == "logistic") return {PropensitySpec::Kind::Logistic, {}};
  if (text == "kernel") return {PropensitySpec::Kind::Kernel, {}};
  if (text.rfind("formula:", 0) == 0) return {PropensitySpec::Kind::Formula, text.substr(8)};
  if (text.rfind("file:", 0) == 0) return {PropensitySpec::Kind::File, text.substr(5)};
  throw std::invalid_argument("unknown propensity source '" + text +
                              "' (expected column, logistic, kernel, formula:<setting> or file:<path>)");
}

// Model for every source except `column`, which is read row by row instead.
std::optional<PropensityModel> propensity_model(const PropensitySpec& spec, const MaskedDataset& train) {
  switch (spec.kind) {
    case PropensitySpec::Kind::Column: return std::nullopt;
    case PropensitySpec::Kind::Logistic: return fit_logistic(train);
    case PropensitySpec::Kind::Kernel: return fit_kernel(train, default_bandwidth_grid(train));
    case PropensitySpec::Kind::File: return parse_propensity_model(read_file(spec.argument));
    case PropensitySpec::Kind::Formula: {
      const auto kind = parse_dgp_kind(spec.argument);
      if (kind == DgpKind::HighDim)
        throw std::invalid_argument("formula:highdim depends on per-study parameters; use a model file");
      return known_propensity(kind == DgpKind::Setting1 ? DgpSpec::setting1() : DgpSpec::setting2());
    }
  }
  return std::nullopt;
}

std::vector<double> propensities_for(const PropensitySpec& spec, const std::optional<PropensityModel>& model,
                                     const LoadedDataset& loaded, std::span<const std::size_t> rows) {
  std::vector<double> p;
  p.reserve(rows.size());
  if (spec.kind == PropensitySpec::Kind::Column) {
    if (!loaded.propensity) throw std::invalid_argument("propensity source 'column' needs a 'p' column");
    for (auto i : rows) p.push_back((*loaded.propensity)[i]);
    return p;
  }
  for (auto i : rows) p.push_back((*model)(loaded.data.row(i)));
  return p;
}

void check_dim(const PropensityModel& model, std::size_t dim) {
  if (model.kind() == PropensityKind::Logistic && static_cast<std::size_t>(model.coefficients().size()) != dim)
    throw std::invalid_argument("propensity model expects " + std::to_string(model.coefficients().size()) +
                                " features, data has " + std::to_string(dim));
  if (model.kind() == PropensityKind::Kernel && static_cast<std::size_t>(model.train_features().cols()) != dim)
    throw std::invalid_argument("propensity model expects " + std::to_string(model.train_features().cols()) +
                                " features, data has " + std::to_string(dim));
}

}  // namespace

void cmd_predict(const PredictOptions& o, std::ostream& log) {
  o.method.level.validate();
  if (!(o.split_ratio > 0.0 && o.split_ratio < 1.0)) throw std::invalid_argument("--split-ratio must lie in (0,1)");
  if (o.out.empty()) throw std::invalid_argument("--out is required");
  const auto loaded = load_dataset(parse_csv(read_file(o.input)), o.categorical);
  const auto& all = loaded.data;
  const auto n = all.size();

  const bool use_propensity = needs_propensity(o.method.method);
  const auto pspec = parse_propensity_spec(o.propensity);
  const bool split = !o.mean_model || (use_propensity && pspec.needs_training());

  std::vector<std::size_t> train_rows, cal_rows(n);
  std::iota(cal_rows.begin(), cal_rows.end(), std::size_t{0});
  if (split) {
    if (n < 2) throw std::invalid_argument("need at least two rows to split into training and calibration");
    auto order = cal_rows;
    Rng rng(substream_seed(o.seed, 0));
    rng.shuffle(order);
    auto n_train = static_cast<std::size_t>(std::llround(o.split_ratio * static_cast<double>(n)));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    train_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    cal_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(cal_rows.begin(), cal_rows.end());
  }
  const auto cal = all.subset(cal_rows);

  const MeanModel mean = o.mean_model ? parse_mean_model(read_file(*o.mean_model)) : fit_mean_lsq(all.subset(train_rows));
  if (static_cast<std::size_t>(mean.coefficients.size()) != all.dim())
    throw std::invalid_argument("mean model expects " + std::to_string(mean.coefficients.size()) +
                                " features, data has " + std::to_string(all.dim()));
  const auto score = ScoreModel::residual(mean);

  std::optional<PropensityModel> pmodel;
  std::vector<double> p;
  if (use_propensity) {
    pmodel = propensity_model(pspec, pspec.needs_training() ? all.subset(train_rows) : all);
    if (pmodel) check_dim(*pmodel, all.dim());
    p = propensities_for(pspec, pmodel, loaded, cal_rows);
  }

  auto method = o.method;
  method.partition_seed = substream_seed(o.seed, 1);
  const auto scores = observed_scores(score, cal);
  auto rule = build_rule(method, cal, scores, p);
  if (use_propensity && pspec.needs_training()) {
    rule.report.approximate = true;
    rule.report.warnings.push_back("propensity estimated without a reference; delta_hat slack not certified");
  }

  auto record = rule.report.to_record();
  record.set("input", o.input);
  record.set("rows", static_cast<double>(n));
  record.set("training_rows", static_cast<double>(train_rows.size()));
  record.set("calibration_rows", static_cast<double>(cal_rows.size()));
  record.set("score", std::string("residual"));
  record.set("mean_ridge_penalty", mean.ridge_penalty);
  record.set("propensity", use_propensity ? o.propensity : std::string("unused"));
  if (o.method.method == Method::ProCp || o.method.method == Method::ProCp2) {
    const auto stats = bin_stats(assign_bins(p, o.method.level.epsilon), cal.mask());
    record.set("bins_occupied", static_cast<double>(stats.occupied()));
  }
  record.set("block_size", static_cast<double>(o.method.block_size));
  record.set("seed", std::to_string(o.seed));

  CsvTable intervals;
  intervals.header = {"row_id", "threshold", "lower", "upper"};
  for (const auto& [i, t] : rule.thresholds) {
    const auto iv = interval_from_threshold(score, cal.row(i), t);
    const bool empty = iv.empty();
    intervals.rows.push_back({std::to_string(cal_rows[i]), format_double(t), empty ? "" : format_double(iv.lower),
                              empty ? "" : format_double(iv.upper)});
  }

  std::vector<std::pair<std::string, std::string>> files{{o.out + ".report.txt", record.str()},
                                                         {o.out + ".intervals.csv", write_csv(intervals)}};
  if (o.save_model) files.emplace_back(*o.save_model, serialize(mean));
  if (o.save_propensity) {
    if (!pmodel || pmodel->kind() == PropensityKind::Known)
      throw std::invalid_argument("--save-propensity needs a logistic, kernel or file propensity source");
    files.emplace_back(*o.save_propensity, serialize(*pmodel));
  }
  write_files_atomically(files);
  log << "method=" << to_string(o.method.method) << " missing=" << cal.n_missing()
      << (rule.report.vacuous() ? " (vacuous: no missing outcomes)" : "") << "\n";
  log << "wrote " << files[0].first << " and " << files[1].first << "\n";
}

void cmd_simulate(const SimulateOptions& o, std::ostream& log) {
  if (o.out.empty()) throw std::invalid_argument("--out is required");
  const auto kind = parse_dgp_kind(o.setting);
  const auto seed = o.study.seed;
  DgpSpec spec = kind == DgpKind::Setting1   ? DgpSpec::setting1(o.n, seed)
                 : kind == DgpKind::Setting2 ? DgpSpec::setting2(o.n, seed)
                                             : DgpSpec::highdim(o.n, seed, substream_seed(seed, 1));
  const auto summary = run_study(spec, o.study);

  auto record = summary.to_record();
  record.set("setting", to_string(kind));
  record.set("n", static_cast<double>(o.n));
  record.set("n_train", static_cast<double>(o.study.n_train));
  record.set("epsilon", o.study.method.level.epsilon);
  if (o.study.method.method == Method::McarPac || o.study.method.method == Method::MarPacSmall)
    record.set("delta", o.study.method.level.delta);
  record.set("block_size", static_cast<double>(o.study.method.block_size));
  record.set("propensity", to_string(o.study.propensity));
  record.set("seed", std::to_string(seed));

  CsvTable trials;
  trials.header = {"trial", "n_missing", "n_covered", "coverage", "median_width", "infinite_widths", "meets_target"};
  std::vector<double> coverage, width;
  for (std::size_t t = 0; t < summary.trials.size(); ++t) {
    const auto& m = summary.trials[t];
    trials.rows.push_back({std::to_string(t), std::to_string(m.n_missing), std::to_string(m.n_covered),
                           format_double(m.coverage_proportion), format_double(m.median_width),
                           std::to_string(m.infinite_width_count), m.meets(summary.alpha) ? "1" : "0"});
    coverage.push_back(m.coverage_proportion);
    width.push_back(m.median_width);
  }
  write_files_atomically({{o.out + ".summary.txt", record.str()},
                          {o.out + ".trials.csv", write_csv(trials)},
                          {o.out + ".coverage_hist.csv", histogram_csv(histogram(coverage, o.hist_bins), "coverage")},
                          {o.out + ".width_hist.csv", histogram_csv(histogram(width, o.hist_bins), "median_width")}});
  log << record.str();
}

void cmd_diagnose(const DiagnoseOptions& o, std::ostream& log) {
  Level{o.alpha, o.epsilon, 0.5}.validate();
  const auto loaded = load_dataset(parse_csv(read_file(o.input)), o.categorical);
  std::vector<std::size_t> rows(loaded.data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  auto evaluate_source = [&](const std::string& text) {
    const auto spec = parse_propensity_spec(text);
    const auto model = propensity_model(spec, loaded.data);
    if (model) check_dim(*model, loaded.data.dim());
    return propensities_for(spec, model, loaded, rows);
  };
  const auto truth = evaluate_source(o.truth);
  const auto estimate = evaluate_source(o.estimate);
  const auto diag = odds_diagnostic(truth, estimate);

  GuaranteeReport mean_report;
  mean_report.alpha = o.alpha;
  mean_report.epsilon = o.epsilon;
  mean_report.delta_hat = diag.delta_hat;
  auto squared_report = mean_report;
  squared_report.type = GuaranteeType::SquaredCoverage;

  TextRecord r;
  r.set("truth", o.truth);
  r.set("estimate", o.estimate);
  r.set("points", static_cast<double>(rows.size()));
  r.set("max_abs_log_f", diag.max_abs_log_f);
  r.set("delta_hat", diag.delta_hat);
  r.set("approximate", std::string("true"));
  r.set("note", std::string("maximum over the supplied rows only; a lower bound on the sup-norm"));
  r.set("alpha", o.alpha);
  r.set("epsilon", o.epsilon);
  r.set("slack", mean_report.slack());
  r.set("pro_cp_effective_level", mean_report.effective_level());
  r.set("pro_cp2_effective_bound", squared_report.effective_level());
  if (o.out) write_files_atomically({{*o.out + ".diagnose.txt", r.str()}});
  log << r.str();
}

// ------------------------------------------------------------ command line

namespace {

// Turns key=value lines of a config file into --key=value arguments placed
// ahead of the real ones, so flags given on the command line win.
std::vector<std::string> expand_config(const std::vector<std::string>& args, CLI::App* sub) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  const auto text = read_file(path);
  std::vector<std::string> injected;
  std::istringstream lines(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config " + path + " line " + std::to_string(lineno) + ": expected key=value");
    auto key = line.substr(first, eq - first);
    key.erase(key.find_last_not_of(" \t") + 1);
    auto value = line.substr(eq + 1);
    value.erase(0, value.find_first_not_of(" \t"));
    value.erase(value.find_last_not_of(" \t") + 1);
    if (key == "config" || !sub->get_option_no_throw("--" + key))
      throw std::invalid_argument("config " + path + " line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    injected.push_back("--" + key + "=" + value);
  }
  std::vector<std::string> out;
  out.push_back(args.front());
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

void add_level_options(CLI::App* sub, Level& level, bool with_delta) {
  sub->add_option("--alpha", level.alpha, "Target miscoverage level in (0,1)")->capture_default_str();
  sub->add_option("--epsilon", level.epsilon, "Propensity discretization level")->capture_default_str();
  if (with_delta) sub->add_option("--delta", level.delta, "PAC failure probability")->capture_default_str();
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Simultaneous conformal prediction sets for outcomes missing at random"};
  app.name("procp");
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_path;

  PredictOptions predict;
  std::string predict_method = "pro-cp";
  auto* p = app.add_subcommand("predict", "Build prediction sets for the missing outcomes of a CSV dataset");
  p->add_option("--config", config_path, "key=value file with defaults for these flags");
  p->add_option("--input,-i", predict.input, "Input CSV")->required();
  p->add_option("--out,-o", predict.out, "Output prefix")->required();
  p->add_option("--method", predict_method, "per-feature|simultaneous|pro-cp|pro-cp2|weighted|mcar-pac|mar-pac-small")
      ->capture_default_str();
  add_level_options(p, predict.method.level, true);
  p->add_option("--block-size", predict.method.block_size, "Partition block size (0 = none)")->capture_default_str();
  p->add_flag("--shuffle-blocks", predict.method.shuffle_blocks, "Shuffle rows before forming blocks");
  p->add_option("--propensity", predict.propensity, "column|logistic|kernel|formula:<1|2>|file:<path>")
      ->capture_default_str();
  p->add_option("--categorical", predict.categorical, "Comma-separated categorical feature columns")->delimiter(',');
  p->add_option("--seed", predict.seed, "Random seed")->capture_default_str();
  p->add_option("--split-ratio", predict.split_ratio, "Fraction of rows used for model fitting")->capture_default_str();
  p->add_option("--mean-model", predict.mean_model, "Use this mean model file instead of fitting one");
  p->add_option("--save-model", predict.save_model, "Write the mean model to this file");
  p->add_option("--save-propensity", predict.save_propensity, "Write the fitted propensity model to this file");

  SimulateOptions simulate;
  std::string sim_method = "pro-cp", sim_propensity = "known";
  auto* s = app.add_subcommand("simulate", "Run a Monte-Carlo coverage study");
  s->add_option("--config", config_path, "key=value file with defaults for these flags");
  s->add_option("--out,-o", simulate.out, "Output prefix")->required();
  s->add_option("--setting", simulate.setting, "1|2|highdim")->capture_default_str();
  s->add_option("--method", sim_method, "Set constructor")->capture_default_str();
  add_level_options(s, simulate.study.method.level, true);
  s->add_option("--block-size", simulate.study.method.block_size, "Partition block size (0 = none)")
      ->capture_default_str();
  s->add_flag("--shuffle-blocks", simulate.study.method.shuffle_blocks, "Shuffle rows before forming blocks");
  s->add_option("--propensity", sim_propensity, "known|logistic|kernel")->capture_default_str();
  s->add_option("--trials", simulate.study.n_trials, "Number of trials")->capture_default_str();
  s->add_option("--n", simulate.n, "Calibration size per trial")->capture_default_str();
  s->add_option("--n-train", simulate.study.n_train, "Training split size")->capture_default_str();
  s->add_option("--seed", simulate.study.seed, "Master seed")->capture_default_str();
  s->add_option("--threads", simulate.study.threads, "Worker threads (0 = all; PROCP_THREADS caps)");
  s->add_option("--hist-bins", simulate.hist_bins, "Histogram bins")->capture_default_str();

  DiagnoseOptions diagnose;
  auto* d = app.add_subcommand("diagnose", "Odds-ratio accuracy of an estimated propensity");
  d->add_option("--config", config_path, "key=value file with defaults for these flags");
  d->add_option("--input,-i", diagnose.input, "Input CSV")->required();
  d->add_option("--out,-o", diagnose.out, "Output prefix");
  d->add_option("--truth", diagnose.truth, "Reference propensity source")->capture_default_str();
  d->add_option("--estimate", diagnose.estimate, "Estimated propensity source")->capture_default_str();
  d->add_option("--categorical", diagnose.categorical, "Comma-separated categorical feature columns")->delimiter(',');
  d->add_option("--alpha", diagnose.alpha, "Target miscoverage level")->capture_default_str();
  d->add_option("--epsilon", diagnose.epsilon, "Propensity discretization level")->capture_default_str();

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    if (!args.empty()) {
      CLI::App* sub = nullptr;
      for (auto* candidate : {p, s, d})
        if (args.front() == candidate->get_name()) sub = candidate;
      if (sub) args = expand_config(args, sub);
    }
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (p->parsed()) {
      predict.method.method = parse_method(predict_method);
      cmd_predict(predict, out);
    } else if (s->parsed()) {
      simulate.study.method.method = parse_method(sim_method);
      simulate.study.propensity = parse_propensity_source(sim_propensity);
      cmd_simulate(simulate, out);
    } else if (d->parsed()) {
      cmd_diagnose(diagnose, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace procp
