#include "procp/simlab.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace procp {

namespace {

constexpr std::uint64_t kTrainStream = 0;
constexpr std::uint64_t kTrialStreamBase = 16;

double sigmoid(double t) {
  return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

double setting1_p(double x) { return 0.9 - 0.02 * x; }
double setting2_p(double x) { return 0.8 - 0.1 * (1.0 + 0.1 * x) * std::sin(3.0 * x); }

}  // namespace

std::string to_string(DgpKind kind) {
  switch (kind) {
    case DgpKind::Setting1: return "setting1";
    case DgpKind::Setting2: return "setting2";
    case DgpKind::HighDim: return "highdim";
    case DgpKind::Custom: return "custom";
  }
  return "unknown";
}

DgpKind parse_dgp_kind(std::string_view name) {
  if (name == "1" || name == "setting1") return DgpKind::Setting1;
  if (name == "2" || name == "setting2") return DgpKind::Setting2;
  if (name == "highdim" || name == "3") return DgpKind::HighDim;
  throw std::invalid_argument("unknown setting '" + std::string(name) + "' (expected 1, 2 or highdim)");
}

DgpSpec DgpSpec::setting1(std::size_t n, std::uint64_t seed) {
  DgpSpec s;
  s.kind = DgpKind::Setting1;
  s.n = n;
  s.seed = seed;
  return s;
}

DgpSpec DgpSpec::setting2(std::size_t n, std::uint64_t seed) {
  auto s = setting1(n, seed);
  s.kind = DgpKind::Setting2;
  return s;
}

DgpSpec DgpSpec::highdim(std::size_t n, std::uint64_t seed, std::uint64_t param_seed) {
  DgpSpec s;
  s.kind = DgpKind::HighDim;
  s.n = n;
  s.seed = seed;
  s.dim = 30;
  Rng rng(param_seed);
  s.beta.resize(30);
  for (Eigen::Index j = 0; j < 30; ++j) s.beta[j] = rng.uniform(-2.0, 2.0);
  s.gamma = Eigen::VectorXd::Zero(30);
  s.gamma[0] = 0.2;
  s.gamma[1] = -0.3;
  s.gamma[2] = 0.2;
  return s;
}

double true_propensity(const DgpSpec& spec, std::span<const double> x) {
  switch (spec.kind) {
    case DgpKind::Setting1: return setting1_p(x[0]);
    case DgpKind::Setting2: return setting2_p(x[0]);
    case DgpKind::HighDim: {
      double t = spec.gamma0;
      for (std::size_t j = 0; j < x.size(); ++j) t += spec.gamma[static_cast<Eigen::Index>(j)] * x[j];
      return sigmoid(t);
    }
    case DgpKind::Custom: {
      if (!spec.propensity) throw std::invalid_argument("custom design has no propensity function");
      const double p = spec.propensity(x);
      if (!(p > 0.0 && p < 1.0))
        throw std::invalid_argument("custom design propensity " + format_double(p) + " escapes (0,1)");
      return p;
    }
  }
  throw std::logic_error("true_propensity: unhandled design");
}

PropensityModel known_propensity(const DgpSpec& spec) {
  return PropensityModel::known([spec](std::span<const double> x) { return true_propensity(spec, x); },
                                "known-" + to_string(spec.kind));
}

double sample_outcome(const DgpSpec& spec, std::span<const double> x, Rng& rng) {
  switch (spec.kind) {
    case DgpKind::Setting1:
    case DgpKind::Setting2: return rng.normal(x[0], 3.0 + x[0]);
    case DgpKind::HighDim: {
      double mean = 5.0, sq = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) {
        mean += spec.beta[static_cast<Eigen::Index>(j)] * x[j];
        sq += x[j] * x[j];
      }
      return rng.normal(mean, sq / static_cast<double>(x.size()));
    }
    case DgpKind::Custom:
      if (!spec.sample_outcome) throw std::invalid_argument("custom design has no outcome sampler");
      return spec.sample_outcome(x, rng);
  }
  throw std::logic_error("sample_outcome: unhandled design");
}

namespace {

std::size_t design_dim(const DgpSpec& spec) {
  switch (spec.kind) {
    case DgpKind::Setting1:
    case DgpKind::Setting2: return 1;
    case DgpKind::HighDim:
      if (spec.beta.size() != static_cast<Eigen::Index>(spec.dim) ||
          spec.gamma.size() != static_cast<Eigen::Index>(spec.dim))
        throw std::invalid_argument("highdim design: beta and gamma must have length dim");
      return spec.dim;
    case DgpKind::Custom:
      if (!spec.sample_features || !spec.propensity || !spec.sample_outcome)
        throw std::invalid_argument("custom design needs feature, propensity and outcome samplers");
      return spec.dim;
  }
  return 0;
}

void draw_features(const DgpSpec& spec, Rng& rng, double* out, std::size_t d) {
  switch (spec.kind) {
    case DgpKind::Setting1:
    case DgpKind::Setting2: out[0] = rng.uniform(0.0, 10.0); return;
    case DgpKind::HighDim:
      for (std::size_t j = 0; j < d; ++j) out[j] = rng.normal(1.0, std::sqrt(2.0));
      return;
    case DgpKind::Custom: {
      const auto x = spec.sample_features(rng);
      if (x.size() != d) throw std::invalid_argument("custom design returned a feature vector of the wrong length");
      std::copy(x.begin(), x.end(), out);
      return;
    }
  }
}

}  // namespace

SimData generate(const DgpSpec& spec, std::size_t n, Rng& rng) {
  if (n == 0) throw std::invalid_argument("generate: n must be positive");
  const auto d = design_dim(spec);
  FeatureMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::vector<std::uint8_t> mask(n);
  std::vector<double> y(n), p(n);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = x.data() + i * d;
    draw_features(spec, rng, row, d);
    const std::span<const double> xs(row, d);
    p[i] = true_propensity(spec, xs);
    y[i] = sample_outcome(spec, xs, rng);
    mask[i] = rng.bernoulli(p[i]) ? 1 : 0;
  }
  auto outcomes = y;
  return SimData{MaskedDataset(std::move(x), std::move(mask), std::move(y)), std::move(outcomes), std::move(p)};
}

SimData generate(const DgpSpec& spec) {
  Rng rng(spec.seed);
  return generate(spec, spec.n, rng);
}

// ------------------------------------------------------------------ metrics

bool TrialMetrics::meets(double alpha) const {
  if (n_missing == 0) return true;
  const auto need = static_cast<std::size_t>(std::ceil((1.0 - alpha) * static_cast<double>(n_missing) - 1e-9));
  return n_covered >= need;
}

double median_of(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

TrialMetrics evaluate(const PredictionRule& rule, const MaskedDataset& cal, std::span<const double> truth,
                      const ScoreModel& model, const BinAssignment* bins) {
  if (truth.size() != cal.size()) throw std::invalid_argument("evaluate: truth length differs from dataset size");
  if (bins && bins->size() != cal.size()) throw std::invalid_argument("evaluate: bins length differs");
  const auto missing = cal.missing_indices();
  if (rule.thresholds.size() != missing.size())
    throw std::invalid_argument("evaluate: rule has " + std::to_string(rule.thresholds.size()) +
                                " thresholds for " + std::to_string(missing.size()) + " missing indices");
  TrialMetrics m;
  m.n_missing = missing.size();
  std::vector<double> widths;
  widths.reserve(missing.size());
  std::map<BinId, std::pair<std::size_t, std::size_t>> per_bin;
  for (auto i : missing) {
    const double t = rule.threshold(i);
    const auto x = cal.row(i);
    const bool covered = model(x, truth[i]) <= t;
    m.n_covered += covered;
    const double w = interval_from_threshold(model, x, t).width();
    m.infinite_width_count += std::isinf(w);
    widths.push_back(w);
    if (bins) {
      auto& c = per_bin[bins->bin_index[i]];
      c.first += covered;
      ++c.second;
    }
  }
  if (m.n_missing > 0) {
    m.coverage_proportion = static_cast<double>(m.n_covered) / static_cast<double>(m.n_missing);
    m.median_width = median_of(std::move(widths));
  }
  for (const auto& [k, c] : per_bin)
    m.bin_coverage[k] = static_cast<double>(c.first) / static_cast<double>(c.second);
  return m;
}

std::string to_string(PropensitySource source) {
  switch (source) {
    case PropensitySource::Known: return "known";
    case PropensitySource::Logistic: return "logistic";
    case PropensitySource::Kernel: return "kernel";
  }
  return "unknown";
}

PropensitySource parse_propensity_source(std::string_view name) {
  if (name == "known" || name == "column") return PropensitySource::Known;
  if (name == "logistic") return PropensitySource::Logistic;
  if (name == "kernel") return PropensitySource::Kernel;
  throw std::invalid_argument("unknown propensity source '" + std::string(name) + "'");
}

MeanWithError mean_and_se(std::span<const double> values) {
  MeanWithError out;
  if (values.empty()) return out;
  if (std::any_of(values.begin(), values.end(), [](double v) { return std::isinf(v); })) {
    out.mean = kInf;
    out.se = kInf;
    return out;
  }
  const double n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.se = std::sqrt(ss / (n - 1.0) / n);
  }
  return out;
}

TextRecord StudySummary::to_record() const {
  TextRecord r;
  r.set("method", method);
  r.set("alpha", alpha);
  r.set("trials", static_cast<double>(trials.size()));
  r.set("mean_coverage", coverage.mean);
  r.set("mean_coverage_se", coverage.se);
  r.set("prob_coverage_at_least_target", prob_meets.mean);
  r.set("prob_coverage_at_least_target_se", prob_meets.se);
  r.set("mean_median_width", median_width.mean);
  r.set("mean_median_width_se", median_width.se);
  r.set("infinite_median_trials", static_cast<double>(infinite_median_trials));
  r.set("delta_hat", delta_hat);
  return r;
}

unsigned worker_count(unsigned requested) {
  unsigned n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PROCP_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && cap > 0) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return std::max(1u, n);
}

namespace {

// Runs fn(t) for t in [0, count) on up to `workers` threads. Results are
// written by index, so the schedule does not affect them.
template <class Fn>
void parallel_for(std::size_t count, unsigned workers, Fn fn) {
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(count, 1)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t t; (t = next.fetch_add(1)) < count;) {
      try {
        fn(t);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(count);
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
}

struct TrainedModels {
  ScoreModel score;
  PropensityModel propensity;
  bool estimated = false;
};

TrainedModels train_models(const DgpSpec& spec, const StudyConfig& config) {
  if (config.n_train == 0) throw std::invalid_argument("study: n_train must be positive");
  auto rng = Rng::substream(config.seed, kTrainStream);
  const auto train = generate(spec, config.n_train, rng);
  TrainedModels m{ScoreModel::residual(fit_mean_lsq(train.data)), known_propensity(spec), false};
  switch (config.propensity) {
    case PropensitySource::Known: break;
    case PropensitySource::Logistic:
      m.propensity = fit_logistic(train.data);
      m.estimated = true;
      break;
    case PropensitySource::Kernel:
      m.propensity = fit_kernel(train.data, default_bandwidth_grid(train.data));
      m.estimated = true;
      break;
  }
  return m;
}

}  // namespace

StudySummary run_study(const DgpSpec& spec, const StudyConfig& config) {
  if (config.n_trials == 0) throw std::invalid_argument("run_study: need at least one trial");
  config.method.level.validate();
  const auto models = train_models(spec, config);
  const auto truth_model = known_propensity(spec);

  std::vector<TrialMetrics> trials(config.n_trials);
  std::vector<double> delta_hats(config.n_trials, 0.0);
  parallel_for(config.n_trials, worker_count(config.threads), [&](std::size_t t) {
    auto rng = Rng::substream(config.seed, kTrialStreamBase + t);
    const auto cal = generate(spec, spec.n, rng);
    const auto scores = observed_scores(models.score, cal.data);
    auto method = config.method;
    method.partition_seed = substream_seed(config.seed ^ 0x5bd1e995ULL, t);
    std::vector<double> p;
    if (needs_propensity(method.method)) p = models.propensity.evaluate(cal.data.features());
    if (models.estimated) {
      const auto diag = odds_diagnostic(truth_model, models.propensity, cal.data.features());
      method.delta_hat = diag.delta_hat;
      method.delta_hat_approximate = true;
      delta_hats[t] = diag.delta_hat;
    }
    const auto rule = build_rule(method, cal.data, scores, p);
    trials[t] = evaluate(rule, cal.data, cal.outcomes, models.score);
  });

  StudySummary s;
  s.method = to_string(config.method.method);
  s.alpha = config.method.level.alpha;
  std::vector<double> cov, meets, width;
  for (const auto& m : trials) {
    cov.push_back(m.coverage_proportion);
    meets.push_back(m.meets(s.alpha) ? 1.0 : 0.0);
    width.push_back(m.median_width);
    s.infinite_median_trials += std::isinf(m.median_width);
  }
  s.coverage = mean_and_se(cov);
  s.prob_meets = mean_and_se(meets);
  s.median_width = mean_and_se(width);
  s.delta_hat = mean_and_se(delta_hats).mean;
  s.trials = std::move(trials);
  return s;
}

namespace {

// Draw from X | (B = k, A = a) for Setting 1: X is uniform on [0,10], the
// bin is an x-interval because the propensity is monotone, and conditioning
// on A tilts the uniform density by p(x) or 1 - p(x), both linear in x.
double resample_setting1(double x_old, BinId k, bool observed, double epsilon, Rng& rng) {
  const auto [z_lo, z_hi] = bin_propensity_range(k, epsilon);
  // p = 0.9 - 0.02 x is decreasing, so the bin's upper propensity edge is
  // the lower x edge.
  double lo = std::max(0.0, (0.9 - z_hi) / 0.02);
  double hi = std::min(10.0, (0.9 - z_lo) / 0.02);
  if (!(hi > lo)) return x_old;
  const double g_lo = observed ? setting1_p(lo) : 1.0 - setting1_p(lo);
  const double slope = observed ? -0.02 : 0.02;
  const double len = hi - lo;
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double total = g_lo * len + 0.5 * slope * len * len;
    const double g = rng.uniform() * total;
    const double x = lo + 2.0 * g / (g_lo + std::sqrt(std::max(0.0, g_lo * g_lo + 2.0 * slope * g)));
    // Rounding at the interval ends can leave the bin; redraw in that case.
    if (odds_bin(setting1_p(x), epsilon) == k) return x;
  }
  return x_old;
}

}  // namespace

std::vector<ConditionalTrial> conditional_coverage_study(const DgpSpec& spec, const StudyConfig& config,
                                                         std::size_t n_outer, std::size_t n_inner,
                                                         std::uint64_t seed) {
  if (n_outer == 0 || n_inner == 0) throw std::invalid_argument("conditional_coverage_study: need n_outer, n_inner >= 1");
  if (spec.kind == DgpKind::Custom && !spec.sample_outcome)
    throw std::invalid_argument("conditional_coverage_study: custom design cannot redraw outcomes");
  config.method.level.validate();
  auto study = config;
  study.seed = seed;
  const auto models = train_models(spec, study);
  const bool resample_x = spec.kind == DgpKind::Setting1 && config.propensity == PropensitySource::Known;
  const double epsilon = config.method.level.epsilon;
  if (resample_x && !(epsilon > 0.0))
    throw std::invalid_argument("conditional_coverage_study: feature resampling needs epsilon > 0");

  std::vector<ConditionalTrial> out(n_outer);
  parallel_for(n_outer, worker_count(config.threads), [&](std::size_t o) {
    const auto outer_seed = substream_seed(seed, kTrialStreamBase + o);
    Rng rng(outer_seed);
    const auto base = generate(spec, spec.n, rng);
    const auto n = base.data.size();
    const auto d = base.data.dim();
    BinAssignment bins;
    if (resample_x) bins = assign_bins(base.propensities, epsilon);

    std::vector<double> coverages;
    coverages.reserve(n_inner);
    for (std::size_t j = 0; j < n_inner; ++j) {
      auto inner = Rng::substream(outer_seed, j + 1);
      FeatureMatrix x = base.data.features();
      std::vector<double> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        double* row = x.data() + i * d;
        if (resample_x) row[0] = resample_setting1(row[0], bins.bin_index[i], base.data.observed(i), epsilon, inner);
        y[i] = sample_outcome(spec, std::span<const double>(row, d), inner);
      }
      const MaskedDataset cal(std::move(x), base.data.mask(), y);
      const auto scores = observed_scores(models.score, cal);
      std::vector<double> p;
      if (needs_propensity(config.method.method)) p = models.propensity.evaluate(cal.features());
      auto method = config.method;
      method.partition_seed = substream_seed(outer_seed, 0);
      const auto rule = build_rule(method, cal, scores, p);
      coverages.push_back(evaluate(rule, cal, y, models.score).coverage_proportion);
    }
    const auto stats = mean_and_se(coverages);
    out[o] = ConditionalTrial{stats.mean, stats.se, base.data.n_missing(), resample_x};
  });
  return out;
}

Histogram histogram(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("histogram: need at least one bin");
  Histogram h;
  double lo = kInf, hi = -kInf;
  for (double v : values) {
    if (std::isnan(v)) continue;
    if (std::isinf(v)) {
      ++h.infinite;
      continue;
    }
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lo > hi) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi == lo) hi = lo + 1.0;
  h.edges.resize(bins + 1);
  for (std::size_t j = 0; j <= bins; ++j) h.edges[j] = lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(bins);
  h.counts.assign(bins, 0);
  for (double v : values) {
    if (!std::isfinite(v)) continue;
    auto j = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
    ++h.counts[std::min(j, bins - 1)];
  }
  return h;
}

std::string histogram_csv(const Histogram& h, const std::string& label) {
  std::ostringstream out;
  out << "quantity,lower,upper,count\n";
  for (std::size_t j = 0; j < h.counts.size(); ++j)
    out << label << ',' << format_double(h.edges[j]) << ',' << format_double(h.edges[j + 1]) << ',' << h.counts[j]
        << '\n';
  if (h.infinite > 0) out << label << ",inf,inf," << h.infinite << '\n';
  return out.str();
}

}  // namespace procp
