#include "expt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "expt/csv.hpp"
#include "expt/errors.hpp"
#include "expt/kernels.hpp"

namespace expt::eval {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double parse_number(const std::string& text, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw InputError(where + ": expected a number, got '" + text + "'");
  }
  if (used != text.size()) throw InputError(where + ": expected a number, got '" + text + "'");
  return v;
}

void check_metadata(const OracleMetadata& m, const std::string& id) {
  if (!(m.y_min < m.y_max)) throw InputError("oracle " + id + ": y_min must be < y_max");
  if (!(m.box.lo < m.box.hi)) throw InputError("oracle " + id + ": empty domain box");
  if (m.d == 0) throw InputError("oracle " + id + ": zero dimension");
}

}  // namespace

Interpolation parse_interpolation(std::string_view name) {
  if (name == "nearest") return Interpolation::kNearest;
  if (name == "posterior-mean") return Interpolation::kPosteriorMean;
  throw ConfigError("unknown oracle interpolation '" + std::string(name) + "' (expected nearest|posterior-mean)");
}

Oracle Oracle::synthetic(Points reference_x, Values reference_y, Interval box, Interpolation interp,
                         const synthfn::KernelSpec& kernel, std::string id) {
  if (reference_x.rows() == 0) throw InputError("synthetic oracle: empty reference set");
  if (reference_x.rows() != reference_y.size()) throw InputError("synthetic oracle: x/y row count mismatch");
  Oracle o;
  o.kind_ = OracleKind::kSyntheticGP;
  o.id_ = std::move(id);
  o.meta_.y_min = reference_y.minCoeff();
  o.meta_.y_max = reference_y.maxCoeff();
  o.meta_.y_star = o.meta_.y_max;
  o.meta_.box = box;
  o.meta_.d = static_cast<std::size_t>(reference_x.cols());
  check_metadata(o.meta_, o.id_);
  o.interp_ = interp;
  o.kernel_ = kernel;
  if (interp == Interpolation::kPosteriorMean) {
    Eigen::MatrixXd K = synthfn::kernel_matrix(reference_x, kernel);
    const double base = 1e-6 * std::max(kernel.scale * kernel.scale, 1.0);
    for (double jitter = base;; jitter *= 10.0) {
      Eigen::MatrixXd A = K;
      A.diagonal().array() += jitter;
      Eigen::LLT<Eigen::MatrixXd> llt(A);
      if (llt.info() == Eigen::Success) {
        o.alpha_ = llt.solve(reference_y);
        break;
      }
      if (jitter >= 1e4 * base) throw DegenerateKernelError("posterior-mean oracle: covariance not positive definite", jitter);
    }
  }
  o.ref_x_ = std::move(reference_x);
  o.ref_y_ = std::move(reference_y);
  return o;
}

Oracle Oracle::table(const std::string& csv_path) {
  const csv::Table t = csv::read_numeric(csv_path);
  if (t.header.size() < 2) throw InputError(csv_path + ": need x columns and a y column");
  const std::size_t d = t.header.size() - 1;
  for (std::size_t i = 0; i < d; ++i)
    if (trim(t.header[i]) != "x_" + std::to_string(i))
      throw InputError(csv_path + ": column " + std::to_string(i) + " must be named x_" + std::to_string(i));
  if (trim(t.header[d]) != "y") throw InputError(csv_path + ": last column must be named y");
  if (t.rows.empty()) throw InputError(csv_path + ": no data rows");
  Oracle o;
  o.kind_ = OracleKind::kTable;
  o.id_ = csv_path;
  o.ref_x_.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(d));
  o.ref_y_.resize(static_cast<Eigen::Index>(t.rows.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    for (std::size_t c = 0; c < d; ++c) o.ref_x_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t.rows[r][c];
    o.ref_y_[static_cast<Eigen::Index>(r)] = t.rows[r][d];
  }
  o.meta_.d = d;
  o.meta_.y_min = o.ref_y_.minCoeff();
  o.meta_.y_max = o.ref_y_.maxCoeff();
  o.meta_.y_star = o.meta_.y_max;

  const std::string meta_path = csv_path + ".meta";
  std::ifstream in(meta_path);
  if (!in) throw IoError("cannot open oracle metadata " + meta_path);
  bool have_box = false;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    const std::string where = meta_path + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw InputError(where + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key == "y_min") {
      o.meta_.y_min = parse_number(value, where);
    } else if (key == "y_max") {
      o.meta_.y_max = parse_number(value, where);
    } else if (key == "y_star") {
      o.meta_.y_star = parse_number(value, where);
    } else if (key == "box") {
      if (value.size() < 2 || value.front() != '[' || value.back() != ']')
        throw InputError(where + ": box must be written [lo, hi]");
      auto parts = csv::split_line(std::string_view(value).substr(1, value.size() - 2));
      if (parts.size() != 2) throw InputError(where + ": box must be written [lo, hi]");
      o.meta_.box = {parse_number(trim(parts[0]), where), parse_number(trim(parts[1]), where)};
      have_box = true;
    } else {
      throw InputError(where + ": unknown key '" + key + "'");
    }
  }
  if (!have_box) throw InputError(meta_path + ": missing box");
  check_metadata(o.meta_, o.id_);
  return o;
}

Oracle Oracle::analytic(Function f, OracleMetadata meta, std::string id) {
  if (!f) throw InputError("analytic oracle: empty function");
  Oracle o;
  o.kind_ = OracleKind::kAnalyticTest;
  o.id_ = std::move(id);
  check_metadata(meta, o.id_);
  o.meta_ = meta;
  o.fn_ = std::move(f);
  return o;
}

void Oracle::check_dimension(std::size_t d) const {
  if (d != meta_.d)
    throw InputError("oracle " + id_ + ": design dimension " + std::to_string(d) + " != " + std::to_string(meta_.d));
}

double Oracle::evaluate(const double* x) {
  Points row = Eigen::Map<const Points>(x, 1, static_cast<Eigen::Index>(meta_.d));
  return evaluate(row)[0];
}

Values Oracle::evaluate(const Points& x) {
  check_dimension(static_cast<std::size_t>(x.cols()));
  const auto q = x.rows();
  Values out(q);
  if (kind_ == OracleKind::kAnalyticTest) {
    for (Eigen::Index i = 0; i < q; ++i) out[i] = fn_(x.row(i).data(), meta_.d);
  } else if (interp_ == Interpolation::kPosteriorMean && kind_ == OracleKind::kSyntheticGP) {
    const auto n = ref_x_.rows();
#pragma omp parallel for
    for (Eigen::Index i = 0; i < q; ++i) {
      double acc = 0.0;
      for (Eigen::Index r = 0; r < n; ++r)
        acc += synthfn::kernel_value(kernel_, x.row(i).data(), ref_x_.row(r).data(), meta_.d) * alpha_[r];
      out[i] = acc;
    }
  } else {
    auto idx = kernels::nearest_rows(std::span<const double>(ref_x_.data(), static_cast<std::size_t>(ref_x_.size())),
                                     std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), meta_.d);
    for (Eigen::Index i = 0; i < q; ++i) out[i] = ref_y_[static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)])];
  }
  calls_ += static_cast<std::size_t>(q);
  return out;
}

Oracle make_synthetic_oracle(const synthfn::KernelSpec& kernel, std::size_t d, Interval box,
                             std::size_t reference_size, Interpolation interp, std::uint64_t seed) {
  kernel.validate();
  if (d == 0 || reference_size == 0) throw ConfigError("synthetic oracle: dimension and reference size must be positive");
  Rng rng = Rng::stream(seed, 0x6f7261636c65);
  Points x(static_cast<Eigen::Index>(reference_size), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(box.lo, box.hi);
  Values y = synthfn::sample_gp_reference(x, kernel, rng);
  std::ostringstream id;
  id << "synthetic:" << kernel.describe() << ":d=" << d << ":seed=" << seed;
  return Oracle::synthetic(std::move(x), std::move(y), box, interp, kernel, id.str());
}

std::string FewShotMode::describe() const {
  std::ostringstream s;
  switch (kind) {
    case Kind::kRandomFraction: s << "random-fraction(" << fraction << ")"; break;
    case Kind::kPoorestFraction: s << "poorest-fraction(" << fraction << ")"; break;
    case Kind::kBelowPercentile: s << "below-percentile(" << count << ", " << percentile << ")"; break;
  }
  return s.str();
}

double percentile(const Values& y, double pct) {
  if (y.size() == 0) throw InputError("percentile of an empty set");
  if (!(pct >= 0.0 && pct <= 100.0)) throw InputError("percentile must lie in [0, 100]");
  std::vector<double> v(y.data(), y.data() + y.size());
  std::sort(v.begin(), v.end());
  const double pos = pct / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

FewShotDataset make_few_shot(const Points& x, const Values& y, const FewShotMode& mode, Rng& rng,
                             const std::string& source_id, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(y.size());
  if (n == 0) throw InputError("make_few_shot: empty source");
  if (static_cast<std::size_t>(x.rows()) != n) throw InputError("make_few_shot: x/y row count mismatch");
  std::vector<std::size_t> chosen;
  auto sample_from = [&](std::vector<std::size_t> pool, std::size_t k) {
    for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    pool.resize(k);
    return pool;
  };
  using Kind = FewShotMode::Kind;
  if (mode.kind == Kind::kRandomFraction || mode.kind == Kind::kPoorestFraction) {
    if (!(mode.fraction > 0.0 && mode.fraction <= 1.0)) throw InputError("make_few_shot: fraction must lie in (0, 1]");
    const auto k = static_cast<std::size_t>(std::ceil(mode.fraction * static_cast<double>(n) - 1e-9));
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (mode.kind == Kind::kRandomFraction) {
      chosen = sample_from(std::move(all), k);
    } else {
      std::stable_sort(all.begin(), all.end(), [&](std::size_t a, std::size_t b) {
        return y[static_cast<Eigen::Index>(a)] < y[static_cast<Eigen::Index>(b)];
      });
      all.resize(k);
      chosen = std::move(all);
    }
  } else {
    const double threshold = percentile(y, mode.percentile);
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < n; ++i)
      if (y[static_cast<Eigen::Index>(i)] < threshold) eligible.push_back(i);
    if (mode.count == 0) throw InputError("make_few_shot: count must be positive");
    if (eligible.size() < mode.count)
      throw InputError("make_few_shot: only " + std::to_string(eligible.size()) + " points below the " +
                       std::to_string(mode.percentile) + "th percentile, " + std::to_string(mode.count) + " requested");
    chosen = sample_from(std::move(eligible), mode.count);
  }
  FewShotDataset out;
  out.mode = mode.describe();
  out.source_id = source_id;
  out.seed = seed;
  out.data.x.resize(static_cast<Eigen::Index>(chosen.size()), x.cols());
  out.data.y.resize(static_cast<Eigen::Index>(chosen.size()));
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    out.data.x.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(chosen[i]));
    out.data.y[static_cast<Eigen::Index>(i)] = y[static_cast<Eigen::Index>(chosen[i])];
  }
  out.source_rows = std::move(chosen);
  return out;
}

double normalize_score(double y, const OracleMetadata& meta) {
  if (meta.y_max == meta.y_min) throw InputError("normalize_score: y_max equals y_min");
  return (y - meta.y_min) / (meta.y_max - meta.y_min);
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json{{"scores_raw", r.scores_raw},
                     {"scores_norm", r.scores_norm},
                     {"median", r.median},
                     {"max", r.max},
                     {"mean", r.mean},
                     {"few_shot_best_norm", r.few_shot_best_norm},
                     {"seed", r.seed},
                     {"checkpoint_step", r.checkpoint_step},
                     {"config_hash", r.config_hash}};
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  j.at("scores_raw").get_to(r.scores_raw);
  j.at("scores_norm").get_to(r.scores_norm);
  j.at("median").get_to(r.median);
  j.at("max").get_to(r.max);
  j.at("mean").get_to(r.mean);
  j.at("few_shot_best_norm").get_to(r.few_shot_best_norm);
  j.at("seed").get_to(r.seed);
  j.at("checkpoint_step").get_to(r.checkpoint_step);
  j.at("config_hash").get_to(r.config_hash);
}

void fill_statistics(EvalReport& report) {
  const auto& s = report.scores_norm;
  if (s.empty()) throw InputError("report statistics need at least one score");
  std::vector<double> sorted = s;
  std::sort(sorted.begin(), sorted.end());
  report.median = sorted[(sorted.size() - 1) / 2];
  report.max = sorted.back();
  double total = 0.0;
  for (double v : s) total += v;
  report.mean = total / static_cast<double>(s.size());
}

EvalReport evaluate_candidates(const Points& candidates, Oracle& oracle) {
  if (candidates.rows() == 0) throw InputError("evaluate_candidates: Q must be >= 1");
  const auto& meta = oracle.metadata();
  if (static_cast<std::size_t>(candidates.cols()) != meta.d)
    throw InputError("evaluate_candidates: candidate dimension " + std::to_string(candidates.cols()) +
                     " != oracle dimension " + std::to_string(meta.d));
  for (Eigen::Index i = 0; i < candidates.rows(); ++i)
    for (Eigen::Index c = 0; c < candidates.cols(); ++c) {
      const double v = candidates(i, c);
      if (!(v >= meta.box.lo && v <= meta.box.hi)) {
        std::ostringstream msg;
        msg << "evaluate_candidates: candidate " << i << " coordinate " << c << " = " << v << " outside box ["
            << meta.box.lo << ", " << meta.box.hi << "]";
        throw InputError(msg.str());
      }
    }
  EvalReport r;
  Values raw = oracle.evaluate(candidates);
  r.scores_raw.assign(raw.data(), raw.data() + raw.size());
  r.scores_norm.reserve(r.scores_raw.size());
  for (double v : r.scores_raw) r.scores_norm.push_back(normalize_score(v, meta));
  fill_statistics(r);
  return r;
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::kExPT: return "expt";
    case Method::kTnpEd: return "tnp-ed";
    case Method::kGradAsc: return "grad-asc";
    case Method::kGradMin: return "grad-min";
    case Method::kGradMean: return "grad-mean";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::kExPT, Method::kTnpEd, Method::kGradAsc, Method::kGradMin, Method::kGradMean})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown method '" + std::string(name) + "' (expected expt|tnp-ed|grad-asc|grad-min|grad-mean)");
}

namespace {

void finish(EvalReport& r, const FewShotDataset& few_shot, const Oracle& oracle, const RunTag& tag) {
  r.few_shot_best_norm = normalize_score(few_shot.data.y.maxCoeff(), oracle.metadata());
  r.seed = tag.seed;
  r.checkpoint_step = tag.checkpoint_step;
  r.config_hash = tag.config_hash;
}

}  // namespace

template <typename T>
EvalReport run_adaptation(Method method, const MethodArtifacts<T>& artifacts, const FewShotDataset& few_shot,
                          Oracle& oracle, std::size_t q, Rng& rng, const RunTag& tag) {
  if (few_shot.size() == 0) throw InputError("run_adaptation: empty few-shot set");
  if (q == 0) throw InputError("run_adaptation: Q must be >= 1");
  const Interval box = oracle.metadata().box;
  Points candidates;
  switch (method) {
    case Method::kExPT:
      if (!artifacts.expt) throw InputError("run_adaptation: ExPT requires a pretrained model");
      candidates = artifacts.expt->generate_candidates(few_shot.data, oracle.metadata().y_star, q, rng, box);
      break;
    case Method::kTnpEd:
      if (!artifacts.tnp_ed) throw InputError("run_adaptation: TNP-ED requires a pretrained model");
      candidates = baselines::tnp_ed_optimize(few_shot.data, *artifacts.tnp_ed, artifacts.ascent, q, box);
      break;
    case Method::kGradAsc:
    case Method::kGradMin:
    case Method::kGradMean: {
      baselines::SurrogateConfig cfg = artifacts.surrogate;
      if (method == Method::kGradAsc) {
        cfg.ensemble_size = 1;
        cfg.reduce = baselines::ReduceMode::kSingle;
      } else {
        cfg.reduce = method == Method::kGradMin ? baselines::ReduceMode::kMin : baselines::ReduceMode::kMean;
      }
      auto ensemble = baselines::surrogate_train(few_shot.data, cfg, rng.next_u64());
      candidates = baselines::grad_ascent_optimize(ensemble, few_shot.data, artifacts.ascent, q, box);
      break;
    }
  }
  EvalReport r = evaluate_candidates(candidates, oracle);
  finish(r, few_shot, oracle, tag);
  return r;
}

template <typename T>
EvalReport run_sequential(const FewShotDataset& few_shot, Oracle& oracle, std::size_t q,
                          const model::ExPTModel<T>& model, Rng& rng, const RunTag& tag,
                          std::size_t* final_context_size) {
  if (few_shot.size() == 0) throw InputError("run_sequential: empty few-shot set");
  if (q == 0) throw InputError("run_sequential: Q must be >= 1");
  const auto& meta = oracle.metadata();
  ContextSet context = few_shot.data;
  const Eigen::Index n = context.x.rows();
  context.x.conservativeResize(n + static_cast<Eigen::Index>(q), Eigen::NoChange);
  context.y.conservativeResize(n + static_cast<Eigen::Index>(q));
  Points proposed(static_cast<Eigen::Index>(q), context.x.cols());
  EvalReport r;
  for (std::size_t round = 0; round < q; ++round) {
    const Eigen::Index size = n + static_cast<Eigen::Index>(round);
    ContextSet current{context.x.topRows(size), context.y.head(size)};
    Points candidate = model.generate_candidates(current, meta.y_star, 1, rng, meta.box);
    EvalReport one = evaluate_candidates(candidate, oracle);
    context.x.row(size) = candidate.row(0);
    context.y[size] = one.scores_raw[0];
    r.scores_raw.push_back(one.scores_raw[0]);
    r.scores_norm.push_back(one.scores_norm[0]);
  }
  if (final_context_size) *final_context_size = static_cast<std::size_t>(context.x.rows());
  fill_statistics(r);
  finish(r, few_shot, oracle, tag);
  return r;
}

template struct MethodArtifacts<float>;
template struct MethodArtifacts<double>;
template EvalReport run_adaptation<float>(Method, const MethodArtifacts<float>&, const FewShotDataset&, Oracle&,
                                          std::size_t, Rng&, const RunTag&);
template EvalReport run_adaptation<double>(Method, const MethodArtifacts<double>&, const FewShotDataset&, Oracle&,
                                           std::size_t, Rng&, const RunTag&);
template EvalReport run_sequential<float>(const FewShotDataset&, Oracle&, std::size_t, const model::ExPTModel<float>&,
                                          Rng&, const RunTag&, std::size_t*);
template EvalReport run_sequential<double>(const FewShotDataset&, Oracle&, std::size_t,
                                           const model::ExPTModel<double>&, Rng&, const RunTag&, std::size_t*);

}  // namespace expt::eval
