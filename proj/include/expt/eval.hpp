#pragma once

// Oracles, few-shot dataset construction, candidate scoring and the
// simultaneous / sequential optimization drivers.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "expt/baselines.hpp"
#include "expt/model.hpp"
#include "expt/rng.hpp"
#include "expt/synthfn.hpp"

namespace expt::eval {

using model::ContextSet;
using synthfn::Interval;
using synthfn::Points;
using synthfn::Values;

struct OracleMetadata {
  double y_min = 0.0;
  double y_max = 1.0;
  double y_star = 1.0;
  Interval box{-3.0, 3.0};
  std::size_t d = 0;
};

enum class OracleKind { kSyntheticGP, kAnalyticTest, kTable };
enum class Interpolation { kNearest, kPosteriorMean };

Interpolation parse_interpolation(std::string_view name);

/// Deterministic black-box objective with the normalization metadata used for
/// scoring. Every evaluated design increments calls().
class Oracle {
 public:
  using Function = std::function<double(const double* x, std::size_t d)>;

  /// A function realized on a reference table. kNearest returns the value of
  /// the nearest reference row (ties to the lower index); kPosteriorMean
  /// returns the GP posterior mean given all reference rows under `kernel`.
  static Oracle synthetic(Points reference_x, Values reference_y, Interval box, Interpolation interp,
                          const synthfn::KernelSpec& kernel, std::string id);

  /// Reference table from CSV (header x_0..x_{d-1},y) and its sidecar
  /// `<path>.meta` with box = [lo, hi] and optional y_min, y_max, y_star.
  /// Evaluation is nearest-row lookup.
  static Oracle table(const std::string& csv_path);

  static Oracle analytic(Function f, OracleMetadata meta, std::string id);

  OracleKind kind() const { return kind_; }
  const OracleMetadata& metadata() const { return meta_; }
  /// Overrides the conditioning target (defaults to the reference maximum).
  void set_y_star(double y_star) { meta_.y_star = y_star; }
  const std::string& id() const { return id_; }

  double evaluate(const double* x);
  Values evaluate(const Points& x);

  /// Labeled data the oracle was built from (empty for analytic oracles).
  const Points& reference_x() const { return ref_x_; }
  const Values& reference_y() const { return ref_y_; }

  std::size_t calls() const { return calls_; }
  void reset_calls() { calls_ = 0; }

 private:
  Oracle() = default;
  void check_dimension(std::size_t d) const;

  OracleKind kind_ = OracleKind::kAnalyticTest;
  OracleMetadata meta_;
  std::string id_;
  Points ref_x_;
  Values ref_y_;
  Interpolation interp_ = Interpolation::kNearest;
  synthfn::KernelSpec kernel_;
  Values alpha_;
  Function fn_;
  std::size_t calls_ = 0;
};

/// Held-out synthetic objective: one GP draw on `reference_size` points
/// uniform in the box.
Oracle make_synthetic_oracle(const synthfn::KernelSpec& kernel, std::size_t d, Interval box,
                             std::size_t reference_size, Interpolation interp, std::uint64_t seed);

struct FewShotMode {
  enum class Kind { kRandomFraction, kPoorestFraction, kBelowPercentile };
  Kind kind = Kind::kBelowPercentile;
  double fraction = 0.01;
  std::size_t count = 100;
  double percentile = 20.0;

  static FewShotMode random_fraction(double p) { return {Kind::kRandomFraction, p, 0, 0.0}; }
  static FewShotMode poorest_fraction(double p) { return {Kind::kPoorestFraction, p, 0, 0.0}; }
  static FewShotMode below_percentile(std::size_t count, double pct) {
    return {Kind::kBelowPercentile, 0.0, count, pct};
  }
  std::string describe() const;
};

struct FewShotDataset {
  ContextSet data;
  std::string mode;
  std::string source_id;
  std::uint64_t seed = 0;
  /// Indices of the selected rows in the source.
  std::vector<std::size_t> source_rows;

  std::size_t size() const { return data.size(); }
};

/// Linear-interpolation percentile (pct in [0, 100]) of the values.
double percentile(const Values& y, double pct);

/// Throws InputError when the source is empty, the fraction is outside
/// (0, 1] or fewer points are eligible than requested.
FewShotDataset make_few_shot(const Points& x, const Values& y, const FewShotMode& mode, Rng& rng,
                             const std::string& source_id = "", std::uint64_t seed = 0);

/// (y - y_min) / (y_max - y_min), unclipped. Throws InputError when y_max == y_min.
double normalize_score(double y, const OracleMetadata& meta);

struct EvalReport {
  std::vector<double> scores_raw;
  std::vector<double> scores_norm;
  double median = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double few_shot_best_norm = 0.0;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_step = 0;
  std::string config_hash;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

/// Median (lower middle for even counts), max and mean of `norm`.
void fill_statistics(EvalReport& report);

/// Scores Q candidates with exactly Q oracle calls. Throws InputError naming
/// the first coordinate outside the oracle box.
EvalReport evaluate_candidates(const Points& candidates, Oracle& oracle);

enum class Method { kExPT, kTnpEd, kGradAsc, kGradMin, kGradMean };
std::string_view to_string(Method m);
Method parse_method(std::string_view name);

/// What each method needs at adaptation time. Only the member matching the
/// requested method has to be set.
template <typename T>
struct MethodArtifacts {
  const model::ExPTModel<T>* expt = nullptr;
  const baselines::TnpEdModel<T>* tnp_ed = nullptr;
  baselines::SurrogateConfig surrogate;
  baselines::AscentConfig ascent;
};

struct RunTag {
  std::uint64_t seed = 0;
  std::int64_t checkpoint_step = 0;
  std::string config_hash;
};

/// Proposes Q candidates with the method and scores them.
template <typename T>
EvalReport run_adaptation(Method method, const MethodArtifacts<T>& artifacts, const FewShotDataset& few_shot,
                          Oracle& oracle, std::size_t q, Rng& rng, const RunTag& tag = {});

/// Q rounds of: generate one candidate from the current context, evaluate
/// it, append the labeled point to the context.
template <typename T>
EvalReport run_sequential(const FewShotDataset& few_shot, Oracle& oracle, std::size_t q,
                          const model::ExPTModel<T>& model, Rng& rng, const RunTag& tag = {},
                          std::size_t* final_context_size = nullptr);

}  // namespace expt::eval
