#include "expt/config.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "expt/csv.hpp"
#include "expt/errors.hpp"

namespace expt::config {

namespace {

using VT = ValueType;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\'')))
    return s.substr(1, s.size() - 2);
  return s;
}

const KeyInfo& info_for(const std::string& key) {
  for (const auto& k : key_table())
    if (k.key == key) return k;
  throw ConfigError("unknown config key '" + key + "'");
}

std::int64_t parse_int(const std::string& key, const std::string& text) {
  std::int64_t v = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected an integer, got '" + text + "'");
  return v;
}

double parse_real(const std::string& key, const std::string& text) {
  double v = 0.0;
  const char* begin = text.data();
  if (!text.empty() && text.front() == '+') ++begin;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || begin == end) throw ConfigError(key + ": expected a number, got '" + text + "'");
  if (!std::isfinite(v)) throw ConfigError(key + ": value must be finite");
  return v;
}

std::vector<std::string> list_items(const std::string& key, const std::string& text) {
  if (text.size() < 2 || text.front() != '[' || text.back() != ']')
    throw ConfigError(key + ": expected a list [a, b, ...], got '" + text + "'");
  const std::string body = trim(std::string_view(text).substr(1, text.size() - 2));
  std::vector<std::string> out;
  if (body.empty()) return out;
  for (auto& part : csv::split_line(body)) {
    std::string item = trim(part);
    if (item.empty()) throw ConfigError(key + ": empty list element");
    out.push_back(item);
  }
  return out;
}

Value parse_value(const std::string& key, VT type, const std::string& raw) {
  const std::string text = trim(raw);
  switch (type) {
    case VT::kBool:
      if (text == "true") return true;
      if (text == "false") return false;
      throw ConfigError(key + ": expected true or false, got '" + text + "'");
    case VT::kInt: return parse_int(key, text);
    case VT::kReal: return parse_real(key, text);
    case VT::kString:
      if (!text.empty() && text.front() == '[') throw ConfigError(key + ": expected a string, got a list");
      return unquote(text);
    case VT::kRealList: {
      std::vector<double> v;
      for (const auto& item : list_items(key, text)) v.push_back(parse_real(key, item));
      return v;
    }
    case VT::kIntList: {
      std::vector<std::int64_t> v;
      for (const auto& item : list_items(key, text)) v.push_back(parse_int(key, item));
      return v;
    }
    case VT::kStringList: {
      std::vector<std::string> v;
      for (const auto& item : list_items(key, text)) v.push_back(unquote(item));
      return v;
    }
  }
  throw ConfigError(key + ": unsupported type");
}

std::string canonical(const Value& v) {
  struct Visitor {
    std::string operator()(bool b) const { return b ? "true" : "false"; }
    std::string operator()(std::int64_t i) const { return std::to_string(i); }
    std::string operator()(double d) const { return csv::format_double(d); }
    std::string operator()(const std::string& s) const { return "\"" + s + "\""; }
    std::string operator()(const std::vector<double>& v) const {
      std::string out = "[";
      for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + csv::format_double(v[i]);
      return out + "]";
    }
    std::string operator()(const std::vector<std::int64_t>& v) const {
      std::string out = "[";
      for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
      return out + "]";
    }
    std::string operator()(const std::vector<std::string>& v) const {
      std::string out = "[";
      for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", \"" : "\"") + v[i] + "\"";
      return out + "]";
    }
  };
  return std::visit(Visitor{}, v);
}

class Values {
 public:
  explicit Values(const std::map<std::string, Value>& v) : v_(v) {}
  template <typename X>
  const X& get(const std::string& key) const {
    return std::get<X>(v_.at(key));
  }
  std::int64_t integer(const std::string& key, std::int64_t min) const {
    const auto v = get<std::int64_t>(key);
    if (v < min) throw ConfigError(key + " must be >= " + std::to_string(min) + ", got " + std::to_string(v));
    return v;
  }
  std::size_t count(const std::string& key, std::size_t min = 1) const {
    return static_cast<std::size_t>(integer(key, static_cast<std::int64_t>(min)));
  }
  double real(const std::string& key) const { return get<double>(key); }
  const std::string& str(const std::string& key) const { return get<std::string>(key); }
  synthfn::Interval interval(const std::string& key) const {
    const auto& v = get<std::vector<double>>(key);
    if (v.size() != 2) throw ConfigError(key + " must be a two-element list [lo, hi]");
    if (v[0] > v[1]) throw ConfigError(key + " must satisfy lo <= hi");
    return {v[0], v[1]};
  }

 private:
  const std::map<std::string, Value>& v_;
};

template <typename F>
auto named(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    if (what.rfind(key, 0) == 0) throw;
    throw ConfigError(key + ": " + what);
  }
}

void apply_line(std::map<std::string, Value>& values, const std::string& key, const std::string& text) {
  const KeyInfo& info = info_for(key);
  values[key] = parse_value(key, info.type, text);
}

std::vector<std::pair<std::string, std::string>> parse_lines(std::string_view text, const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in{std::string(text)};
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.erase(i);
        break;
      }
    }
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + trim(line) + "'");
    std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": missing key");
    out.emplace_back(std::move(key), trim(std::string_view(line).substr(eq + 1)));
  }
  return out;
}

synthfn::KernelKind kernel_of(const std::string& key, const std::string& name) {
  return named(key, [&] { return synthfn::parse_kernel_kind(name); });
}

}  // namespace

const std::vector<KeyInfo>& key_table() {
  static const std::vector<KeyInfo> table = {
      {"preset", VT::kString, "\"\"", "named preset applied before the file: paper-synthetic | desk-micro"},
      {"run.seed", VT::kInt, "0", "global seed"},
      {"run.output_dir", VT::kString, "\"runs\"", "directory for checkpoints, reports and metrics"},
      {"run.id", VT::kString, "\"expt\"", "run identifier written to every metrics row"},
      {"run.checkpoint_every", VT::kInt, "1000", "pretraining steps between checkpoints"},
      {"run.eval_checkpoints", VT::kIntList, "[]", "checkpoint steps evaluated by sweep; empty = final only"},
      {"run.precision", VT::kString, "\"float32\"", "training precision: float32 | float64"},
      {"generator.dimension", VT::kInt, "32", "design dimension d"},
      {"generator.points_per_function", VT::kInt, "228", "points sampled per synthetic function"},
      {"generator.context_size", VT::kInt, "100", "context points m per episode"},
      {"generator.lengthscale_range", VT::kRealList, "[5, 10]", "GP lengthscale ~ U[lo, hi]"},
      {"generator.scale_range", VT::kRealList, "[1, 10]", "GP output scale ~ U[lo, hi]"},
      {"generator.family", VT::kString, "\"gp\"", "pretraining functions: gp | random-mlp"},
      {"generator.kernel", VT::kString, "\"rbf\"", "GP kernel: rbf | matern52 | linear | cosine | periodic"},
      {"generator.input_source", VT::kString, "\"uniform\"", "inputs: uniform (box) | pool (unlabeled CSV)"},
      {"generator.box", VT::kRealList, "[-3, 3]", "domain box per coordinate"},
      {"generator.pool_path", VT::kString, "\"\"", "unlabeled design CSV for input_source = pool"},
      {"generator.input_noise_std", VT::kReal, "0.1", "Gaussian jitter added to pool inputs"},
      {"generator.split_mode", VT::kString, "\"random\"", "context/target split: random | sorted"},
      {"generator.pool_subsample_ratio", VT::kReal, "1", "fraction of the pool used"},
      {"model.kind", VT::kString, "\"expt\"", "model pretrained by `pretrain`: expt | tnp-ed"},
      {"model.encoder.layers", VT::kInt, "4", "transformer layers"},
      {"model.encoder.dim", VT::kInt, "128", "hidden dimension D"},
      {"model.encoder.heads", VT::kInt, "4", "attention heads"},
      {"model.encoder.dropout", VT::kReal, "0.1", "dropout rate"},
      {"model.encoder.ff_mult", VT::kInt, "4", "feedforward width as a multiple of D"},
      {"model.vae.enc_layers", VT::kInt, "4", "VAE encoder layers"},
      {"model.vae.dec_layers", VT::kInt, "4", "VAE decoder layers"},
      {"model.vae.hidden", VT::kInt, "512", "VAE hidden width"},
      {"model.vae.latent", VT::kInt, "32", "latent dimension k"},
      {"model.kl_weight", VT::kReal, "1", "KL weight beta"},
      {"model.recon_variance", VT::kReal, "1", "decoder variance in the reconstruction term"},
      {"model.match_scale", VT::kReal, "1", "multiplier on z-scored y at adaptation"},
      {"train.iterations", VT::kInt, "10000", "pretraining iterations"},
      {"train.batch_functions", VT::kInt, "128", "synthetic functions per iteration"},
      {"optim.lr", VT::kReal, "0.0005", "peak learning rate"},
      {"optim.warmup", VT::kInt, "1000", "linear warmup steps"},
      {"optim.anneal", VT::kInt, "9000", "cosine annealing steps"},
      {"optim.beta1", VT::kReal, "0.9", "AdamW beta1"},
      {"optim.beta2", VT::kReal, "0.99", "AdamW beta2"},
      {"optim.eps", VT::kReal, "1e-08", "AdamW epsilon"},
      {"optim.weight_decay", VT::kReal, "0.01", "AdamW decoupled weight decay"},
      {"optim.grad_clip", VT::kReal, "0", "joint gradient-norm clip; 0 disables"},
      {"eval.q", VT::kInt, "256", "candidate budget Q"},
      {"eval.reference_size", VT::kInt, "20000", "reference points per synthetic oracle"},
      {"eval.few_shot.mode", VT::kString, "\"below-percentile\"",
       "few-shot selection: below-percentile | random-fraction | poorest-fraction"},
      {"eval.few_shot.count", VT::kInt, "100", "points for below-percentile"},
      {"eval.few_shot.percentile", VT::kReal, "20", "percentile for below-percentile"},
      {"eval.few_shot.fraction", VT::kReal, "0.01", "fraction for random-/poorest-fraction"},
      {"eval.method", VT::kString, "\"expt\"", "adapt method: expt | tnp-ed | grad-asc | grad-min | grad-mean"},
      {"eval.oracle.lengthscale", VT::kReal, "0", "held-out oracle lengthscale; 0 = sqrt(d)"},
      {"eval.oracle.scale", VT::kReal, "1", "held-out oracle output scale"},
      {"eval.oracle.period", VT::kReal, "0", "held-out periodic kernel period; 0 = 2 * lengthscale"},
      {"eval.oracle.interp", VT::kString, "\"nearest\"", "off-reference evaluation: nearest | posterior-mean"},
      {"eval.y_star", VT::kString, "\"\"", "conditioning value y*; empty = oracle metadata"},
      {"baselines.ascent_steps", VT::kInt, "200", "gradient-ascent steps"},
      {"baselines.step_size", VT::kReal, "0.01", "gradient-ascent step size"},
      {"baselines.ensemble_size", VT::kInt, "5", "surrogate ensemble size for grad-min / grad-mean"},
      {"baselines.surrogate_hidden", VT::kInt, "256", "surrogate hidden width"},
      {"baselines.surrogate_layers", VT::kInt, "2", "surrogate hidden layers"},
      {"baselines.surrogate_epochs", VT::kInt, "500", "full-batch surrogate epochs"},
      {"baselines.surrogate_lr", VT::kReal, "0.001", "surrogate AdamW learning rate"},
      {"sweep.seeds", VT::kIntList, "[0, 1, 2]", "seeds swept"},
      {"sweep.kernels", VT::kStringList, "[\"matern52\", \"linear\", \"cosine\", \"periodic\"]",
       "held-out oracle kernels swept"},
      {"sweep.methods", VT::kStringList, "[\"expt\"]", "methods swept"},
      {"sweep.modes", VT::kStringList, "[\"simultaneous\"]", "ExPT adaptation modes swept: simultaneous | sequential"},
  };
  return table;
}

std::vector<std::string> preset_names() { return {"paper-synthetic", "desk-micro"}; }

const std::map<std::string, std::string>& preset_overrides(const std::string& name) {
  static const std::map<std::string, std::string> none;
  static const std::map<std::string, std::string> paper = {
      {"train.iterations", "2000"}, {"optim.warmup", "200"}, {"optim.anneal", "1800"},
      {"run.checkpoint_every", "200"},
  };
  static const std::map<std::string, std::string> micro = {
      {"generator.dimension", "8"},
      {"generator.points_per_function", "64"},
      {"generator.context_size", "32"},
      {"train.iterations", "500"},
      {"train.batch_functions", "16"},
      {"run.checkpoint_every", "50"},
      {"optim.lr", "0.001"},
      {"optim.warmup", "50"},
      {"optim.anneal", "450"},
      {"model.encoder.layers", "2"},
      {"model.encoder.dim", "64"},
      {"model.encoder.heads", "4"},
      {"model.encoder.ff_mult", "2"},
      {"model.vae.enc_layers", "2"},
      {"model.vae.dec_layers", "2"},
      {"model.vae.hidden", "128"},
      {"model.vae.latent", "8"},
      {"baselines.ensemble_size", "5"},
  };
  if (name.empty()) return none;
  if (name == "paper-synthetic") return paper;
  if (name == "desk-micro") return micro;
  throw ConfigError("preset: unknown preset '" + name + "' (expected paper-synthetic | desk-micro)");
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ExitCode::kFailure, "SHA-256 computation failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

std::string RunConfig::canonical_text() const {
  std::string out;
  for (const auto& [k, v] : values)
    if (k != "preset") out += k + " = " + v + "\n";
  return out;
}

synthfn::KernelSpec RunConfig::oracle_kernel(synthfn::KernelKind kind) const {
  synthfn::KernelSpec spec;
  spec.kind = kind;
  spec.lengthscale = oracle_lengthscale > 0.0 ? oracle_lengthscale : std::sqrt(static_cast<double>(generator.dimension));
  spec.scale = oracle_scale;
  spec.period = oracle_period;
  return spec;
}

model::TrainConfig RunConfig::train_config(std::uint64_t run_seed) const {
  model::TrainConfig t = train;
  t.seed = run_seed;
  return t;
}

RunConfig parse_config(std::string_view text, const std::vector<std::string>& overrides, const std::string& origin) {
  auto lines = parse_lines(text, origin);
  std::vector<std::pair<std::string, std::string>> extra;
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' must have the form key=value");
    extra.emplace_back(trim(std::string_view(o).substr(0, eq)), trim(std::string_view(o).substr(eq + 1)));
  }

  std::map<std::string, Value> values;
  for (const auto& k : key_table()) values[k.key] = parse_value(k.key, k.type, k.default_text);

  std::string preset = std::get<std::string>(values["preset"]);
  for (const auto& [k, v] : lines)
    if (k == "preset") preset = std::get<std::string>(parse_value(k, VT::kString, v));
  for (const auto& [k, v] : extra)
    if (k == "preset") preset = std::get<std::string>(parse_value(k, VT::kString, v));
  values["preset"] = preset;
  for (const auto& [k, v] : preset_overrides(preset)) apply_line(values, k, v);

  std::map<std::string, bool> seen;
  for (const auto& [k, v] : lines) {
    if (seen[k]) throw ConfigError(k + ": key given more than once");
    seen[k] = true;
    apply_line(values, k, v);
  }
  for (const auto& [k, v] : extra) apply_line(values, k, v);

  const Values get(values);
  RunConfig c;
  c.preset = preset;
  c.seed = static_cast<std::uint64_t>(get.integer("run.seed", 0));
  c.output_dir = get.str("run.output_dir");
  if (c.output_dir.empty()) throw ConfigError("run.output_dir must not be empty");
  c.run_id = get.str("run.id");
  if (c.run_id.empty() || c.run_id.find_first_of("/\\,\n") != std::string::npos)
    throw ConfigError("run.id must be non-empty and contain no '/', '\\' or ','");
  c.eval_checkpoints = get.get<std::vector<std::int64_t>>("run.eval_checkpoints");
  for (auto s : c.eval_checkpoints)
    if (s < 0) throw ConfigError("run.eval_checkpoints entries must be non-negative");
  const auto& precision = get.str("run.precision");
  if (precision == "float32") c.precision = Precision::kFloat32;
  else if (precision == "float64") c.precision = Precision::kFloat64;
  else throw ConfigError("run.precision must be float32 or float64, got '" + precision + "'");

  auto& g = c.generator;
  g.dimension = get.count("generator.dimension");
  g.points_per_function = get.count("generator.points_per_function", 2);
  g.context_size = get.count("generator.context_size");
  g.lengthscale_range = get.interval("generator.lengthscale_range");
  g.scale_range = get.interval("generator.scale_range");
  const auto& family = get.str("generator.family");
  if (family == "gp") g.family = synthfn::GeneratorFamily::kGaussianProcess;
  else if (family == "random-mlp") g.family = synthfn::GeneratorFamily::kRandomMlp;
  else throw ConfigError("generator.family must be gp or random-mlp, got '" + family + "'");
  g.kernel = kernel_of("generator.kernel", get.str("generator.kernel"));
  const auto& source = get.str("generator.input_source");
  if (source == "uniform") g.input_source = synthfn::InputSource::kUniformBox;
  else if (source == "pool") g.input_source = synthfn::InputSource::kPool;
  else throw ConfigError("generator.input_source must be uniform or pool, got '" + source + "'");
  g.box = get.interval("generator.box");
  c.pool_path = get.str("generator.pool_path");
  g.pool_id = c.pool_path;
  if (g.input_source == synthfn::InputSource::kPool && c.pool_path.empty())
    throw ConfigError("generator.pool_path is required when generator.input_source = pool");
  g.input_noise_std = get.real("generator.input_noise_std");
  const auto& split = get.str("generator.split_mode");
  if (split == "random") g.split_mode = synthfn::SplitMode::kRandom;
  else if (split == "sorted") g.split_mode = synthfn::SplitMode::kSorted;
  else throw ConfigError("generator.split_mode must be random or sorted, got '" + split + "'");
  g.pool_subsample_ratio = get.real("generator.pool_subsample_ratio");
  g.validate();

  const auto& kind = get.str("model.kind");
  if (kind == "expt") c.model_kind = ModelKind::kExPT;
  else if (kind == "tnp-ed") c.model_kind = ModelKind::kTnpEd;
  else throw ConfigError("model.kind must be expt or tnp-ed, got '" + kind + "'");
  auto& m = c.model;
  m.d_x = g.dimension;
  m.encoder.layers = get.count("model.encoder.layers");
  m.encoder.dim = get.count("model.encoder.dim");
  m.encoder.heads = get.count("model.encoder.heads");
  m.encoder.dropout = get.real("model.encoder.dropout");
  m.encoder.ff_mult = get.count("model.encoder.ff_mult");
  m.vae.enc_layers = get.count("model.vae.enc_layers");
  m.vae.dec_layers = get.count("model.vae.dec_layers");
  m.vae.hidden = get.count("model.vae.hidden");
  m.vae.latent = get.count("model.vae.latent");
  m.kl_weight = get.real("model.kl_weight");
  m.recon_variance = get.real("model.recon_variance");
  m.match_scale = get.real("model.match_scale");
  m.validate();

  auto& t = c.train;
  t.iterations = get.integer("train.iterations", 0);
  t.batch_functions = get.count("train.batch_functions");
  t.checkpoint_every = get.integer("run.checkpoint_every", 1);
  t.schedule.peak = get.real("optim.lr");
  t.schedule.warmup = get.integer("optim.warmup", 0);
  t.schedule.anneal = get.integer("optim.anneal", 0);
  t.adamw.beta1 = get.real("optim.beta1");
  t.adamw.beta2 = get.real("optim.beta2");
  t.adamw.eps = get.real("optim.eps");
  t.adamw.weight_decay = get.real("optim.weight_decay");
  t.grad_clip = get.real("optim.grad_clip");
  t.seed = c.seed;
  t.validate();

  c.q = get.count("eval.q");
  c.reference_size = get.count("eval.reference_size");
  const auto& mode = get.str("eval.few_shot.mode");
  const auto count = get.count("eval.few_shot.count");
  const double pct = get.real("eval.few_shot.percentile");
  const double frac = get.real("eval.few_shot.fraction");
  if (!(pct > 0.0 && pct <= 100.0)) throw ConfigError("eval.few_shot.percentile must lie in (0, 100]");
  if (!(frac > 0.0 && frac <= 1.0)) throw ConfigError("eval.few_shot.fraction must lie in (0, 1]");
  if (mode == "below-percentile") c.few_shot = eval::FewShotMode::below_percentile(count, pct);
  else if (mode == "random-fraction") c.few_shot = eval::FewShotMode::random_fraction(frac);
  else if (mode == "poorest-fraction") c.few_shot = eval::FewShotMode::poorest_fraction(frac);
  else throw ConfigError("eval.few_shot.mode must be below-percentile, random-fraction or poorest-fraction");
  c.method = named("eval.method", [&] { return eval::parse_method(get.str("eval.method")); });
  c.oracle_lengthscale = get.real("eval.oracle.lengthscale");
  c.oracle_scale = get.real("eval.oracle.scale");
  c.oracle_period = get.real("eval.oracle.period");
  if (c.oracle_lengthscale < 0.0) throw ConfigError("eval.oracle.lengthscale must be >= 0");
  if (!(c.oracle_scale > 0.0)) throw ConfigError("eval.oracle.scale must be positive");
  if (c.oracle_period < 0.0) throw ConfigError("eval.oracle.period must be >= 0");
  c.oracle_interp = named("eval.oracle.interp", [&] { return eval::parse_interpolation(get.str("eval.oracle.interp")); });
  c.y_star = get.str("eval.y_star");
  if (!c.y_star.empty()) parse_real("eval.y_star", c.y_star);

  c.ascent.steps = static_cast<std::size_t>(get.integer("baselines.ascent_steps", 0));
  c.ascent.step_size = get.real("baselines.step_size");
  if (!(c.ascent.step_size >= 0.0)) throw ConfigError("baselines.step_size must be non-negative");
  c.surrogate.ensemble_size = get.count("baselines.ensemble_size");
  c.surrogate.hidden = get.count("baselines.surrogate_hidden");
  c.surrogate.hidden_layers = get.count("baselines.surrogate_layers");
  c.surrogate.epochs = static_cast<std::size_t>(get.integer("baselines.surrogate_epochs", 0));
  c.surrogate.lr = get.real("baselines.surrogate_lr");
  c.surrogate.reduce = baselines::ReduceMode::kMean;
  named("baselines.surrogate_lr", [&] {
    c.surrogate.validate();
    return 0;
  });

  for (auto s : get.get<std::vector<std::int64_t>>("sweep.seeds")) {
    if (s < 0) throw ConfigError("sweep.seeds entries must be non-negative");
    c.sweep_seeds.push_back(s);
  }
  for (const auto& k : get.get<std::vector<std::string>>("sweep.kernels"))
    c.sweep_kernels.push_back(kernel_of("sweep.kernels", k));
  for (const auto& name : get.get<std::vector<std::string>>("sweep.methods"))
    c.sweep_methods.push_back(named("sweep.methods", [&] { return eval::parse_method(name); }));
  for (const auto& mode_name : get.get<std::vector<std::string>>("sweep.modes")) {
    if (mode_name != "simultaneous" && mode_name != "sequential")
      throw ConfigError("sweep.modes entries must be simultaneous or sequential, got '" + mode_name + "'");
    c.sweep_modes.push_back(mode_name);
  }

  for (const auto& [k, v] : values) c.values[k] = canonical(v);
  // Where a run writes and what it is called do not change its results.
  std::string hashed;
  for (const auto& [k, v] : c.values)
    if (k != "preset" && k != "run.output_dir" && k != "run.id") hashed += k + " = " + v + "\n";
  c.hash = sha256_hex(hashed);
  std::string gen_text;
  for (const auto& [k, v] : c.values)
    if (k.rfind("generator.", 0) == 0) gen_text += k + " = " + v + "\n";
  c.generator_hash = sha256_hex(gen_text);
  return c;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), overrides, path);
}

std::string describe_defaults() {
  std::ostringstream out;
  std::size_t width = 0;
  for (const auto& k : key_table()) width = std::max(width, k.key.size() + 3 + k.default_text.size());
  for (const auto& k : key_table()) {
    const std::string lhs = k.key + " = " + k.default_text;
    out << std::left << std::setw(static_cast<int>(width) + 2) << lhs << "# " << k.doc << '\n';
  }
  return out.str();
}

}  // namespace expt::config
