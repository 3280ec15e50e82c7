#include "sharpnoise/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "sharpnoise/error.hpp"
#include "sharpnoise/rng.hpp"

namespace sharpnoise {

using nlohmann::json;

std::string Method::name() const {
  std::string s(base_optimizer_name(base));
  s += '+';
  s += sharpness_mode_name(mode);
  if (noise) s += "+noise";
  if (clip) s += "+clip";
  return s;
}

Method Method::parse(std::string_view text) {
  Method m;
  bool have_base = false, have_mode = false;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('+', start), text.size());
    const std::string_view tok = text.substr(start, end - start);
    if (tok == "sgd" || tok == "adam") {
      if (have_base || have_mode) throw ConfigError("method '" + std::string(text) + "': optimizer must come first");
      m.base = parse_base_optimizer(tok);
      have_base = true;
    } else if (tok == "none" || tok == "sam" || tok == "asam") {
      if (have_mode) throw ConfigError("method '" + std::string(text) + "': more than one of none/sam/asam");
      m.mode = parse_sharpness_mode(tok);
      have_mode = true;
    } else if (tok == "noise") {
      m.noise = true;
    } else if (tok == "clip") {
      m.clip = true;
    } else {
      throw ConfigError("method '" + std::string(text) + "': unknown component '" + std::string(tok) + "'");
    }
    start = end + 1;
  }
  return m;
}

std::string_view rho_selection_name(RhoSelection s) {
  return s == RhoSelection::kCleanAccuracy ? "clean_accuracy" : "noisy_accuracy";
}

RhoSelection parse_rho_selection(std::string_view name) {
  if (name == "clean_accuracy") return RhoSelection::kCleanAccuracy;
  if (name == "noisy_accuracy") return RhoSelection::kNoisyAccuracy;
  throw ConfigError("unknown rho selection '" + std::string(name) + "'");
}

void ExperimentConfig::validate() const {
  optimizer.validate();
  sharpness.validate();
  hooks.validate();
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (noise.sigma_c.empty()) throw ConfigError("noise.sigma_c must not be empty");
  bool has_zero = false;
  for (const double s : noise.sigma_c) {
    if (!(s >= 0.0)) throw ConfigError("noise.sigma_c entries must be >= 0");
    has_zero = has_zero || s == 0.0;
  }
  if (!has_zero) throw ConfigError("noise.sigma_c must include 0");
  if (noise.runs == 0) throw ConfigError("noise.runs must be >= 1");
  if (metrics.m == 0 || metrics.batches == 0) throw ConfigError("sharpness m and batches must be >= 1");
  if (adabs && calibration_batches == 0) throw ConfigError("calibration_batches must be >= 1 with adabs on");
  if (!(data.fraction > 0.0 && data.fraction <= 1.0)) throw ConfigError("data.fraction must be in (0, 1]");
  if (method.base != optimizer.base || method.mode != sharpness.mode || method.noise != hooks.additive_noise.has_value() ||
      method.clip != hooks.clipping.has_value()) {
    throw ConfigError("method '" + method.name() + "' disagrees with optimizer/sharpness/hooks settings");
  }
}

namespace {

std::string compact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::string ExperimentConfig::resolved_model_id() const {
  if (!model_id.empty()) return model_id;
  std::string id = method.name();
  if (sharpness.mode != SharpnessMode::kNone) id += "_rho" + compact(sharpness.rho);
  if (hooks.clipping && hooks.clipping->kind == ClipKind::kFixedC && hooks.clipping->c != kDefaultClipC) {
    id += "_c" + compact(hooks.clipping->c);
  }
  return id;
}

void ExperimentConfig::apply_method(const Method& m) {
  if (m.base != optimizer.base) {
    OptimizerConfig next = m.base == BaseOptimizer::kAdam ? OptimizerConfig::adam_defaults() : OptimizerConfig{};
    next.milestones = optimizer.milestones;
    next.decay_every = optimizer.decay_every;
    next.lr_decay = optimizer.lr_decay;
    optimizer = next;
  }
  if (m.mode != sharpness.mode) {
    sharpness.mode = m.mode;
    sharpness.rho = m.mode == SharpnessMode::kSam ? kDefaultSamRho : m.mode == SharpnessMode::kAsam ? kDefaultAsamRho : 0.0;
  }
  if (!m.noise) hooks.additive_noise.reset();
  else if (!hooks.additive_noise) hooks.additive_noise = AdditiveNoiseConfig{};
  if (!m.clip) hooks.clipping.reset();
  else if (!hooks.clipping) hooks.clipping = ClipConfig{};
  method = m;
}

// --- JSON -------------------------------------------------------------------

namespace {

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

json optimizer_json(const OptimizerConfig& o) {
  return {{"base", base_optimizer_name(o.base)},
          {"lr", o.lr},
          {"lr_decay", o.lr_decay},
          {"decay_every", o.decay_every},
          {"milestones", o.milestones},
          {"momentum", o.momentum},
          {"weight_decay", o.weight_decay},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"eps", o.eps}};
}

void optimizer_from(const json& j, OptimizerConfig& o) {
  if (j.contains("base")) o.base = parse_base_optimizer(j.at("base").get<std::string>());
  maybe(j, "lr", o.lr);
  maybe(j, "lr_decay", o.lr_decay);
  maybe(j, "decay_every", o.decay_every);
  maybe(j, "milestones", o.milestones);
  maybe(j, "momentum", o.momentum);
  maybe(j, "weight_decay", o.weight_decay);
  maybe(j, "beta1", o.beta1);
  maybe(j, "beta2", o.beta2);
  maybe(j, "eps", o.eps);
}

json hooks_json(const RobustnessHookConfig& h) {
  json j = json::object();
  j["additive_noise"] = nullptr;
  j["clipping"] = nullptr;
  if (h.additive_noise) {
    j["additive_noise"] = {{"alpha", h.additive_noise->alpha},
                           {"sigma_g", h.additive_noise->sigma_g},
                           {"g_max", h.additive_noise->g_max}};
  }
  if (h.clipping) {
    j["clipping"] = {{"kind", h.clipping->kind == ClipKind::kStdAlpha ? "std_alpha" : "fixed_c"},
                     {"alpha", h.clipping->alpha},
                     {"c", h.clipping->c}};
  }
  return j;
}

void hooks_from(const json& j, RobustnessHookConfig& h) {
  if (j.contains("additive_noise")) {
    const json& n = j.at("additive_noise");
    if (n.is_null()) {
      h.additive_noise.reset();
    } else {
      AdditiveNoiseConfig c;
      maybe(n, "alpha", c.alpha);
      maybe(n, "sigma_g", c.sigma_g);
      maybe(n, "g_max", c.g_max);
      h.additive_noise = c;
    }
  }
  if (j.contains("clipping")) {
    const json& k = j.at("clipping");
    if (k.is_null()) {
      h.clipping.reset();
    } else {
      ClipConfig c;
      if (k.contains("kind")) {
        const auto kind = k.at("kind").get<std::string>();
        if (kind == "std_alpha") c.kind = ClipKind::kStdAlpha;
        else if (kind == "fixed_c") c.kind = ClipKind::kFixedC;
        else throw ConfigError("unknown clipping kind '" + kind + "'");
      }
      maybe(k, "alpha", c.alpha);
      maybe(k, "c", c.c);
      h.clipping = c;
    }
  }
}

}  // namespace

void to_json(json& j, const ExperimentConfig& c) {
  std::vector<std::string> metric_names;
  for (const auto m : c.metrics.metrics) metric_names.emplace_back(metric_name(m));
  j = json{{"model", c.model},
           {"data",
            {{"source", data_source_name(c.data.source)},
             {"root", c.data.root.string()},
             {"fraction", c.data.fraction},
             {"synthetic",
              {{"n", c.data.synthetic.n},
               {"test_n", c.data.synthetic.test_n},
               {"classes", c.data.synthetic.classes},
               {"channels", c.data.synthetic.channels},
               {"height", c.data.synthetic.height},
               {"width", c.data.synthetic.width},
               {"margin", c.data.synthetic.margin}}}}},
           {"method", c.method.name()},
           {"optimizer", optimizer_json(c.optimizer)},
           {"sharpness_aware", {{"mode", sharpness_mode_name(c.sharpness.mode)}, {"rho", c.sharpness.rho}}},
           {"hooks", hooks_json(c.hooks)},
           {"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"augment", c.augment},
           {"noise", {{"sigma_c", c.noise.sigma_c}, {"runs", c.noise.runs}, {"g_max", c.noise.g_max}}},
           {"metrics",
            {{"metrics", metric_names},
             {"rho", c.metrics.rho},
             {"m", c.metrics.m},
             {"batches", c.metrics.batches},
             {"keskar_epsilon", c.metrics.keskar_epsilon},
             {"keskar_steps", c.metrics.keskar_steps}}},
           {"adabs", c.adabs},
           {"calibration_batches", c.calibration_batches},
           {"rho_selection", rho_selection_name(c.rho_selection)},
           {"selection_sigma", c.selection_sigma},
           {"out_dir", c.out_dir.string()},
           {"seed", c.seed},
           {"threads", c.threads},
           {"model_id", c.model_id}};
}

// Fields absent from the document keep their defaults. The method string is
// applied first so explicit optimizer/hook sections refine it.
void from_json(const json& j, ExperimentConfig& c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  try {
    if (j.contains("model")) j.at("model").get_to(c.model);
    if (j.contains("data")) {
      const json& d = j.at("data");
      if (d.contains("source")) c.data.source = parse_data_source(d.at("source").get<std::string>());
      if (d.contains("root")) c.data.root = d.at("root").get<std::string>();
      maybe(d, "fraction", c.data.fraction);
      if (d.contains("synthetic")) {
        const json& s = d.at("synthetic");
        maybe(s, "n", c.data.synthetic.n);
        maybe(s, "test_n", c.data.synthetic.test_n);
        maybe(s, "classes", c.data.synthetic.classes);
        maybe(s, "channels", c.data.synthetic.channels);
        maybe(s, "height", c.data.synthetic.height);
        maybe(s, "width", c.data.synthetic.width);
        maybe(s, "margin", c.data.synthetic.margin);
      }
    }
    if (j.contains("method")) c.apply_method(Method::parse(j.at("method").get<std::string>()));
    if (j.contains("optimizer")) optimizer_from(j.at("optimizer"), c.optimizer);
    if (j.contains("sharpness_aware")) {
      const json& s = j.at("sharpness_aware");
      if (s.contains("mode")) c.sharpness.mode = parse_sharpness_mode(s.at("mode").get<std::string>());
      maybe(s, "rho", c.sharpness.rho);
    }
    if (j.contains("hooks")) hooks_from(j.at("hooks"), c.hooks);
    maybe(j, "epochs", c.epochs);
    maybe(j, "batch_size", c.batch_size);
    maybe(j, "augment", c.augment);
    if (j.contains("noise")) {
      const json& n = j.at("noise");
      maybe(n, "sigma_c", c.noise.sigma_c);
      maybe(n, "runs", c.noise.runs);
      maybe(n, "g_max", c.noise.g_max);
    }
    if (j.contains("metrics")) {
      const json& m = j.at("metrics");
      if (m.contains("metrics")) {
        c.metrics.metrics.clear();
        for (const auto& name : m.at("metrics")) c.metrics.metrics.push_back(parse_metric(name.get<std::string>()));
      }
      maybe(m, "rho", c.metrics.rho);
      maybe(m, "m", c.metrics.m);
      maybe(m, "batches", c.metrics.batches);
      maybe(m, "keskar_epsilon", c.metrics.keskar_epsilon);
      maybe(m, "keskar_steps", c.metrics.keskar_steps);
    }
    maybe(j, "adabs", c.adabs);
    maybe(j, "calibration_batches", c.calibration_batches);
    if (j.contains("rho_selection")) c.rho_selection = parse_rho_selection(j.at("rho_selection").get<std::string>());
    maybe(j, "selection_sigma", c.selection_sigma);
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    maybe(j, "seed", c.seed);
    maybe(j, "threads", c.threads);
    maybe(j, "model_id", c.model_id);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return j.get<ExperimentConfig>();
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& config) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << json(config).dump(2) << '\n';
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) { return stream_id(tag, master); }

// --- training ---------------------------------------------------------------

namespace {

void check_geometry(const ModelSpec& spec, const Dataset& data) {
  if (spec.in_channels != data.channels || spec.in_height != data.height || spec.in_width != data.width ||
      spec.num_classes != data.num_classes) {
    throw ConfigError("model expects [" + std::to_string(spec.in_channels) + "," + std::to_string(spec.in_height) +
                      "," + std::to_string(spec.in_width) + "] inputs and " + std::to_string(spec.num_classes) +
                      " classes; data has [" + std::to_string(data.channels) + "," + std::to_string(data.height) +
                      "," + std::to_string(data.width) + "] and " + std::to_string(data.num_classes));
  }
}

}  // namespace

TrainResult train_model(const ExperimentConfig& config, const DataBundle& data, std::ostream* progress) {
  config.validate();
  check_geometry(config.model, data.train);
  TrainResult result{Model(config.model, derive_seed(config.seed, "model-init")), {}};
  Model& model = result.model;

  LoaderOptions lo;
  lo.batch_size = config.batch_size;
  lo.shuffle = true;
  lo.augment = config.augment && data.train.height > 1 && data.train.width > 1;
  lo.seed = derive_seed(config.seed, "loader");
  const BatchLoader loader(data.train, lo);

  const StepConfig step{config.optimizer, config.sharpness, config.hooks};
  OptimizerState state;
  const std::uint64_t noise_seed = derive_seed(config.seed, "train-noise");
  std::uint64_t step_index = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.optimizer.lr_at_epoch(epoch);
    const auto order = loader.order(epoch);
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    double loss_sum = 0.0, perturbed_sum = 0.0, eps_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    const std::size_t nb = loader.num_batches();
    for (std::size_t b = 0; b < nb; ++b) {
      const Batch batch = loader.batch(order, b, epoch);
      const StepReport r = training_step(model, batch, step, state, lr, noise_seed, step_index++);
      loss_sum += r.loss * static_cast<double>(batch.size());
      perturbed_sum += r.perturbed_loss * static_cast<double>(batch.size());
      eps_sum += r.epsilon_norm;
      log.max_epsilon_norm = std::max(log.max_epsilon_norm, r.epsilon_norm);
      log.degenerate_steps += r.degenerate ? 1 : 0;
      log.clipped += r.clipped;
      correct += r.correct;
      seen += batch.size();
    }
    log.loss = loss_sum / static_cast<double>(seen);
    log.perturbed_loss = perturbed_sum / static_cast<double>(seen);
    log.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    log.mean_epsilon_norm = eps_sum / static_cast<double>(nb);
    if (progress) {
      char line[160];
      std::snprintf(line, sizeof line, "epoch %3zu  lr %.4g  loss %.4f  acc %.4f  eps %.4g  clipped %zu", epoch, lr,
                    log.loss, log.train_accuracy, log.mean_epsilon_norm, log.clipped);
      *progress << line << std::endl;
    }
    result.log.push_back(log);
  }
  return result;
}

std::vector<Batch> test_batches(const ExperimentConfig&, const DataBundle& data) {
  LoaderOptions lo;
  lo.batch_size = 500;
  return BatchLoader(data.test, lo).all();
}

std::vector<Batch> calibration_batches(const ExperimentConfig& config, const DataBundle& data) {
  LoaderOptions lo;
  lo.batch_size = config.batch_size;
  auto batches = BatchLoader(data.calibration, lo).all();
  if (batches.size() > config.calibration_batches) batches.resize(config.calibration_batches);
  return batches;
}

std::vector<Batch> sharpness_batches(const ExperimentConfig& config, const DataBundle& data) {
  const std::size_t want = std::min(config.metrics.m * config.metrics.batches, data.train.size());
  const std::uint64_t seed = derive_seed(config.seed, "sharpness-data");
  const Dataset picked = sample(data.train, want, seed);
  LoaderOptions lo;
  lo.batch_size = config.metrics.m;
  lo.shuffle = true;
  lo.drop_last = picked.size() >= config.metrics.m;
  lo.seed = seed;
  return BatchLoader(picked, lo).all();
}

}  // namespace sharpnoise
