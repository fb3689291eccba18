#include "vcvae/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "vcvae/error.hpp"

namespace vcvae {

std::string sigma_mode_name(SigmaUpdateMode mode) {
  return mode == SigmaUpdateMode::kGradient ? "gradient" : "closed_form";
}

SigmaUpdateMode parse_sigma_mode(const std::string& name) {
  if (name == "gradient") return SigmaUpdateMode::kGradient;
  if (name == "closed_form") return SigmaUpdateMode::kClosedForm;
  throw ConfigError("sigma_update_mode must be 'gradient' or 'closed_form', got '" + name + "'");
}

void TrainConfig::validate() const {
  if (n_epoch_1 < 1) throw ConfigError("n_epoch_1 must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(adam.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("adam_beta1 must lie in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("adam_beta2 must lie in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (!(eps_1 >= 0.0) || !(eps_2 >= 0.0)) throw ConfigError("eps_1 and eps_2 must be >= 0");
  if (n_mc < 1) throw ConfigError("n_mc must be >= 1");
  if (max_epoch_factor < 1) throw ConfigError("max_epoch_factor must be >= 1");
  if (fixed_sigma_squared && !(*fixed_sigma_squared > 0.0)) {
    throw ConfigError("fixed sigma^2 must be > 0");
  }
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "epoch,stage,elbo,recon_term,kl_term,sigma_squared,wall_time\n";
  for (const auto& r : records) {
    out << r.epoch << ',' << r.stage << ',' << exact_number(r.elbo) << ','
        << exact_number(r.recon_term) << ',' << exact_number(r.kl_term) << ','
        << exact_number(r.sigma_squared) << ',' << r.wall_time << '\n';
  }
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

namespace {

bool all_finite(const std::vector<Tensor>& ts) {
  for (const auto& t : ts) {
    if (!t.all_finite()) return false;
  }
  return true;
}

std::size_t log_sigma_index(const VaeParams& p) {
  return p.encoder.parameters().size() + p.decoder.parameters().size();
}

void begin_stage2(TrainState& state, const TrainConfig& cfg) {
  Rng head_rng = Rng(cfg.seed).derive("stage2-init");
  state.params.set_sigma_squared(state.sigma_squared_dataset);
  attach_variance_head(state.params, 0.5 * state.sigma_squared_dataset, head_rng);
  state.adam = AdamState{};
  state.stage = 2;
  state.stage_epochs = 0;
  state.previous_elbo.reset();
}

Rng epoch_rng(const TrainConfig& cfg, int stage, std::size_t stage_epoch) {
  return Rng(cfg.seed).derive(stage == 1 ? "stage1" : "stage2").derive(stage_epoch);
}

}  // namespace

ElboBreakdown train_epoch(VaeParams& params, AdamState& adam, const Tensor& data,
                          const TrainConfig& cfg, int stage, Rng& rng) {
  const std::size_t n = data.rows();
  if (n == 0) throw InvalidArgument("training data set is empty");
  if (stage == 2 && !params.var_head) throw ConfigError("stage 2 requires a variance head");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);

  const bool sigma_frozen = stage == 2 || cfg.fixed_sigma_squared.has_value() ||
                            cfg.sigma_update_mode == SigmaUpdateMode::kClosedForm;
  const std::size_t sigma_at = log_sigma_index(params);
  ElboBreakdown acc;
  auto param_list = params.parameters();
  for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
    const std::size_t end = std::min(n, begin + cfg.batch_size);
    const Tensor x = data.gather_rows(std::span<const std::size_t>(order.data() + begin, end - begin));
    const Tensor noise = draw_noise(params, x.rows(), rng, cfg.n_mc);
    ElboGradient g = stage == 1 ? elbo_global_gradient(params, x, noise)
                                : elbo_flexible_gradient(params, x, noise, params.variance_floor);
    if (!std::isfinite(g.value.total) || !all_finite(g.grads)) {
      throw NumericError("non-finite ELBO or gradient in stage " + std::to_string(stage) +
                         " at batch offset " + std::to_string(begin));
    }
    for (auto& t : g.grads) {
      for (auto& v : t.values()) v = -v;
    }
    if (sigma_frozen) g.grads[sigma_at] = Tensor::scalar(0.0);
    adam_step(param_list, g.grads, adam, cfg.adam);

    const double w = static_cast<double>(end - begin) / static_cast<double>(n);
    acc.total += w * g.value.total;
    acc.recon_log_likelihood += w * g.value.recon_log_likelihood;
    acc.kl_to_prior += w * g.value.kl_to_prior;
  }

  if (stage == 1 && !cfg.fixed_sigma_squared &&
      cfg.sigma_update_mode == SigmaUpdateMode::kClosedForm) {
    Rng cf_rng = rng.derive("closed-form");
    const double s = closed_form_sigma(params, data, cf_rng, cfg.n_mc);
    params.set_sigma_squared(std::max(s * s, kMinSigmaSquared));
  }
  return acc;
}

Trainer::Trainer(TrainConfig cfg, Architecture arch, const Tensor& data)
    : cfg_(std::move(cfg)), data_(data) {
  cfg_.validate();
  if (data.rank() != 2 || data.cols() != arch.data_dim) {
    throw DimensionError("training data " + shape_string(data.shape()) +
                         " does not match data_dim " + std::to_string(arch.data_dim));
  }
  Rng init = Rng(cfg_.seed).derive("init");
  state_.params = init_vae(arch, init);
  if (cfg_.fixed_sigma_squared) state_.params.set_sigma_squared(*cfg_.fixed_sigma_squared);
}

Trainer::Trainer(TrainConfig cfg, TrainState state, const Tensor& data)
    : cfg_(std::move(cfg)), state_(std::move(state)), data_(data) {
  cfg_.validate();
  if (data.rank() != 2 || data.cols() != state_.params.data_dim()) {
    throw DimensionError("training data " + shape_string(data.shape()) +
                         " does not match the model");
  }
}

bool Trainer::step() {
  if (state_.finished) return false;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng = epoch_rng(cfg_, state_.stage, state_.stage_epochs);
  ElboBreakdown e;
  try {
    e = train_epoch(state_.params, state_.adam, data_, cfg_, state_.stage, rng);
  } catch (const NumericError& err) {
    throw NumericError(std::string(err.what()) + " during epoch " +
                       std::to_string(state_.epoch() + 1) + "; last good state is epoch " +
                       std::to_string(state_.epoch()));
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  ++state_.stage_epochs;
  EpochRecord rec;
  rec.epoch = state_.epoch() + 1;
  rec.stage = state_.stage;
  rec.elbo = e.total;
  rec.recon_term = e.recon_log_likelihood;
  rec.kl_term = e.kl_to_prior;
  rec.sigma_squared =
      state_.stage == 1 ? state_.params.sigma_squared() : state_.sigma_squared_dataset;
  rec.wall_time = seconds;
  state_.log.records.push_back(rec);

  const std::size_t min_epochs = state_.stage == 1 ? cfg_.n_epoch_1 : cfg_.n_epoch_2;
  const double eps = state_.stage == 1 ? cfg_.eps_1 : cfg_.eps_2;
  const bool converged = state_.stage_epochs >= min_epochs && state_.previous_elbo &&
                         e.total - *state_.previous_elbo < eps;
  const bool capped = state_.stage_epochs >= cfg_.max_epoch_factor * min_epochs;
  state_.previous_elbo = e.total;
  if (converged || capped) finish_stage();
  return !state_.finished;
}

void Trainer::finish_stage() {
  if (state_.stage == 1) {
    state_.sigma_squared_dataset = state_.params.sigma_squared();
    if (cfg_.n_epoch_2 == 0) {
      state_.finished = true;
    } else {
      begin_stage2(state_, cfg_);
    }
  } else {
    state_.finished = true;
  }
}

void Trainer::run(const std::function<bool(const TrainState&)>& on_epoch) {
  while (step()) {
    if (on_epoch && !on_epoch(state_)) return;
  }
  if (on_epoch) on_epoch(state_);
}

Stage1Result train_stage1(VaeParams params, const Tensor& data, const TrainConfig& cfg) {
  if (params.var_head) throw ConfigError("stage 1 expects a model without a variance head");
  TrainConfig c = cfg;
  c.n_epoch_2 = 0;
  TrainState state;
  state.params = std::move(params);
  if (c.fixed_sigma_squared) state.params.set_sigma_squared(*c.fixed_sigma_squared);
  Trainer trainer(c, std::move(state), data);
  trainer.run();
  return {trainer.state().params, trainer.state().sigma_squared_dataset, trainer.state().log};
}

Stage2Result train_stage2(VaeParams params, double sigma_squared_dataset, const Tensor& data,
                          const TrainConfig& cfg) {
  if (!(sigma_squared_dataset > 0.0)) throw InvalidArgument("sigma^2_dataset must be > 0");
  if (cfg.n_epoch_2 < 1) throw ConfigError("n_epoch_2 must be >= 1 for stage 2");
  TrainState state;
  state.params = std::move(params);
  state.params.var_head.reset();
  state.sigma_squared_dataset = sigma_squared_dataset;
  begin_stage2(state, cfg);
  Trainer trainer(cfg, std::move(state), data);
  trainer.run();
  return {trainer.state().params, trainer.state().log};
}

ElboBreakdown evaluate_elbo(const VaeParams& params, const Tensor& data, std::uint64_t seed,
                            std::size_t n_mc) {
  Rng rng = Rng(seed).derive("evaluate-elbo");
  const Tensor noise = draw_noise(params, data.rows(), rng, n_mc);
  return params.var_head ? elbo_flexible(params, data, noise, params.variance_floor)
                         : elbo_global(params, data, noise);
}

Architecture parse_architecture(const std::string& description) {
  Architecture a;
  a.hidden.clear();
  a.var_hidden.clear();
  std::istringstream in(description);
  auto widths = [](const std::string& s) {
    std::vector<std::size_t> out;
    std::istringstream ws(s);
    for (std::string tok; std::getline(ws, tok, ',');) {
      if (!tok.empty()) out.push_back(std::stoul(tok));
    }
    return out;
  };
  for (std::string item; std::getline(in, item, ';');) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    if (key == "data_dim") a.data_dim = std::stoul(value);
    else if (key == "latent_dim") a.latent_dim = std::stoul(value);
    else if (key == "hidden") a.hidden = widths(value);
    else if (key == "activation") a.hidden_activation = parse_activation(value);
    else if (key == "var_hidden") a.var_hidden = widths(value);
    else throw FormatError(FormatError::Reason::kOther, "unknown architecture key '" + key + "'");
  }
  return a;
}

Container checkpoint_container(const TrainState& state, const TrainConfig& cfg) {
  const VaeParams& p = state.params;
  Container c;
  c.set("format", "vcvae-checkpoint");
  c.set("section", "model");
  c.set("architecture", p.arch.describe());
  c.set("stage", std::to_string(state.stage));
  c.set("epoch", std::to_string(state.epoch()));
  c.set("stage_epochs", std::to_string(state.stage_epochs));
  c.set("sigma_squared_dataset", state.sigma_squared_dataset);
  c.set("seed", std::to_string(cfg.seed));
  c.set("sigma_update_mode", sigma_mode_name(cfg.sigma_update_mode));
  c.set("fixed_sigma_squared",
        cfg.fixed_sigma_squared ? exact_number(*cfg.fixed_sigma_squared) : "none");
  c.set("has_var_head", p.var_head ? "1" : "0");
  c.set("variance_floor", p.variance_floor);
  c.set("finished", state.finished ? "1" : "0");
  c.set("previous_elbo", state.previous_elbo ? exact_number(*state.previous_elbo) : "none");
  c.set("adam_step", std::to_string(state.adam.step));

  const auto names = p.parameter_names();
  const auto params = p.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) c.add_array(names[i], *params[i]);
  if (!state.adam.m.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      c.add_array("adam.m." + names[i], state.adam.m[i]);
      c.add_array("adam.v." + names[i], state.adam.v[i]);
    }
  }
  const std::size_t n = state.log.records.size();
  Tensor epoch({n}), stage({n}), elbo({n}), recon({n}), kl({n}), s2({n});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = state.log.records[i];
    epoch[i] = static_cast<double>(r.epoch);
    stage[i] = r.stage;
    elbo[i] = r.elbo;
    recon[i] = r.recon_term;
    kl[i] = r.kl_term;
    s2[i] = r.sigma_squared;
  }
  c.add_array("log.epoch", std::move(epoch));
  c.add_array("log.stage", std::move(stage));
  c.add_array("log.elbo", std::move(elbo));
  c.add_array("log.recon_term", std::move(recon));
  c.add_array("log.kl_term", std::move(kl));
  c.add_array("log.sigma_squared", std::move(s2));
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const TrainConfig& cfg) {
  write_container(path, checkpoint_container(state, cfg));
}

namespace {

VaeParams model_from_container(const Container& c) {
  if (c.require("section") != "model") {
    throw FormatError(FormatError::Reason::kOther, "container is not a model checkpoint");
  }
  const Architecture arch = parse_architecture(c.require("architecture"));
  Rng dummy(0);
  VaeParams p = init_vae(arch, dummy);
  if (c.require("has_var_head") == "1") attach_variance_head(p, c.require_number("variance_floor"), dummy);
  const auto names = p.parameter_names();
  auto params = p.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = c.require_array(names[i]);
    if (t.shape() != params[i]->shape()) {
      throw FormatError(FormatError::Reason::kDimensionMismatch,
                        "checkpoint array '" + names[i] + "' has shape " +
                            shape_string(t.shape()) + ", expected " +
                            shape_string(params[i]->shape()));
    }
    *params[i] = t;
  }
  return p;
}

}  // namespace

TrainState load_checkpoint(const std::filesystem::path& path) {
  const Container c = read_container(path);
  TrainState s;
  s.params = model_from_container(c);
  s.stage = std::stoi(c.require("stage"));
  s.stage_epochs = std::stoul(c.require("stage_epochs"));
  s.sigma_squared_dataset = c.require_number("sigma_squared_dataset");
  s.finished = c.require("finished") == "1";
  if (c.require("previous_elbo") != "none") s.previous_elbo = c.require_number("previous_elbo");
  s.adam.step = std::stoull(c.require("adam_step"));
  if (s.adam.step > 0) {
    for (const auto& name : s.params.parameter_names()) {
      s.adam.m.push_back(c.require_array("adam.m." + name));
      s.adam.v.push_back(c.require_array("adam.v." + name));
    }
  }
  const Tensor& epoch = c.require_array("log.epoch");
  const Tensor& stage = c.require_array("log.stage");
  const Tensor& elbo = c.require_array("log.elbo");
  const Tensor& recon = c.require_array("log.recon_term");
  const Tensor& kl = c.require_array("log.kl_term");
  const Tensor& s2 = c.require_array("log.sigma_squared");
  for (std::size_t i = 0; i < epoch.size(); ++i) {
    s.log.records.push_back({static_cast<std::size_t>(epoch[i]), static_cast<int>(stage[i]),
                             elbo[i], recon[i], kl[i], s2[i], 0.0});
  }
  return s;
}

VaeParams load_model(const std::filesystem::path& path) {
  return model_from_container(read_container(path));
}

}  // namespace vcvae
