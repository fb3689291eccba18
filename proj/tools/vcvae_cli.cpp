#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vcvae/vcvae.h"

namespace {

struct Globals {
  std::string config;
  std::optional<unsigned long long> seed;
  std::string out;
  bool force = false;
  std::optional<std::size_t> threads;
  std::vector<std::string> overrides;
};

void print_progress(const char* line, void*) { std::fprintf(stderr, "%s\n", line); }

int report(vcvae_status s) {
  if (s != VCVAE_OK) std::fprintf(stderr, "vcvae: %s: %s\n", vcvae_status_name(s), vcvae_last_error());
  return static_cast<int>(s);
}

// Owns a config handle built from --config, --set, --seed and --threads.
class Config {
 public:
  explicit Config(const Globals& g) {
    status_ = g.config.empty() ? vcvae_config_new(&cfg_) : vcvae_config_load(g.config.c_str(), &cfg_);
    for (const auto& kv : g.overrides) {
      if (status_ != VCVAE_OK) return;
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        std::fprintf(stderr, "vcvae: --set expects key=value, got '%s'\n", kv.c_str());
        status_ = VCVAE_ERR_CONFIG;
        return;
      }
      set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (g.seed) set("seed", std::to_string(*g.seed));
    if (g.threads) set("threads", std::to_string(*g.threads));
  }
  ~Config() { vcvae_config_free(cfg_); }
  Config(const Config&) = delete;
  Config& operator=(const Config&) = delete;

  void set(const std::string& key, const std::string& value) {
    if (status_ == VCVAE_OK) status_ = vcvae_config_set(cfg_, key.c_str(), value.c_str());
  }
  vcvae_status status() const { return status_; }
  const vcvae_config* get() const { return cfg_; }

 private:
  vcvae_config* cfg_ = nullptr;
  vcvae_status status_ = VCVAE_OK;
};

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variance-calibrated VAE: training, aggregate-posterior fitting and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", vcvae_version());

  Globals g;
  app.add_option("--config", g.config, "Run configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the config seed");
  app.add_option("--out", g.out, "Output path (run directory, file or directory per command)");
  app.add_flag("--force", g.force, "Overwrite existing outputs");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--set", g.overrides, "Config override section.key=value (repeatable)");

  auto* train = app.add_subcommand("train", "Two-stage training into a run directory");
  std::optional<double> fixed_sigma;
  std::string resume;
  train->add_option("--fixed-sigma", fixed_sigma, "Hold sigma^2 at this value during stage 1");
  train->add_option("--resume", resume, "Continue the run in this directory")->check(CLI::ExistingDirectory);

  auto* fit = app.add_subcommand("fit-gmm", "Fit the aggregate-posterior mixture");
  std::string checkpoint, gmm;
  std::size_t components = 0;
  fit->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  fit->add_option("--components", components, "Mixture components (default: gmm.components)");

  auto* eval = app.add_subcommand("eval", "IWAE, KL gap, uncertainty and MMD report as CSV");
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--gmm", gmm, "Fitted mixture")->check(CLI::ExistingFile);

  auto* sample = app.add_subcommand("sample", "Generate images and uncertainty maps as PGM");
  std::size_t n = 16;
  std::string source = "prior";
  sample->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  sample->add_option("--gmm", gmm, "Fitted mixture")->check(CLI::ExistingFile);
  sample->add_option("-n,--count", n, "Number of samples");
  sample->add_option("--source", source, "Latent source")->check(CLI::IsMember({"prior", "gmm"}));

  auto* sweep = app.add_subcommand("sweep-sigma", "Fixed-sigma grid plus a learned-sigma run");
  std::string sigmas;
  sweep->add_option("--sigmas", sigmas, "Comma-separated sigma^2 grid (default: sweep.sigmas)");

  for (auto* sub : {train, fit, eval, sample, sweep}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  if (train->parsed() && !resume.empty()) {
    return report(vcvae_resume(resume.c_str(), print_progress, nullptr));
  }

  Config cfg(g);
  if (train->parsed() && fixed_sigma) cfg.set("train.fixed_sigma_squared", std::to_string(*fixed_sigma));
  if (sweep->parsed() && !sigmas.empty()) cfg.set("sweep.sigmas", sigmas);
  if (cfg.status() != VCVAE_OK) return report(cfg.status());
  if (auto s = vcvae_config_validate(cfg.get()); s != VCVAE_OK) return report(s);

  if (train->parsed()) {
    char dir[4096];
    const vcvae_status s = vcvae_train(cfg.get(), opt(g.out), g.force, print_progress, nullptr, dir, sizeof dir);
    if (s == VCVAE_OK) std::printf("%s\n", dir);
    return report(s);
  }
  if (fit->parsed()) {
    const std::string out = g.out.empty() ? checkpoint + ".gmm" : g.out;
    double kl = 0.0, kl_std = 0.0;
    const vcvae_status s = vcvae_fit_gmm(cfg.get(), checkpoint.c_str(), components, out.c_str(), g.force, &kl, &kl_std);
    if (s == VCVAE_OK) std::printf("%s kl_gap %.6g +- %.3g\n", out.c_str(), kl, kl_std);
    return report(s);
  }
  if (eval->parsed()) {
    const std::string out = g.out.empty() ? checkpoint + ".eval.csv" : g.out;
    const vcvae_status s = vcvae_eval(cfg.get(), checkpoint.c_str(), opt(gmm), out.c_str(), g.force);
    if (s == VCVAE_OK) std::printf("%s\n", out.c_str());
    return report(s);
  }
  if (sample->parsed()) {
    const std::string out = g.out.empty() ? "samples-" + source : g.out;
    const vcvae_status s =
        vcvae_sample(cfg.get(), checkpoint.c_str(), opt(gmm), n, source.c_str(), out.c_str(), g.force);
    if (s == VCVAE_OK) std::printf("%s\n", out.c_str());
    return report(s);
  }
  const std::string out = g.out.empty() ? "sweep-sigma" : g.out;
  const vcvae_status s = vcvae_sweep_sigma(cfg.get(), out.c_str(), g.force, print_progress, nullptr);
  if (s == VCVAE_OK) std::printf("%s/summary.csv\n", out.c_str());
  return report(s);
}
