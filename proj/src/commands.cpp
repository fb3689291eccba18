#include "vcvae/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "vcvae/error.hpp"
#include "vcvae/parallel.hpp"

namespace vcvae {

namespace fs = std::filesystem;

namespace {

void claim_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ExistsError("'" + dir.string() + "' exists and is not a directory");
    if (!fs::is_empty(dir) && !force) {
      throw ExistsError("'" + dir.string() + "' already exists; pass --force to overwrite");
    }
  }
  fs::create_directories(dir);
}

void claim_file(const fs::path& file, bool force) {
  if (fs::exists(file) && !force) {
    throw ExistsError("'" + file.string() + "' already exists; pass --force to overwrite");
  }
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

std::ofstream open_csv(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t = cfg.train;
  t.seed = cfg.seed;
  return t;
}

void check_model_data(const VaeParams& p, const Dataset& d) {
  if (p.data_dim() != d.dim()) {
    throw DimensionError("model data_dim " + std::to_string(p.data_dim()) +
                         " does not match the data set width " + std::to_string(d.dim()));
  }
}

std::pair<std::size_t, std::size_t> image_shape(std::size_t d) {
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(d))));
  if (side * side == d) return {side, side};
  return {1, d};
}

Tensor clamp01(Tensor t) {
  for (auto& v : t.values()) v = std::clamp(v, 0.0, 1.0);
  return t;
}

// Bandwidths from the held-out data alone, so paired comparisons share them.
std::vector<double> reference_bandwidths(const Tensor& test) {
  const std::size_t half = test.rows() / 2;
  return median_heuristic_bandwidths(test.slice_rows(0, half), test.slice_rows(half, test.rows()));
}

MetricRow summarize(const std::string& name, const std::vector<double>& xs) {
  MetricRow r{name, 0.0, 0.0, xs.size()};
  for (double v : xs) r.mean += v;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double v : xs) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

TrainResult run_trainer(Trainer& trainer, const fs::path& run_dir, const Progress& progress) {
  const fs::path ckpt = run_dir / kCheckpointFile;
  const TrainConfig tc = trainer.config();
  try {
    trainer.run([&](const TrainState& s) {
      save_checkpoint(ckpt, s, tc);
      s.log.write_csv(run_dir / kTrainLogFile);
      if (progress && !s.log.records.empty()) {
        const auto& r = s.log.records.back();
        std::ostringstream msg;
        msg << "epoch " << r.epoch << " stage " << r.stage << " elbo " << r.elbo << " sigma^2 "
            << r.sigma_squared << " (" << std::fixed << std::setprecision(2) << r.wall_time << " s)";
        progress(msg.str());
      }
      return true;
    });
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + "; last good checkpoint: " + ckpt.string());
  }
  return {run_dir, trainer.state()};
}

}  // namespace

DataSplit load_data(const RunConfig& cfg) {
  cfg.validate();
  Dataset all;
  if (cfg.dataset.source == DataSource::kIdx) {
    std::optional<fs::path> labels;
    if (!cfg.dataset.labels.empty()) labels = cfg.dataset.labels;
    all = load_idx(cfg.dataset.images, labels);
    if (cfg.dataset.max_images > 0) all = take(all, cfg.dataset.max_images);
  } else {
    SyntheticSpec spec = cfg.dataset.synthetic;
    spec.seed = cfg.seed;
    Rng rng = Rng(cfg.seed).derive("synthetic");
    all = make_synthetic(spec, rng);
  }
  auto [train, test] = split(all, cfg.dataset.train_fraction, cfg.seed);
  if (train.size() == 0 || test.size() == 0) {
    throw ConfigError("dataset.train_fraction leaves an empty training or test set");
  }
  return {std::move(train), std::move(test)};
}

fs::path timestamped_run_dir(const RunConfig& cfg) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  std::ostringstream name;
  name << "run-" << std::put_time(&utc, "%Y%m%d-%H%M%S");
  return fs::path(cfg.output_dir) / name.str();
}

TrainResult cmd_train(const RunConfig& cfg, const fs::path& run_dir, bool force,
                      const Progress& progress) {
  cfg.validate();
  set_thread_count(cfg.threads);
  const DataSplit data = load_data(cfg);
  claim_dir(run_dir, force);
  save_config(run_dir / kConfigFile, cfg);
  Architecture arch = cfg.model;
  arch.data_dim = data.train.dim();
  Trainer trainer(train_config(cfg), arch, data.train.examples);
  return run_trainer(trainer, run_dir, progress);
}

TrainResult cmd_resume(const fs::path& run_dir, const Progress& progress) {
  const RunConfig cfg = load_config(run_dir / kConfigFile);
  cfg.validate();
  set_thread_count(cfg.threads);
  const DataSplit data = load_data(cfg);
  TrainState state = load_checkpoint(run_dir / kCheckpointFile);
  check_model_data(state.params, data.train);
  if (state.finished) return {run_dir, std::move(state)};
  Trainer trainer(train_config(cfg), std::move(state), data.train.examples);
  return run_trainer(trainer, run_dir, progress);
}

GmmResult cmd_fit_gmm(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out,
                      bool force, std::optional<std::size_t> components) {
  cfg.validate();
  set_thread_count(cfg.threads);
  const fs::path summary = out.string() + ".csv";
  claim_file(out, force);
  claim_file(summary, force);
  const VaeParams params = load_model(checkpoint);
  const DataSplit data = load_data(cfg);
  check_model_data(params, data.train);

  GmmFitOptions opts = cfg.gmm;
  if (components) opts.components = *components;
  if (opts.components < 1) throw ConfigError("gmm.components: must be >= 1");
  const LatentCloud cloud = build_latent_cloud(params, data.train.examples);
  Rng rng = Rng(cfg.seed).derive("gmm");
  GmmResult res;
  res.fit = fit_gmm(cloud, opts, rng);
  res.kl = kl_gap_estimate(res.fit.gmm, Rng(cfg.seed).derive("kl-gap"), cfg.eval.kl_samples,
                           cfg.eval.kl_runs);
  save_gmm(out, res.fit.gmm);

  auto csv = open_csv(summary);
  csv << "components,kl_gap_mean,kl_gap_std,log_likelihood,iterations,reinitializations,converged\n"
      << opts.components << ',' << exact_number(res.kl.mean) << ',' << exact_number(res.kl.std)
      << ',' << exact_number(res.fit.log_likelihood.back()) << ',' << res.fit.iterations << ','
      << res.fit.reinitializations << ',' << (res.fit.converged ? 1 : 0) << '\n';
  return res;
}

std::vector<MetricRow> cmd_eval(const RunConfig& cfg, const fs::path& checkpoint,
                                const std::optional<fs::path>& gmm_path, const fs::path& out_csv,
                                bool force) {
  cfg.validate();
  set_thread_count(cfg.threads);
  claim_file(out_csv, force);
  const TrainState state = load_checkpoint(checkpoint);
  const VaeParams& params = state.params;
  std::optional<GmmApprox> gmm;
  if (gmm_path) gmm = load_gmm(*gmm_path);
  const DataSplit data = load_data(cfg);
  check_model_data(params, data.test);
  const Tensor test = take(data.test, cfg.eval.n_test).examples;
  if (test.rows() < 4) throw ConfigError("eval needs at least 4 test rows");

  const Rng root = Rng(cfg.seed).derive("eval");
  std::vector<MetricRow> rows;
  rows.push_back({"sigma_squared_dataset",
                  state.sigma_squared_dataset > 0.0 ? state.sigma_squared_dataset
                                                    : params.sigma_squared(),
                  0.0, 1});
  const ElboBreakdown elbo = evaluate_elbo(params, test, cfg.seed);
  rows.push_back({"test_elbo", elbo.total, 0.0, test.rows()});

  const Rng iwae_rng = root.derive("iwae");
  const IwaeReport prior = iwae_bound(params, test, cfg.eval.k, LatentSource::kPrior, nullptr, iwae_rng);
  rows.push_back(summarize("iwae_prior", prior.per_datum));
  if (gmm) {
    const IwaeReport mix = iwae_bound(params, test, cfg.eval.k, LatentSource::kGmm, &*gmm, iwae_rng);
    rows.push_back(summarize("iwae_gmm", mix.per_datum));
    const KlGap kl = kl_gap_estimate(*gmm, Rng(cfg.seed).derive("kl-gap"), cfg.eval.kl_samples,
                                     cfg.eval.kl_runs);
    rows.push_back(summarize("kl_gap", kl.runs));
  }

  if (params.var_head) {
    const UncertaintyMap rec = reconstruct(params, test);
    std::vector<double> var(rec.variance.values().begin(), rec.variance.values().end());
    std::vector<double> sq(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      const double r = test[i] - rec.mean[i];
      sq[i] = r * r;
    }
    rows.push_back({"uncertainty_correlation", pearson_correlation(var, sq), 0.0, test.size()});
  }

  const std::size_t m = std::min(cfg.eval.mmd_samples, test.rows());
  const Tensor reference = test.slice_rows(0, m);
  const auto bw = reference_bandwidths(reference);
  Rng prior_rng = root.derive("mmd-prior");
  const Generated gp = generate(params, nullptr, prior_rng, m, LatentSource::kPrior);
  rows.push_back({"mmd_prior", mmd_proxy(gp.images.mean, reference, bw), 0.0, m});
  if (gmm) {
    Rng gmm_rng = root.derive("mmd-gmm");
    const Generated gg = generate(params, &*gmm, gmm_rng, m, LatentSource::kGmm);
    rows.push_back({"mmd_gmm", mmd_proxy(gg.images.mean, reference, bw), 0.0, m});
  }
  write_metrics_csv(out_csv, rows);
  return rows;
}

std::vector<fs::path> cmd_sample(const RunConfig& cfg, const fs::path& checkpoint,
                                 const std::optional<fs::path>& gmm_path, std::size_t n,
                                 LatentSource source, const fs::path& out_dir, bool force) {
  cfg.validate();
  set_thread_count(cfg.threads);
  const VaeParams params = load_model(checkpoint);
  std::optional<GmmApprox> gmm;
  if (gmm_path) gmm = load_gmm(*gmm_path);
  if (source == LatentSource::kGmm && !gmm) throw ConfigError("source 'gmm' needs --gmm");
  claim_dir(out_dir, force);

  Rng rng = Rng(cfg.seed).derive("sample").derive(latent_source_name(source));
  const Generated g = generate(params, gmm ? &*gmm : nullptr, rng, n, source);
  std::vector<fs::path> files;
  if (n == 0) return files;
  const auto [rows, cols] = image_shape(params.data_dim());
  const Tensor images = clamp01(g.images.mean);

  auto scales = open_csv(out_dir / "scales.csv");
  scales << "file,lo,hi\n";
  char name[64];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(name, sizeof name, "sample_%04zu.pgm", i);
    write_pgm_grid(out_dir / name, images.slice_rows(i, i + 1), rows, cols, 1, 0.0, 1.0);
    files.push_back(out_dir / name);
    std::snprintf(name, sizeof name, "uncertainty_%04zu.pgm", i);
    const MapScale s = write_variance_grid(out_dir / name, g.images.variance.slice_rows(i, i + 1),
                                           rows, cols, 1);
    scales << name << ',' << exact_number(s.lo) << ',' << exact_number(s.hi) << '\n';
    files.push_back(out_dir / name);
  }
  const std::size_t grid = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  write_pgm_grid(out_dir / "samples_grid.pgm", images, rows, cols, grid, 0.0, 1.0);
  const MapScale s = write_variance_grid(out_dir / "uncertainty_grid.pgm", g.images.variance, rows,
                                         cols, grid);
  scales << "uncertainty_grid.pgm," << exact_number(s.lo) << ',' << exact_number(s.hi) << '\n';
  files.push_back(out_dir / "samples_grid.pgm");
  files.push_back(out_dir / "uncertainty_grid.pgm");
  files.push_back(out_dir / "scales.csv");
  return files;
}

std::vector<SweepRow> cmd_sweep_sigma(const RunConfig& cfg, const fs::path& out_dir, bool force,
                                      const Progress& progress) {
  cfg.validate();
  if (cfg.sweep.sigmas.empty() && !cfg.sweep.include_learned) {
    throw ConfigError("sweep.sigmas: nothing to run");
  }
  claim_dir(out_dir, force);
  save_config(out_dir / kConfigFile, cfg);
  const DataSplit data = load_data(cfg);

  std::vector<std::optional<double>> plan(cfg.sweep.sigmas.begin(), cfg.sweep.sigmas.end());
  if (cfg.sweep.include_learned) plan.emplace_back();

  std::vector<SweepRow> rows;
  for (const auto& sigma2 : plan) {
    RunConfig run = cfg;
    run.train.n_epoch_2 = 0;
    run.train.fixed_sigma_squared = sigma2;
    SweepRow row;
    row.learned = !sigma2;
    row.run = sigma2 ? "sigma2-" + exact_number(*sigma2) : "learned";
    const fs::path dir = out_dir / row.run;
    if (progress) progress("sweep: training " + row.run);
    Progress inner;
    if (progress) inner = [&](const std::string& line) { progress(row.run + ": " + line); };
    const TrainResult tr = cmd_train(run, dir, force, inner);
    const VaeParams& params = tr.state.params;
    row.sigma_squared = sigma2 ? *sigma2 : params.sigma_squared();
    row.epochs = tr.state.log.records.size();
    row.final_elbo = evaluate_elbo(params, data.train.examples, cfg.seed).total;

    const GmmResult gr = cmd_fit_gmm(run, dir / kCheckpointFile, dir / "gmm.vcv", force);
    row.kl_gap_mean = gr.kl.mean;
    row.kl_gap_std = gr.kl.std;

    const Tensor test = take(data.test, cfg.eval.mmd_samples).examples;
    Rng rng = Rng(cfg.seed).derive("sweep-mmd");
    const Generated g = generate(params, &gr.fit.gmm, rng, test.rows(), LatentSource::kGmm);
    row.mmd_gmm = mmd_proxy(g.images.mean, test, reference_bandwidths(test));
    if (progress) {
      std::ostringstream msg;
      msg << "sweep: " << row.run << " elbo " << row.final_elbo << " kl_gap " << row.kl_gap_mean
          << " +- " << row.kl_gap_std << " mmd " << row.mmd_gmm;
      progress(msg.str());
    }
    rows.push_back(row);
  }
  write_sweep_csv(out_dir / "summary.csv", rows);
  return rows;
}

void write_metrics_csv(const fs::path& path, const std::vector<MetricRow>& rows) {
  auto out = open_csv(path);
  out << "metric,mean,std,n\n";
  for (const auto& r : rows) {
    out << r.metric << ',' << exact_number(r.mean) << ',' << exact_number(r.std) << ',' << r.n << '\n';
  }
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

void write_sweep_csv(const fs::path& path, const std::vector<SweepRow>& rows) {
  auto out = open_csv(path);
  out << "run,sigma_squared,learned,epochs,final_elbo,kl_gap_mean,kl_gap_std,mmd_gmm\n";
  for (const auto& r : rows) {
    out << r.run << ',' << exact_number(r.sigma_squared) << ',' << (r.learned ? 1 : 0) << ','
        << r.epochs << ',' << exact_number(r.final_elbo) << ',' << exact_number(r.kl_gap_mean)
        << ',' << exact_number(r.kl_gap_std) << ',' << exact_number(r.mmd_gmm) << '\n';
  }
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

}  // namespace vcvae
