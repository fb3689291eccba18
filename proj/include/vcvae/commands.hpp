#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vcvae/config.hpp"
#include "vcvae/dataset.hpp"
#include "vcvae/eval.hpp"
#include "vcvae/gmm.hpp"
#include "vcvae/trainer.hpp"

namespace vcvae {

// File names inside a training run directory.
inline constexpr const char* kCheckpointFile = "checkpoint.vcv";
inline constexpr const char* kTrainLogFile = "train_log.csv";
inline constexpr const char* kConfigFile = "config.ini";

// One line of human-readable progress.
using Progress = std::function<void(const std::string&)>;

struct DataSplit {
  Dataset train;
  Dataset test;
};

// Loads or synthesises the configured data and splits it with cfg.seed.
DataSplit load_data(const RunConfig& cfg);

// <output_dir>/run-<UTC yyyymmdd-hhmmss>
std::filesystem::path timestamped_run_dir(const RunConfig& cfg);

struct TrainResult {
  std::filesystem::path run_dir;
  TrainState state;
};

// Trains both stages into run_dir, rewriting the checkpoint after every
// epoch. Refuses a non-empty run_dir unless force is set.
TrainResult cmd_train(const RunConfig& cfg, const std::filesystem::path& run_dir, bool force,
                      const Progress& progress = {});
// Continues an interrupted run from its last checkpoint.
TrainResult cmd_resume(const std::filesystem::path& run_dir, const Progress& progress = {});

struct GmmResult {
  GmmFit fit;
  KlGap kl;
};

// Fits the mixture on the training set's latent cloud and writes it to out,
// plus a one-row summary CSV next to it (<out>.csv).
GmmResult cmd_fit_gmm(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                      const std::filesystem::path& out, bool force,
                      std::optional<std::size_t> components = std::nullopt);

struct MetricRow {
  std::string metric;
  double mean = 0.0;
  double std = 0.0;  // standard deviation of the n values behind mean
  std::size_t n = 0;
};

// CSV columns: metric,mean,std,n. Metrics: sigma_squared_dataset, test_elbo,
// iwae_prior, mmd_prior, and when a variance head is present
// uncertainty_correlation; with a GMM also iwae_gmm, kl_gap, mmd_gmm.
std::vector<MetricRow> cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                                const std::optional<std::filesystem::path>& gmm,
                                const std::filesystem::path& out_csv, bool force);

// Writes sample_NNNN.pgm and uncertainty_NNNN.pgm per draw, grids of both,
// and scales.csv with the min-max range of every uncertainty map.
std::vector<std::filesystem::path> cmd_sample(const RunConfig& cfg,
                                              const std::filesystem::path& checkpoint,
                                              const std::optional<std::filesystem::path>& gmm,
                                              std::size_t n, LatentSource source,
                                              const std::filesystem::path& out_dir, bool force);

struct SweepRow {
  std::string run;
  double sigma_squared = 0.0;  // fixed value, or the learned sigma^2
  bool learned = false;
  std::size_t epochs = 0;
  double final_elbo = 0.0;  // training set, shared noise seed
  double kl_gap_mean = 0.0;
  double kl_gap_std = 0.0;
  double mmd_gmm = 0.0;
};

// One stage-1 model per fixed sigma^2 plus an optional learned-sigma run,
// each with its own GMM. Writes <out_dir>/summary.csv.
std::vector<SweepRow> cmd_sweep_sigma(const RunConfig& cfg, const std::filesystem::path& out_dir,
                                      bool force, const Progress& progress = {});

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

}  // namespace vcvae
