#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vcvae/adam.hpp"
#include "vcvae/container.hpp"
#include "vcvae/elbo.hpp"
#include "vcvae/model.hpp"
#include "vcvae/tensor.hpp"

namespace vcvae {

enum class SigmaUpdateMode { kGradient, kClosedForm };

std::string sigma_mode_name(SigmaUpdateMode mode);
SigmaUpdateMode parse_sigma_mode(const std::string& name);

// Smallest sigma^2 the closed-form update may set.
inline constexpr double kMinSigmaSquared = 1e-6;

struct TrainConfig {
  // Each stage runs at least n_epoch_k epochs, then stops once the epoch ELBO
  // improvement drops below eps_k, and never runs more than
  // max_epoch_factor * n_epoch_k epochs. n_epoch_2 == 0 skips stage 2.
  std::size_t n_epoch_1 = 20;
  std::size_t n_epoch_2 = 20;
  double eps_1 = 0.1;
  double eps_2 = 0.1;
  std::size_t max_epoch_factor = 4;
  std::size_t batch_size = 100;
  AdamConfig adam;
  std::uint64_t seed = 0;
  SigmaUpdateMode sigma_update_mode = SigmaUpdateMode::kGradient;
  std::size_t n_mc = 1;
  // When set, sigma^2 is held at this value for all of stage 1.
  std::optional<double> fixed_sigma_squared;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based, counted across both stages
  int stage = 1;
  double elbo = 0.0;
  double recon_term = 0.0;
  double kl_term = 0.0;
  double sigma_squared = 0.0;
  double wall_time = 0.0;  // seconds spent in the epoch
};

struct TrainLog {
  std::vector<EpochRecord> records;

  // Columns: epoch,stage,elbo,recon_term,kl_term,sigma_squared,wall_time
  void write_csv(const std::filesystem::path& path) const;
};

// Everything needed to continue a run bit-for-bit from an epoch boundary.
struct TrainState {
  VaeParams params;
  AdamState adam;
  int stage = 1;
  std::size_t stage_epochs = 0;
  std::optional<double> previous_elbo;
  double sigma_squared_dataset = 0.0;
  TrainLog log;
  bool finished = false;

  std::size_t epoch() const { return log.records.size(); }
};

// Gradient step on a batch of data. Mode follows the stage: global variance in
// stage 1, per-pixel variance with params.variance_floor in stage 2.
ElboBreakdown train_epoch(VaeParams& params, AdamState& adam, const Tensor& data,
                          const TrainConfig& cfg, int stage, Rng& rng);

class Trainer {
 public:
  // Fresh run: parameters initialised from cfg.seed, sigma = 1 (or fixed).
  Trainer(TrainConfig cfg, Architecture arch, const Tensor& data);
  // Continues from a saved state.
  Trainer(TrainConfig cfg, TrainState state, const Tensor& data);

  // Runs one epoch; returns false once the run has finished.
  bool step();
  // Runs until finished, or until on_epoch returns false.
  void run(const std::function<bool(const TrainState&)>& on_epoch = {});

  const TrainState& state() const { return state_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  void finish_stage();

  TrainConfig cfg_;
  TrainState state_;
  const Tensor& data_;
};

struct Stage1Result {
  VaeParams params;
  double sigma_squared_dataset = 0.0;
  TrainLog log;
};

// Stage 1 only: learns encoder, decoder and the global sigma.
Stage1Result train_stage1(VaeParams params, const Tensor& data, const TrainConfig& cfg);

struct Stage2Result {
  VaeParams params;
  TrainLog log;
};

// Stage 2 only: freezes sigma^2_dataset, attaches a fresh variance head with
// floor sigma^2_dataset / 2 and continues training encoder and decoder.
Stage2Result train_stage2(VaeParams params, double sigma_squared_dataset, const Tensor& data,
                          const TrainConfig& cfg);

// ELBO of the whole data set with deterministic noise from `seed`.
ElboBreakdown evaluate_elbo(const VaeParams& params, const Tensor& data, std::uint64_t seed,
                            std::size_t n_mc = 1);

// Checkpoint I/O (section "model").
Container checkpoint_container(const TrainState& state, const TrainConfig& cfg);
void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const TrainConfig& cfg);
TrainState load_checkpoint(const std::filesystem::path& path);
VaeParams load_model(const std::filesystem::path& path);
Architecture parse_architecture(const std::string& description);

}  // namespace vcvae
