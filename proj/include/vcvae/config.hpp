#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vcvae/dataset.hpp"
#include "vcvae/gmm.hpp"
#include "vcvae/model.hpp"
#include "vcvae/trainer.hpp"

namespace vcvae {

enum class DataSource { kIdx, kSynthetic };

struct DatasetSettings {
  DataSource source = DataSource::kIdx;
  std::string images;
  std::string labels;
  std::size_t max_images = 0;  // 0 keeps every image
  double train_fraction = 0.9;
  SyntheticSpec synthetic;     // seed comes from RunConfig::seed
};

struct EvalSettings {
  std::size_t n_test = 500;
  std::size_t k = 20;
  std::size_t kl_samples = 10000;
  std::size_t kl_runs = 10;
  std::size_t mmd_samples = 500;
};

struct SweepSettings {
  std::vector<double> sigmas{1.0, 0.5, 0.1, 0.035, 0.01};
  bool include_learned = true;
};

// Everything a command needs. Text form:
//
//   seed = 0
//   [train]
//   n_epoch_1 = 20
//
// Keys before the first [section] are global. '#' starts a comment.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string output_dir = "runs";
  DatasetSettings dataset;
  Architecture model;  // data_dim is taken from the data set
  TrainConfig train;
  GmmFitOptions gmm;
  EvalSettings eval;
  SweepSettings sweep;

  // Throws ConfigError naming the offending key.
  void validate() const;
  // Applies one "section.key" (or "key" for globals) assignment.
  void set(const std::string& dotted_key, const std::string& value);
  // Every key with its resolved value, parseable by parse_config.
  std::string to_text() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& cfg);

// Every key parse_config accepts, as "section.key".
std::vector<std::string> config_keys();

}  // namespace vcvae
