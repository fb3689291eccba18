#include "vcvae/vcvae.h"

#include <cstring>
#include <string>

#include "vcvae/commands.hpp"
#include "vcvae/error.hpp"
#include "vcvae/eval.hpp"

struct vcvae_config {
  vcvae::RunConfig cfg;
};

struct vcvae_model {
  vcvae::VaeParams params;
};

namespace {

thread_local std::string t_last_error;

vcvae_status status_of(vcvae::ErrorKind kind) {
  using vcvae::ErrorKind;
  switch (kind) {
    case ErrorKind::kDimension: return VCVAE_ERR_DIMENSION;
    case ErrorKind::kDecomposition: return VCVAE_ERR_DECOMPOSITION;
    case ErrorKind::kInvalidArgument: return VCVAE_ERR_INVALID_ARGUMENT;
    case ErrorKind::kConfig: return VCVAE_ERR_CONFIG;
    case ErrorKind::kIo: return VCVAE_ERR_IO;
    case ErrorKind::kFormat: return VCVAE_ERR_FORMAT;
    case ErrorKind::kNumeric: return VCVAE_ERR_NUMERIC;
    case ErrorKind::kExists: return VCVAE_ERR_EXISTS;
  }
  return VCVAE_ERR_INTERNAL;
}

vcvae_status fail(vcvae_status s, const std::string& msg) {
  t_last_error = msg;
  return s;
}

template <class F>
vcvae_status guarded(F&& body) {
  try {
    body();
    t_last_error.clear();
    return VCVAE_OK;
  } catch (const vcvae::Error& e) {
    return fail(status_of(e.kind()), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(VCVAE_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(VCVAE_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(VCVAE_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(VCVAE_ERR_INTERNAL, "unknown error");
  }
}

vcvae::Progress wrap(vcvae_progress_fn fn, void* user) {
  if (fn == nullptr) return {};
  return [fn, user](const std::string& line) { fn(line.c_str(), user); };
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw vcvae::InvalidArgument(std::string(what) + " must not be NULL");
}

}  // namespace

extern "C" {

const char* vcvae_version(void) { return "0.1.0"; }

const char* vcvae_status_name(vcvae_status s) {
  switch (s) {
    case VCVAE_OK: return "ok";
    case VCVAE_ERR_INVALID_ARGUMENT: return "invalid argument";
    case VCVAE_ERR_DIMENSION: return "dimension mismatch";
    case VCVAE_ERR_DECOMPOSITION: return "decomposition failed";
    case VCVAE_ERR_CONFIG: return "configuration error";
    case VCVAE_ERR_IO: return "i/o error";
    case VCVAE_ERR_FORMAT: return "format error";
    case VCVAE_ERR_NUMERIC: return "numeric error";
    case VCVAE_ERR_EXISTS: return "output exists";
    case VCVAE_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* vcvae_last_error(void) { return t_last_error.c_str(); }

vcvae_status vcvae_config_new(vcvae_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new vcvae_config{};
  });
}

vcvae_status vcvae_config_load(const char* path, vcvae_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new vcvae_config{vcvae::load_config(path)};
  });
}

vcvae_status vcvae_config_set(vcvae_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    require(cfg, "cfg");
    require(key, "key");
    require(value, "value");
    cfg->cfg.set(key, value);
  });
}

vcvae_status vcvae_config_validate(const vcvae_config* cfg) {
  return guarded([&] {
    require(cfg, "cfg");
    cfg->cfg.validate();
  });
}

vcvae_status vcvae_config_text(const vcvae_config* cfg, char* buf, size_t len, size_t* needed) {
  return guarded([&] {
    require(cfg, "cfg");
    const std::string text = cfg->cfg.to_text();
    if (needed) *needed = text.size() + 1;
    if (buf == nullptr) return;
    if (len < text.size() + 1) throw vcvae::InvalidArgument("buffer too small for config text");
    std::memcpy(buf, text.c_str(), text.size() + 1);
  });
}

void vcvae_config_free(vcvae_config* cfg) { delete cfg; }

vcvae_status vcvae_train(const vcvae_config* cfg, const char* run_dir, int force,
                         vcvae_progress_fn progress, void* user, char* run_dir_out,
                         size_t run_dir_len) {
  return guarded([&] {
    require(cfg, "cfg");
    const std::filesystem::path dir =
        run_dir ? std::filesystem::path(run_dir) : vcvae::timestamped_run_dir(cfg->cfg);
    if (run_dir_out) {
      const std::string s = dir.string();
      if (run_dir_len < s.size() + 1) throw vcvae::InvalidArgument("run_dir_out buffer too small");
      std::memcpy(run_dir_out, s.c_str(), s.size() + 1);
    }
    vcvae::cmd_train(cfg->cfg, dir, force != 0, wrap(progress, user));
  });
}

vcvae_status vcvae_resume(const char* run_dir, vcvae_progress_fn progress, void* user) {
  return guarded([&] {
    require(run_dir, "run_dir");
    vcvae::cmd_resume(run_dir, wrap(progress, user));
  });
}

vcvae_status vcvae_fit_gmm(const vcvae_config* cfg, const char* checkpoint, size_t components,
                           const char* out, int force, double* kl_mean, double* kl_std) {
  return guarded([&] {
    require(cfg, "cfg");
    require(checkpoint, "checkpoint");
    require(out, "out");
    std::optional<std::size_t> m;
    if (components > 0) m = components;
    const auto res = vcvae::cmd_fit_gmm(cfg->cfg, checkpoint, out, force != 0, m);
    if (kl_mean) *kl_mean = res.kl.mean;
    if (kl_std) *kl_std = res.kl.std;
  });
}

vcvae_status vcvae_eval(const vcvae_config* cfg, const char* checkpoint, const char* gmm,
                        const char* out_csv, int force) {
  return guarded([&] {
    require(cfg, "cfg");
    require(checkpoint, "checkpoint");
    require(out_csv, "out_csv");
    std::optional<std::filesystem::path> g;
    if (gmm) g = gmm;
    vcvae::cmd_eval(cfg->cfg, checkpoint, g, out_csv, force != 0);
  });
}

vcvae_status vcvae_sample(const vcvae_config* cfg, const char* checkpoint, const char* gmm,
                          size_t n, const char* source, const char* out_dir, int force) {
  return guarded([&] {
    require(cfg, "cfg");
    require(checkpoint, "checkpoint");
    require(source, "source");
    require(out_dir, "out_dir");
    std::optional<std::filesystem::path> g;
    if (gmm) g = gmm;
    vcvae::cmd_sample(cfg->cfg, checkpoint, g, n, vcvae::parse_latent_source(source), out_dir,
                      force != 0);
  });
}

vcvae_status vcvae_sweep_sigma(const vcvae_config* cfg, const char* out_dir, int force,
                               vcvae_progress_fn progress, void* user) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out_dir, "out_dir");
    vcvae::cmd_sweep_sigma(cfg->cfg, out_dir, force != 0, wrap(progress, user));
  });
}

vcvae_status vcvae_model_load(const char* checkpoint, vcvae_model** out) {
  return guarded([&] {
    require(checkpoint, "checkpoint");
    require(out, "out");
    *out = new vcvae_model{vcvae::load_model(checkpoint)};
  });
}

vcvae_status vcvae_model_info(const vcvae_model* model, size_t* data_dim, size_t* latent_dim,
                              double* sigma_squared, int* has_variance_head) {
  return guarded([&] {
    require(model, "model");
    if (data_dim) *data_dim = model->params.data_dim();
    if (latent_dim) *latent_dim = model->params.latent_dim();
    if (sigma_squared) *sigma_squared = model->params.sigma_squared();
    if (has_variance_head) *has_variance_head = model->params.var_head ? 1 : 0;
  });
}

vcvae_status vcvae_model_reconstruct(const vcvae_model* model, const double* x, size_t n,
                                     double* mean_out, double* var_out) {
  return guarded([&] {
    require(model, "model");
    require(mean_out, "mean_out");
    if (n == 0) return;
    require(x, "x");
    const std::size_t d = model->params.data_dim();
    vcvae::Tensor batch({n, d}, std::vector<double>(x, x + n * d));
    const auto rec = vcvae::reconstruct(model->params, batch);
    std::memcpy(mean_out, rec.mean.data(), n * d * sizeof(double));
    if (var_out) std::memcpy(var_out, rec.variance.data(), n * d * sizeof(double));
  });
}

void vcvae_model_free(vcvae_model* model) { delete model; }

}  // extern "C"
