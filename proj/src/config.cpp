#include "vcvae/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "vcvae/error.hpp"

namespace vcvae {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_integer(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::istringstream in(v);
  for (std::string item; std::getline(in, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::size_t> parse_widths(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(v)) out.push_back(parse_integer<std::size_t>(key, item));
  return out;
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) out += exact_number(xs[i]);
    else out += std::to_string(xs[i]);
  }
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field integer_field(T RunConfig::*outer) {
  return {[outer](RunConfig& c, const std::string& k, const std::string& v) {
            c.*outer = parse_integer<T>(k, v);
          },
          [outer](const RunConfig& c) { return std::to_string(c.*outer); }};
}

Field size_field(std::function<std::size_t&(RunConfig&)> ref) {
  return {[ref](RunConfig& c, const std::string& k, const std::string& v) {
            ref(c) = parse_integer<std::size_t>(k, v);
          },
          [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }};
}

Field real_field(std::function<double&(RunConfig&)> ref) {
  return {[ref](RunConfig& c, const std::string& k, const std::string& v) {
            ref(c) = parse_real(k, v);
          },
          [ref](const RunConfig& c) { return exact_number(ref(const_cast<RunConfig&>(c))); }};
}

Field string_field(std::function<std::string&(RunConfig&)> ref) {
  return {[ref](RunConfig& c, const std::string&, const std::string& v) { ref(c) = v; },
          [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); }};
}

// Ordered so that to_text() groups keys by section.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    t.emplace_back("seed", integer_field(&RunConfig::seed));
    t.emplace_back("threads", integer_field(&RunConfig::threads));
    t.emplace_back("output_dir", string_field([](RunConfig& c) -> std::string& { return c.output_dir; }));

    t.emplace_back("dataset.source",
                   Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                           if (v == "idx") c.dataset.source = DataSource::kIdx;
                           else if (v == "synthetic") c.dataset.source = DataSource::kSynthetic;
                           else throw ConfigError(k + ": expected idx or synthetic, got '" + v + "'");
                         },
                         [](const RunConfig& c) {
                           return std::string(c.dataset.source == DataSource::kIdx ? "idx" : "synthetic");
                         }});
    t.emplace_back("dataset.images", string_field([](RunConfig& c) -> std::string& { return c.dataset.images; }));
    t.emplace_back("dataset.labels", string_field([](RunConfig& c) -> std::string& { return c.dataset.labels; }));
    t.emplace_back("dataset.max_images", size_field([](RunConfig& c) -> std::size_t& { return c.dataset.max_images; }));
    t.emplace_back("dataset.train_fraction", real_field([](RunConfig& c) -> double& { return c.dataset.train_fraction; }));

    t.emplace_back("synthetic.latent_dim", size_field([](RunConfig& c) -> std::size_t& { return c.dataset.synthetic.latent_dim; }));
    t.emplace_back("synthetic.data_dim", size_field([](RunConfig& c) -> std::size_t& { return c.dataset.synthetic.data_dim; }));
    t.emplace_back("synthetic.noise_std", real_field([](RunConfig& c) -> double& { return c.dataset.synthetic.noise_std; }));
    t.emplace_back("synthetic.n_samples", size_field([](RunConfig& c) -> std::size_t& { return c.dataset.synthetic.n_samples; }));

    t.emplace_back("model.latent_dim", size_field([](RunConfig& c) -> std::size_t& { return c.model.latent_dim; }));
    t.emplace_back("model.hidden",
                   Field{[](RunConfig& c, const std::string& k, const std::string& v) { c.model.hidden = parse_widths(k, v); },
                         [](const RunConfig& c) { return join(c.model.hidden); }});
    t.emplace_back("model.activation",
                   Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                           try {
                             c.model.hidden_activation = parse_activation(v);
                           } catch (const Error&) {
                             throw ConfigError(k + ": unknown activation '" + v + "'");
                           }
                         },
                         [](const RunConfig& c) { return activation_name(c.model.hidden_activation); }});
    t.emplace_back("model.var_hidden",
                   Field{[](RunConfig& c, const std::string& k, const std::string& v) { c.model.var_hidden = parse_widths(k, v); },
                         [](const RunConfig& c) { return join(c.model.var_hidden); }});

    t.emplace_back("train.n_epoch_1", size_field([](RunConfig& c) -> std::size_t& { return c.train.n_epoch_1; }));
    t.emplace_back("train.n_epoch_2", size_field([](RunConfig& c) -> std::size_t& { return c.train.n_epoch_2; }));
    t.emplace_back("train.eps_1", real_field([](RunConfig& c) -> double& { return c.train.eps_1; }));
    t.emplace_back("train.eps_2", real_field([](RunConfig& c) -> double& { return c.train.eps_2; }));
    t.emplace_back("train.max_epoch_factor", size_field([](RunConfig& c) -> std::size_t& { return c.train.max_epoch_factor; }));
    t.emplace_back("train.batch_size", size_field([](RunConfig& c) -> std::size_t& { return c.train.batch_size; }));
    t.emplace_back("train.learning_rate", real_field([](RunConfig& c) -> double& { return c.train.adam.learning_rate; }));
    t.emplace_back("train.adam_beta1", real_field([](RunConfig& c) -> double& { return c.train.adam.beta1; }));
    t.emplace_back("train.adam_beta2", real_field([](RunConfig& c) -> double& { return c.train.adam.beta2; }));
    t.emplace_back("train.adam_eps", real_field([](RunConfig& c) -> double& { return c.train.adam.eps; }));
    t.emplace_back("train.sigma_update_mode",
                   Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                           try {
                             c.train.sigma_update_mode = parse_sigma_mode(v);
                           } catch (const ConfigError&) {
                             throw ConfigError(k + ": expected gradient or closed_form, got '" + v + "'");
                           }
                         },
                         [](const RunConfig& c) { return sigma_mode_name(c.train.sigma_update_mode); }});
    t.emplace_back("train.n_mc", size_field([](RunConfig& c) -> std::size_t& { return c.train.n_mc; }));
    t.emplace_back("train.fixed_sigma_squared",
                   Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                           if (v == "none") c.train.fixed_sigma_squared.reset();
                           else c.train.fixed_sigma_squared = parse_real(k, v);
                         },
                         [](const RunConfig& c) {
                           return c.train.fixed_sigma_squared ? exact_number(*c.train.fixed_sigma_squared)
                                                              : std::string("none");
                         }});

    t.emplace_back("gmm.components", size_field([](RunConfig& c) -> std::size_t& { return c.gmm.components; }));
    t.emplace_back("gmm.max_iters", size_field([](RunConfig& c) -> std::size_t& { return c.gmm.max_iters; }));
    t.emplace_back("gmm.tol", real_field([](RunConfig& c) -> double& { return c.gmm.tol; }));
    t.emplace_back("gmm.max_reinitializations", size_field([](RunConfig& c) -> std::size_t& { return c.gmm.max_reinitializations; }));

    t.emplace_back("eval.n_test", size_field([](RunConfig& c) -> std::size_t& { return c.eval.n_test; }));
    t.emplace_back("eval.k", size_field([](RunConfig& c) -> std::size_t& { return c.eval.k; }));
    t.emplace_back("eval.kl_samples", size_field([](RunConfig& c) -> std::size_t& { return c.eval.kl_samples; }));
    t.emplace_back("eval.kl_runs", size_field([](RunConfig& c) -> std::size_t& { return c.eval.kl_runs; }));
    t.emplace_back("eval.mmd_samples", size_field([](RunConfig& c) -> std::size_t& { return c.eval.mmd_samples; }));

    t.emplace_back("sweep.sigmas",
                   Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                           c.sweep.sigmas.clear();
                           for (const auto& item : split_list(v)) c.sweep.sigmas.push_back(parse_real(k, item));
                         },
                         [](const RunConfig& c) { return join(c.sweep.sigmas); }});
    t.emplace_back("sweep.include_learned",
                   Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                           c.sweep.include_learned = parse_bool(k, v);
                         },
                         [](const RunConfig& c) { return std::string(c.sweep.include_learned ? "true" : "false"); }});
    return t;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& [name, f] : fields()) {
    if (name == key) return &f;
  }
  return nullptr;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (f == nullptr) throw ConfigError("unknown key '" + key + "'");
  f->set(*this, key, trim(value));
}

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("threads: must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
  if (dataset.source == DataSource::kIdx && dataset.images.empty()) {
    throw ConfigError("dataset.images: required when dataset.source = idx");
  }
  if (!(dataset.train_fraction > 0.0 && dataset.train_fraction < 1.0)) {
    throw ConfigError("dataset.train_fraction: must lie strictly between 0 and 1");
  }
  if (dataset.source == DataSource::kSynthetic) {
    const auto& s = dataset.synthetic;
    if (s.latent_dim < 1) throw ConfigError("synthetic.latent_dim: must be >= 1");
    if (s.data_dim < 1) throw ConfigError("synthetic.data_dim: must be >= 1");
    if (!(s.noise_std > 0.0)) throw ConfigError("synthetic.noise_std: must be > 0");
    if (s.n_samples < 2) throw ConfigError("synthetic.n_samples: must be >= 2");
  }
  if (model.latent_dim < 1) throw ConfigError("model.latent_dim: must be >= 1");
  for (auto w : model.hidden) {
    if (w < 1) throw ConfigError("model.hidden: widths must be >= 1");
  }
  for (auto w : model.var_hidden) {
    if (w < 1) throw ConfigError("model.var_hidden: widths must be >= 1");
  }
  try {
    train.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("train.") + e.what());
  }
  if (gmm.components < 1) throw ConfigError("gmm.components: must be >= 1");
  if (gmm.max_iters < 1) throw ConfigError("gmm.max_iters: must be >= 1");
  if (!(gmm.tol >= 0.0)) throw ConfigError("gmm.tol: must be >= 0");
  if (eval.n_test < 1) throw ConfigError("eval.n_test: must be >= 1");
  if (eval.k < 1) throw ConfigError("eval.k: must be >= 1");
  if (eval.kl_samples < 1) throw ConfigError("eval.kl_samples: must be >= 1");
  if (eval.kl_runs < 2) throw ConfigError("eval.kl_runs: must be >= 2");
  if (eval.mmd_samples < 2) throw ConfigError("eval.mmd_samples: must be >= 2");
  for (double s : sweep.sigmas) {
    if (!(s > 0.0)) throw ConfigError("sweep.sigmas: every value must be > 0");
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  std::string section;
  for (const auto& [name, f] : fields()) {
    const auto dot = name.find('.');
    const std::string sec = dot == std::string::npos ? "" : name.substr(0, dot);
    const std::string key = dot == std::string::npos ? name : name.substr(dot + 1);
    if (sec != section) {
      out << "\n[" << sec << "]\n";
      section = sec;
    }
    out << key << " = " << f.get(*this) << '\n';
  }
  return out.str();
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string section;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string dotted = section.empty() ? key : section + "." + key;
    try {
      cfg.set(dotted, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_config(text.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void save_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << cfg.to_text();
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [name, f] : fields()) out.push_back(name);
  return out;
}

}  // namespace vcvae
