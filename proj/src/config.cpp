#include "lavig/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace lavig {

namespace {

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> d = [] {
    std::map<std::string, std::string> m{
        {"seed", "7"},
        // grid and synthetic plume generator
        {"data.height", "32"},
        {"data.width", "64"},
        {"data.time_frames", "24"},
        {"data.clip_frames", "17"},
        {"data.t_end", "30"},
        {"data.well_column", "0"},
        {"data.rate_min", "4"},
        {"data.rate_max", "10"},
        {"data.gamma_min", "1"},
        {"data.gamma_max", "2"},
        {"data.perm_min", "0.5"},
        {"data.perm_max", "1"},
        {"data.amp_min", "0.5"},
        {"data.amp_max", "2"},
        {"data.decay_min", "4"},
        {"data.decay_max", "16"},
        // autoencoders
        {"vae.channels", "16,32,48,64"},
        {"vae.res_blocks", "1"},
        {"vae.groups", "16"},
        {"vae.latent_channels", "4"},
        {"vae.beta", "0.0001"},
        {"vqvae.channels", "16,32,48,64"},
        {"vqvae.res_blocks", "1"},
        {"vqvae.groups", "32"},
        {"vqvae.latent_channels", "2"},
        {"vqvae.codebook_size", "512"},
        {"vqvae.beta", "0.25"},
        // transformer
        {"vdit.hidden_dim", "128"},
        {"vdit.layers", "4"},
        {"vdit.heads", "4"},
        {"vdit.patch", "2"},
        {"vdit.t_embed_dim", "64"},
        // rectified flow and rollout
        {"diffusion.T", "1000"},
        {"diffusion.sample_steps", "30"},
        {"rollout.context_frames", "15"},
        {"rollout.pred_frames", "2"},
        {"rollout.steps", "4"},
        {"eval.method", "lavig-flow"},
    };
    struct StageDefaults {
      const char* stage;
      const char* epochs;
      const char* batch;
      const char* lr;
      const char* optimizer;
      const char* wd;
      const char* clip;
    };
    const StageDefaults stages[] = {
        {"vae", "50", "8", "0.001", "adam", "0", "0"},
        {"vqvae", "50", "8", "0.001", "adam", "0", "0"},
        {"vdit", "200", "2", "0.0005", "adamw", "0.01", "1"},
        {"finetune", "200", "2", "0.0002", "adamw", "0.01", "1"},
    };
    for (const auto& s : stages) {
      const std::string p = std::string("train.") + s.stage + ".";
      m[p + "epochs"] = s.epochs;
      m[p + "batch_size"] = s.batch;
      m[p + "lr"] = s.lr;
      m[p + "optimizer"] = s.optimizer;
      m[p + "weight_decay"] = s.wd;
      m[p + "grad_clip"] = s.clip;
      m[p + "beta1"] = "0.9";
      m[p + "beta2"] = "0.999";
      m[p + "precision"] = "fp32";
    }
    return m;
  }();
  return d;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config::Config() : values_(defaults()) {}

Config Config::from_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  Config c;
  c.merge_text(ss.str(), path.string());
  return c;
}

void Config::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& Config::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

std::int64_t Config::i64(const std::string& key) const {
  const std::string& s = str(key);
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(key + ": expected an integer, got '" + s + "'");
  return v;
}

double Config::f64(const std::string& key) const {
  const std::string& s = str(key);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw ConfigError(key + ": expected a number, got '" + s + "'");
  return v;
}

std::vector<int> Config::int_list(const std::string& key) const {
  std::vector<int> out;
  std::istringstream in(str(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    int v = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || p != item.data() + item.size())
      throw ConfigError(key + ": expected a comma-separated integer list, got '" + str(key) + "'");
    out.push_back(v);
  }
  return out;
}

std::string Config::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

}  // namespace lavig
