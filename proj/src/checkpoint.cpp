#include "lavig/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "lavig/lvgf.hpp"

namespace lavig::ckpt {

namespace fs = std::filesystem;

namespace {

std::string dims_str(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot write " + path.string());
  f << text;
  if (!f) throw CheckpointError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

void save(const fs::path& dir, const nn::ParamStore& params, const optim::Adam* opt, const State& state,
          const std::string& config_text) {
  fs::create_directories(dir / "params");
  if (opt) fs::create_directories(dir / "optim");
  std::string manifest;
  for (const auto* p : params.all()) {
    const std::string file = "params/" + p->name + ".lvgf";
    lvgf::save_tensor(dir / file, p->value);
    manifest += p->name + " " + file + " " + dims_str(p->value.shape()) + "\n";
    if (opt) {
      lvgf::save_tensor(dir / "optim" / (p->name + ".m.lvgf"), opt->first_moments().at(p->name));
      lvgf::save_tensor(dir / "optim" / (p->name + ".v.lvgf"), opt->second_moments().at(p->name));
    }
  }
  write_text(dir / "manifest.txt", manifest);
  State st = state;
  if (opt) st["optim.steps"] = std::to_string(opt->steps_taken());
  std::string text;
  for (const auto& [k, v] : st) text += k + "=" + v + "\n";
  write_text(dir / "state.txt", text);
  write_text(dir / "config.txt", config_text);
}

State load(const fs::path& dir, nn::ParamStore& params, optim::Adam* opt) {
  std::map<std::string, std::string> files;
  std::istringstream manifest(read_text(dir / "manifest.txt"));
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, file, dims;
    if (!(ls >> name >> file >> dims)) throw CheckpointError("malformed manifest line: " + line);
    files[name] = file;
  }
  for (auto* p : params.all()) {
    auto it = files.find(p->name);
    if (it == files.end()) throw CheckpointError("checkpoint " + dir.string() + " lacks parameter " + p->name);
    Tensor t = lvgf::load_tensor(dir / it->second);
    if (t.shape() != p->value.shape())
      throw CheckpointError("parameter " + p->name + " has shape " + shape_str(t.shape()) + ", expected " +
                            shape_str(p->value.shape()));
    p->value = std::move(t);
    if (opt) {
      opt->first_moment(p->name) = lvgf::load_tensor(dir / "optim" / (p->name + ".m.lvgf"));
      opt->second_moment(p->name) = lvgf::load_tensor(dir / "optim" / (p->name + ".v.lvgf"));
    }
  }
  State st = read_state(dir);
  if (opt) {
    auto it = st.find("optim.steps");
    if (it == st.end()) throw CheckpointError("checkpoint has no optimizer state");
    opt->set_steps_taken(std::stoll(it->second));
  }
  return st;
}

State read_state(const fs::path& dir) {
  State st;
  std::istringstream in(read_text(dir / "state.txt"));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    st[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return st;
}

std::string read_config_text(const fs::path& dir) { return read_text(dir / "config.txt"); }

bool exists(const fs::path& dir) { return fs::exists(dir / "manifest.txt") && fs::exists(dir / "state.txt"); }

}  // namespace lavig::ckpt
