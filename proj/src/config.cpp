#include "tinv/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "tinv/bytes.hpp"

namespace tinv {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc() || end != text.data() + text.size()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const std::string k = trim(key);
  if (k.empty() || k.find_first_of(" \t=#") != std::string::npos) throw ConfigError("invalid config key '" + key + "'");
  values_[k] = trim(value);
}

std::string RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
  return it->second;
}

double RunConfig::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }
std::int64_t RunConfig::get_int(const std::string& key) const { return parse_number<std::int64_t>(key, get(key)); }
std::uint64_t RunConfig::get_uint(const std::string& key) const { return parse_number<std::uint64_t>(key, get(key)); }

bool RunConfig::get_bool(const std::string& key) const {
  const std::string v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

void RunConfig::merge(const RunConfig& layer, bool strict) {
  for (const auto& [k, v] : layer.values_) {
    if (strict && !has(k)) throw ConfigError("unknown config key '" + k + "'");
    values_[k] = v;
  }
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    cfg.set(line.substr(0, eq), line.substr(eq + 1));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string RunConfig::hash() const { return bytes::sha256_hex(to_text()); }

void RunConfig::persist(const std::filesystem::path& dir) const {
  const std::string text = to_text();
  bytes::write_file(dir / "config.txt", std::vector<std::uint8_t>(text.begin(), text.end()));
  const std::string h = hash() + "\n";
  bytes::write_file(dir / "config.sha256", std::vector<std::uint8_t>(h.begin(), h.end()));
}

RunConfig default_config(bool paper_scale) {
  RunConfig c;
  c.set("schedule.steps", "100");
  c.set("schedule.sigma_min", "0.02");
  c.set("schedule.sigma_max", "10");
  c.set("schedule.rho", "7");
  c.set("sampler.cfg_scale", "2");
  c.set("sampler.multi_concept_cfg_scale", "3");
  c.set("sampler.seed", "0");
  c.set("sampler.samples", paper_scale ? "100" : "50");
  c.set("ti.learning_rate", "0.005");
  c.set("ti.steps", paper_scale ? "50000" : "2000");
  c.set("ti.batch_size", "1");
  c.set("ti.vectors", "64");
  c.set("ti.seed", "0");
  c.set("ti.checkpoint_every", paper_scale ? "5000" : "500");
  c.set("ti.keep_checkpoints", "3");
  c.set("classifier.learning_rate", "0.0001");
  c.set("classifier.batches", paper_scale ? "6250" : "1500");
  c.set("classifier.batch_size", "32");
  c.set("classifier.val_every", paper_scale ? "250" : "100");
  c.set("classifier.input_size", "64");
  c.set("classifier.width", "16");
  c.set("classifier.seed", "0");
  c.set("classifier.repeats", "10");
  c.set("fid.extractor", "toy");
  c.set("backend.path", "");
  c.set("backend.pretrain_steps", "6000");
  c.set("backend.seed", "1234");
  return c;
}

}  // namespace tinv
