#include "bem/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "bem/errors.hpp"

namespace bem::config {

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::kTrain: return "train";
    case Mode::kCompare: return "compare";
    case Mode::kAblate: return "ablate";
    case Mode::kSelfcheck: return "selfcheck";
  }
  return "train";
}

std::optional<Mode> parse_mode(std::string_view text) {
  if (text == "train") return Mode::kTrain;
  if (text == "compare") return Mode::kCompare;
  if (text == "ablate") return Mode::kAblate;
  if (text == "selfcheck") return Mode::kSelfcheck;
  return std::nullopt;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string where(std::string_view key, int line) {
  std::string out = line > 0 ? "line " + std::to_string(line) + ": " : std::string();
  return out + "'" + std::string(key) + "'";
}

[[noreturn]] void type_error(std::string_view key, std::string_view value, const char* expected, int line) {
  throw ConfigError(where(key, line) + " expects " + expected + ", got '" + std::string(value) + "'", std::string(key),
                    line);
}

long long parse_int(std::string_view key, std::string_view value, int line) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) type_error(key, value, "an integer", line);
  return v;
}

int parse_int32(std::string_view key, std::string_view value, int line) {
  const long long v = parse_int(key, value, line);
  if (v < INT32_MIN || v > INT32_MAX) type_error(key, value, "a 32-bit integer", line);
  return static_cast<int>(v);
}

double parse_real(std::string_view key, std::string_view value, int line) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) type_error(key, value, "a real number", line);
  return v;
}

bool parse_bool(std::string_view key, std::string_view value, int line) {
  if (value == "on" || value == "true" || value == "1" || value == "yes") return true;
  if (value == "off" || value == "false" || value == "0" || value == "no") return false;
  type_error(key, value, "on/off", line);
}

std::vector<std::uint64_t> parse_seeds(std::string_view key, std::string_view value, int line) {
  std::vector<std::uint64_t> seeds;
  while (true) {
    const std::size_t comma = value.find(',');
    const std::string_view item = trim(value.substr(0, comma));
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size())
      type_error(key, value, "a comma-separated list of unsigned integers", line);
    seeds.push_back(v);
    if (comma == std::string_view::npos) break;
    value.remove_prefix(comma + 1);
  }
  return seeds;
}

std::string fmt_real(double v) {
  char buf[64];
  const auto result = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, result.ptr);
}

const char* fmt_bool(bool v) { return v ? "on" : "off"; }

struct Key {
  std::function<void(RunManifest&, std::string_view, int)> set;
  std::function<std::string(const RunManifest&)> get;
};

#define BEM_INT_KEY(name, field)                                                                     \
  {name, {[](RunManifest& m, std::string_view v, int l) { m.field = parse_int32(name, v, l); },     \
          [](const RunManifest& m) { return std::to_string(m.field); }}}
#define BEM_REAL_KEY(name, field)                                                                    \
  {name, {[](RunManifest& m, std::string_view v, int l) { m.field = parse_real(name, v, l); },      \
          [](const RunManifest& m) { return fmt_real(m.field); }}}
#define BEM_BOOL_KEY(name, field)                                                                    \
  {name, {[](RunManifest& m, std::string_view v, int l) { m.field = parse_bool(name, v, l); },      \
          [](const RunManifest& m) { return std::string(fmt_bool(m.field)); }}}

// Ordered so the snapshot groups related keys.
const std::vector<std::pair<std::string, Key>>& key_table() {
  static const std::vector<std::pair<std::string, Key>> table = {
      {"mode",
       {[](RunManifest& m, std::string_view v, int l) {
          const auto mode = parse_mode(v);
          if (!mode) type_error("mode", v, "train|compare|ablate|selfcheck", l);
          m.mode = *mode;
        },
        [](const RunManifest& m) { return std::string(to_string(m.mode)); }}},
      {"seeds",
       {[](RunManifest& m, std::string_view v, int l) { m.seeds = parse_seeds("seeds", v, l); },
        [](const RunManifest& m) {
          std::string out;
          for (std::size_t i = 0; i < m.seeds.size(); ++i) out += (i ? "," : "") + std::to_string(m.seeds[i]);
          return out;
        }}},
      {"output_dir",
       {[](RunManifest& m, std::string_view v, int l) {
          if (v.empty()) type_error("output_dir", v, "a non-empty path", l);
          m.output_dir = std::string(v);
        },
        [](const RunManifest& m) { return m.output_dir; }}},
      BEM_BOOL_KEY("dump_mixes", dump_mixes),
      {"classes",
       {[](RunManifest& m, std::string_view v, int l) {
          m.data.num_classes = parse_int32("classes", v, l);
          m.train.balance.num_classes = m.data.num_classes;
        },
        [](const RunManifest& m) { return std::to_string(m.data.num_classes); }}},
      BEM_INT_KEY("n1", data.n1),
      BEM_INT_KEY("m1", data.m1),
      BEM_REAL_KEY("gamma_l", data.gamma_l),
      BEM_REAL_KEY("gamma_u", data.gamma_u),
      BEM_INT_KEY("image_size", data.image_size),
      BEM_INT_KEY("test_per_class", data.test_per_class),
      BEM_INT_KEY("batch_size", train.batch_size),
      BEM_REAL_KEY("tau", train.tau),
      {"iterations",
       {[](RunManifest& m, std::string_view v, int l) { m.train.total_iterations = parse_int("iterations", v, l); },
        [](const RunManifest& m) { return std::to_string(m.train.total_iterations); }}},
      BEM_REAL_KEY("lr", train.lr),
      BEM_REAL_KEY("momentum", train.momentum),
      BEM_INT_KEY("eval_every", train.eval_every),
      {"mixer",
       {[](RunManifest& m, std::string_view v, int l) {
          const auto mixer = learner::parse_mixer(v);
          if (!mixer) type_error("mixer", v, "none|mixup|cutmix|cammix", l);
          m.train.mixer = *mixer;
        },
        [](const RunManifest& m) { return std::string(learner::to_string(m.train.mixer)); }}},
      BEM_BOOL_KEY("bem", train.bem_enabled),
      BEM_BOOL_KEY("la", train.la_enabled),
      BEM_REAL_KEY("la_tau", train.la_tau),
      BEM_REAL_KEY("beta", train.balance.beta),
      BEM_REAL_KEY("lambda_d", train.balance.lambda_d),
      BEM_REAL_KEY("lambda_e", train.balance.lambda_e),
      BEM_REAL_KEY("lambda_tau", train.balance.lambda_tau),
      BEM_REAL_KEY("alpha", train.balance.alpha),
      BEM_INT_KEY("warmup_epochs", train.balance.warmup_epochs),
      {"ecb_scale",
       {[](RunManifest& m, std::string_view v, int l) {
          if (v == "raw") m.train.balance.ecb_scale = balance::EcbScale::kRaw;
          else if (v == "times_c") m.train.balance.ecb_scale = balance::EcbScale::kTimesC;
          else type_error("ecb_scale", v, "raw|times_c", l);
        },
        [](const RunManifest& m) {
          return std::string(m.train.balance.ecb_scale == balance::EcbScale::kRaw ? "raw" : "times_c");
        }}},
      BEM_INT_KEY("bank_capacity", train.bank_capacity),
      BEM_BOOL_KEY("bank_requires_confidence", train.bank_requires_confidence),
      {"bank_sampling",
       {[](RunManifest& m, std::string_view v, int l) {
          if (v == "balanced") m.train.bank_sampling = mixbank::DrawMode::kBalanced;
          else if (v == "random") m.train.bank_sampling = mixbank::DrawMode::kRandom;
          else type_error("bank_sampling", v, "balanced|random", l);
        },
        [](const RunManifest& m) {
          return std::string(m.train.bank_sampling == mixbank::DrawMode::kBalanced ? "balanced" : "random");
        }}},
      BEM_BOOL_KEY("esm", train.esm_enabled),
      BEM_BOOL_KEY("ecb", train.ecb_enabled),
      BEM_REAL_KEY("tau_c", train.tau_c),
      BEM_REAL_KEY("tau_a", train.tau_a),
  };
  return table;
}

#undef BEM_INT_KEY
#undef BEM_REAL_KEY
#undef BEM_BOOL_KEY

const Key* find_key(std::string_view key) {
  for (const auto& [name, k] : key_table())
    if (name == key) return &k;
  return nullptr;
}

void validate_with_lines(const RunManifest& m, const std::map<std::string, int>& lines) {
  try {
    validate(m);
  } catch (const ConfigError& e) {
    const auto it = lines.find(e.key());
    if (it == lines.end() || it->second == 0) throw;
    throw ConfigError("line " + std::to_string(it->second) + ": " + e.what(), e.key(), it->second);
  }
}

}  // namespace

void apply_setting(RunManifest& manifest, std::string_view key, std::string_view value, int line) {
  const Key* k = find_key(key);
  if (!k) throw ConfigError(where(key, line) + " is not a known key", std::string(key), line);
  k->set(manifest, trim(value), line);
}

void validate(const RunManifest& m) {
  m.data.validate();
  m.train.validate();
  if (m.train.balance.num_classes != m.data.num_classes)
    throw ConfigError("classes differs between dataset and balance settings", "classes");
  if (m.seeds.empty()) throw ConfigError("seeds must list at least one seed", "seeds");
  if (m.output_dir.empty()) throw ConfigError("output_dir must be non-empty", "output_dir");
}

RunManifest parse_config_text(std::string_view text) {
  RunManifest m;
  std::map<std::string, int> lines;
  int line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (const std::size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value, got '" + std::string(line) + "'", {},
                        line_no);
    const std::string key(trim(line.substr(0, eq)));
    if (lines.count(key))
      throw ConfigError(where(key, line_no) + " is set twice (first on line " + std::to_string(lines[key]) + ")", key,
                        line_no);
    apply_setting(m, key, line.substr(eq + 1), line_no);
    lines[key] = line_no;
  }
  validate_with_lines(m, lines);
  return m;
}

RunManifest parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string(), "config");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string to_config_text(const RunManifest& manifest) {
  std::string out;
  for (const auto& [name, k] : key_table()) out += name + "=" + k.get(manifest) + "\n";
  return out;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> keys;
  for (const auto& entry : key_table()) keys.push_back(entry.first);
  return keys;
}

}  // namespace bem::config
