#include "mvd/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace mvd {

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw Error(ErrorCode::InvalidConfig, "key '" + key + "' expects " + want + ", got '" + value + "'");
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
  return out;
}

double parse_float(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::string fmt(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

struct Entry {
  ConfigKey key;
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&)> set;
};

template <typename Sub, typename T>
Entry entry(const char* name, const char* type, const char* help, Sub Config::*sub, T Sub::*field) {
  Entry e;
  e.key = {name, type, help};
  const std::string n = name;
  e.get = [sub, field](const Config& c) {
    const T& v = c.*sub.*field;
    if constexpr (std::is_same_v<T, bool>) {
      return std::string(v ? "true" : "false");
    } else if constexpr (std::is_floating_point_v<T>) {
      return fmt(v);
    } else {
      return std::to_string(v);
    }
  };
  e.set = [sub, field, n](Config& c, const std::string& v) {
    T& out = c.*sub.*field;
    if constexpr (std::is_same_v<T, bool>) {
      out = parse_bool(n, v);
    } else if constexpr (std::is_floating_point_v<T>) {
      out = parse_float(n, v);
    } else {
      out = static_cast<T>(parse_int(n, v));
    }
  };
  return e;
}

template <typename T>
Entry agg_entry(const char* name, const char* help, T AggregatorConfig::*field) {
  Entry e;
  e.key = {name, "int", help};
  const std::string n = name;
  e.get = [field](const Config& c) { return std::to_string(c.net.aggregator.*field); };
  e.set = [field, n](Config& c, const std::string& v) {
    c.net.aggregator.*field = static_cast<T>(parse_int(n, v));
  };
  return e;
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t;
    t.push_back({{"seed", "int", "root seed; every stage derives its own stream from it"},
                 [](const Config& c) { return std::to_string(c.seed); },
                 [](Config& c, const std::string& v) { c.seed = parse_u64("seed", v); }});
    t.push_back(entry("schedule.steps", "int", "diffusion steps T", &Config::schedule,
                      &ScheduleConfig::steps));
    t.push_back(entry("schedule.beta_start", "float", "first beta of the reference linear schedule",
                      &Config::schedule, &ScheduleConfig::beta_start));
    t.push_back(entry("schedule.beta_end", "float", "last beta of the reference linear schedule",
                      &Config::schedule, &ScheduleConfig::beta_end));
    t.push_back(entry("schedule.reference_steps", "int",
                      "step count the beta range refers to; betas scale by reference_steps/steps",
                      &Config::schedule, &ScheduleConfig::reference_steps));
    t.push_back(entry("depth.k", "float", "spread multiplier of the depth proposals",
                      &Config::depth, &DepthSampleParams::k));
    t.push_back(entry("depth.samples", "int", "depth samples D per ray", &Config::depth,
                      &DepthSampleParams::samples));
    t.push_back({{"depth.sigma_form", "string", "verbatim or reciprocal"},
                 [](const Config& c) { return std::string(to_string(c.depth.form)); },
                 [](Config& c, const std::string& v) {
                   try {
                     c.depth.form = parse_sigma_form(v);
                   } catch (const Error&) {
                     bad_value("depth.sigma_form", v, "verbatim or reciprocal");
                   }
                 }});
    t.push_back({{"sample.omega", "float", "classifier-free guidance scale"},
                 [](const Config& c) { return fmt(c.omega); },
                 [](Config& c, const std::string& v) { c.omega = parse_float("sample.omega", v); }});
    t.push_back({{"sample.threshold", "float", "foreground if metric depth < threshold * far"},
                 [](const Config& c) { return fmt(c.threshold); },
                 [](Config& c, const std::string& v) {
                   c.threshold = parse_float("sample.threshold", v);
                 }});
    t.push_back(entry("rig.num_views", "int", "cameras per scene", &Config::rig,
                      &RigConfig::num_views));
    t.push_back(entry("rig.elevation_deg", "float", "camera elevation in degrees", &Config::rig,
                      &RigConfig::elevation_deg));
    t.push_back(entry("rig.radius", "float", "camera distance from the origin", &Config::rig,
                      &RigConfig::radius));
    t.push_back(entry("rig.image_size", "int", "image width and height in pixels", &Config::rig,
                      &RigConfig::image_size));
    t.push_back(entry("rig.near", "float", "metric depth mapped to -1", &Config::rig,
                      &RigConfig::near));
    t.push_back(entry("rig.far", "float", "metric depth mapped to +1 (background)", &Config::rig,
                      &RigConfig::far));
    t.push_back(entry("rig.fill", "float", "fraction of the image height spanned by the unit sphere",
                      &Config::rig, &RigConfig::fill));
    t.push_back(entry("net.channels", "int", "backbone width at the two lower levels",
                      &Config::net, &DenoiserConfig::channels));
    t.push_back(entry("net.time_dim", "int", "sinusoidal time embedding width", &Config::net,
                      &DenoiserConfig::time_dim));
    t.push_back(entry("net.emb_dim", "int", "camera and time conditioning width", &Config::net,
                      &DenoiserConfig::emb_dim));
    t.push_back(entry("net.attn_heads", "int", "heads of the frustum cross-attention",
                      &Config::net, &DenoiserConfig::attn_heads));
    t.push_back(entry("net.use_frustum", "bool", "false removes the aggregator and cross-attention",
                      &Config::net, &DenoiserConfig::use_frustum));
    t.push_back(agg_entry("agg.stride", "image pixels per frustum grid cell",
                          &AggregatorConfig::feature_stride));
    t.push_back(agg_entry("agg.tap_channels", "learned feature maps gathered with the raw RGB-D",
                          &AggregatorConfig::tap_channels));
    t.push_back(agg_entry("agg.dim", "aggregator transformer width", &AggregatorConfig::dim));
    t.push_back(agg_entry("agg.heads", "aggregator attention heads", &AggregatorConfig::heads));
    t.push_back(agg_entry("agg.layers", "aggregator transformer layers", &AggregatorConfig::layers));
    t.push_back(agg_entry("agg.out_channels", "frustum feature channels C",
                          &AggregatorConfig::out_channels));
    t.push_back(agg_entry("agg.time_dim", "aggregator time embedding width",
                          &AggregatorConfig::time_dim));
    t.push_back(entry("train.steps", "int", "optimizer steps", &Config::train, &TrainConfig::steps));
    t.push_back(entry("train.batch_size", "int", "samples per optimizer step", &Config::train,
                      &TrainConfig::batch_size));
    t.push_back(entry("train.lr", "float", "Adam learning rate", &Config::train, &TrainConfig::lr));
    t.push_back(entry("train.views_per_sample", "int", "views per sample, the first conditions",
                      &Config::train, &TrainConfig::views_per_sample));
    t.push_back(entry("train.cfg_dropout", "float", "probability of dropping image and frustum",
                      &Config::train, &TrainConfig::cfg_dropout));
    t.push_back(entry("train.checkpoint_every", "int", "steps between checkpoints, 0 = final only",
                      &Config::train, &TrainConfig::checkpoint_every));
    t.push_back(entry("train.cosine_decay", "bool", "decay the learning rate along a half cosine",
                      &Config::train, &TrainConfig::cosine_decay));
    t.push_back(entry("train.grad_clip", "float", "global gradient norm limit, 0 = off",
                      &Config::train, &TrainConfig::grad_clip));
    t.push_back(entry("train.ema_decay", "float",
                      "weight averaging decay, 0 = off; checkpoints hold the average",
                      &Config::train, &TrainConfig::ema_decay));
    return t;
  }();
  return table;
}

const Entry& find(const std::string& key) {
  for (const Entry& e : entries()) {
    if (e.key.name == key) return e;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const Entry& e : entries()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

void Config::set(const std::string& key, const std::string& value) {
  find(key).set(*this, value);
  net.image_size = rig.image_size;
}

std::string Config::get(const std::string& key) const { return find(key).get(*this); }

std::string Config::to_text() const {
  std::ostringstream os;
  for (const Entry& e : entries()) os << e.key.name << " = " << e.get(*this) << '\n';
  return os.str();
}

void Config::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (schedule.steps < 1) fail("schedule.steps must be >= 1");
  if (schedule.reference_steps < 1) fail("schedule.reference_steps must be >= 1");
  if (depth.samples < 1) fail("depth.samples must be >= 1");
  if (depth.k < 0.0) fail("depth.k must be >= 0");
  if (rig.num_views < 1) fail("rig.num_views must be >= 1");
  if (!(rig.near > 0.0 && rig.near < rig.far)) fail("rig.near must satisfy 0 < near < far");
  if (!(rig.fill > 0.0 && rig.fill <= 1.0)) fail("rig.fill must lie in (0, 1]");
  if (net.image_size != rig.image_size) fail("net image size must equal rig.image_size");
  if (!(threshold > 0.0 && threshold <= 1.0)) fail("sample.threshold must lie in (0, 1]");
  net.validate();
  train.validate();
  // Builds the schedule to check the beta range.
  try {
    (void)make_schedule();
  } catch (const Error& e) {
    fail(std::string("schedule: ") + e.what() +
         " (betas scale by reference_steps/steps; lower schedule.reference_steps for short schedules)");
  }
}

Config parse_config(const std::string& text, const std::string& origin) {
  Config c;
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
    if (eq == std::string::npos) {
      throw Error(ErrorCode::InvalidConfig,
                  origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidConfig, origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, path.string() + ": cannot open config");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

}  // namespace mvd
