#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mvd/denoiser.hpp"
#include "mvd/engine.hpp"
#include "mvd/scene.hpp"
#include "mvd/schedule.hpp"

namespace mvd {

// Every tunable of the pipeline. Text form: one `key = value` per line, `#`
// starts a comment, unknown keys are rejected.
struct Config {
  std::uint64_t seed = 0;
  ScheduleConfig schedule;
  DepthSampleParams depth;
  RigConfig rig;
  DenoiserConfig net;
  TrainConfig train;
  double omega = 2.0;
  double threshold = kDefaultForegroundThreshold;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  // Canonical text (every key, fixed order); its hash is the checkpoint
  // fingerprint.
  std::string to_text() const;
  void validate() const;

  NoiseSchedule make_schedule() const { return NoiseSchedule::linear(schedule); }
  DepthRange depth_range() const { return {rig.near, rig.far}; }
};

struct ConfigKey {
  std::string name;
  std::string type;  // int, float, bool, string
  std::string help;
};

const std::vector<ConfigKey>& config_keys();

Config parse_config(const std::string& text, const std::string& origin = "<config>");
Config load_config(const std::filesystem::path& path);

}  // namespace mvd
