#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "mvd/autodiff.hpp"
#include "mvd/rng.hpp"

namespace mvd::nn {

// Ordered collection of named parameter matrices.
class ParamStore {
 public:
  void add(const std::string& name, Matrix value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Matrix& value(const std::string& name) const;
  Matrix& value(const std::string& name);
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::size_t scalar_count() const;

  // Weights drawn uniformly from +-sqrt(6 / (fan_in + fan_out)).
  void add_glorot(const std::string& name, int fan_in, int fan_out, int rows, int cols, Rng& rng);
  void add_zeros(const std::string& name, int rows, int cols);
  void add_constant(const std::string& name, int rows, int cols, double value);

  // Rounds every value to the nearest float32. Stored checkpoints are float32,
  // so parameters that pass through this are reproduced exactly on load.
  void round_to_float();

  bool operator==(const ParamStore& other) const;

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<Matrix> values_;
};

using Gradients = std::map<std::string, Matrix>;

// Lazily materializes store parameters as tape leaves.
class ParamBinding {
 public:
  ParamBinding(Tape& tape, const ParamStore& store) : tape_(tape), store_(store) {}

  Var operator()(const std::string& name);
  Tape& tape() { return tape_; }
  const ParamStore& store() const { return store_; }

  // Gradients for every store parameter (zeros for unused ones).
  Gradients gradients() const;

 private:
  Tape& tape_;
  const ParamStore& store_;
  std::unordered_map<std::string, Var> vars_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}
  void step(ParamStore& params, const Gradients& grads);
  void set_lr(double lr) { config_.lr = lr; }
  long long steps_taken() const { return step_; }

 private:
  AdamConfig config_;
  long long step_ = 0;
  std::map<std::string, Matrix> m_;
  std::map<std::string, Matrix> v_;
};

// Checkpoint layout (all integers little-endian):
//   magic "MVDCKPT1" (8 bytes)
//   u32 version (=1)
//   u64 config fingerprint (FNV-1a of the config text)
//   u32 config text length, config text bytes
//   u32 parameter count
//   per parameter: u32 name length, name bytes, u32 rows, u32 cols,
//                  rows*cols float32 values, row-major
struct Checkpoint {
  std::string config_text;
  ParamStore params;
  std::uint64_t fingerprint() const { return fnv1a64(config_text); }
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace mvd::nn
