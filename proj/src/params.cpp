#include "mvd/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mvd/common.hpp"

namespace mvd::nn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint and dataset formats assume a little-endian host");

void ParamStore::add(const std::string& name, Matrix value) {
  if (contains(name)) throw Error(ErrorCode::InvalidArgument, "duplicate parameter " + name);
  index_[name] = names_.size();
  names_.push_back(name);
  values_.push_back(std::move(value));
}

const Matrix& ParamStore::value(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::InvalidArgument, "unknown parameter " + name);
  return values_[it->second];
}

Matrix& ParamStore::value(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::InvalidArgument, "unknown parameter " + name);
  return values_[it->second];
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const Matrix& m : values_) n += static_cast<std::size_t>(m.size());
  return n;
}

void ParamStore::add_glorot(const std::string& name, int fan_in, int fan_out, int rows, int cols,
                            Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  add(name, std::move(m));
}

void ParamStore::add_zeros(const std::string& name, int rows, int cols) {
  add(name, Matrix::Zero(rows, cols));
}

void ParamStore::add_constant(const std::string& name, int rows, int cols, double value) {
  add(name, Matrix::Constant(rows, cols, value));
}

void ParamStore::round_to_float() {
  for (Matrix& m : values_) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
    }
  }
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (values_[i].rows() != other.values_[i].rows() ||
        values_[i].cols() != other.values_[i].cols() || values_[i] != other.values_[i]) {
      return false;
    }
  }
  return true;
}

Var ParamBinding::operator()(const std::string& name) {
  auto it = vars_.find(name);
  if (it != vars_.end()) return it->second;
  Var v = tape_.variable(store_.value(name));
  vars_.emplace(name, v);
  return v;
}

Gradients ParamBinding::gradients() const {
  Gradients out;
  for (const std::string& name : store_.names()) {
    auto it = vars_.find(name);
    if (it == vars_.end()) {
      const Matrix& v = store_.value(name);
      out[name] = Matrix::Zero(v.rows(), v.cols());
    } else {
      out[name] = tape_.grad(it->second);
    }
  }
  return out;
}

void Adam::step(ParamStore& params, const Gradients& grads) {
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (const std::string& name : params.names()) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Matrix& g = git->second;
    Matrix& p = params.value(name);
    auto [mit, m_new] = m_.try_emplace(name, Matrix::Zero(p.rows(), p.cols()));
    auto [vit, v_new] = v_.try_emplace(name, Matrix::Zero(p.rows(), p.cols()));
    Matrix& m = mit->second;
    Matrix& v = vit->second;
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    p.array() -= config_.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config_.eps);
  }
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'V', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path, const char* field) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) {
    throw Error(ErrorCode::CorruptCheckpoint,
                path + ": truncated while reading " + std::string(field));
  }
  return value;
}

std::string get_string(std::ifstream& in, std::uint32_t len, const std::string& path,
                       const char* field) {
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) {
    throw Error(ErrorCode::CorruptCheckpoint,
                path + ": truncated while reading " + std::string(field));
  }
  return s;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, path.string() + ": cannot open for writing");
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, checkpoint.fingerprint());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.config_text.size()));
  out.write(checkpoint.config_text.data(),
            static_cast<std::streamsize>(checkpoint.config_text.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.params.size()));
  for (const std::string& name : checkpoint.params.names()) {
    const Matrix& m = checkpoint.params.value(name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) put<float>(out, static_cast<float>(m.data()[i]));
  }
  if (!out) throw Error(ErrorCode::IoError, path.string() + ": write failed");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, p + ": cannot open checkpoint");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::CorruptCheckpoint, p + ": bad magic");
  }
  if (get<std::uint32_t>(in, p, "version") != kVersion) {
    throw Error(ErrorCode::CorruptCheckpoint, p + ": unsupported version");
  }
  const auto fingerprint = get<std::uint64_t>(in, p, "fingerprint");
  Checkpoint ck;
  ck.config_text = get_string(in, get<std::uint32_t>(in, p, "config length"), p, "config text");
  if (ck.fingerprint() != fingerprint) {
    throw Error(ErrorCode::CorruptCheckpoint, p + ": config fingerprint mismatch");
  }
  const auto count = get<std::uint32_t>(in, p, "parameter count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name =
        get_string(in, get<std::uint32_t>(in, p, "name length"), p, "parameter name");
    const auto rows = get<std::uint32_t>(in, p, "rows");
    const auto cols = get<std::uint32_t>(in, p, "cols");
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = get<float>(in, p, "values");
    ck.params.add(name, std::move(m));
  }
  return ck;
}

}  // namespace mvd::nn
