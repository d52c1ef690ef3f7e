#pragma once

// Named, enumerable ownership of every learnable tensor and every set of
// batch-norm running statistics, plus the binary checkpoint format:
//
//   "CSASN1" then, per tensor until end of file:
//     u32 name length | name bytes | u32 rank | rank x u64 dims |
//     prod(dims) x f64 values
//   all integers and floats little-endian.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "csasn/nn_ops.hpp"

namespace csasn {

inline constexpr char kCheckpointMagic[] = "CSASN1";

template <class T>
struct NamedParam {
  std::string name;
  Var<T> var;
  bool decay = true;  // subject to weight decay
};

template <class T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Var<T> add(const std::string& name, Tensor<T> init, bool decay = true) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_[name] = params_.size();
    params_.push_back({name, Var<T>::parameter(std::move(init)), decay});
    return params_.back().var;
  }

  std::shared_ptr<BatchNormStats<T>> add_stats(const std::string& name,
                                               std::size_t channels) {
    if (stats_index_.count(name)) throw ConfigError("duplicate stats name: " + name);
    stats_index_[name] = stats_.size();
    stats_.push_back({name, std::make_shared<BatchNormStats<T>>(channels)});
    return stats_.back().second;
  }

  const std::vector<NamedParam<T>>& params() const { return params_; }
  std::vector<NamedParam<T>>& params() { return params_; }

  const std::vector<std::pair<std::string, std::shared_ptr<BatchNormStats<T>>>>& stats()
      const {
    return stats_;
  }

  Var<T> get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return params_[it->second].var;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<Var<T>> vars() const {
    std::vector<Var<T>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.var);
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  // Every tensor to persist: parameters then running statistics.
  std::vector<std::pair<std::string, Tensor<T>>> snapshot() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (const auto& p : params_) out.emplace_back(p.name, p.var.value());
    for (const auto& [name, s] : stats_) {
      out.emplace_back(name + ".running_mean", s->mean);
      out.emplace_back(name + ".running_var", s->var);
    }
    return out;
  }

  // Overwrites values by name; every stored tensor must be present with a
  // matching shape. Extra records in `tensors` are ignored.
  void restore(const std::map<std::string, Tensor<double>>& tensors) {
    auto take = [&](const std::string& name, Tensor<T>& dst) {
      auto it = tensors.find(name);
      if (it == tensors.end()) throw IoError("checkpoint is missing tensor " + name);
      if (it->second.shape() != dst.shape()) {
        throw IoError("checkpoint tensor " + name + " has shape " +
                      shape_str(it->second.shape()) + ", expected " +
                      shape_str(dst.shape()));
      }
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second[i]);
    };
    for (auto& p : params_) take(p.name, p.var.mutable_value());
    for (auto& [name, s] : stats_) {
      take(name + ".running_mean", s->mean);
      take(name + ".running_var", s->var);
    }
  }

 private:
  std::vector<NamedParam<T>> params_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::pair<std::string, std::shared_ptr<BatchNormStats<T>>>> stats_;
  std::map<std::string, std::size_t> stats_index_;
};

// ---------------------------------------------------------------------------
// Checkpoint IO

namespace detail {

inline void write_le(std::ostream& os, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t read_le(std::istream& is, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = is.get();
    if (c == EOF) throw IoError("checkpoint truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace detail

template <class T>
void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, Tensor<T>>>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint: " + path.string());
  os.write(kCheckpointMagic, 6);
  for (const auto& [name, t] : tensors) {
    detail::write_le(os, name.size(), 4);
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_le(os, t.rank(), 4);
    for (auto d : t.shape()) detail::write_le(os, d, 8);
    for (T v : t.data()) {
      const double dv = static_cast<double>(v);
      detail::write_le(os, std::bit_cast<std::uint64_t>(dv), 8);
    }
  }
  if (!os) throw IoError("failed writing checkpoint: " + path.string());
}

inline std::map<std::string, Tensor<double>> read_checkpoint(
    const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("missing checkpoint: " + path.string());
  char magic[6];
  if (!is.read(magic, 6) || std::memcmp(magic, kCheckpointMagic, 6) != 0) {
    throw IoError("not a CSASN1 checkpoint: " + path.string());
  }
  std::map<std::string, Tensor<double>> out;
  while (is.peek() != EOF) {
    const auto len = detail::read_le(is, 4);
    if (len > (1u << 20)) throw IoError("checkpoint record name too long");
    std::string name(len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(len)))
      throw IoError("checkpoint truncated");
    const auto rank = detail::read_le(is, 4);
    if (rank > 16) throw IoError("checkpoint record rank too large");
    Shape shape(rank);
    for (auto& d : shape) d = detail::read_le(is, 8);
    Tensor<double> t(shape);
    for (auto& v : t.data()) v = std::bit_cast<double>(detail::read_le(is, 8));
    if (!out.emplace(name, std::move(t)).second)
      throw IoError("duplicate checkpoint record " + name);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Initialisers

template <class T>
Tensor<T> he_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-a, a);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

template <class T>
Tensor<T> xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                         std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-a, a);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

template <class T>
Tensor<T> normal_init(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(n(rng));
  return t;
}

}  // namespace csasn
