#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "moerl/perturb/perturb.hpp"
#include "moerl/rl/agent.hpp"

// Binary checkpoint layout (all integers and doubles little-endian):
//   "MOERLCK1"  u32 version  str arch
//   u64 n_params, then n_params × slice
//   u64 n_entries, then n_entries × (f64 reward, u64 n_slices, n_slices × slice)
// where str = u32 length + bytes and slice = str name, u32 rank, rank × u64 dim,
// prod(dims) × f64.
namespace moerl::rl {

inline constexpr char kCheckpointMagic[8] = {'M', 'O', 'E', 'R', 'L', 'C', 'K', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  std::string arch;
  std::vector<NamedTensor> params;
  std::vector<perturb::TopAgentBuffer::Entry> buffer;
};

namespace detail {

template <class T>
T to_le(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  template <class T>
  void put(T v) {
    v = to_le(v);
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void slice(const std::string& name, const Shape& shape, std::span<const double> values) {
    str(name);
    put(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put(static_cast<std::uint64_t>(d));
    for (double v : values) put(v);
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}
  template <class T>
  T get() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is_) throw ContractError("checkpoint: truncated file");
    return to_le(v);
  }
  std::string str() {
    const auto n = get<std::uint32_t>();
    std::string s(n, '\0');
    is_.read(s.data(), n);
    if (!is_) throw ContractError("checkpoint: truncated file");
    return s;
  }
  NamedTensor slice() {
    NamedTensor t;
    t.name = str();
    Shape shape(get<std::uint32_t>());
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>());
    std::vector<double> v(shape_size(shape));
    for (double& x : v) x = get<double>();
    t.value = Tensor(shape, std::move(v));
    return t;
  }

 private:
  std::istream& is_;
};

}  // namespace detail

// Architecture descriptor stored in the header and checked on restore.
inline std::string arch_descriptor(const Agent& agent) {
  const auto& c = agent.config();
  std::string s = "obs=";
  for (std::size_t i = 0; i < agent.spec().obs_shape.size(); ++i) {
    s += (i ? "x" : "") + std::to_string(agent.spec().obs_shape[i]);
  }
  s += ";action=" + std::to_string(agent.spec().action_dim) + ";trunk=" + to_string(c.trunk) +
       ";latent=" + std::to_string(c.latent_dim) + ";hidden=" + std::to_string(c.hidden_dim) +
       ";experts=" + std::to_string(c.num_experts) + ";top_k=" + std::to_string(c.top_k) +
       ";expert_hidden=" + std::to_string(c.expert_hidden) + ";mlp_hidden=" + std::to_string(c.mlp_hidden) +
       ";conv_filters=" + std::to_string(c.conv_filters);
  return s;
}

inline void save_checkpoint(const std::filesystem::path& path, Agent& agent, const perturb::TopAgentBuffer& buffer) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  detail::Writer w(os);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put(kCheckpointVersion);
  w.str(arch_descriptor(agent));
  const auto params = agent.all_params();
  w.put(static_cast<std::uint64_t>(params.size()));
  for (const auto* p : params) w.slice(p->name, p->value.shape(), p->value.data());
  w.put(static_cast<std::uint64_t>(buffer.size()));
  for (const auto& e : buffer.entries()) {
    w.put(e.reward);
    w.put(static_cast<std::uint64_t>(e.weights.layout.slices.size()));
    for (const auto& s : e.weights.layout.slices) {
      w.slice(s.name, s.shape, std::span<const double>(e.weights.values).subspan(s.offset, s.size));
    }
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw ContractError("checkpoint: bad magic in " + path.string());
  }
  detail::Reader r(is);
  if (const auto v = r.get<std::uint32_t>(); v != kCheckpointVersion) {
    throw ContractError("checkpoint: unsupported version " + std::to_string(v));
  }
  Checkpoint c;
  c.arch = r.str();
  const auto n = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) c.params.push_back(r.slice());
  const auto m = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < m; ++i) {
    perturb::TopAgentBuffer::Entry e;
    e.reward = r.get<double>();
    const auto k = r.get<std::uint64_t>();
    for (std::uint64_t j = 0; j < k; ++j) {
      NamedTensor t = r.slice();
      e.weights.layout.slices.push_back({t.name, e.weights.values.size(), t.value.size(), t.value.shape()});
      e.weights.values.insert(e.weights.values.end(), t.value.storage().begin(), t.value.storage().end());
    }
    c.buffer.push_back(std::move(e));
  }
  return c;
}

// Copies checkpointed weights into `agent`; names, shapes and the
// architecture descriptor must all match.
inline void restore(Agent& agent, const Checkpoint& c) {
  if (c.arch != arch_descriptor(agent)) {
    throw ContractError("checkpoint architecture '" + c.arch + "' does not match agent '" + arch_descriptor(agent) + "'");
  }
  std::map<std::string, const Tensor*> by_name;
  for (const auto& t : c.params) by_name[t.name] = &t.value;
  for (auto* p : agent.all_params()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw ContractError("checkpoint: missing parameter " + p->name);
    if (it->second->shape() != p->value.shape()) throw ContractError("checkpoint: shape mismatch for " + p->name);
    p->value = *it->second;
  }
}

inline perturb::TopAgentBuffer restore_buffer(const Checkpoint& c, std::size_t capacity) {
  perturb::TopAgentBuffer b(std::max<std::size_t>(capacity, c.buffer.size()));
  for (const auto& e : c.buffer) b.maybe_insert(e.weights, e.reward);
  return b;
}

}  // namespace moerl::rl
