// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0

#include "sparw/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

namespace sparw {

std::uint64_t spec_hash(const ModelSpec& spec) {
  const std::string s = spec.canonical_string();
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

template <typename T>
constexpr std::uint8_t dtype_tag();
template <>
constexpr std::uint8_t dtype_tag<float>() { return 0; }
template <>
constexpr std::uint8_t dtype_tag<double>() { return 1; }

// Little-endian raw writer/reader. The build targets little-endian hosts;
// the on-disk format is defined as little-endian.
struct Writer {
  std::vector<std::uint8_t> bytes;

  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  template <typename V>
  void pod(V v) { raw(&v, sizeof(V)); }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
};

struct Reader {
  const std::uint8_t* p;
  const std::uint8_t* end;

  void raw(void* out, std::size_t n) {
    if (static_cast<std::size_t>(end - p) < n)
      throw std::runtime_error("checkpoint: truncated section");
    std::memcpy(out, p, n);
    p += n;
  }
  template <typename V>
  V pod() {
    V v;
    raw(&v, sizeof(V));
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  bool done() const { return p == end; }
};

void append_section(Writer& out, const std::string& name,
                    const Writer& payload) {
  out.str(name);
  out.pod<std::uint64_t>(payload.bytes.size());
  out.raw(payload.bytes.data(), payload.bytes.size());
}

template <typename T>
void write_tensor(Writer& w, const TensorT<T>& t) {
  const auto& shape = t.shape();
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) w.pod<std::int64_t>(d);
  w.raw(t.data(), static_cast<std::size_t>(t.numel()) * sizeof(T));
}

template <typename T>
TensorT<T> read_tensor(Reader& r) {
  const auto rank = r.pod<std::uint32_t>();
  Shape shape(rank);
  for (auto& d : shape) d = r.pod<std::int64_t>();
  TensorT<T> t(shape);
  r.raw(t.data(), static_cast<std::size_t>(t.numel()) * sizeof(T));
  return t;
}

std::vector<std::uint8_t> pack_bits(const std::vector<std::uint8_t>& bits) {
  std::vector<std::uint8_t> packed((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  return packed;
}

std::vector<std::uint8_t> unpack_bits(const std::vector<std::uint8_t>& packed,
                                      std::size_t nbits) {
  std::vector<std::uint8_t> bits(nbits, 0);
  for (std::size_t i = 0; i < nbits; ++i)
    bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
  return bits;
}

}  // namespace

template <typename T>
TrainingSnapshot<T> capture_snapshot(const Network<T>& net,
                                     const OptimizerStateT<T>& opt) {
  TrainingSnapshot<T> s;
  s.spec_canonical = net.spec.canonical_string();
  for (const auto& p : net.params) {
    s.param_names.push_back(p.name);
    s.param_values.push_back(p.value);
    s.masks.push_back(p.mask);
  }
  s.velocity = opt.velocity;
  s.opt_step = opt.step;
  s.opt_lr = opt.lr;
  s.bn = net.bn;
  return s;
}

template <typename T>
void apply_snapshot(const TrainingSnapshot<T>& snap, Network<T>& net,
                    OptimizerStateT<T>& opt) {
  if (snap.spec_canonical != net.spec.canonical_string())
    throw std::runtime_error("checkpoint: model mismatch\n  stored:     " +
                             snap.spec_canonical + "\n  configured: " +
                             net.spec.canonical_string());
  if (snap.param_values.size() != net.params.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < net.params.size(); ++i) {
    auto& p = net.params[i];
    if (snap.param_names[i] != p.name)
      throw std::runtime_error("checkpoint: parameter order mismatch at " +
                               p.name);
    if (snap.param_values[i].shape() != p.value.shape())
      throw std::runtime_error("checkpoint: shape mismatch on " + p.name);
    p.value = snap.param_values[i];
    if (!snap.masks[i].empty() &&
        snap.masks[i].size() != static_cast<std::size_t>(p.value.numel()))
      throw std::runtime_error("checkpoint: mask size mismatch on " + p.name);
    p.mask = snap.masks[i];
  }
  if (snap.velocity.size() != net.params.size())
    throw std::runtime_error("checkpoint: optimizer state size mismatch");
  opt.velocity = snap.velocity;
  opt.step = snap.opt_step;
  opt.lr = snap.opt_lr;
  if (snap.bn.size() != net.bn.size())
    throw std::runtime_error("checkpoint: batch-norm buffer count mismatch");
  net.bn = snap.bn;
  apply_masks(net);
}

template <typename T>
void save_checkpoint(const std::string& path, const TrainingSnapshot<T>& s) {
  Writer out;
  out.raw("SPRW", 4);
  out.pod<std::uint32_t>(kCheckpointVersion);

  {
    Writer w;
    w.pod<std::uint64_t>([&] {
      std::uint64_t h = 1469598103934665603ull;
      for (unsigned char c : s.spec_canonical) {
        h ^= c;
        h *= 1099511628211ull;
      }
      return h;
    }());
    w.str(s.spec_canonical);
    w.pod<std::uint8_t>(dtype_tag<T>());
    append_section(out, "spec", w);
  }
  {
    Writer w;
    w.pod<std::int32_t>(s.epoch);
    w.pod<std::int64_t>(s.global_iter);
    w.pod<double>(s.cum_flops);
    w.pod<std::int32_t>(s.best_epoch);
    w.pod<double>(s.best_val_ra);
    w.pod<double>(s.wall_base_s);
    append_section(out, "state", w);
  }
  {
    Writer w;
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(s.param_values.size()));
    for (std::size_t i = 0; i < s.param_values.size(); ++i) {
      w.str(s.param_names[i]);
      write_tensor(w, s.param_values[i]);
    }
    append_section(out, "params", w);
  }
  {
    Writer w;
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(s.masks.size()));
    for (const auto& mask : s.masks) {
      w.pod<std::uint8_t>(mask.empty() ? 0 : 1);
      if (!mask.empty()) {
        w.pod<std::uint64_t>(mask.size());
        const auto packed = pack_bits(mask);
        w.raw(packed.data(), packed.size());
      }
    }
    append_section(out, "masks", w);
  }
  {
    Writer w;
    w.pod<std::int64_t>(s.opt_step);
    w.pod<double>(s.opt_lr);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(s.velocity.size()));
    for (const auto& v : s.velocity) write_tensor(w, v);
    append_section(out, "momentum", w);
  }
  {
    Writer w;
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(s.bn.size()));
    for (const auto& b : s.bn) {
      write_tensor(w, b.running_mean);
      write_tensor(w, b.running_var);
    }
    append_section(out, "bn", w);
  }
  {
    Writer w;
    w.str(s.metrics_csv);
    append_section(out, "metrics", w);
  }
  if (s.has_fb) {
    Writer w;
    w.pod<std::int64_t>(s.fb_total_iters);
    w.pod<std::int64_t>(s.fb_updates);
    w.pod<std::uint8_t>(s.fb_boost_p ? 1 : 0);
    w.pod<std::uint8_t>(s.fb_boost_g ? 1 : 0);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(s.fb_q_p.size()));
    for (double v : s.fb_q_p) w.pod<double>(v);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(s.fb_q_g.size()));
    for (double v : s.fb_q_g) w.pod<double>(v);
    append_section(out, "fb", w);
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp + " for writing");
    f.write(reinterpret_cast<const char*>(out.bytes.data()),
            static_cast<std::streamsize>(out.bytes.size()));
    if (!f) throw std::runtime_error("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

namespace {

std::map<std::string, std::vector<std::uint8_t>> read_sections(
    const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "SPRW", 4) != 0)
    throw std::runtime_error(path + ": not a checkpoint file (bad magic)");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kCheckpointVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version " +
                             std::to_string(version));
  Reader r{bytes.data() + 8, bytes.data() + bytes.size()};
  std::map<std::string, std::vector<std::uint8_t>> sections;
  while (!r.done()) {
    const std::string name = r.str();
    const auto len = r.pod<std::uint64_t>();
    if (static_cast<std::uint64_t>(r.end - r.p) < len)
      throw std::runtime_error(path + ": truncated section " + name);
    sections[name].assign(r.p, r.p + len);
    r.p += len;
  }
  return sections;
}

Reader section_reader(
    const std::map<std::string, std::vector<std::uint8_t>>& sections,
    const std::string& name, const std::string& path) {
  const auto it = sections.find(name);
  if (it == sections.end())
    throw std::runtime_error(path + ": missing checkpoint section " + name);
  return Reader{it->second.data(), it->second.data() + it->second.size()};
}

}  // namespace

std::string checkpoint_precision(const std::string& path) {
  const auto sections = read_sections(path);
  Reader r = section_reader(sections, "spec", path);
  r.pod<std::uint64_t>();  // hash
  r.str();                 // canonical spec
  return r.pod<std::uint8_t>() == 0 ? "f32" : "f64";
}

template <typename T>
TrainingSnapshot<T> load_checkpoint(const std::string& path) {
  const auto sections = read_sections(path);
  TrainingSnapshot<T> s;
  {
    Reader r = section_reader(sections, "spec", path);
    const auto stored_hash = r.pod<std::uint64_t>();
    s.spec_canonical = r.str();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s.spec_canonical) {
      h ^= c;
      h *= 1099511628211ull;
    }
    if (h != stored_hash)
      throw std::runtime_error(path + ": spec hash mismatch (corrupt file?)");
    const auto tag = r.pod<std::uint8_t>();
    if (tag != dtype_tag<T>())
      throw std::runtime_error(path + ": precision mismatch (stored " +
                               std::string(tag == 0 ? "f32" : "f64") + ")");
  }
  {
    Reader r = section_reader(sections, "state", path);
    s.epoch = r.pod<std::int32_t>();
    s.global_iter = r.pod<std::int64_t>();
    s.cum_flops = r.pod<double>();
    s.best_epoch = r.pod<std::int32_t>();
    s.best_val_ra = r.pod<double>();
    s.wall_base_s = r.pod<double>();
  }
  {
    Reader r = section_reader(sections, "params", path);
    const auto count = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
      s.param_names.push_back(r.str());
      s.param_values.push_back(read_tensor<T>(r));
    }
  }
  {
    Reader r = section_reader(sections, "masks", path);
    const auto count = r.pod<std::uint32_t>();
    if (count != s.param_values.size())
      throw std::runtime_error(path + ": mask/param count mismatch");
    for (std::uint32_t i = 0; i < count; ++i) {
      if (r.pod<std::uint8_t>() == 0) {
        s.masks.emplace_back();
        continue;
      }
      const auto nbits = r.pod<std::uint64_t>();
      std::vector<std::uint8_t> packed((nbits + 7) / 8);
      r.raw(packed.data(), packed.size());
      s.masks.push_back(unpack_bits(packed, nbits));
    }
  }
  {
    Reader r = section_reader(sections, "momentum", path);
    s.opt_step = r.pod<std::int64_t>();
    s.opt_lr = r.pod<double>();
    const auto count = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i)
      s.velocity.push_back(read_tensor<T>(r));
  }
  {
    Reader r = section_reader(sections, "bn", path);
    const auto count = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
      BatchNormBuffers<T> b;
      b.running_mean = read_tensor<T>(r);
      b.running_var = read_tensor<T>(r);
      s.bn.push_back(std::move(b));
    }
  }
  {
    Reader r = section_reader(sections, "metrics", path);
    s.metrics_csv = r.str();
  }
  if (sections.count("fb")) {
    Reader r = section_reader(sections, "fb", path);
    s.has_fb = true;
    s.fb_total_iters = r.pod<std::int64_t>();
    s.fb_updates = r.pod<std::int64_t>();
    s.fb_boost_p = r.pod<std::uint8_t>() != 0;
    s.fb_boost_g = r.pod<std::uint8_t>() != 0;
    const auto np = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < np; ++i) s.fb_q_p.push_back(r.pod<double>());
    const auto ng = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < ng; ++i) s.fb_q_g.push_back(r.pod<double>());
  }
  return s;
}

#define SPARW_INSTANTIATE(T)                                                  \
  template TrainingSnapshot<T> capture_snapshot<T>(const Network<T>&,         \
                                                   const OptimizerStateT<T>&);\
  template void apply_snapshot<T>(const TrainingSnapshot<T>&, Network<T>&,    \
                                  OptimizerStateT<T>&);                       \
  template void save_checkpoint<T>(const std::string&,                        \
                                   const TrainingSnapshot<T>&);               \
  template TrainingSnapshot<T> load_checkpoint<T>(const std::string&);

SPARW_INSTANTIATE(float)
SPARW_INSTANTIATE(double)
#undef SPARW_INSTANTIATE

}  // namespace sparw
