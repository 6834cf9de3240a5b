#include "dvpe/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

namespace dvpe {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are stored little-endian");

namespace {

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::U8: return 1;
    case DType::I64: return 8;
  }
  throw CheckpointFormatError("checkpoint: unknown dtype tag");
}

template <typename V>
void put(std::vector<std::uint8_t>& out, V v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(V));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  template <typename V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, b_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  void bytes(std::uint8_t* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, b_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw CheckpointFormatError("checkpoint: truncated file");
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

template <typename T>
DType dtype_of() {
  return sizeof(T) == 4 ? DType::F32 : DType::F64;
}

template <typename T>
NamedTensor pack(const std::string& name, const num::Shape& shape, const std::vector<T>& data) {
  NamedTensor t;
  t.name = name;
  t.dtype = dtype_of<T>();
  for (auto d : shape) t.dims.push_back(static_cast<std::uint32_t>(d));
  t.bytes.resize(data.size() * sizeof(T));
  if (!data.empty()) std::memcpy(t.bytes.data(), data.data(), t.bytes.size());
  return t;
}

template <typename T>
void unpack(const NamedTensor& t, std::vector<T>& out) {
  if (t.dtype != dtype_of<T>()) throw CheckpointMismatchError("checkpoint: dtype mismatch for " + t.name, {t.name});
  out.resize(t.bytes.size() / sizeof(T));
  if (!out.empty()) std::memcpy(out.data(), t.bytes.data(), t.bytes.size());
}

std::string dims_str(const std::vector<std::uint32_t>& d) {
  std::string s = "[";
  for (std::size_t i = 0; i < d.size(); ++i) s += (i ? "x" : "") + std::to_string(d[i]);
  return s + "]";
}

}  // namespace

std::size_t NamedTensor::count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void Checkpoint::add(NamedTensor t) {
  if (find(t.name) != nullptr) throw std::invalid_argument("checkpoint: duplicate tensor " + t.name);
  tensors.push_back(std::move(t));
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  std::vector<std::uint8_t> out(std::begin(Checkpoint::kMagic), std::end(Checkpoint::kMagic));
  put<std::uint32_t>(out, ck.version);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    if (t.name.size() > 0xFFFF) throw std::invalid_argument("checkpoint: tensor name too long");
    if (t.dims.size() > 0xFF) throw std::invalid_argument("checkpoint: rank too large");
    if (t.bytes.size() != t.count() * dtype_size(t.dtype))
      throw std::invalid_argument("checkpoint: payload size does not match shape for " + t.name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) put<std::uint32_t>(out, d);
    out.insert(out.end(), t.bytes.begin(), t.bytes.end());
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), Checkpoint::kMagic, 8) != 0)
    throw CheckpointFormatError("checkpoint: bad magic");
  Reader r(bytes);
  for (int i = 0; i < 8; ++i) r.get<char>();
  Checkpoint ck;
  ck.version = r.get<std::uint32_t>();
  if (ck.version != Checkpoint::kVersion)
    throw CheckpointFormatError("checkpoint: unsupported version " + std::to_string(ck.version));
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name.resize(r.get<std::uint16_t>());
    r.bytes(reinterpret_cast<std::uint8_t*>(t.name.data()), t.name.size());
    const auto tag = r.get<std::uint8_t>();
    if (tag > 3) throw CheckpointFormatError("checkpoint: unknown dtype tag in " + t.name);
    t.dtype = static_cast<DType>(tag);
    t.dims.resize(r.get<std::uint8_t>());
    for (auto& d : t.dims) d = r.get<std::uint32_t>();
    t.bytes.resize(t.count() * dtype_size(t.dtype));
    r.bytes(t.bytes.data(), t.bytes.size());
    ck.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointFormatError("checkpoint: trailing bytes");
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const auto bytes = serialize_checkpoint(ck);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + tmp);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

NamedTensor tensor_f32(const std::string& name, const num::Shape& shape, const std::vector<float>& data) {
  return pack(name, shape, data);
}
NamedTensor tensor_f64(const std::string& name, const num::Shape& shape, const std::vector<double>& data) {
  return pack(name, shape, data);
}

NamedTensor tensor_text(const std::string& name, const std::string& text) {
  NamedTensor t;
  t.name = name;
  t.dtype = DType::U8;
  t.dims = {static_cast<std::uint32_t>(text.size())};
  t.bytes.assign(text.begin(), text.end());
  return t;
}

NamedTensor tensor_i64(const std::string& name, std::int64_t value) {
  NamedTensor t;
  t.name = name;
  t.dtype = DType::I64;
  t.dims = {1};
  put(t.bytes, value);
  return t;
}

std::string tensor_as_text(const NamedTensor& t) {
  if (t.dtype != DType::U8) throw CheckpointFormatError("checkpoint: " + t.name + " is not text");
  return {t.bytes.begin(), t.bytes.end()};
}

std::int64_t tensor_as_i64(const NamedTensor& t) {
  if (t.dtype != DType::I64 || t.count() != 1) throw CheckpointFormatError("checkpoint: " + t.name + " is not a scalar i64");
  std::int64_t v;
  std::memcpy(&v, t.bytes.data(), 8);
  return v;
}

template <typename T>
Checkpoint make_checkpoint(const num::ParamStore<T>& store, const Optimizer<T>* opt, const std::string& config_text,
                           std::int64_t step) {
  Checkpoint ck;
  ck.add(tensor_text("meta.config", config_text));
  ck.add(tensor_i64("meta.step", step));
  for (const auto& p : store.all()) ck.add(pack("param." + p.name, p.value.shape, p.value.data));
  if (opt != nullptr) {
    const auto& o = *opt;
    ck.add(tensor_i64("optim.t", o.steps_taken()));
    std::size_t i = 0;
    for (const auto& p : store.all()) {
      if (i < o.first().size()) ck.add(pack("optim.m." + p.name, {o.first()[i].size()}, o.first()[i]));
      if (i < o.second().size()) ck.add(pack("optim.v." + p.name, {o.second()[i].size()}, o.second()[i]));
      ++i;
    }
  }
  return ck;
}

template <typename T>
void restore_checkpoint(const Checkpoint& ck, num::ParamStore<T>& store, Optimizer<T>* opt) {
  std::vector<std::string> bad;
  std::string detail;
  for (const auto& p : store.all()) {
    const auto* t = ck.find("param." + p.name);
    std::vector<std::uint32_t> want;
    for (auto d : p.value.shape) want.push_back(static_cast<std::uint32_t>(d));
    if (t == nullptr) {
      bad.push_back(p.name);
      detail += "\n  " + p.name + ": missing (expected " + dims_str(want) + ")";
    } else if (t->dims != want || t->dtype != dtype_of<T>()) {
      bad.push_back(p.name);
      detail += "\n  " + p.name + ": checkpoint " + dims_str(t->dims) + ", model " + dims_str(want);
    }
  }
  for (const auto& t : ck.tensors) {
    if (t.name.rfind("param.", 0) != 0) continue;
    if (store.find(t.name.substr(6)) == nullptr) {
      bad.push_back(t.name.substr(6));
      detail += "\n  " + t.name.substr(6) + ": not in model";
    }
  }
  if (!bad.empty()) throw CheckpointMismatchError("checkpoint does not match the model:" + detail, bad);
  for (auto& p : store.all()) unpack(*ck.find("param." + p.name), p.value.data);
  if (opt == nullptr) return;
  const auto* t = ck.find("optim.t");
  if (t == nullptr) return;
  opt->set_steps_taken(tensor_as_i64(*t));
  opt->first().clear();
  opt->second().clear();
  for (const auto& p : store.all()) {
    std::vector<T> m, v;
    if (const auto* tm = ck.find("optim.m." + p.name)) unpack(*tm, m);
    if (const auto* tv = ck.find("optim.v." + p.name)) unpack(*tv, v);
    opt->first().push_back(std::move(m));
    opt->second().push_back(std::move(v));
  }
}

template Checkpoint make_checkpoint(const num::ParamStore<float>&, const Optimizer<float>*, const std::string&,
                                    std::int64_t);
template Checkpoint make_checkpoint(const num::ParamStore<double>&, const Optimizer<double>*, const std::string&,
                                    std::int64_t);
template void restore_checkpoint(const Checkpoint&, num::ParamStore<float>&, Optimizer<float>*);
template void restore_checkpoint(const Checkpoint&, num::ParamStore<double>&, Optimizer<double>*);

}  // namespace dvpe
