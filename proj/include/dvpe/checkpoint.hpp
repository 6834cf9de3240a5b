#pragma once

#include "dvpe/num/ops.hpp"
#include "dvpe/optim.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dvpe {

enum class DType : std::uint8_t { F32 = 0, F64 = 1, U8 = 2, I64 = 3 };

struct NamedTensor {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;  // little-endian payload

  std::size_t count() const;
};

struct Checkpoint {
  static constexpr char kMagic[8] = {'D', 'V', 'P', 'E', 'C', 'K', 'P', 'T'};
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
  void add(NamedTensor t);
};

class CheckpointFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointMismatchError : public std::runtime_error {
 public:
  CheckpointMismatchError(const std::string& what, std::vector<std::string> names)
      : std::runtime_error(what), names_(std::move(names)) {}
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Writes to a temporary sibling and renames it over `path`.
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

NamedTensor tensor_f32(const std::string& name, const num::Shape& shape, const std::vector<float>& data);
NamedTensor tensor_f64(const std::string& name, const num::Shape& shape, const std::vector<double>& data);
NamedTensor tensor_text(const std::string& name, const std::string& text);
NamedTensor tensor_i64(const std::string& name, std::int64_t value);
std::string tensor_as_text(const NamedTensor& t);
std::int64_t tensor_as_i64(const NamedTensor& t);

/// Parameters as "param.<name>", optimizer state as "optim.m.<name>" and
/// "optim.v.<name>", plus "meta.config" text and "meta.step".
template <typename T>
Checkpoint make_checkpoint(const num::ParamStore<T>& store, const Optimizer<T>* opt, const std::string& config_text,
                           std::int64_t step);

/// Copies parameters (and optimizer state if given) out of a checkpoint.
/// Every parameter must be present with the same shape; otherwise throws
/// CheckpointMismatchError naming each offending tensor.
template <typename T>
void restore_checkpoint(const Checkpoint& ck, num::ParamStore<T>& store, Optimizer<T>* opt);

}  // namespace dvpe
