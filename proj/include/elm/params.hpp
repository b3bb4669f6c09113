#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "elm/tensor.hpp"

namespace elm {

/// Named, ordered collection of parameter tensors.
///
/// Tensors are heap-allocated individually, so references handed out by
/// `add`/`get` stay valid when the store is moved. Insertion order defines the
/// flat layout used by `flat_values`, the optimizers, and checkpoints.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Tensor& add(std::string name, Tensor value);
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const noexcept { return tensors_.size(); }
  std::size_t num_values() const noexcept;
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& at(std::size_t i) { return *tensors_[i]; }
  const Tensor& at(std::size_t i) const { return *tensors_[i]; }

  void zero_grad();
  void set_requires_grad(bool flag);

  std::vector<double> flat_values() const;
  void set_flat_values(std::span<const double> values);
  // Missing gradient buffers read as zeros.
  std::vector<double> flat_grads() const;

  // Copies values from a store with identical names and shapes.
  void copy_values_from(const ParamStore& other);

 private:
  std::vector<std::string> names_;
  std::vector<std::unique_ptr<Tensor>> tensors_;
};

using Metadata = std::map<std::string, std::string>;

struct CheckpointData {
  Metadata metadata;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(std::string_view name) const;
  const std::string& meta(const std::string& key) const;
};

// Binary container; layout documented in docs/checkpoint-format.md.
void write_checkpoint(const std::string& path, const ParamStore& params, const Metadata& metadata);
std::vector<std::uint8_t> encode_checkpoint(const ParamStore& params, const Metadata& metadata);
CheckpointData read_checkpoint(const std::string& path);
CheckpointData decode_checkpoint(std::span<const std::uint8_t> bytes);
// Names and shapes must match exactly.
void load_values(ParamStore& params, const CheckpointData& data);

// FNV-1a over parameter names, shapes, and little-endian values.
std::uint64_t checksum(const ParamStore& params);

}  // namespace elm
