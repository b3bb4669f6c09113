#include "elm/params.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "elm/error.hpp"

namespace elm {

Tensor& ParamStore::add(std::string name, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  names_.push_back(std::move(name));
  tensors_.push_back(std::make_unique<Tensor>(std::move(value)));
  return *tensors_.back();
}

Tensor& ParamStore::get(std::string_view name) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return *tensors_[i];
  }
  throw ConfigError("no parameter named '" + std::string(name) + "'");
}

const Tensor& ParamStore::get(std::string_view name) const {
  return const_cast<ParamStore*>(this)->get(name);
}

bool ParamStore::contains(std::string_view name) const {
  for (const auto& n : names_) {
    if (n == name) return true;
  }
  return false;
}

std::size_t ParamStore::num_values() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t->size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& t : tensors_) t->zero_grad();
}

void ParamStore::set_requires_grad(bool flag) {
  for (auto& t : tensors_) t->set_requires_grad(flag);
}

std::vector<double> ParamStore::flat_values() const {
  std::vector<double> out;
  out.reserve(num_values());
  for (const auto& t : tensors_) out.insert(out.end(), t->data().begin(), t->data().end());
  return out;
}

void ParamStore::set_flat_values(std::span<const double> values) {
  if (values.size() != num_values()) {
    throw DimensionError("flat parameter vector has " + std::to_string(values.size()) +
                         " entries, expected " + std::to_string(num_values()));
  }
  std::size_t offset = 0;
  for (auto& t : tensors_) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), t->size(), t->data().begin());
    offset += t->size();
  }
}

std::vector<double> ParamStore::flat_grads() const {
  std::vector<double> out;
  out.reserve(num_values());
  for (const auto& t : tensors_) {
    if (t->has_grad()) {
      out.insert(out.end(), t->grad().begin(), t->grad().end());
    } else {
      out.insert(out.end(), t->size(), 0.0);
    }
  }
  return out;
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (other.size() != size()) throw ConfigError("parameter stores differ in tensor count");
  for (std::size_t i = 0; i < size(); ++i) {
    if (names_[i] != other.names_[i] || tensors_[i]->shape() != other.tensors_[i]->shape()) {
      throw ConfigError("parameter '" + names_[i] + "' does not match '" + other.names_[i] + "'");
    }
    std::copy(other.tensors_[i]->data().begin(), other.tensors_[i]->data().end(),
              tensors_[i]->data().begin());
  }
}

// ---------------------------------------------------------------------------
// Checkpoint container

namespace {

constexpr char kMagic[8] = {'E', 'L', 'M', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kFormatVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw ParseError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamStore& params, const Metadata& metadata) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(metadata.size()));
  for (const auto& [k, v] : metadata) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(params.size()));
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params.at(i);
    w.str(params.name(i));
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t extent : t.shape()) w.u64(extent);
    w.u64(offset);
    offset += 8 * t.size();
  }
  w.u64(offset);
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double v : params.at(i).data()) w.f64(v);
  }
  return std::move(w.out);
}

void write_checkpoint(const std::string& path, const ParamStore& params, const Metadata& metadata) {
  const auto bytes = encode_checkpoint(params, metadata);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

CheckpointData decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(sizeof kMagic);
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw ParseError("not a checkpoint file (bad magic)");
  }
  r.seek(sizeof kMagic);
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointData data;
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    data.metadata[k] = r.str();
  }
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries(r.u32());
  for (auto& e : entries) {
    e.name = r.str();
    const std::uint32_t rank = r.u32();
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.u64());
    e.offset = r.u64();
  }
  const std::uint64_t payload_bytes = r.u64();
  const std::size_t payload_start = r.pos();
  r.need(payload_bytes);
  for (const auto& e : entries) {
    const std::size_t n = shape_size(e.shape);
    if (e.offset + 8 * n > payload_bytes) throw ParseError("tensor '" + e.name + "' overruns payload");
    r.seek(payload_start + e.offset);
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    data.tensors.emplace_back(e.name, Tensor(e.shape, std::move(values)));
  }
  return data;
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

const Tensor& CheckpointData::tensor(std::string_view name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw ConfigError("checkpoint has no tensor '" + std::string(name) + "'");
}

const std::string& CheckpointData::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw ConfigError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

void load_values(ParamStore& params, const CheckpointData& data) {
  if (data.tensors.size() != params.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(data.tensors.size()) + " tensors, model has " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = data.tensors[i];
    if (name != params.name(i) || t.shape() != params.at(i).shape()) {
      throw ConfigError("checkpoint tensor '" + name + "' " + shape_string(t.shape()) +
                        " does not match model parameter '" + params.name(i) + "' " +
                        shape_string(params.at(i).shape()));
    }
    std::copy(t.data().begin(), t.data().end(), params.at(i).data().begin());
  }
}

std::uint64_t checksum(const ParamStore& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint8_t b) {
    h ^= b;
    h *= 1099511628211ull;
  };
  auto mix64 = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) mix(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (char c : params.name(i)) mix(static_cast<std::uint8_t>(c));
    for (std::size_t e : params.at(i).shape()) mix64(e);
    for (double v : params.at(i).data()) mix64(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

}  // namespace elm
