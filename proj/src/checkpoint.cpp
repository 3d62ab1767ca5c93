#include "protoassign/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "protoassign/util.hpp"

namespace protoassign {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'A', 'C', 'K', 'P', 'T', '\0', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, data_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw ValidationError("checkpoint: truncated file");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, ckpt.header_json.size());
  out += ckpt.header_json;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint8_t>(out, t.width);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.bytes.data()), t.bytes.size());
  }
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw ValidationError("checkpoint: bad magic");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw ValidationError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.header_json = std::string(r.bytes(r.get<std::uint64_t>()));
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    CheckpointTensor t;
    t.name = std::string(r.bytes(r.get<std::uint32_t>()));
    t.width = r.get<std::uint8_t>();
    if (t.width != 4 && t.width != 8) throw ValidationError("checkpoint: bad element width");
    const auto rank = r.get<std::uint32_t>();
    std::size_t count = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
      count *= t.shape.back();
    }
    auto raw = r.bytes(count * t.width);
    t.bytes.assign(raw.begin(), raw.end());
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw ValidationError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path)); }

template <typename T>
Checkpoint make_checkpoint(const ParamSet<T>& params, std::string header_json) {
  Checkpoint ckpt;
  ckpt.header_json = std::move(header_json);
  for (const auto& [name, p] : params.entries()) {
    CheckpointTensor t;
    t.name = name;
    t.shape = p->value.shape();
    t.width = sizeof(T);
    t.bytes.resize(p->value.size() * sizeof(T));
    std::memcpy(t.bytes.data(), p->value.data(), t.bytes.size());
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

template <typename T>
ParamSet<T> params_from_checkpoint(const Checkpoint& ckpt) {
  ParamSet<T> params;
  for (const auto& t : ckpt.tensors) {
    std::size_t count = 1;
    for (auto d : t.shape) count *= d;
    std::vector<T> values(count);
    if (t.width == 4) {
      for (std::size_t i = 0; i < count; ++i) {
        float f;
        std::memcpy(&f, t.bytes.data() + i * 4, 4);
        values[i] = static_cast<T>(f);
      }
    } else {
      for (std::size_t i = 0; i < count; ++i) {
        double f;
        std::memcpy(&f, t.bytes.data() + i * 8, 8);
        values[i] = static_cast<T>(f);
      }
    }
    params.add(t.name, Tensor<T>(t.shape, std::move(values)));
  }
  return params;
}

template Checkpoint make_checkpoint(const ParamSet<float>&, std::string);
template Checkpoint make_checkpoint(const ParamSet<double>&, std::string);
template ParamSet<float> params_from_checkpoint(const Checkpoint&);
template ParamSet<double> params_from_checkpoint(const Checkpoint&);

}  // namespace protoassign
