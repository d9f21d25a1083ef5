// SPDX-License-Identifier: Apache-2.0
#include "leafnet/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "leafnet/error.hpp"

namespace leafnet {

namespace {

constexpr char kMagic[8] = {'P', 'D', 'N', 'R', 'T', '5', '0', '\0'};

class Writer {
 public:
  template <class U>
  void put(U v) {
    static_assert(std::is_unsigned_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <class U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  void need(std::size_t n) const {
    require(n <= end_ - pos_, ErrorCode::MalformedFile, "checkpoint record runs past the payload");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in pieces.
  while (n > 0) {
    const auto piece = static_cast<uInt>(std::min<std::size_t>(n, std::numeric_limits<uInt>::max()));
    crc = crc32(crc, data, piece);
    data += piece;
    n -= piece;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

Checkpoint make_checkpoint(ModelGraph& model, const Optimizer* optimizer, std::size_t epoch,
                           std::optional<double> best_val_loss) {
  Checkpoint c;
  for (auto& [name, t] : model.named_state()) c.tensors.emplace_back(name, t.clone());
  c.architecture = model.descriptor();
  c.epoch = epoch;
  c.best_val_loss = best_val_loss;
  if (optimizer) c.optimizer = optimizer->hyperparams();
  c.rng_state = model.dropout_rng.serialize();
  nlohmann::json trainable = nlohmann::json::object();
  for (const auto& g : model.param_groups()) trainable[g.name] = g.trainable();
  c.extra["trainable"] = trainable;
  return c;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.put_bytes(kMagic, sizeof kMagic);
  w.put(ckpt.version);
  require(ckpt.tensors.size() <= std::numeric_limits<std::uint32_t>::max(), ErrorCode::InvalidArgument,
          "too many tensors");
  w.put(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    require(name.size() <= std::numeric_limits<std::uint16_t>::max(), ErrorCode::InvalidArgument,
            "tensor name too long");
    require(t.ndim() <= std::numeric_limits<std::uint8_t>::max(), ErrorCode::InvalidArgument, "rank too large");
    w.put(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put(static_cast<std::uint8_t>(t.dtype() == DType::F32 ? 1 : 2));
    w.put(static_cast<std::uint8_t>(t.ndim()));
    for (auto d : t.shape()) w.put(static_cast<std::uint64_t>(d));
    visit_dtype(t.dtype(), [&](auto tag) {
      using T = decltype(tag);
      using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      for (T v : t.template values<T>()) w.put(std::bit_cast<Bits>(v));
    });
  }
  nlohmann::json meta;
  meta["architecture"] = ckpt.architecture;
  meta["epoch"] = ckpt.epoch;
  meta["best_val_loss"] = ckpt.best_val_loss ? nlohmann::json(*ckpt.best_val_loss) : nlohmann::json(nullptr);
  meta["optimizer"] = ckpt.optimizer;
  meta["rng_state"] = ckpt.rng_state;
  meta["extra"] = ckpt.extra;
  const std::string text = meta.dump();
  w.put(static_cast<std::uint32_t>(text.size()));
  w.put_bytes(text.data(), text.size());
  w.put(crc32_of(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= sizeof kMagic && std::memcmp(bytes.data(), kMagic, sizeof kMagic) == 0,
          ErrorCode::BadMagic, "not a checkpoint file");
  // Integrity before interpretation: a truncated or corrupted file fails here
  // and nothing is parsed.
  require(bytes.size() >= sizeof kMagic + 4 + 4 + 4 + 4, ErrorCode::ChecksumMismatch, "checkpoint truncated");
  const std::size_t payload = bytes.size() - 4;
  Reader tail(bytes, bytes.size());
  tail.skip(payload);
  require(tail.get<std::uint32_t>() == crc32_of(bytes.data(), payload), ErrorCode::ChecksumMismatch,
          "checkpoint CRC mismatch");

  Reader r(bytes, payload);
  r.skip(sizeof kMagic);
  Checkpoint c;
  c.version = r.get<std::uint32_t>();
  require(c.version == kCheckpointVersion, ErrorCode::VersionMismatch,
          "unsupported checkpoint version " + std::to_string(c.version));
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string(r.get<std::uint16_t>());
    const auto code = r.get<std::uint8_t>();
    require(code == 1 || code == 2, ErrorCode::MalformedFile, "bad dtype code for " + name);
    const DType dtype = code == 1 ? DType::F32 : DType::F64;
    const auto ndim = r.get<std::uint8_t>();
    Shape shape;
    std::size_t numel = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      const auto dim = r.get<std::uint64_t>();
      require(dim > 0 && dim <= payload, ErrorCode::MalformedFile, "bad dimension for " + name);
      shape.push_back(static_cast<std::size_t>(dim));
      numel *= shape.back();
      require(numel <= payload, ErrorCode::MalformedFile, "tensor larger than file: " + name);
    }
    Tensor t = Tensor::zeros(shape, dtype);
    visit_dtype(dtype, [&](auto tag) {
      using T = decltype(tag);
      using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      for (auto& v : t.template mutable_values<T>()) v = std::bit_cast<T>(r.get<Bits>());
    });
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  const std::string text = r.get_string(r.get<std::uint32_t>());
  require(r.pos() == payload, ErrorCode::MalformedFile, "trailing bytes after checkpoint metadata");
  try {
    const auto meta = nlohmann::json::parse(text);
    c.architecture = meta.at("architecture");
    c.epoch = meta.at("epoch").get<std::size_t>();
    if (!meta.at("best_val_loss").is_null()) c.best_val_loss = meta.at("best_val_loss").get<double>();
    c.optimizer = meta.at("optimizer");
    c.rng_state = meta.at("rng_state").get<std::string>();
    c.extra = meta.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedFile, std::string("bad checkpoint metadata: ") + e.what());
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  // Write-then-rename so an interrupted save never leaves a torn file behind.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorCode::IoFailure, "write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorCode::IoFailure, "cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

void load_state(ModelGraph& model, const Checkpoint& ckpt) {
  auto state = model.named_state();
  require(state.size() == ckpt.tensors.size(), ErrorCode::ShapeMismatchOnLoad,
          "checkpoint has " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
              std::to_string(state.size()));
  for (std::size_t i = 0; i < state.size(); ++i) {
    const auto& [name, dst] = state[i];
    const auto& [src_name, src] = ckpt.tensors[i];
    require(name == src_name, ErrorCode::ShapeMismatchOnLoad, "expected tensor " + name + ", found " + src_name);
    require(dst.shape() == src.shape() && dst.dtype() == src.dtype(), ErrorCode::ShapeMismatchOnLoad,
            name + ": checkpoint " + shape_to_string(src.shape()) + " vs model " + shape_to_string(dst.shape()));
  }
  for (std::size_t i = 0; i < state.size(); ++i) {
    Tensor dst = state[i].second;
    const Tensor& src = ckpt.tensors[i].second;
    visit_dtype(dst.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto s = src.template values<T>();
      std::copy(s.begin(), s.end(), dst.template mutable_values<T>().begin());
    });
  }
  if (!ckpt.rng_state.empty()) model.dropout_rng.deserialize(ckpt.rng_state);
}

ModelGraph model_from_checkpoint(const Checkpoint& ckpt) {
  ModelGraph model = model_from_descriptor(ckpt.architecture);
  load_state(model, ckpt);
  if (ckpt.extra.contains("trainable")) {
    const auto& flags = ckpt.extra.at("trainable");
    for (auto& g : model.param_groups()) {
      if (!flags.contains(g.name)) continue;
      for (auto& t : g.tensors) t.set_requires_grad(flags.at(g.name).get<bool>());
    }
  }
  return model;
}

}  // namespace leafnet
