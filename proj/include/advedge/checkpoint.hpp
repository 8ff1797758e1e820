#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "advedge/model.hpp"
#include "advedge/tensor.hpp"

// Binary tensor container: magic "AEBM", version u16 (little-endian), then
// per-tensor records of (u32 name length, name bytes, u32 rank, u32 extents,
// f32 payload), everything little-endian. Models, adversarial seeds and any
// other tensor bundles share this container; metadata rides along as
// reserved-name records ("meta/...").

namespace advedge {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw CheckpointError("cannot open checkpoint file '" + path + "'");
  }

  bool at_eof() {
    in_.peek();
    return in_.eof();
  }

  std::uint64_t offset() const { return offset_; }

  void bytes(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw CheckpointError("'" + path_ + "': truncated while reading " + std::string(what) + " at offset " +
                            std::to_string(offset_));
    offset_ += n;
  }

  std::uint16_t u16(const char* what) {
    unsigned char b[2];
    bytes(reinterpret_cast<char*>(b), 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(reinterpret_cast<char*>(b), 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

 private:
  std::string path_;
  std::ifstream in_;
  std::uint64_t offset_ = 0;
};

}  // namespace detail

constexpr std::uint16_t kCheckpointVersion = 1;

using TensorRecords = std::vector<std::pair<std::string, Tensor<float>>>;

inline void write_records(const std::string& path, const TensorRecords& records) {
  std::string buf;
  buf.append("AEBM");
  detail::put_u16(buf, kCheckpointVersion);
  for (const auto& [name, tensor] : records) {
    detail::put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
    detail::put_u32(buf, static_cast<std::uint32_t>(tensor.rank()));
    for (int i = 0; i < tensor.rank(); ++i) detail::put_u32(buf, static_cast<std::uint32_t>(tensor.dim(i)));
    for (std::int64_t i = 0; i < tensor.size(); ++i) detail::put_f32(buf, tensor[i]);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("short write to '" + path + "'");
}

inline TensorRecords read_records(const std::string& path) {
  detail::Reader r(path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, "AEBM", 4) != 0)
    throw CheckpointError("'" + path + "': bad magic at offset 0 (not an AEBM container)");
  const std::uint16_t version = r.u16("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("'" + path + "': unsupported container version " + std::to_string(version) +
                          " at offset 4");
  TensorRecords records;
  while (!r.at_eof()) {
    const auto name_off = r.offset();
    const std::uint32_t name_len = r.u32("record name length");
    if (name_len == 0 || name_len > 4096)
      throw CheckpointError("'" + path + "': implausible record name length at offset " + std::to_string(name_off));
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len, "record name");
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank > 8)
      throw CheckpointError("'" + path + "': implausible tensor rank for record '" + name + "' at offset " +
                            std::to_string(name_off));
    Shape shape(rank);
    std::int64_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<int>(r.u32("tensor extent"));
      if (shape[i] <= 0 || n * shape[i] > (std::int64_t(1) << 31))
        throw CheckpointError("'" + path + "': implausible extents for record '" + name + "' at offset " +
                              std::to_string(name_off));
      n *= shape[i];
    }
    std::vector<float> data(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) data[static_cast<std::size_t>(i)] = r.f32("tensor payload");
    records.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
  }
  return records;
}

namespace detail {

inline Tensor<float> scalar_record(float v) { return Tensor<float>({1}, {v}); }

inline const Tensor<float>& find_record(const TensorRecords& records, const std::string& name,
                                        const std::string& path) {
  for (const auto& [n, t] : records)
    if (n == name) return t;
  throw CheckpointError("'" + path + "': missing record '" + name + "'");
}

inline Tensor<float> encode_string(const std::string& s) {
  Tensor<float> t({static_cast<int>(std::max<std::size_t>(1, s.size()))});
  for (std::size_t i = 0; i < s.size(); ++i) t[static_cast<std::int64_t>(i)] = static_cast<float>(s[i]);
  return t;
}

inline std::string decode_string(const Tensor<float>& t) {
  std::string s;
  for (std::int64_t i = 0; i < t.size(); ++i) {
    const int c = static_cast<int>(t[i]);
    if (c > 0) s.push_back(static_cast<char>(c));
  }
  return s;
}

}  // namespace detail

inline void save_checkpoint(const TrainedModel& model, const std::string& path) {
  TensorRecords records;
  records.emplace_back("meta/format", detail::scalar_record(1.0f));
  records.emplace_back("meta/name", detail::encode_string(model.spec.name));
  records.emplace_back("meta/input_shape",
                       Tensor<float>({3}, {static_cast<float>(model.spec.input_shape[0]),
                                           static_cast<float>(model.spec.input_shape[1]),
                                           static_cast<float>(model.spec.input_shape[2])}));
  records.emplace_back("meta/class_count", detail::scalar_record(static_cast<float>(model.spec.class_count)));
  records.emplace_back("meta/normalize", Tensor<float>({2}, {model.spec.input_shift, model.spec.input_scale}));
  Tensor<float> arch({static_cast<int>(model.spec.layers.size()), 5});
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    const LayerDesc& l = model.spec.layers[i];
    arch.at2(static_cast<int>(i), 0) = static_cast<float>(static_cast<int>(l.kind));
    arch.at2(static_cast<int>(i), 1) = static_cast<float>(l.out_channels);
    arch.at2(static_cast<int>(i), 2) = static_cast<float>(l.kernel);
    arch.at2(static_cast<int>(i), 3) = static_cast<float>(l.stride);
    arch.at2(static_cast<int>(i), 4) = static_cast<float>(l.padding);
  }
  records.emplace_back("meta/arch", std::move(arch));
  records.emplace_back("meta/train",
                       Tensor<float>({4}, {static_cast<float>(model.meta.epochs),
                                           static_cast<float>(model.meta.seed & 0xffffu),
                                           static_cast<float>(model.meta.seed >> 16), model.meta.val_accuracy}));
  for (std::size_t i = 0; i < model.conv_kernels.size(); ++i)
    records.emplace_back("conv" + std::to_string(i) + "/kernels", model.conv_kernels[i]);
  records.emplace_back("head/weights", model.head_weights);
  records.emplace_back("head/bias", model.head_bias);
  write_records(path, records);
}

inline TrainedModel load_checkpoint(const std::string& path) {
  const TensorRecords records = read_records(path);
  TrainedModel m;
  m.spec.name = detail::decode_string(detail::find_record(records, "meta/name", path));
  const Tensor<float>& ishape = detail::find_record(records, "meta/input_shape", path);
  m.spec.input_shape = {static_cast<int>(ishape[0]), static_cast<int>(ishape[1]), static_cast<int>(ishape[2])};
  m.spec.class_count = static_cast<int>(detail::find_record(records, "meta/class_count", path)[0]);
  const Tensor<float>& norm = detail::find_record(records, "meta/normalize", path);
  m.spec.input_shift = norm[0];
  m.spec.input_scale = norm[1];
  const Tensor<float>& arch = detail::find_record(records, "meta/arch", path);
  for (int i = 0; i < arch.dim(0); ++i) {
    LayerDesc l;
    l.kind = static_cast<LayerKind>(static_cast<int>(arch.at2(i, 0)));
    l.out_channels = static_cast<int>(arch.at2(i, 1));
    l.kernel = static_cast<int>(arch.at2(i, 2));
    l.stride = static_cast<int>(arch.at2(i, 3));
    l.padding = static_cast<int>(arch.at2(i, 4));
    m.spec.layers.push_back(l);
  }
  m.spec.validate();
  const Tensor<float>& train = detail::find_record(records, "meta/train", path);
  m.meta.epochs = static_cast<std::uint32_t>(train[0]);
  m.meta.seed = static_cast<std::uint32_t>(train[1]) | (static_cast<std::uint32_t>(train[2]) << 16);
  m.meta.val_accuracy = train[3];

  std::size_t conv_count = 0;
  for (const LayerDesc& l : m.spec.layers)
    if (l.kind == LayerKind::Conv) ++conv_count;
  int channels = m.spec.input_shape[0];
  std::size_t idx = 0;
  for (const LayerDesc& l : m.spec.layers) {
    if (l.kind != LayerKind::Conv) continue;
    const Tensor<float>& k = detail::find_record(records, "conv" + std::to_string(idx) + "/kernels", path);
    const Shape expect{l.out_channels, channels, l.kernel, l.kernel};
    if (k.shape() != expect)
      throw CheckpointError("'" + path + "': conv" + std::to_string(idx) + " kernel shape " + shape_str(k.shape()) +
                            " does not match spec " + shape_str(expect));
    m.conv_kernels.push_back(k);
    channels = l.out_channels;
    ++idx;
  }
  (void)conv_count;
  const Shape feat = m.spec.feature_shape();
  m.head_weights = detail::find_record(records, "head/weights", path);
  if (m.head_weights.shape() != Shape{m.spec.class_count, feat[0]})
    throw CheckpointError("'" + path + "': head weight shape " + shape_str(m.head_weights.shape()) +
                          " does not match spec");
  m.head_bias = detail::find_record(records, "head/bias", path);
  if (m.head_bias.shape() != Shape{m.spec.class_count})
    throw CheckpointError("'" + path + "': head bias shape " + shape_str(m.head_bias.shape()) +
                          " does not match spec");
  return m;
}

/// Load and require a particular architecture.
inline TrainedModel load_checkpoint_as(const std::string& path, const ModelSpec& expected) {
  TrainedModel m = load_checkpoint(path);
  if (m.spec.name != expected.name || m.spec.input_shape != expected.input_shape ||
      m.spec.class_count != expected.class_count || m.spec.layers.size() != expected.layers.size())
    throw CheckpointError("'" + path + "': checkpoint holds spec '" + m.spec.name + "', expected '" + expected.name +
                          "'");
  return m;
}

}  // namespace advedge
