#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "qlab/error.hpp"
#include "qlab/nanomodel.hpp"

namespace qlab {

namespace {

constexpr char kMagicDense[4] = {'Q', 'L', 'B', '1'};
constexpr char kMagicQuant[4] = {'Q', 'L', 'Q', '1'};
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeQuant = 1;
const std::string kConfigTensor = "meta.config";

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void name(const std::string& s) {
    if (s.size() > 0xFFFF) throw Error(ErrorKind::FormatError, "tensor name too long");
    le(static_cast<std::uint16_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw Error(ErrorKind::FormatError, "truncated container at byte " + std::to_string(pos_));
  }
  template <typename T>
  T le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  std::string name() {
    const auto n = le<std::uint16_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<std::uint8_t> bytes(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> b(in_.begin() + static_cast<std::ptrdiff_t>(pos_), in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return b;
  }
  void magic(const char (&m)[4]) {
    need(4);
    if (std::memcmp(in_.data(), m, 4) != 0) throw Error(ErrorKind::FormatError, "bad magic, expected " + std::string(m, 4));
    pos_ += 4;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

Matrix config_tensor(const ModelConfig& c) {
  return Matrix(1, 6,
                {static_cast<float>(c.vocab_size), static_cast<float>(c.d_model), static_cast<float>(c.n_layers),
                 static_cast<float>(c.n_heads), static_cast<float>(c.d_ff), static_cast<float>(c.context_length)});
}

ModelConfig config_from(const Matrix& m) {
  if (m.size() != 6) throw Error(ErrorKind::FormatError, "meta.config must hold 6 values");
  auto get = [&](std::size_t i) {
    const float v = m.data()[i];
    if (!(v >= 1.0f) || v != std::floor(v)) throw Error(ErrorKind::FormatError, "meta.config entry is not a count");
    return static_cast<std::size_t>(v);
  };
  ModelConfig c{get(0), get(1), get(2), get(3), get(4), get(5)};
  c.validate();
  return c;
}

void write_dense(Writer& w, const std::string& name, const Matrix& m, bool vector) {
  w.name(name);
  w.le(kDtypeF32);
  if (vector) {
    w.le(std::uint8_t{1});
    w.le(static_cast<std::uint64_t>(m.size()));
  } else {
    w.le(std::uint8_t{2});
    w.le(static_cast<std::uint64_t>(m.rows()));
    w.le(static_cast<std::uint64_t>(m.cols()));
  }
  for (float v : m.data()) w.f32(v);
}

std::pair<std::size_t, std::size_t> read_dims(Reader& r) {
  const auto ndim = r.le<std::uint8_t>();
  if (ndim == 1) return {1, static_cast<std::size_t>(r.le<std::uint64_t>())};
  if (ndim == 2) {
    const auto rows = static_cast<std::size_t>(r.le<std::uint64_t>());
    const auto cols = static_cast<std::size_t>(r.le<std::uint64_t>());
    return {rows, cols};
  }
  throw Error(ErrorKind::FormatError, "unsupported ndim " + std::to_string(ndim));
}

Matrix read_payload(Reader& r, std::size_t rows, std::size_t cols) {
  r.need(rows * cols * 4);
  std::vector<float> data(rows * cols);
  for (float& v : data) {
    v = r.f32();
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteInput, "container payload has non-finite values");
  }
  return Matrix(rows, cols, std::move(data));
}

// Norms and the config record are written as 1-D tensors.
bool is_vector_tensor(const std::string& name) {
  return name == kConfigTensor || (name.size() >= 4 && name.compare(name.size() - 4, 4, "norm") == 0);
}

}  // namespace

std::vector<std::uint8_t> encode_qlb1(const Model& model) {
  model.validate();
  NamedTensorStore all = model.weights;
  all.emplace(kConfigTensor, config_tensor(model.config));
  Writer w;
  w.raw(kMagicDense, 4);
  w.le(static_cast<std::uint32_t>(all.size()));
  for (const auto& [name, m] : all) write_dense(w, name, m, is_vector_tensor(name));
  return w.take();
}

Model decode_qlb1(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kMagicDense);
  const auto count = r.le<std::uint32_t>();
  NamedTensorStore all;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.name();
    if (r.le<std::uint8_t>() != kDtypeF32) throw Error(ErrorKind::FormatError, "QLB1 tensor " + name + " is not f32");
    const auto [rows, cols] = read_dims(r);
    all.emplace(std::move(name), read_payload(r, rows, cols));
  }
  if (!r.done()) throw Error(ErrorKind::FormatError, "trailing bytes after QLB1 tensors");
  auto it = all.find(kConfigTensor);
  if (it == all.end()) throw Error(ErrorKind::FormatError, "QLB1 lacks meta.config");
  Model m;
  m.config = config_from(it->second);
  all.erase(it);
  m.weights = std::move(all);
  m.validate();
  return m;
}

std::vector<std::uint8_t> encode_qlq1(const QuantizedModel& qm) {
  // One sorted namespace over dense and quantized tensors.
  std::map<std::string, int> names;
  for (const auto& [n, m] : qm.dense) names[n] = 0;
  for (const auto& [n, q] : qm.quantized) {
    if (names.count(n)) throw Error(ErrorKind::FormatError, "tensor " + n + " is both dense and quantized");
    names[n] = 1;
  }
  names[kConfigTensor] = 2;

  Writer w;
  w.raw(kMagicQuant, 4);
  w.le(static_cast<std::uint32_t>(names.size()));
  for (const auto& [name, kind] : names) {
    if (kind == 2) {
      write_dense(w, name, config_tensor(qm.config), true);
    } else if (kind == 0) {
      write_dense(w, name, qm.dense.at(name), is_vector_tensor(name));
    } else {
      const QuantizedTensor& q = qm.quantized.at(name);
      w.name(name);
      w.le(kDtypeQuant);
      w.le(std::uint8_t{2});
      w.le(static_cast<std::uint64_t>(q.rows()));
      w.le(static_cast<std::uint64_t>(q.cols()));
      w.le(static_cast<std::uint8_t>(q.bits()));
      w.le(static_cast<std::uint32_t>(q.group_size()));
      w.le(static_cast<std::uint8_t>(q.method()));
      w.le(static_cast<std::uint64_t>(q.packed().size()));
      w.raw(q.packed().data(), q.packed().size());
      w.le(static_cast<std::uint64_t>(q.all_params().size()));
      for (const GridParams& g : q.all_params()) {
        w.f32(g.scale);
        w.f32(static_cast<float>(g.zero_point));
      }
      const auto& s = q.channel_scales();
      w.le(static_cast<std::uint8_t>(s ? 1 : 0));
      if (s)
        for (float v : *s) w.f32(v);
    }
  }
  return w.take();
}

QuantizedModel decode_qlq1(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kMagicQuant);
  const auto count = r.le<std::uint32_t>();
  QuantizedModel qm;
  bool have_config = false;
  std::optional<Method> method;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.name();
    const auto dtype = r.le<std::uint8_t>();
    const auto [rows, cols] = read_dims(r);
    if (dtype == kDtypeF32) {
      Matrix m = read_payload(r, rows, cols);
      if (name == kConfigTensor) {
        qm.config = config_from(m);
        have_config = true;
      } else {
        qm.dense.emplace(std::move(name), std::move(m));
      }
      continue;
    }
    if (dtype != kDtypeQuant) throw Error(ErrorKind::FormatError, "unknown dtype for " + name);
    const int bits = r.le<std::uint8_t>();
    const auto group = static_cast<std::size_t>(r.le<std::uint32_t>());
    const auto m = r.le<std::uint8_t>();
    if (m > 2) throw Error(ErrorKind::FormatError, "unknown method code for " + name);
    if (bits < 2 || bits > 8 || group == 0) throw Error(ErrorKind::FormatError, "bad quantization header for " + name);
    auto packed = r.bytes(static_cast<std::size_t>(r.le<std::uint64_t>()));
    const auto n_groups = static_cast<std::size_t>(r.le<std::uint64_t>());
    r.need(n_groups * 8);
    std::vector<GridParams> params(n_groups);
    for (auto& g : params) {
      g.scale = r.f32();
      const float zp = r.f32();
      if (zp != std::floor(zp)) throw Error(ErrorKind::FormatError, "non-integer zero point in " + name);
      g.zero_point = static_cast<int>(zp);
      g.bits = bits;
    }
    std::optional<std::vector<float>> scales;
    const auto has_scales = r.le<std::uint8_t>();
    if (has_scales > 1) throw Error(ErrorKind::FormatError, "bad channel-scale flag for " + name);
    if (has_scales) {
      r.need(cols * 4);
      scales.emplace(cols);
      for (float& v : *scales) v = r.f32();
    }
    const auto method_code = static_cast<Method>(m);
    if (method && *method != method_code) throw Error(ErrorKind::FormatError, "mixed quantization methods");
    method = method_code;
    qm.quantized.emplace(std::move(name), QuantizedTensor::from_parts(rows, cols, bits, group, method_code,
                                                                      std::move(packed), std::move(params),
                                                                      std::move(scales)));
  }
  if (!r.done()) throw Error(ErrorKind::FormatError, "trailing bytes after QLQ1 tensors");
  if (!have_config) throw Error(ErrorKind::FormatError, "QLQ1 lacks meta.config");
  qm.method = method.value_or(Method::rtn);
  return qm;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

void save_qlb1(const Model& model, const std::filesystem::path& path) { write_bytes(path, encode_qlb1(model)); }
Model load_qlb1(const std::filesystem::path& path) { return decode_qlb1(read_bytes(path)); }
void save_qlq1(const QuantizedModel& qm, const std::filesystem::path& path) { write_bytes(path, encode_qlq1(qm)); }
QuantizedModel load_qlq1(const std::filesystem::path& path) { return decode_qlq1(read_bytes(path)); }

}  // namespace qlab
