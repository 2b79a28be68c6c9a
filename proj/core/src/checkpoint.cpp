// SPDX-License-Identifier: Apache-2.0
#include "gbt/train/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "gbt/error.hpp"

namespace gbt::train {

namespace {

constexpr char kMagic[4] = {'G', 'B', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <class T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void i32(int v) { pod(static_cast<std::int32_t>(v)); }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void ints(const std::vector<int>& v) {
    pod(static_cast<std::uint32_t>(v.size()));
    for (int x : v) i32(x);
  }
  void tensor(const nn::Tensor<float>& t) {
    pod(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) pod(static_cast<std::uint64_t>(d));
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
    bytes.insert(bytes.end(), p, p + t.size() * sizeof(float));
  }

  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  int i32() { return pod<std::int32_t>(); }
  std::string str() {
    const std::uint32_t n = pod<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<int> ints() {
    const std::uint32_t n = pod<std::uint32_t>();
    need(static_cast<std::size_t>(n) * 4);
    std::vector<int> v(n);
    for (auto& x : v) x = i32();
    return v;
  }
  nn::Tensor<float> tensor() {
    const std::uint32_t rank = pod<std::uint32_t>();
    if (rank > 8) throw Error(ErrorCode::kIoError, "corrupt tensor rank");
    nn::Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(pod<std::uint64_t>());
      if (d > (std::size_t{1} << 32)) throw Error(ErrorCode::kIoError, "corrupt tensor dims");
      n *= d;
    }
    need(n * sizeof(float));
    std::vector<float> data(n);
    std::memcpy(data.data(), bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
    return nn::Tensor<float>(std::move(shape), std::move(data));
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::kIoError, "checkpoint truncated");
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

void write_config(Writer& w, const model::ModelConfig& c) {
  w.i32(c.image_size);
  w.i32(c.grid);
  w.i32(c.latent_dim);
  w.i32(c.num_heads);
  w.i32(c.encoder_layers);
  w.i32(c.decoder_layers);
  w.i32(c.harmonic.num_frequencies);
  w.i32(c.harmonic.min_exponent);
  w.i32(static_cast<int>(c.variant));
  w.ints(c.mlp_hidden);
  w.ints(c.stem_channels);
  w.i32(c.ff_multiplier);
  w.pod(c.gamma_init);
}

model::ModelConfig read_config(Reader& r) {
  model::ModelConfig c;
  c.image_size = r.i32();
  c.grid = r.i32();
  c.latent_dim = r.i32();
  c.num_heads = r.i32();
  c.encoder_layers = r.i32();
  c.decoder_layers = r.i32();
  c.harmonic.num_frequencies = r.i32();
  c.harmonic.min_exponent = r.i32();
  const int variant = r.i32();
  if (variant < 0 || variant > static_cast<int>(model::Variant::kSrtStar)) {
    throw Error(ErrorCode::kIoError, "corrupt variant tag");
  }
  c.variant = static_cast<model::Variant>(variant);
  c.mlp_hidden = r.ints();
  c.stem_channels = r.ints();
  c.ff_multiplier = r.i32();
  c.gamma_init = r.pod<double>();
  return c;
}

}  // namespace

Checkpoint make_checkpoint(const model::GbtModel<float>& model, std::uint64_t step,
                           const nn::AdamState<float>* optimizer) {
  Checkpoint c;
  c.config = model.config();
  c.step = step;
  for (const nn::Parameter<float>* p : model.params().all()) c.tensors.push_back({p->name, p->value});
  if (optimizer) c.optimizer = *optimizer;
  return c;
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  Writer w;
  w.bytes.insert(w.bytes.end(), std::begin(kMagic), std::end(kMagic));
  w.pod(kCheckpointVersion);
  write_config(w, ckpt.config);
  w.pod(ckpt.step);
  w.pod(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const NamedTensor& t : ckpt.tensors) {
    w.str(t.name);
    w.tensor(t.tensor);
  }
  w.pod(static_cast<std::uint8_t>(ckpt.optimizer.has_value()));
  if (ckpt.optimizer) {
    const nn::AdamState<float>& a = *ckpt.optimizer;
    w.pod(static_cast<std::int64_t>(a.step_count));
    w.pod(a.config.lr);
    w.pod(a.config.beta1);
    w.pod(a.config.beta2);
    w.pod(a.config.eps);
    w.pod(static_cast<std::uint32_t>(a.first_moment.size()));
    for (std::size_t i = 0; i < a.first_moment.size(); ++i) {
      w.tensor(a.first_moment[i]);
      w.tensor(a.second_moment.at(i));
    }
  }
  return std::move(w.bytes);
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::kBadMagic, "not a GBT1 checkpoint");
  }
  const std::vector<std::uint8_t> body(bytes.begin() + 4, bytes.end());
  Reader r(body);
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.config = read_config(r);
  c.step = r.pod<std::uint64_t>();
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str();
    t.tensor = r.tensor();
    c.tensors.push_back(std::move(t));
  }
  if (r.pod<std::uint8_t>() != 0) {
    nn::AdamState<float> a;
    a.step_count = r.pod<std::int64_t>();
    a.config.lr = r.pod<double>();
    a.config.beta1 = r.pod<double>();
    a.config.beta2 = r.pod<double>();
    a.config.eps = r.pod<double>();
    const auto n = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
      a.first_moment.push_back(r.tensor());
      a.second_moment.push_back(r.tensor());
    }
    c.optimizer = std::move(a);
  }
  if (!r.done()) throw Error(ErrorCode::kIoError, "trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::vector<std::uint8_t> bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, path.string() + ": write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, path.string() + ": cannot open");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

void apply_checkpoint(const Checkpoint& ckpt, model::GbtModel<float>& model, nn::AdamState<float>* optimizer) {
  if (!(ckpt.config == model.config())) {
    throw Error(ErrorCode::kShapeMismatchOnLoad, "checkpoint model config differs from the target model");
  }
  const std::vector<nn::Parameter<float>*> params = model.params().all();
  if (params.size() != ckpt.tensors.size()) {
    throw Error(ErrorCode::kShapeMismatchOnLoad, "parameter count differs");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedTensor& t = ckpt.tensors[i];
    if (t.name != params[i]->name || t.tensor.shape() != params[i]->value.shape()) {
      throw Error(ErrorCode::kShapeMismatchOnLoad, "tensor '" + t.name + "' does not match '" + params[i]->name + "'");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = ckpt.tensors[i].tensor;
  if (optimizer && ckpt.optimizer) *optimizer = *ckpt.optimizer;
}

}  // namespace gbt::train
