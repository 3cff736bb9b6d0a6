#include "randla/network.hpp"
#include "randla/numeric.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace randla {

namespace {

constexpr char kMagic[4] = {'R', 'L', 'N', 'T'};
constexpr std::uint8_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw LoadError(std::string("checkpoint truncated in ") + what);
  return value;
}

Tensor scalar_tensor(Real value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return Tensor({1}, std::move(m));
}

Tensor list_tensor(const std::vector<int>& values) {
  Matrix m(1, static_cast<Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) m(0, static_cast<Index>(i)) = values[i];
  return Tensor({static_cast<Index>(values.size())}, std::move(m));
}

}  // namespace

void write_tensors(std::ostream& out, const NamedTensors& tensors) {
  out.write(kMagic, 4);
  put<std::uint8_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    require(tensor.numel() == shape_numel(tensor.shape), "checkpoint: tensor '" + name + "' has inconsistent shape");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.shape.size()));
    for (Index d : tensor.shape) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(tensor.values.data()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
  }
}

NamedTensors read_tensors(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw LoadError("checkpoint: bad magic");
  const auto version = get<std::uint8_t>(in, "header");
  if (version != kVersion) throw LoadError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = get<std::uint32_t>(in, "header");
  NamedTensors tensors;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_length = get<std::uint32_t>(in, "name");
    if (name_length > (1u << 16)) throw LoadError("checkpoint: implausible name length");
    std::string name(name_length, '\0');
    if (!in.read(name.data(), name_length)) throw LoadError("checkpoint truncated in name");
    const auto rank = get<std::uint32_t>(in, name.c_str());
    if (rank == 0 || rank > 8) throw LoadError("checkpoint: tensor '" + name + "' has unsupported rank");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto d = get<std::uint64_t>(in, name.c_str());
      if (d > (1ull << 32)) throw LoadError("checkpoint: tensor '" + name + "' has an implausible dimension");
      shape.push_back(static_cast<Index>(d));
    }
    const Index cols = shape.back();
    const Index rows = cols == 0 ? 0 : shape_numel(shape) / cols;
    Matrix values(rank == 1 ? 1 : rows, cols);
    if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double))))
      throw LoadError("checkpoint truncated in payload of '" + name + "'");
    if (!values.allFinite()) throw LoadError("checkpoint: tensor '" + name + "' holds non-finite values");
    tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return tensors;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  const ModelConfig& c = params.config;
  NamedTensors tensors;
  tensors.emplace_back("hparam.d_in", scalar_tensor(c.d_in));
  tensors.emplace_back("hparam.num_classes", scalar_tensor(c.num_classes));
  tensors.emplace_back("hparam.k", scalar_tensor(c.k));
  tensors.emplace_back("hparam.input_width", scalar_tensor(c.input_width));
  tensors.emplace_back("hparam.block_widths", list_tensor(c.block_widths));
  tensors.emplace_back("hparam.decoder_widths", list_tensor(c.resolved_decoder_widths()));
  tensors.emplace_back("hparam.head_widths", list_tensor(c.head_widths));
  tensors.emplace_back("hparam.decimation", scalar_tensor(c.decimation));
  tensors.emplace_back("hparam.block_depth", scalar_tensor(c.block_depth));
  tensors.emplace_back("hparam.locse", scalar_tensor(static_cast<int>(c.locse)));
  tensors.emplace_back("hparam.pooling", scalar_tensor(static_cast<int>(c.pooling)));
  tensors.emplace_back("hparam.sampler", scalar_tensor(static_cast<int>(c.sampler)));
  tensors.emplace_back("hparam.norm", scalar_tensor(static_cast<int>(c.norm)));
  tensors.emplace_back("hparam.dropout", scalar_tensor(c.dropout));
  tensors.emplace_back("hparam.leaky_slope", scalar_tensor(c.leaky_slope));
  for (const auto& [name, tensor] : params.tensors) tensors.emplace_back(name, Tensor(tensor.shape, tensor.values));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write checkpoint " + path.string());
  write_tensors(out, tensors);
  if (!out) throw LoadError("failed writing checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  NamedTensors tensors = read_tensors(in);

  std::map<std::string, Tensor> hparams;
  ModelParams params;
  for (auto& [name, tensor] : tensors) {
    if (name.rfind("hparam.", 0) == 0) hparams.emplace(name.substr(7), std::move(tensor));
    else params.tensors.emplace(name, std::move(tensor));
  }
  auto scalar = [&](const char* key) {
    const auto it = hparams.find(key);
    if (it == hparams.end() || it->second.numel() != 1) throw LoadError(std::string("checkpoint: missing hparam.") + key);
    return it->second.values(0, 0);
  };
  auto integer = [&](const char* key) { return static_cast<int>(std::lround(scalar(key))); };
  auto list = [&](const char* key) {
    const auto it = hparams.find(key);
    if (it == hparams.end()) throw LoadError(std::string("checkpoint: missing hparam.") + key);
    std::vector<int> out;
    for (Index i = 0; i < it->second.numel(); ++i) out.push_back(static_cast<int>(std::lround(it->second.values(0, i))));
    return out;
  };
  ModelConfig& c = params.config;
  c.d_in = integer("d_in");
  c.num_classes = integer("num_classes");
  c.k = integer("k");
  c.input_width = integer("input_width");
  c.block_widths = list("block_widths");
  c.decoder_widths = list("decoder_widths");
  c.head_widths = list("head_widths");
  c.decimation = integer("decimation");
  c.block_depth = integer("block_depth");
  auto enumerated = [&](const char* key, int last) {
    const int v = integer(key);
    if (v < 0 || v > last) throw LoadError(std::string("checkpoint: hparam.") + key + " out of range");
    return v;
  };
  c.locse = static_cast<LocseMode>(enumerated("locse", static_cast<int>(LocseMode::RelDist)));
  c.pooling = static_cast<Pooling>(enumerated("pooling", static_cast<int>(Pooling::Sum)));
  c.sampler = static_cast<LayerSampler>(enumerated("sampler", static_cast<int>(LayerSampler::Farthest)));
  c.norm = static_cast<Normalization>(enumerated("norm", static_cast<int>(Normalization::Channel)));
  c.dropout = scalar("dropout");
  c.leaky_slope = scalar("leaky_slope");
  try {
    for (const auto& spec : parameter_layout(c)) {
      const auto it = params.tensors.find(spec.name);
      if (it == params.tensors.end()) throw LoadError("checkpoint: missing tensor '" + spec.name + "'");
      if (it->second.shape != spec.shape)
        throw LoadError("checkpoint: tensor '" + spec.name + "' has shape " + shape_string(it->second.shape) +
                        ", expected " + shape_string(spec.shape));
    }
  } catch (const ValidationError& e) {
    throw LoadError(std::string("checkpoint: invalid configuration: ") + e.what());
  }
  return params;
}

}  // namespace randla
