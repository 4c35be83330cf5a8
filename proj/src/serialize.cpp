#include "mixformer/serialize.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace mixformer {

namespace {

constexpr char kMagic[4] = {'M', 'I', 'X', 'F'};

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("weight file truncated");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

float get_f32(std::istream& is) {
  uint32_t bits = get_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  put_u32(os, kWeightFileVersion);
  put_u32(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<uint32_t>(tensor.rank()));
    for (int64_t d : tensor.shape()) put_u32(os, static_cast<uint32_t>(d));
    for (double v : tensor.data()) put_f32(os, static_cast<float>(v));
  }
  if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

std::vector<NamedTensor> load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "' for reading");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("'" + path + "' is not a MIXF tensor file");
  }
  uint32_t version = get_u32(is);
  if (version != kWeightFileVersion) {
    throw std::runtime_error("unsupported weight file version " + std::to_string(version));
  }
  uint32_t count = get_u32(is);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (uint32_t t = 0; t < count; ++t) {
    uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint32_t rank = get_u32(is);
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int64_t>(get_u32(is));
    std::vector<double> values(static_cast<size_t>(shape_numel(shape)));
    for (double& v : values) v = static_cast<double>(get_f32(is));
    if (!is) throw std::runtime_error("weight file truncated in tensor '" + name + "'");
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return out;
}

void save_tensor(const std::string& path, const std::string& name, const Tensor& tensor) {
  save_tensors(path, {{name, tensor}});
}

Tensor load_single_tensor(const std::string& path, std::string* name) {
  std::vector<NamedTensor> all = load_tensors(path);
  if (all.size() != 1) {
    throw std::runtime_error("'" + path + "' holds " + std::to_string(all.size()) +
                             " tensors, expected exactly one");
  }
  if (name) *name = all[0].first;
  return all[0].second;
}

void save_model_weights(Model& model, const std::string& path) {
  ParamRefs refs = model.param_refs();
  std::vector<NamedTensor> tensors;
  tensors.reserve(refs.params.size() + refs.buffers.size());
  for (const Parameter* p : refs.params) tensors.emplace_back(p->name, p->value());
  for (const auto& [name, buf] : refs.buffers) tensors.emplace_back(name, *buf);
  save_tensors(path, tensors);
}

void load_model_weights(Model& model, const std::string& path) {
  std::vector<NamedTensor> stored = load_tensors(path);
  std::map<std::string, Tensor> by_name;
  for (auto& [name, tensor] : stored) {
    if (!by_name.emplace(name, tensor).second) {
      throw std::runtime_error("duplicate tensor '" + name + "' in '" + path + "'");
    }
  }
  ParamRefs refs = model.param_refs();
  size_t expected = refs.params.size() + refs.buffers.size();
  if (by_name.size() != expected) {
    throw std::runtime_error("'" + path + "' holds " + std::to_string(by_name.size()) +
                             " tensors, model expects " + std::to_string(expected));
  }
  auto take = [&](const std::string& name, const Shape& shape) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw std::runtime_error("weight file is missing tensor '" + name + "'");
    }
    if (it->second.shape() != shape) {
      throw std::runtime_error("tensor '" + name + "' has shape " +
                               shape_str(it->second.shape()) + ", model expects " +
                               shape_str(shape));
    }
    return it->second;
  };
  for (Parameter* p : refs.params) {
    Tensor loaded = take(p->name, p->value().shape());
    std::copy_n(loaded.data().data(), loaded.numel(), p->value_mut().mutable_data());
  }
  for (auto& [name, buf] : refs.buffers) {
    Tensor loaded = take(name, buf->shape());
    std::copy_n(loaded.data().data(), loaded.numel(), buf->mutable_data());
  }
}

}  // namespace mixformer
