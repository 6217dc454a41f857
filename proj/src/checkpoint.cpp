#include "yolors/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>

namespace yolors {

namespace {

constexpr char kMagic[8] = {'Y', 'R', 'S', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

template <class T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, sizeof kMagic);
  write_pod<uint32_t>(out, static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint32_t>(out, static_cast<uint32_t>(t.shape().size()));
    for (int d : t.shape()) write_pod<int32_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(t.values().size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: failed writing " + path);
}

void load_checkpoint(const std::string& path,
                     std::vector<std::pair<std::string, Tensor>>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::string(magic, 8) != std::string(kMagic, 8))
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");

  std::map<std::string, std::pair<Shape, std::vector<double>>> stored;
  const uint32_t count = read_pod<uint32_t>(in, path);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_pod<uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint32_t ndim = read_pod<uint32_t>(in, path);
    Shape shape;
    long long total = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      shape.push_back(read_pod<int32_t>(in, path));
      total *= shape.back();
    }
    std::vector<double> values(static_cast<size_t>(total));
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
    stored.emplace(std::move(name), std::make_pair(std::move(shape), std::move(values)));
  }

  for (auto& [name, t] : params) {
    auto it = stored.find(name);
    if (it == stored.end())
      throw std::runtime_error("checkpoint: " + path + " is missing parameter '" + name + "'");
    if (it->second.first != t.shape())
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file " +
                               shape_str(it->second.first) + " vs model " + shape_str(t.shape()));
    t.values() = it->second.second;
  }
}

}  // namespace yolors
