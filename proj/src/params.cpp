#include "m2m/params.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace m2m::diff {

namespace {

constexpr char kMagic[4] = {'M', '2', 'M', 'P'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_le(std::ofstream& out, T v) {
  // this codebase targets little-endian hosts; write the raw representation
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_le(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("param container truncated");
  return v;
}

}  // namespace

void ParamPack::add(std::string name, Tensor t) {
  if (find(name)) throw std::invalid_argument("duplicate parameter: " + name);
  entries_.emplace_back(std::move(name), std::move(t));
}

Tensor* ParamPack::find(std::string_view name) {
  for (auto& [n, t] : entries_)
    if (n == name) return &t;
  return nullptr;
}

const Tensor* ParamPack::find(std::string_view name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return &t;
  return nullptr;
}

std::vector<Tensor> ParamPack::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [n, t] : entries_) out.push_back(t);
  return out;
}

void ParamPack::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(kMagic, 4);
  write_le<std::uint32_t>(out, kVersion);
  for (const auto& [name, t] : entries_) {
    if (name.size() > 0xffff)
      throw std::invalid_argument("parameter name too long: " + name);
    write_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (int e : t.shape()) write_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.data().size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

ParamPack ParamPack::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("bad param container magic: " + path);
  std::uint32_t version = read_le<std::uint32_t>(in);
  if (version != kVersion)
    throw std::runtime_error("unsupported param container version");
  ParamPack pack;
  while (true) {
    std::uint16_t name_len;
    in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    if (in.eof()) break;
    if (!in) throw std::runtime_error("param container truncated");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint8_t rank = read_le<std::uint8_t>(in);
    Shape shape(rank);
    std::int64_t n = 1;
    for (int i = 0; i < rank; ++i) {
      shape[i] = static_cast<int>(read_le<std::uint32_t>(in));
      n *= shape[i];
    }
    std::vector<double> data(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw std::runtime_error("param container truncated");
    pack.add(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
  }
  return pack;
}

void ParamPack::assign_from(const ParamPack& src) {
  for (auto& [name, t] : entries_) {
    const Tensor* s = src.find(name);
    if (!s) throw std::runtime_error("missing parameter: " + name);
    if (s->shape() != t.shape())
      throw std::runtime_error("parameter shape mismatch: " + name);
    auto dst = t.raw_data();
    auto sd = s->data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = sd[i];
  }
}

}  // namespace m2m::diff
