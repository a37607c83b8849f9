#include "mscount/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>

#include "mscount/io_util.hpp"

namespace mscount {
namespace {

constexpr std::array<char, 4> kMagic = {'P', 'K', 'C', '1'};

template <typename U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename U>
bool get_le(std::istream& in, U& v) {
  std::array<unsigned char, sizeof(U)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) return false;
  v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return true;
}

[[noreturn]] void truncated(const std::filesystem::path& path) {
  throw std::runtime_error("truncated checkpoint " + path.string());
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  write_atomically(path, [&](std::ostream& out) {
    out.write(kMagic.data(), kMagic.size());
    for (const auto& [name, t] : tensors) {
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      const Shape& s = t.shape();
      put_le<std::uint32_t>(out, 4);
      for (int d : {s.n, s.c, s.h, s.w}) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
      for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  });
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw std::runtime_error("not a PKC1 checkpoint: " + path.string());
  }
  NamedTensors out;
  while (true) {
    std::uint32_t name_len = 0;
    if (!get_le(in, name_len)) {
      if (in.eof() && in.gcount() == 0) break;
      truncated(path);
    }
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) truncated(path);
    std::uint32_t rank = 0;
    if (!get_le(in, rank)) truncated(path);
    if (rank != 4) {
      throw std::runtime_error("checkpoint tensor " + name + " has rank " +
                               std::to_string(rank) + ", expected 4");
    }
    std::array<std::uint64_t, 4> dims{};
    for (auto& d : dims) {
      if (!get_le(in, d)) truncated(path);
      if (d > (1u << 30)) throw std::runtime_error("implausible dimension in " + name);
    }
    const Shape shape{static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                      static_cast<int>(dims[2]), static_cast<int>(dims[3])};
    std::vector<double> values(shape.size());
    for (double& v : values) {
      std::uint64_t bits = 0;
      if (!get_le(in, bits)) truncated(path);
      v = std::bit_cast<double>(bits);
    }
    out.emplace_back(std::move(name), Tensor(shape, std::move(values)));
  }
  return out;
}

void assign_checkpoint(const NamedTensors& loaded, NamedTensors& dest) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : loaded) by_name[name] = &t;
  if (by_name.size() != dest.size()) {
    throw std::runtime_error("checkpoint holds " + std::to_string(by_name.size()) +
                             " tensors, model expects " + std::to_string(dest.size()));
  }
  for (auto& [name, t] : dest) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint lacks tensor " + name);
    const Tensor& src = *it->second;
    if (src.shape() != t.shape()) {
      throw std::runtime_error("checkpoint tensor " + name + " has shape " +
                               src.shape().str() + ", model expects " + t.shape().str());
    }
    const auto s = src.data();
    std::copy(s.begin(), s.end(), t.data().begin());
  }
}

}  // namespace mscount
