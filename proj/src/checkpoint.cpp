#include "boxguide/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace boxguide {

namespace {

void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("checkpoint truncated");
  return v;
}

std::string get_string(std::istream& in, std::uint64_t limit) {
  const std::uint64_t n = get_u64(in);
  if (n > limit) throw std::runtime_error("checkpoint corrupt: string length " + std::to_string(n));
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw std::runtime_error("checkpoint truncated");
  return s;
}

}  // namespace

const nn::Matrix* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return &m;
  }
  return nullptr;
}

std::vector<std::pair<std::string, nn::Matrix>> Checkpoint::with_prefix(const std::string& prefix) const {
  std::vector<std::pair<std::string, nn::Matrix>> out;
  for (const auto& [n, m] : tensors) {
    if (n.rfind(prefix, 0) == 0) out.emplace_back(n, m);
  }
  return out;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << kCheckpointMagic << '\n';
  put_u64(out, ckpt.config_text.size());
  out.write(ckpt.config_text.data(), static_cast<std::streamsize>(ckpt.config_text.size()));
  put_u64(out, ckpt.tensors.size());
  for (const auto& [name, m] : ckpt.tensors) {
    put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(out, static_cast<std::uint64_t>(m.rows()));
    put_u64(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(float) * m.size()));
  }
  if (!out) throw std::runtime_error("error writing checkpoint " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::string magic;
  std::getline(in, magic);
  if (magic != kCheckpointMagic) throw std::runtime_error(path + " is not a " + kCheckpointMagic + " file");
  Checkpoint ckpt;
  ckpt.config_text = get_string(in, 1u << 24);
  const std::uint64_t count = get_u64(in);
  if (count > (1u << 20)) throw std::runtime_error("checkpoint corrupt: tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(in, 4096);
    const std::uint64_t rows = get_u64(in), cols = get_u64(in);
    if (rows > (1u << 24) || cols > (1u << 24) || rows * cols > (1ull << 30)) {
      throw std::runtime_error("checkpoint corrupt: tensor " + name + " shape");
    }
    nn::Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(float) * m.size()))) {
      throw std::runtime_error("checkpoint truncated in tensor " + name);
    }
    ckpt.tensors.emplace_back(std::move(name), std::move(m));
  }
  return ckpt;
}

}  // namespace boxguide
