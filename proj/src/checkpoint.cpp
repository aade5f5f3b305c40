#include "ssm/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ssm {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'S', 'M', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::invalid_argument("checkpoint truncated");
  return v;
}

uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    default: throw std::invalid_argument("checkpoint: unsupported tensor dtype");
  }
}

torch::ScalarType dtype_of(uint8_t code) {
  switch (code) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    default: throw std::invalid_argument("checkpoint: unknown dtype code " + std::to_string(code));
  }
}

}  // namespace

void Checkpoint::put(const std::string& name, const torch::Tensor& t) {
  auto stored = t.detach().to(torch::kCPU).clone().contiguous();
  auto it = std::find_if(tensors_.begin(), tensors_.end(), [&](const auto& e) { return e.first == name; });
  if (it != tensors_.end()) {
    it->second = stored;
  } else {
    tensors_.emplace_back(name, stored);
  }
}

bool Checkpoint::contains(const std::string& name) const {
  return std::any_of(tensors_.begin(), tensors_.end(), [&](const auto& e) { return e.first == name; });
}

const torch::Tensor& Checkpoint::get(const std::string& name) const {
  auto it = std::find_if(tensors_.begin(), tensors_.end(), [&](const auto& e) { return e.first == name; });
  if (it == tensors_.end()) throw std::invalid_argument("checkpoint has no tensor '" + name + "'");
  return it->second;
}

const torch::Tensor& Checkpoint::get(const std::string& name, torch::IntArrayRef expected_shape) const {
  const auto& t = get(name);
  if (t.sizes() != expected_shape) {
    throw std::invalid_argument("checkpoint tensor '" + name + "' has a different shape than expected");
  }
  return t;
}

void Checkpoint::put_module(const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& p : module.named_parameters(true)) put(prefix + "." + p.key(), p.value());
  for (const auto& b : module.named_buffers(true)) put(prefix + "." + b.key(), b.value());
}

void Checkpoint::load_module(const std::string& prefix, torch::nn::Module& module) const {
  torch::NoGradGuard no_grad;
  for (auto& p : module.named_parameters(true)) {
    const auto& src = get(prefix + "." + p.key(), p.value().sizes());
    p.value().copy_(src);
  }
  for (auto& b : module.named_buffers(true)) {
    const auto& src = get(prefix + "." + b.key(), b.value().sizes());
    b.value().copy_(src);
  }
}

void Checkpoint::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    write_pod<uint32_t>(out, kFormatVersion);
    const std::string meta_text = meta.dump();
    write_pod<uint64_t>(out, meta_text.size());
    out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
    write_pod<uint32_t>(out, static_cast<uint32_t>(tensors_.size()));
    for (const auto& [name, t] : tensors_) {
      write_pod<uint32_t>(out, static_cast<uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_pod<uint8_t>(out, dtype_code(t.scalar_type()));
      write_pod<uint32_t>(out, static_cast<uint32_t>(t.dim()));
      for (int64_t d : t.sizes()) write_pod<int64_t>(out, d);
      out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
    }
    if (!out) throw std::runtime_error("write failed for checkpoint " + path.string());
  }
  fs::rename(tmp, path);
}

Checkpoint Checkpoint::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::invalid_argument(path.string() + " is not a checkpoint file");
  }
  const auto version = read_pod<uint32_t>(in);
  if (version != kFormatVersion) {
    throw std::invalid_argument("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto meta_len = read_pod<uint64_t>(in);
  std::string meta_text(meta_len, '\0');
  in.read(meta_text.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw std::invalid_argument("checkpoint truncated");
  ckpt.meta = nlohmann::json::parse(meta_text);
  const auto count = read_pod<uint32_t>(in);
  for (uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto dtype = dtype_of(read_pod<uint8_t>(in));
    const auto rank = read_pod<uint32_t>(in);
    std::vector<int64_t> dims(rank);
    for (auto& d : dims) d = read_pod<int64_t>(in);
    auto t = torch::empty(dims, dtype);
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
    if (!in) throw std::invalid_argument("checkpoint truncated in tensor '" + name + "'");
    ckpt.tensors_.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

}  // namespace ssm
