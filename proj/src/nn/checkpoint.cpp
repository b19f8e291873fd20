#include "hi/nn/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "hi/core/error.hpp"

namespace hi::nn {
namespace {

constexpr char kMagic[] = "HICKPT\n";

template <typename T>
void write_le(std::ostream& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.put(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

template <typename T>
T read_le(std::istream& in) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == EOF) throw Error(ErrorCode::kIo, "truncated checkpoint");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<T>(v);
}

std::string read_bytes(std::istream& in, std::uint64_t n) {
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw Error(ErrorCode::kIo, "truncated checkpoint");
  }
  return s;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorCode::kIo, "cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic) - 1);
    write_le<std::uint32_t>(out, kVersion);
    const std::string head = header.dump();
    write_le<std::uint64_t>(out, head.size());
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(blobs.size()));
    for (const auto& [name, bytes] : blobs) {
      write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_le<std::uint64_t>(out, bytes.size());
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    if (!out) throw Error(ErrorCode::kIo, "failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open checkpoint " + path.string());
  if (read_bytes(in, sizeof(kMagic) - 1) != kMagic) {
    throw Error(ErrorCode::kValidation, path.string() + " is not a checkpoint container");
  }
  const auto version = read_le<std::uint32_t>(in);
  if (version != kVersion) {
    throw Error(ErrorCode::kValidation, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.header = nlohmann::json::parse(read_bytes(in, read_le<std::uint64_t>(in)));
  const auto count = read_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = read_bytes(in, read_le<std::uint32_t>(in));
    ckpt.blobs[name] = read_bytes(in, read_le<std::uint64_t>(in));
  }
  return ckpt;
}

void Checkpoint::put_module(const std::string& name, const torch::nn::Module& module) {
  torch::serialize::OutputArchive archive;
  module.save(archive);
  std::ostringstream out;
  archive.save_to(out);
  blobs[name] = out.str();
}

void Checkpoint::get_module(const std::string& name, torch::nn::Module& module) const {
  const auto it = blobs.find(name);
  if (it == blobs.end()) throw Error(ErrorCode::kValidation, "checkpoint lacks module " + name);
  std::istringstream in(it->second);
  torch::serialize::InputArchive archive;
  archive.load_from(in);
  module.load(archive);
}

void Checkpoint::put_optimizer(const std::string& name, const torch::optim::Optimizer& optimizer) {
  torch::serialize::OutputArchive archive;
  optimizer.save(archive);
  std::ostringstream out;
  archive.save_to(out);
  blobs[name] = out.str();
}

void Checkpoint::get_optimizer(const std::string& name, torch::optim::Optimizer& optimizer) const {
  const auto it = blobs.find(name);
  if (it == blobs.end()) throw Error(ErrorCode::kValidation, "checkpoint lacks optimizer " + name);
  std::istringstream in(it->second);
  torch::serialize::InputArchive archive;
  archive.load_from(in);
  optimizer.load(archive);
}

}  // namespace hi::nn
