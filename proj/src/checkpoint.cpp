#include "lingo/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace lingo {

namespace {

constexpr char kMagic[8] = {'L', 'N', 'G', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& f, T& v) {
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw CheckpointError("checkpoint file truncated");
}

}  // namespace

void save_checkpoint(const ParamStore& store, const std::string& path,
                     std::uint64_t config_hash) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot write checkpoint: " + path);
  f.write(kMagic, sizeof(kMagic));
  write_pod(f, kVersion);
  write_pod(f, config_hash);
  write_pod(f, static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Param& p = store[i];
    write_pod(f, static_cast<std::uint32_t>(p.name.size()));
    f.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_pod(f, static_cast<std::uint8_t>(p.trainable ? 1 : 0));
    write_pod(f, static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape) write_pod(f, d);
    f.write(reinterpret_cast<const char*>(p.value.data()),
            static_cast<std::streamsize>(p.value.v.size() * sizeof(double)));
  }
  if (!f) throw CheckpointError("error while writing checkpoint: " + path);
}

std::uint64_t checkpoint_config_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot read checkpoint: " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("not a checkpoint file: " + path);
  std::uint32_t version = 0;
  read_pod(f, version);
  if (version != kVersion)
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  std::uint64_t hash = 0;
  read_pod(f, hash);
  return hash;
}

void load_checkpoint(ParamStore& store, const std::string& path,
                     std::uint64_t expected_config_hash) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot read checkpoint: " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("not a checkpoint file: " + path);
  std::uint32_t version = 0;
  read_pod(f, version);
  if (version != kVersion)
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  std::uint64_t hash = 0;
  read_pod(f, hash);
  if (hash != expected_config_hash)
    throw CheckpointError(
        "checkpoint was produced under a different configuration");
  std::uint32_t count = 0;
  read_pod(f, count);
  if (count != store.size())
    throw CheckpointError("checkpoint holds " + std::to_string(count) +
                          " tensors, expected " +
                          std::to_string(store.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = 0;
    read_pod(f, name_len);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    std::uint8_t trainable = 0;
    read_pod(f, trainable);
    std::uint32_t rank = 0;
    read_pod(f, rank);
    std::vector<std::int64_t> shape(rank);
    for (auto& d : shape) read_pod(f, d);

    Param& p = store[i];
    if (p.name != name)
      throw CheckpointError("tensor " + std::to_string(i) + " is '" + name +
                            "', expected '" + p.name + "'");
    if (p.value.shape != shape)
      throw CheckpointError("tensor '" + name + "' has shape " +
                            Tensor(shape).shape_str() + ", expected " +
                            p.value.shape_str());
    f.read(reinterpret_cast<char*>(p.value.data()),
           static_cast<std::streamsize>(p.value.v.size() * sizeof(double)));
    if (!f) throw CheckpointError("checkpoint file truncated");
  }
}

}  // namespace lingo
