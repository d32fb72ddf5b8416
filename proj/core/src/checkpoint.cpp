#include "seqxrec/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "io.hpp"
#include "seqxrec/rng.hpp"

namespace SEQXREC_NS::pipeline {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'Q', 'X', 'R', 'C', 'K', 'P', '\0'};
constexpr std::size_t kHeaderBytes = 40;

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t offset) {
  T value;
  std::memcpy(&value, in.data() + offset, sizeof(T));
  return value;
}

}  // namespace

const num::Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.tensor;
  throw CheckpointError(CheckpointError::Kind::kMissingTensor, "checkpoint has no tensor '" + name + "'");
}

void save_checkpoint(const std::string& path, const num::ParamList& tensors,
                     const std::map<std::string, std::string>& meta) {
  nlohmann::json manifest = {{"meta", meta}, {"tensors", nlohmann::json::array()}};
  std::string payload;
  for (const auto& [name, t] : tensors) {
    manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
    payload.append(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(Real));
  }
  const std::string text = manifest.dump();
  std::string body = text + payload;
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, sizeof(Real));
  put<std::uint64_t>(out, text.size());
  put<std::uint64_t>(out, payload.size());
  put<std::uint64_t>(out, fnv1a64(body.data(), body.size()));
  io::write_file_atomic(path, out + body);
}

Checkpoint read_checkpoint(const std::string& path) {
  using K = CheckpointError::Kind;
  std::string bytes;
  try {
    bytes = io::read_file(path);
  } catch (const Error& e) {
    throw CheckpointError(K::kIo, e.what());
  }
  if (bytes.size() < kHeaderBytes) throw CheckpointError(K::kTruncated, path + ": truncated header");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError(K::kBadMagic, path + ": not a seqxrec checkpoint");
  const auto version = take<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion)
    throw CheckpointError(K::kVersion, path + ": format version " + std::to_string(version) + ", expected " +
                                           std::to_string(kCheckpointVersion));
  const auto width = take<std::uint32_t>(bytes, 12);
  const auto manifest_bytes = take<std::uint64_t>(bytes, 16);
  const auto payload_bytes = take<std::uint64_t>(bytes, 24);
  const auto digest = take<std::uint64_t>(bytes, 32);
  if (bytes.size() - kHeaderBytes != manifest_bytes + payload_bytes)
    throw CheckpointError(K::kTruncated, path + ": expected " + std::to_string(manifest_bytes + payload_bytes) +
                                             " body bytes, found " + std::to_string(bytes.size() - kHeaderBytes));
  if (fnv1a64(bytes.data() + kHeaderBytes, bytes.size() - kHeaderBytes) != digest)
    throw CheckpointError(K::kDigest, path + ": digest mismatch (file is corrupted)");
  if (width != 4 && width != 8) throw CheckpointError(K::kManifest, path + ": unsupported value width");

  Checkpoint ckpt;
  std::size_t offset = kHeaderBytes + manifest_bytes;
  try {
    const auto manifest = nlohmann::json::parse(bytes.substr(kHeaderBytes, manifest_bytes));
    ckpt.meta = manifest.at("meta").get<std::map<std::string, std::string>>();
    for (const auto& entry : manifest.at("tensors")) {
      const auto shape = entry.at("shape").get<num::Shape>();
      const std::size_t n = num::shape_numel(shape);
      if (offset + n * width > bytes.size())
        throw CheckpointError(K::kTruncated, path + ": payload ends inside tensor " + entry.at("name").get<std::string>());
      std::vector<Real> values(n);
      for (std::size_t i = 0; i < n; ++i)
        values[i] = width == 4 ? static_cast<Real>(take<float>(bytes, offset + 4 * i))
                               : static_cast<Real>(take<double>(bytes, offset + 8 * i));
      offset += n * width;
      ckpt.tensors.push_back({entry.at("name").get<std::string>(), num::Tensor(shape, std::move(values))});
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(K::kManifest, path + ": bad manifest: " + e.what());
  }
  if (offset != bytes.size()) throw CheckpointError(K::kManifest, path + ": payload size disagrees with manifest");
  return ckpt;
}

void load_into(const Checkpoint& ckpt, const num::ParamList& targets) {
  for (const auto& [name, target] : targets) {
    const num::Tensor& src = ckpt.tensor(name);
    if (src.shape() != target.shape())
      throw CheckpointError(CheckpointError::Kind::kShape,
                            "tensor '" + name + "' has shape " + num::shape_string(src.shape()) + " in the checkpoint but " +
                                num::shape_string(target.shape()) + " in the model");
    num::Tensor t = target;
    std::copy(src.values().begin(), src.values().end(), t.values().begin());
  }
}

}  // namespace SEQXREC_NS::pipeline
