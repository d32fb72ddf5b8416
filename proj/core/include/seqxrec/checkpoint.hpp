#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "seqxrec/tensor.hpp"

namespace SEQXREC_NS::pipeline {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  enum class Kind { kIo, kBadMagic, kVersion, kTruncated, kDigest, kMissingTensor, kShape, kManifest };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Named tensors plus string metadata. Layout (little-endian):
//   magic "SQXRCKP\0" | u32 version | u32 value bytes (4 or 8)
//   u64 manifest bytes | u64 payload bytes | u64 FNV-1a digest of manifest+payload
//   manifest (JSON: meta and the tensor table) | payload (raw values)
struct Checkpoint {
  std::map<std::string, std::string> meta;
  num::ParamList tensors;

  const num::Tensor& tensor(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const num::ParamList& tensors,
                     const std::map<std::string, std::string>& meta = {});
Checkpoint read_checkpoint(const std::string& path);

// Copies values by name into `targets`; every target must be present with the
// same shape.
void load_into(const Checkpoint& ckpt, const num::ParamList& targets);

}  // namespace SEQXREC_NS::pipeline
