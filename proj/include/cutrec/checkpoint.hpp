#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "cutrec/backbone.hpp"
#include "json.hpp"

namespace cutrec {

// Binary container:
//   "CUTCKPT1"
//   uint32 LE header length, then that many bytes of JSON header
//   each table as row-major float32 LE, in header order
//   (if the header has "transform") W row-major then b, float32 LE
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();  // hyperparameters, backbone, step, ...
  std::vector<EmbeddingTable> tables;
  std::optional<Matrix> transform_weight;
  std::optional<Matrix> transform_bias;  // 1 x dim

  const EmbeddingTable& table(TableRole role) const;
};

inline constexpr char kCheckpointMagic[8] = {'C', 'U', 'T', 'C', 'K', 'P', 'T', '1'};
inline constexpr int kCheckpointVersion = 1;

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out);
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(std::istream& in);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Rounds every entry to float32 precision, so values survive a
// checkpoint round trip exactly.
Matrix round_to_float(const Matrix& m);

}  // namespace cutrec
