#include "cutrec/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace cutrec {

using json = nlohmann::json;

const EmbeddingTable& Checkpoint::table(TableRole role) const {
  for (const auto& t : tables)
    if (t.role == role) return t;
  throw std::runtime_error("checkpoint has no table '" + std::string(to_string(role)) + "'");
}

Matrix round_to_float(const Matrix& m) {
  Matrix out = m;
  for (auto& x : out.data()) x = static_cast<double>(static_cast<float>(x));
  return out;
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_matrix(std::ostream& out, const Matrix& m) {
  for (double x : m.data()) {
    const auto f = static_cast<float>(x);
    put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
}

Matrix get_matrix(std::istream& in, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (auto& x : m.data()) x = static_cast<double>(std::bit_cast<float>(get_u32(in)));
  return m;
}

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  json header = ckpt.meta;
  header["format_version"] = kCheckpointVersion;
  json tables = json::array();
  for (const auto& t : ckpt.tables)
    tables.push_back({{"role", std::string(to_string(t.role))},
                      {"rows", t.values.rows()},
                      {"dim", t.values.cols()}});
  header["tables"] = tables;
  if (ckpt.transform_weight) {
    if (!ckpt.transform_bias || ckpt.transform_bias->cols() != ckpt.transform_weight->rows())
      throw std::invalid_argument("checkpoint transform bias missing or mis-shaped");
    header["transform"] = {{"rows", ckpt.transform_weight->rows()},
                           {"cols", ckpt.transform_weight->cols()}};
  } else {
    header.erase("transform");
  }
  const std::string text = header.dump();
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : ckpt.tables) put_matrix(out, t.values);
  if (ckpt.transform_weight) {
    put_matrix(out, *ckpt.transform_weight);
    put_matrix(out, *ckpt.transform_bias);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint");
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  write_checkpoint(ckpt, out);
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, "CUTCKPT", 7) != 0)
    throw std::runtime_error("not a checkpoint (bad magic)");
  if (magic[7] != kCheckpointMagic[7])
    throw std::runtime_error(std::string("checkpoint version mismatch: file is CUTCKPT") + magic[7] +
                             ", expected CUTCKPT1");
  const auto len = get_u32(in);
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw std::runtime_error("checkpoint header truncated");
  json header;
  try {
    header = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (header.value("format_version", 0) != kCheckpointVersion)
    throw std::runtime_error("checkpoint version mismatch: header format_version " +
                             header.value("format_version", json(0)).dump() + ", expected " +
                             std::to_string(kCheckpointVersion));
  Checkpoint ckpt;
  for (const auto& t : header.at("tables")) {
    EmbeddingTable table;
    table.role = table_role_from_string(t.at("role").get<std::string>());
    table.values = get_matrix(in, t.at("rows").get<std::size_t>(), t.at("dim").get<std::size_t>());
    ckpt.tables.push_back(std::move(table));
  }
  if (header.contains("transform")) {
    const auto rows = header["transform"].at("rows").get<std::size_t>();
    const auto cols = header["transform"].at("cols").get<std::size_t>();
    ckpt.transform_weight = get_matrix(in, rows, cols);
    ckpt.transform_bias = get_matrix(in, 1, rows);
  }
  header.erase("tables");
  header.erase("transform");
  header.erase("format_version");
  ckpt.meta = std::move(header);
  return ckpt;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace cutrec
