#include "pma/io.hpp"

#include <cstring>
#include <fstream>

#include "pma/error.hpp"

namespace pma {

namespace {

constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kDtypeU32 = 2;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(in[pos++])) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::string& in, std::size_t& pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(in[pos++])) << (8 * i);
  return v;
}

std::string encode_container(std::uint8_t dtype, const std::vector<std::size_t>& shape,
                             const void* payload, std::size_t payload_bytes) {
  std::string out;
  out.reserve(16 + 8 * shape.size() + payload_bytes);
  out += "PMAT";
  put_u32(out, 1);
  out.push_back(static_cast<char>(dtype));
  out.push_back(static_cast<char>(shape.size()));
  out.push_back(0);
  out.push_back(0);
  for (std::size_t e : shape) put_u64(out, e);
  // Values are serialized per element so the on-disk bytes are LE regardless
  // of host order.
  const auto* src = static_cast<const std::uint8_t*>(payload);
  std::size_t n = payload_bytes / 4;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t v;
    std::memcpy(&v, src + 4 * i, 4);
    put_u32(out, v);
  }
  return out;
}

struct RawContainer {
  std::uint8_t dtype;
  std::vector<std::size_t> shape;
  std::vector<std::uint32_t> words;
};

RawContainer decode_container(const std::filesystem::path& file) {
  std::string in = read_file(file);
  if (in.size() < 12 || in.compare(0, 4, "PMAT") != 0) {
    throw Error(ErrorCode::io, file.string() + ": not a PMAT container");
  }
  std::size_t pos = 4;
  std::uint32_t version = get_u32(in, pos);
  if (version != 1) {
    throw Error(ErrorCode::io, file.string() + ": unsupported PMAT version " +
                                   std::to_string(version));
  }
  RawContainer c;
  c.dtype = static_cast<std::uint8_t>(in[pos++]);
  std::size_t ndim = static_cast<std::uint8_t>(in[pos++]);
  pos += 2;  // pad
  if (in.size() < pos + 8 * ndim) {
    throw Error(ErrorCode::io, file.string() + ": truncated PMAT header");
  }
  c.shape.resize(ndim);
  for (std::size_t i = 0; i < ndim; ++i) c.shape[i] = static_cast<std::size_t>(get_u64(in, pos));
  std::size_t n = shape_numel(c.shape);
  if (in.size() != pos + 4 * n) {
    throw Error(ErrorCode::io, file.string() + ": payload length mismatch");
  }
  c.words.resize(n);
  for (std::size_t i = 0; i < n; ++i) c.words[i] = get_u32(in, pos);
  return c;
}

}  // namespace

void write_tensor(const std::filesystem::path& file, const Tensor& t) {
  atomic_write_file(file, encode_container(kDtypeF32, t.shape(), t.data(),
                                           t.numel() * sizeof(float)));
}

Tensor read_tensor(const std::filesystem::path& file) {
  RawContainer c = decode_container(file);
  if (c.dtype != kDtypeF32) {
    throw Error(ErrorCode::io, file.string() + ": expected f32 container");
  }
  std::vector<float> data(c.words.size());
  std::memcpy(data.data(), c.words.data(), 4 * c.words.size());
  return Tensor::from_data(std::move(c.shape), std::move(data));
}

void write_labels(const std::filesystem::path& file,
                  const std::vector<std::uint32_t>& labels) {
  std::vector<std::size_t> shape{labels.size()};
  atomic_write_file(file, encode_container(kDtypeU32, shape, labels.data(),
                                           labels.size() * 4));
}

std::vector<std::uint32_t> read_labels(const std::filesystem::path& file) {
  RawContainer c = decode_container(file);
  if (c.dtype != kDtypeU32) {
    throw Error(ErrorCode::io, file.string() + ": expected u32 container");
  }
  return std::move(c.words);
}

void write_dataset(const std::filesystem::path& dir, const LabeledBatch& batch) {
  std::filesystem::create_directories(dir);
  write_tensor(dir / "inputs.pmat", batch.inputs);
  write_labels(dir / "labels.pmat", batch.labels);
}

LabeledBatch read_dataset(const std::filesystem::path& dir) {
  LabeledBatch b;
  b.inputs = read_tensor(dir / "inputs.pmat");
  b.labels = read_labels(dir / "labels.pmat");
  if (b.inputs.ndim() < 1 || b.inputs.extent(0) != b.labels.size()) {
    throw Error(ErrorCode::io, dir.string() + ": inputs/labels count mismatch");
  }
  return b;
}

Tensor read_dataset_inputs(const std::filesystem::path& dir) {
  return read_tensor(dir / "inputs.pmat");
}

void atomic_write_file(const std::filesystem::path& file, std::string_view bytes) {
  std::filesystem::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot open " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::io, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, file, ec);
  if (ec) throw Error(ErrorCode::io, "rename " + tmp.string() + " -> " + file.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + file.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace pma
