#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pma/tensor.hpp"

namespace pma {

// PMAT tensor container:
//   magic "PMAT", u32 LE version=1, u8 dtype (1=f32, 2=u32), u8 ndim,
//   2 zero pad bytes, ndim x u64 LE extents, raw row-major LE payload.
void write_tensor(const std::filesystem::path& file, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& file);

void write_labels(const std::filesystem::path& file,
                  const std::vector<std::uint32_t>& labels);
std::vector<std::uint32_t> read_labels(const std::filesystem::path& file);

// Dataset directory: inputs.pmat + labels.pmat.
void write_dataset(const std::filesystem::path& dir, const LabeledBatch& batch);
LabeledBatch read_dataset(const std::filesystem::path& dir);
Tensor read_dataset_inputs(const std::filesystem::path& dir);

// Writes via a temp file in the same directory, then renames into place.
void atomic_write_file(const std::filesystem::path& file, std::string_view bytes);
std::string read_file(const std::filesystem::path& file);

}  // namespace pma
