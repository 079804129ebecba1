#pragma once

#include <filesystem>
#include <string>

#include "cfp/params.hpp"
#include "cfp/tensor.hpp"

// Binary tensor container (.cft):
//   magic   "CFT1"            4 bytes
//   dtype   u8                0 = 32-bit float, little-endian
//   ndim    u8
//   dims    ndim x u32        little-endian
//   payload row-major floats  little-endian, 4 * prod(dims) bytes
// Writes go to a temporary file in the destination directory and are renamed
// into place, so a failed write never leaves a partial output.
//
// Parameter container (.cfp):
//   magic   "CFM1"            4 bytes
//   count   u32               little-endian
//   entry   u32 name_len, name bytes, u64 blob_len, blob (one full .cft image)
namespace cfp::io {

Tensor read_tensor(const std::filesystem::path& path);
void write_tensor(const std::filesystem::path& path, const Tensor& t);

// In-memory codec (used by the parameter container and the tests).
std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::string& bytes);

void save_params(const std::filesystem::path& path, const ModuleParams& params);

// Loads by name into the existing tree; every entry must be present with a
// matching shape, and the file may not contain unknown names.
void load_params(const std::filesystem::path& path, ModuleParams& params);

// Atomic-ish text write (temp + rename), shared by the CLI outputs.
void write_text_file(const std::filesystem::path& path, const std::string& contents);

} // namespace cfp::io
