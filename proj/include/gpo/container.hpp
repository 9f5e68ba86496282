#pragma once

#include <string>

#include "gpo/tensor.hpp"

namespace gpo::io {

using ad::Tensor;

// Tensor container format: magic "GPOT", version u32 = 1, dtype u8 (1 = f64),
// rank u8, extents as u64, row-major f64 payload, all little-endian, then a
// trailing CRC32 of every preceding byte. Read errors carry the byte offset
// of the first inconsistency and the file name.
void write_gpot(const std::string& path, const Tensor& t);
Tensor read_gpot(const std::string& path);

// Human-readable sidecar lines ("key = value"), used for provenance.
void write_text(const std::string& path, const std::string& body);
std::string read_text(const std::string& path);

}  // namespace gpo::io
