#pragma once

#include <string>
#include <vector>

#include "clare/tensor.hpp"

namespace clare {

// Corrupt/incompatible serialized state; maps to exit code 4 in the CLI.
struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class BlobDType : unsigned char { f32 = 0, f64 = 1 };

// One named tensor in a blob file. Values are held as doubles in memory; the
// dtype tag only controls on-disk width (f32 storage is lossy by design).
struct BlobEntry {
    std::string name;
    BlobDType dtype = BlobDType::f32;
    Shape shape;
    std::vector<double> values;
};

// Binary layout (little-endian throughout):
//   magic "CLBLOB01", u32 entry count, then per entry:
//   u32 name length, name bytes, u8 dtype, u32 ndim, u32 dims..., raw values.
void write_blob(const std::string& path, const std::vector<BlobEntry>& entries);
std::vector<BlobEntry> read_blob(const std::string& path);

}  // namespace clare
