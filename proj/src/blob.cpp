#include "clare/blob.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "blob format assumes a little-endian host");

namespace clare {

namespace {

constexpr char kMagic[8] = {'C', 'L', 'B', 'L', 'O', 'B', '0', '1'};

template <typename T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw CheckpointError("corrupt blob (truncated): " + path);
    return v;
}

}  // namespace

void write_blob(const std::string& path, const std::vector<BlobEntry>& entries) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open blob for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        if (static_cast<std::int64_t>(e.values.size()) != numel(e.shape))
            throw CheckpointError("blob entry '" + e.name + "': value count does not match shape");
        put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        put<std::uint8_t>(out, static_cast<std::uint8_t>(e.dtype));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
        for (int d : e.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        if (e.dtype == BlobDType::f32) {
            std::vector<float> tmp(e.values.begin(), e.values.end());
            out.write(reinterpret_cast<const char*>(tmp.data()),
                      static_cast<std::streamsize>(tmp.size() * sizeof(float)));
        } else {
            out.write(reinterpret_cast<const char*>(e.values.data()),
                      static_cast<std::streamsize>(e.values.size() * sizeof(double)));
        }
    }
    if (!out) throw CheckpointError("write failed: " + path);
}

std::vector<BlobEntry> read_blob(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open blob: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw CheckpointError("bad blob magic (wrong format or version): " + path);
    const auto count = take<std::uint32_t>(in, path);
    std::vector<BlobEntry> entries;
    entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        BlobEntry e;
        const auto name_len = take<std::uint32_t>(in, path);
        if (name_len > 4096) throw CheckpointError("corrupt blob (name length): " + path);
        e.name.resize(name_len);
        in.read(e.name.data(), name_len);
        if (!in) throw CheckpointError("corrupt blob (truncated): " + path);
        const auto dtype = take<std::uint8_t>(in, path);
        if (dtype > 1) throw CheckpointError("corrupt blob (dtype tag): " + path);
        e.dtype = static_cast<BlobDType>(dtype);
        const auto ndim = take<std::uint32_t>(in, path);
        if (ndim > 8) throw CheckpointError("corrupt blob (rank): " + path);
        e.shape.resize(ndim);
        for (auto& d : e.shape) d = static_cast<int>(take<std::uint32_t>(in, path));
        const std::int64_t n = numel(e.shape);
        if (n < 0 || n > (1 << 28)) throw CheckpointError("corrupt blob (element count): " + path);
        e.values.resize(static_cast<std::size_t>(n));
        if (e.dtype == BlobDType::f32) {
            std::vector<float> tmp(static_cast<std::size_t>(n));
            in.read(reinterpret_cast<char*>(tmp.data()),
                    static_cast<std::streamsize>(tmp.size() * sizeof(float)));
            if (!in) throw CheckpointError("corrupt blob (truncated): " + path);
            for (std::size_t j = 0; j < tmp.size(); ++j) e.values[j] = tmp[j];
        } else {
            in.read(reinterpret_cast<char*>(e.values.data()),
                    static_cast<std::streamsize>(e.values.size() * sizeof(double)));
            if (!in) throw CheckpointError("corrupt blob (truncated): " + path);
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace clare
