#include "sagan/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "sagan/common.hpp"

namespace sagan::ckpt {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'G', 'A', 'N', 'C', 'K', '1'};

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("checkpoint: truncated file");
    return v;
}

void write_string(std::ofstream& out, const std::string& s) {
    write_pod<uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in, uint64_t limit = 1ull << 30) {
    uint64_t len = read_pod<uint64_t>(in);
    if (len > limit) throw IoError("checkpoint: corrupt string length");
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) throw IoError("checkpoint: truncated file");
    return s;
}

}  // namespace

const Tensor* Archive::find(const std::string& name) const {
    for (const auto& [n, t] : entries)
        if (n == name) return &t;
    return nullptr;
}

void save(const std::string& path, const Archive& archive) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_pod<uint64_t>(out, archive.config_hash);
    write_pod<int64_t>(out, archive.step);
    write_string(out, archive.config_text);
    write_pod<uint32_t>(out, static_cast<uint32_t>(archive.entries.size()));
    for (const auto& [name, t] : archive.entries) {
        write_string(out, name);
        write_pod<uint32_t>(out, static_cast<uint32_t>(t.shape.size()));
        for (int64_t d : t.shape) write_pod<int64_t>(out, d);
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!out) throw IoError("checkpoint: write failed: " + path);
}

Archive load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    Archive a;
    a.config_hash = read_pod<uint64_t>(in);
    a.step = read_pod<int64_t>(in);
    a.config_text = read_string(in);
    uint32_t n = read_pod<uint32_t>(in);
    if (n > 100000) throw IoError("checkpoint: corrupt entry count");
    a.entries.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
        std::string name = read_string(in, 1 << 16);
        uint32_t ndim = read_pod<uint32_t>(in);
        if (ndim > 8) throw IoError("checkpoint: corrupt rank");
        std::vector<int64_t> shape(ndim);
        int64_t numel = 1;
        for (auto& d : shape) {
            d = read_pod<int64_t>(in);
            if (d <= 0 || d > (1 << 24)) throw IoError("checkpoint: corrupt dimension");
            numel *= d;
        }
        if (numel > (1ll << 28)) throw IoError("checkpoint: corrupt tensor size");
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!in) throw IoError("checkpoint: truncated tensor data");
        a.entries.emplace_back(std::move(name), std::move(t));
    }
    return a;
}

}  // namespace sagan::ckpt
