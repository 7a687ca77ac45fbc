#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "vtforge/encoder.hpp"
#include "vtforge/error.hpp"
#include "vtforge/tensor.hpp"

namespace vtforge {

// Weight file, little-endian:
//   8-byte magic "VTFWGTS1"
//   u64 config fingerprint
//   per-tensor records: u32 name length, name bytes, u32 rank, u32 dims,
//   f32 payload (row-major), until end of file
namespace detail {

constexpr char kWeightsMagic[8] = {'V', 'T', 'F', 'W', 'G', 'T', 'S', '1'};

inline void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

class ByteReader {
   public:
    ByteReader(const std::string& bytes, const std::string& what) : bytes_(bytes), what_(what) {}

    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() {
        uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }
    std::string str(size_t len) {
        need(len);
        std::string s = bytes_.substr(pos_, len);
        pos_ += len;
        return s;
    }
    bool at_end() const { return pos_ == bytes_.size(); }
    size_t remaining() const { return bytes_.size() - pos_; }

   private:
    void need(size_t n) {
        if (pos_ + n > bytes_.size()) fail(ErrKind::kIo, what_ + ": truncated file");
    }
    const std::string& bytes_;
    std::string what_;
    size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrKind::kIo, "cannot open '" + path + "' for reading");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

inline void atomic_write_file(const std::string& path, const std::string& bytes) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrKind::kIo, "cannot open '" + tmp + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) fail(ErrKind::kIo, "short write to '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        fail(ErrKind::kIo, "cannot rename '" + tmp + "' to '" + path + "'");
}

template <typename T>
void save_weights_file(const Weights<T>& w, uint64_t config_fp, const std::string& path) {
    std::string out(kWeightsMagic, sizeof(kWeightsMagic));
    put_u64(out, config_fp);
    for (const auto& [name, t] : w.tensors) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<uint32_t>(t.shape.size()));
        for (int d : t.shape) put_u32(out, static_cast<uint32_t>(d));
        for (T v : t.data) put_f32(out, static_cast<float>(v));
    }
    atomic_write_file(path, out);
}

template <typename T>
Weights<T> load_weights_file(const std::string& path, uint64_t config_fp,
                             const std::vector<std::pair<std::string, Shape>>& schema) {
    std::string bytes = read_file_bytes(path);
    if (bytes.size() < sizeof(kWeightsMagic) ||
        std::memcmp(bytes.data(), kWeightsMagic, sizeof(kWeightsMagic)) != 0)
        fail(ErrKind::kIo, "'" + path + "' is not a weight file (bad magic)");
    ByteReader r(bytes, "'" + path + "'");
    r.str(sizeof(kWeightsMagic));
    uint64_t file_fp = r.u64();
    if (file_fp != config_fp) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "0x%016llx vs config 0x%016llx", (unsigned long long)file_fp,
                      (unsigned long long)config_fp);
        fail(ErrKind::kConfig, "'" + path + "': weight file fingerprint mismatch (" + buf + ")");
    }
    Weights<T> w;
    while (!r.at_end()) {
        uint32_t name_len = r.u32();
        if (name_len == 0 || name_len > 4096) fail(ErrKind::kIo, "'" + path + "': corrupt tensor name length");
        std::string name = r.str(name_len);
        uint32_t rank = r.u32();
        if (rank > 8) fail(ErrKind::kIo, "'" + path + "': corrupt tensor rank");
        Shape shape;
        size_t numel = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            uint32_t d = r.u32();
            if (d == 0 || d > (1u << 28)) fail(ErrKind::kIo, "'" + path + "': corrupt dimension");
            shape.push_back(static_cast<int>(d));
            numel *= d;
        }
        if (r.remaining() < numel * 4) fail(ErrKind::kIo, "'" + path + "': truncated file");
        Tensor<T> t(shape);
        for (size_t i = 0; i < numel; ++i) t.data[i] = T(r.f32());
        w.tensors.emplace_back(std::move(name), std::move(t));
    }
    // the file must carry exactly the tensors the config dictates
    if (w.tensors.size() != schema.size())
        fail(ErrKind::kConfig, "'" + path + "': expected " + std::to_string(schema.size()) + " tensors, found " +
                                   std::to_string(w.tensors.size()));
    for (size_t i = 0; i < schema.size(); ++i) {
        if (w.tensors[i].first != schema[i].first)
            fail(ErrKind::kConfig, "'" + path + "': tensor '" + w.tensors[i].first + "' where '" +
                                       schema[i].first + "' was expected");
        if (w.tensors[i].second.shape != schema[i].second)
            fail(ErrKind::kConfig, "'" + path + "': tensor '" + schema[i].first + "' has shape " +
                                       shape_str(w.tensors[i].second.shape) + ", config requires " +
                                       shape_str(schema[i].second));
    }
    return w;
}

}  // namespace detail

template <typename T = float>
void save_image_weights(const Weights<T>& w, const ViTConfig& cfg, const std::string& path) {
    detail::save_weights_file(w, cfg.fingerprint(), path);
}

template <typename T = float>
Weights<T> load_image_weights(const std::string& path, const ViTConfig& cfg) {
    return detail::load_weights_file<T>(path, cfg.fingerprint(), image_weight_schema(cfg));
}

template <typename T = float>
void save_text_weights(const Weights<T>& w, const TextConfig& cfg, const std::string& path) {
    detail::save_weights_file(w, cfg.fingerprint(), path);
}

template <typename T = float>
Weights<T> load_text_weights(const std::string& path, const TextConfig& cfg) {
    return detail::load_weights_file<T>(path, cfg.fingerprint(), text_weight_schema(cfg));
}

}  // namespace vtforge
