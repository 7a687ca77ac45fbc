#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vtforge/error.hpp"
#include "vtforge/tensor.hpp"
#include "vtforge/weights_io.hpp"  // ByteReader, atomic_write_file

namespace vtforge {

// Raw tensor file, little-endian: magic "VTT0" padded to 8 bytes with NULs,
// u32 rank, u32 dims, f32 payload, row-major.
namespace detail {
constexpr char kTensorMagic[8] = {'V', 'T', 'T', '0', 0, 0, 0, 0};
}

inline void save_raw_tensor(const std::string& path, const Tensor<float>& t) {
    std::string out(detail::kTensorMagic, sizeof(detail::kTensorMagic));
    detail::put_u32(out, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) detail::put_u32(out, static_cast<uint32_t>(d));
    for (float v : t.data) detail::put_f32(out, v);
    detail::atomic_write_file(path, out);
}

inline Tensor<float> load_raw_tensor(const std::string& path) {
    std::string bytes = detail::read_file_bytes(path);
    if (bytes.size() < sizeof(detail::kTensorMagic) ||
        std::memcmp(bytes.data(), detail::kTensorMagic, sizeof(detail::kTensorMagic)) != 0)
        fail(ErrKind::kIo, "'" + path + "' is not a raw tensor file (bad magic)");
    detail::ByteReader r(bytes, "'" + path + "'");
    r.str(sizeof(detail::kTensorMagic));
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
    if (r.remaining() != numel * 4) fail(ErrKind::kIo, "'" + path + "': truncated file");
    Tensor<float> t(shape);
    for (size_t i = 0; i < numel; ++i) t.data[i] = r.f32();
    return t;
}

// ---- CSV ----

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
    detail::atomic_write_file(path, content);
}

// header: token,c0,...,c{D-1}
inline void write_tokens_csv(const std::string& path, const Tensor<float>& tokens) {
    if (tokens.rank() != 2) fail(ErrKind::kShape, "write_tokens_csv: expected rank-2, got " + shape_str(tokens.shape));
    std::string out = "token";
    for (int j = 0; j < tokens.cols(); ++j) out += ",c" + std::to_string(j);
    out += "\n";
    for (int i = 0; i < tokens.rows(); ++i) {
        out += std::to_string(i);
        for (int j = 0; j < tokens.cols(); ++j) out += "," + format_double(tokens(i, j));
        out += "\n";
    }
    write_text_file(path, out);
}

// header: iteration,feature,relation,semantics,total
template <typename TraceRow>
void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
    std::string out = "iteration,feature,relation,semantics,total\n";
    for (size_t i = 0; i < trace.size(); ++i) {
        out += std::to_string(i) + "," + format_double(trace[i].feature) + "," + format_double(trace[i].relation) +
               "," + format_double(trace[i].semantics) + "," + format_double(trace[i].total) + "\n";
    }
    write_text_file(path, out);
}

// header: experiment,seed,parameter,metric,value
template <typename Row>
void write_sweep_csv(const std::string& path, const std::vector<Row>& rows) {
    std::string out = "experiment,seed,parameter,metric,value\n";
    for (const auto& r : rows) {
        out += r.experiment + "," + std::to_string(r.seed) + "," + format_double(r.parameter) + "," + r.metric +
               "," + format_double(r.value) + "\n";
    }
    write_text_file(path, out);
}

// reads the token-dump schema back: optional header, then index + D columns
inline Tensor<float> read_points_csv(const std::string& path) {
    std::string bytes = detail::read_file_bytes(path);
    std::istringstream in(bytes);
    std::string line;
    std::vector<std::vector<float>> rows;
    size_t width = 0;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (first && line.rfind("token", 0) == 0) {
            first = false;
            continue;  // header
        }
        first = false;
        std::vector<float> vals;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            try {
                size_t used = 0;
                float v = std::stof(cell, &used);
                if (used != cell.size()) throw std::invalid_argument(cell);
                vals.push_back(v);
            } catch (const std::exception&) {
                fail(ErrKind::kIo, "'" + path + "': non-numeric CSV cell '" + cell + "'");
            }
        }
        if (vals.size() < 2) fail(ErrKind::kIo, "'" + path + "': expected an index column plus coordinates");
        vals.erase(vals.begin());  // index column
        if (width == 0) width = vals.size();
        if (vals.size() != width) fail(ErrKind::kIo, "'" + path + "': ragged CSV rows");
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) fail(ErrKind::kIo, "'" + path + "': no data rows");
    Tensor<float> out(Shape{static_cast<int>(rows.size()), static_cast<int>(width)});
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = 0; j < width; ++j) out.data[i * width + j] = rows[i][j];
    return out;
}

}  // namespace vtforge
