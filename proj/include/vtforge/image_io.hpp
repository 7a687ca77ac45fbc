#pragma once

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <png.h>

#include "vtforge/error.hpp"
#include "vtforge/tensor.hpp"
#include "vtforge/weights_io.hpp"  // atomic_write_file, read_file_bytes

namespace vtforge {

namespace detail {

struct PngMemory {
    const std::string* bytes = nullptr;
    size_t pos = 0;
    std::string out;
};

inline void png_mem_read(png_structp png, png_bytep dst, png_size_t len) {
    auto* mem = static_cast<PngMemory*>(png_get_io_ptr(png));
    if (mem->pos + len > mem->bytes->size()) png_error(png, "unexpected end of PNG stream");
    std::memcpy(dst, mem->bytes->data() + mem->pos, len);
    mem->pos += len;
}

inline void png_mem_write(png_structp png, png_bytep src, png_size_t len) {
    auto* mem = static_cast<PngMemory*>(png_get_io_ptr(png));
    mem->out.append(reinterpret_cast<const char*>(src), len);
}

inline void png_mem_flush(png_structp) {}

}  // namespace detail

// Strict 8-bit RGB load; pixels map to floats as v / 255 exactly.
inline Tensor<float> load_png_rgb8(const std::string& path) {
    std::string bytes = detail::read_file_bytes(path);
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
        fail(ErrKind::kIo, "'" + path + "' is not a PNG file");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrKind::kIo, "libpng initialization failed");
    }

    detail::PngMemory mem;
    mem.bytes = &bytes;
    std::vector<png_bytep> row_ptrs;
    std::vector<unsigned char> raw;
    int width = 0, height = 0;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrKind::kIo, "'" + path + "': corrupt PNG stream");
    }

    png_set_read_fn(png, &mem, detail::png_mem_read);
    png_read_info(png, info);

    int bit_depth = png_get_bit_depth(png, info);
    int color_type = png_get_color_type(png, info);
    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));

    if (color_type != PNG_COLOR_TYPE_RGB || bit_depth != 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrKind::kIo, "'" + path + "': only 8-bit RGB PNG is accepted (color type " +
                               std::to_string(color_type) + ", bit depth " + std::to_string(bit_depth) + ")");
    }

    raw.resize(static_cast<size_t>(width) * height * 3);
    row_ptrs.resize(height);
    for (int y = 0; y < height; ++y) row_ptrs[y] = raw.data() + static_cast<size_t>(y) * width * 3;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor<float> img(Shape{height, width, 3});
    for (size_t i = 0; i < raw.size(); ++i) img.data[i] = float(raw[i]) / 255.0f;
    return img;
}

// Writes 8-bit RGB; float values quantize by round-half-to-even of 255*v.
inline void save_png_rgb8(const std::string& path, const Tensor<float>& img) {
    if (img.rank() != 3 || img.shape[2] != 3)
        fail(ErrKind::kShape, "save_png_rgb8: expected [H,W,3] image, got " + shape_str(img.shape));
    int height = img.shape[0], width = img.shape[1];

    std::vector<unsigned char> raw(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) {
        double v = double(img.data[i]);
        if (!(v >= 0.0 && v <= 1.0))
            fail(ErrKind::kNumeric, "save_png_rgb8: pixel value " + std::to_string(v) + " outside [0,1]");
        raw[i] = static_cast<unsigned char>(std::nearbyint(v * 255.0));  // half-to-even
    }

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        fail(ErrKind::kIo, "libpng initialization failed");
    }

    detail::PngMemory mem;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(ErrKind::kIo, "'" + path + "': PNG encoding failed");
    }

    png_set_write_fn(png, &mem, detail::png_mem_write, detail::png_mem_flush);
    png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> row_ptrs(height);
    for (int y = 0; y < height; ++y) row_ptrs[y] = raw.data() + static_cast<size_t>(y) * width * 3;
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);

    detail::atomic_write_file(path, mem.out);
}

}  // namespace vtforge
