#include "gatefusion/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace gatefusion {

namespace {
struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;
}  // namespace

void write_png_rgb(const std::string& path, const Tensor& img) {
    if (img.ndim() != 3 || img.dim(0) != 3)
        throw IoError("write_png_rgb: expected CHW tensor with 3 channels for " + path);
    const int H = img.dim(1), W = img.dim(2);

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng write failure: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    // Fixed filter/compression settings keep the byte stream reproducible.
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_FILTER_NONE);
    png_write_info(png, info);

    std::vector<png_byte> row(static_cast<size_t>(W) * 3);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < 3; ++c) {
                float v = img[(static_cast<size_t>(c) * H + y) * W + x];
                v = std::min(1.0f, std::max(0.0f, v));
                row[static_cast<size_t>(x) * 3 + c] =
                    static_cast<png_byte>(std::lround(v * 255.0f));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor read_png_rgb(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open image file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng read failure: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    const int W = static_cast<int>(png_get_image_width(png, info));
    const int H = static_cast<int>(png_get_image_height(png, info));
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    Tensor img({3, H, W});
    std::vector<png_byte> row(png_get_rowbytes(png, info));
    for (int y = 0; y < H; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < 3; ++c) {
                img[(static_cast<size_t>(c) * H + y) * W + x] =
                    static_cast<float>(row[static_cast<size_t>(x) * 3 + c]) / 255.0f;
            }
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

}  // namespace gatefusion
