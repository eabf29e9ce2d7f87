#pragma once

#include <png.h>

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "compresslab/core/errors.hpp"
#include "compresslab/core/image.hpp"

namespace clab {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

/// Reads a PNG as 8-bit RGB or grayscale. Palette and low-bit-depth images
/// are expanded; 16-bit is reduced; alpha is stripped.
inline Image8 read_png(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open PNG: " + path);

    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng read-struct allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng info-struct allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("PNG decode failed: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    int width = static_cast<int>(png_get_image_width(png, info));
    int height = static_cast<int>(png_get_image_height(png, info));
    int channels = static_cast<int>(png_get_channels(png, info));
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("unsupported PNG channel count " + std::to_string(channels) +
                        " in " + path);
    }

    Image8 im = Image8::make(width, height, channels);
    std::vector<png_bytep> rows(static_cast<size_t>(height));
    for (int y = 0; y < height; ++y)
        rows[static_cast<size_t>(y)] =
            im.pixels.data() + static_cast<size_t>(y) * width * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return im;
}

inline void write_png(const std::string& path, const Image8& im) {
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot open PNG for writing: " + path);

    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng write-struct allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng info-struct allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("PNG encode failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(im.width),
                 static_cast<png_uint_32>(im.height), 8,
                 im.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_const_bytep> rows(static_cast<size_t>(im.height));
    for (int y = 0; y < im.height; ++y)
        rows[static_cast<size_t>(y)] =
            im.pixels.data() + static_cast<size_t>(y) * im.width * im.channels;
    png_write_rows(png, const_cast<png_bytepp>(rows.data()),
                   static_cast<png_uint_32>(im.height));
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

/// Label maps travel as 8-bit grayscale PNGs whose pixel value is the class id.
inline SegMap read_label_png(const std::string& path, int num_classes) {
    Image8 im = read_png(path);
    if (im.channels != 1)
        throw DataError("label PNG must be grayscale: " + path);
    SegMap m = SegMap::make(im.width, im.height, num_classes);
    for (size_t i = 0; i < im.pixels.size(); ++i) {
        if (im.pixels[i] > num_classes)
            throw DataError("label id " + std::to_string(im.pixels[i]) +
                            " exceeds class count in " + path);
        m.ids[i] = im.pixels[i];
    }
    return m;
}

inline void write_label_png(const std::string& path, const SegMap& m) {
    Image8 im = Image8::make(m.width, m.height, 1);
    im.pixels = m.ids;
    write_png(path, im);
}

}  // namespace clab
