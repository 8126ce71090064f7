// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

#include "splatterlab/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace splatterlab {

namespace {

struct FileCloser {
    void operator()(std::FILE *f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(double v) {
    const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

} // namespace

void write_png(const std::filesystem::path &path, const Image &img) {
    if (img.channels != 1 && img.channels != 3 && img.channels != 4)
        throw Error(ErrorCode::InvalidArgument, "PNG export needs 1, 3 or 4 channels");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw Error(ErrorCode::IoError, "cannot open " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorCode::IoError, "libpng init failed");
    }
    std::vector<std::uint8_t> rows(static_cast<std::size_t>(img.width) * img.height * 4);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            std::uint8_t *px = &rows[(static_cast<std::size_t>(y) * img.width + x) * 4];
            if (img.channels == 1) {
                px[0] = px[1] = px[2] = to_byte(img.at(x, y, 0));
                px[3] = 255;
            } else {
                for (int c = 0; c < 3; ++c) px[c] = to_byte(img.at(x, y, c));
                px[3] = img.channels == 4 ? to_byte(img.at(x, y, 3)) : 255;
            }
        }
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorCode::IoError, "libpng write failed for " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y)
        png_write_row(png, &rows[static_cast<std::size_t>(y) * img.width * 4]);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path &path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw Error(ErrorCode::IoError, "cannot read PNG " + path.string());
    image.format = PNG_FORMAT_RGBA;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&image);
        throw Error(ErrorCode::IoError, "cannot decode PNG " + path.string());
    }
    Image out(static_cast<int>(image.width), static_cast<int>(image.height), 4);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = buf[i] / 255.0;
    return out;
}

void write_pfm(const std::filesystem::path &path, const Image &depth) {
    if (depth.channels != 1) throw Error(ErrorCode::InvalidArgument, "PFM export needs 1 channel");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    os << "Pf\n" << depth.width << " " << depth.height << "\n-1.0\n";
    std::vector<float> row(depth.width);
    for (int y = depth.height - 1; y >= 0; --y) {
        for (int x = 0; x < depth.width; ++x) row[x] = static_cast<float>(depth.at(x, y));
        os.write(reinterpret_cast<const char *>(row.data()),
                 static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!os) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

Image read_pfm(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::string magic;
    int w = 0, h = 0;
    double scale = 0.0;
    is >> magic >> w >> h >> scale;
    is.get();
    if (magic != "Pf" || w <= 0 || h <= 0 || scale >= 0.0)
        throw Error(ErrorCode::IoError, "unsupported PFM header in " + path.string());
    Image out(w, h, 1);
    std::vector<float> row(w);
    for (int y = h - 1; y >= 0; --y) {
        is.read(reinterpret_cast<char *>(row.data()), static_cast<std::streamsize>(w * sizeof(float)));
        if (!is) throw Error(ErrorCode::IoError, "truncated PFM " + path.string());
        for (int x = 0; x < w; ++x) out.at(x, y) = row[x];
    }
    return out;
}

} // namespace splatterlab
