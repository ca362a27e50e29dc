#include "ttp/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace ttp {

void write_png_row(const std::filesystem::path& path, const std::vector<Tensor<float>>& panels) {
    if (panels.empty()) throw InvalidArgument("write_png_row needs at least one panel");
    const Shape& shape = panels.front().shape();
    if (shape.size() != 3 || (shape[0] != 1 && shape[0] != 3)) {
        throw ShapeMismatch("PNG panels must be 1 or 3 x H x W, got " + shape_string(shape));
    }
    for (const auto& p : panels) require_same_shape(p.shape(), shape, "write_png_row");
    const std::size_t c = shape[0], h = shape[1], w = shape[2], total_w = w * panels.size();

    std::vector<png_byte> pixels(h * total_w * 3);
    for (std::size_t k = 0; k < panels.size(); ++k) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                for (std::size_t ch = 0; ch < 3; ++ch) {
                    const float v = panels[k][((c == 3 ? ch : 0) * h + y) * w + x];
                    pixels[(y * total_w + k * w + x) * 3 + ch] =
                        static_cast<png_byte>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
                }
            }
        }
    }

    std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!file) throw IoFailure("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoFailure("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoFailure("libpng failed writing " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(total_w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < h; ++y) png_write_row(png, pixels.data() + y * total_w * 3);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace ttp
