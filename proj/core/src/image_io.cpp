#include "ldp/image_io.hpp"

#include <algorithm>
#include <cstdio>
#include <csetjmp>
#include <cstring>
#include <filesystem>
#include <memory>
#include <stdexcept>

#include <jpeglib.h>
#include <png.h>

namespace ldp {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

ImageTensor from_rgb8(const std::vector<unsigned char>& rgb, int h, int w) {
    ImageTensor img({h, w, 3});
    for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = rgb[i] / 255.0;
    return img;
}

ImageTensor decode_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open '" + path + "'");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng failed to decode '" + path + "'");
    }

    png_init_io(png, fp.get());
    png_read_info(png, info);

    // normalize anything to 8-bit RGB
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_set_palette_to_rgb(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const size_t stride = png_get_rowbytes(png, info);
    if (stride < static_cast<size_t>(w) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("unexpected PNG row stride in '" + path + "'");
    }

    std::vector<unsigned char> rows_data(stride * static_cast<size_t>(h));
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<size_t>(y)] = rows_data.data() + stride * static_cast<size_t>(y);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    std::vector<unsigned char> rgb(static_cast<size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        std::memcpy(&rgb[static_cast<size_t>(y) * w * 3], rows_data.data() + stride * static_cast<size_t>(y),
                    static_cast<size_t>(w) * 3);
    return from_rgb8(rgb, h, w);
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    longjmp(err->jump, 1);
}

ImageTensor decode_jpeg(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open '" + path + "'");

    jpeg_decompress_struct cinfo;
    JpegErrorMgr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw std::runtime_error("libjpeg failed to decode '" + path + "'");
    }

    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fp.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);

    const int w = static_cast<int>(cinfo.output_width);
    const int h = static_cast<int>(cinfo.output_height);
    std::vector<unsigned char> rgb(static_cast<size_t>(h) * w * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        unsigned char* row = &rgb[static_cast<size_t>(cinfo.output_scanline) * w * 3];
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return from_rgb8(rgb, h, w);
}

bool has_ext(const std::string& name, std::initializer_list<const char*> exts) {
    const auto dot = name.rfind('.');
    if (dot == std::string::npos) return false;
    std::string e = name.substr(dot);
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
    for (const char* want : exts)
        if (e == want) return true;
    return false;
}

}  // namespace

ImageTensor decode_image_file(const std::string& path) {
    if (has_ext(path, {".png"})) return decode_png(path);
    if (has_ext(path, {".jpg", ".jpeg"})) return decode_jpeg(path);
    throw std::runtime_error("unsupported image format: '" + path + "'");
}

void save_png(const std::string& path, const ImageTensor& image) {
    if (image.rank() != 3 || image.dim(2) != 3)
        throw std::invalid_argument("save_png: image must be HxWx3, got " + shape_str(image.shape));
    const int h = image.dim(0), w = image.dim(1);

    std::vector<unsigned char> rgb(static_cast<size_t>(h) * w * 3);
    for (size_t i = 0; i < rgb.size(); ++i) {
        const double v = std::clamp(image.data[i], 0.0, 1.0);
        rgb[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("save_png: cannot open '" + path + "' for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng failed to encode '" + path + "'");
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y)
        png_write_row(png, const_cast<png_bytep>(&rgb[static_cast<size_t>(y) * w * 3]));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

ImageTensor resize_bilinear(const ImageTensor& image, int out_h, int out_w) {
    if (image.rank() != 3) throw std::invalid_argument("resize_bilinear: rank-3 input required");
    if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize_bilinear: bad output size");
    const int in_h = image.dim(0), in_w = image.dim(1), c = image.dim(2);
    if (in_h == out_h && in_w == out_w) return image;

    ImageTensor out({out_h, out_w, c});
    const double sy = static_cast<double>(in_h) / out_h;
    const double sx = static_cast<double>(in_w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(in_h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, in_h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(in_w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, in_w - 1);
            const double wx = fx - x0;
            for (int k = 0; k < c; ++k) {
                const double top = image.at(y0, x0, k) * (1 - wx) + image.at(y0, x1, k) * wx;
                const double bot = image.at(y1, x0, k) * (1 - wx) + image.at(y1, x1, k) * wx;
                out.at(y, x, k) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

std::vector<ImageTensor> load_image_dir(const std::string& dir, int target_size) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw std::runtime_error("load_image_dir: '" + dir + "' is not a directory");
    if (target_size <= 0) throw std::invalid_argument("load_image_dir: bad target size");

    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        if (has_ext(name, {".png", ".jpg", ".jpeg"})) names.push_back(name);
    }
    std::sort(names.begin(), names.end());
    if (names.empty()) throw std::runtime_error("load_image_dir: no PNG/JPEG files in '" + dir + "'");

    std::vector<ImageTensor> images;
    for (const std::string& name : names) {
        const std::string path = (fs::path(dir) / name).string();
        try {
            images.push_back(resize_bilinear(decode_image_file(path), target_size, target_size));
        } catch (const std::exception& e) {
            std::fprintf(stderr, "warning: skipping undecodable image '%s': %s\n", path.c_str(),
                         e.what());
        }
    }
    if (images.empty())
        throw std::runtime_error("load_image_dir: every file in '" + dir + "' failed to decode");
    return images;
}

}  // namespace ldp
