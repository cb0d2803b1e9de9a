#include "tilesemi/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <stdexcept>

namespace tilesemi {

ImageU8 ImageU8::crop(int row, int col, int h, int w) const {
    if (row < 0 || col < 0 || row + h > height || col + w > width)
        throw std::invalid_argument("crop window out of bounds");
    ImageU8 out(h, w, channels);
    for (int r = 0; r < h; ++r) {
        const auto* src = &pixels[(static_cast<std::size_t>(row + r) * width + col) * channels];
        auto* dst = &out.pixels[static_cast<std::size_t>(r) * w * channels];
        std::copy(src, src + static_cast<std::size_t>(w) * channels, dst);
    }
    return out;
}

namespace {

ImageU8 from_mat(const cv::Mat& m, bool to_rgb) {
    ImageU8 out(m.rows, m.cols, m.channels());
    if (m.channels() == 3) {
        cv::Mat conv;
        if (to_rgb) cv::cvtColor(m, conv, cv::COLOR_BGR2RGB);
        else conv = m;
        for (int r = 0; r < m.rows; ++r)
            std::copy(conv.ptr<std::uint8_t>(r), conv.ptr<std::uint8_t>(r) + 3 * m.cols,
                      &out.pixels[static_cast<std::size_t>(r) * m.cols * 3]);
    } else {
        for (int r = 0; r < m.rows; ++r)
            std::copy(m.ptr<std::uint8_t>(r), m.ptr<std::uint8_t>(r) + m.cols,
                      &out.pixels[static_cast<std::size_t>(r) * m.cols]);
    }
    return out;
}

}  // namespace

ImageU8 load_image_rgb(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
    if (m.empty()) throw std::runtime_error("unreadable raster: " + path);
    if (m.depth() != CV_8U) throw std::runtime_error("raster is not 8-bit: " + path);
    return from_mat(m, /*to_rgb=*/true);
}

ImageU8 load_label(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw std::runtime_error("unreadable raster: " + path);
    if (m.depth() != CV_8U) throw std::runtime_error("label raster is not 8-bit: " + path);
    if (m.channels() != 1) throw std::runtime_error("label raster must be single channel: " + path);
    return from_mat(m, /*to_rgb=*/false);
}

void save_image(const std::string& path, const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3)
        throw std::invalid_argument("save_image: expected 1 or 3 channels");
    cv::Mat m(img.height, img.width, img.channels == 3 ? CV_8UC3 : CV_8UC1,
              const_cast<std::uint8_t*>(img.pixels.data()));
    cv::Mat bgr;
    if (img.channels == 3) cv::cvtColor(m, bgr, cv::COLOR_RGB2BGR);
    else bgr = m;
    if (!cv::imwrite(path, bgr)) throw std::runtime_error("failed to write raster: " + path);
}

ImageU8 resize_image(const ImageU8& img, int new_width, int new_height) {
    cv::Mat m(img.height, img.width, img.channels == 3 ? CV_8UC3 : CV_8UC1,
              const_cast<std::uint8_t*>(img.pixels.data()));
    cv::Mat resized;
    // area interpolation for downscaling, bilinear otherwise
    const int interp = (new_width < img.width || new_height < img.height) ? cv::INTER_AREA
                                                                          : cv::INTER_LINEAR;
    cv::resize(m, resized, cv::Size(new_width, new_height), 0, 0, interp);
    return from_mat(resized, /*to_rgb=*/false);
}

Tensor<float> to_unit_chw(const ImageU8& img) {
    Tensor<float> out({img.channels, img.height, img.width});
    const std::int64_t hw = static_cast<std::int64_t>(img.height) * img.width;
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            for (int ch = 0; ch < img.channels; ++ch)
                out[ch * hw + static_cast<std::int64_t>(r) * img.width + c] =
                    static_cast<float>(img.at(r, c, ch)) / 255.0f;
    return out;
}

ImageU8 from_unit_chw(const Tensor<float>& chw) {
    if (chw.ndim() != 3) throw std::invalid_argument("from_unit_chw: expected (C, H, W)");
    const int c = static_cast<int>(chw.dim(0)), h = static_cast<int>(chw.dim(1)),
              w = static_cast<int>(chw.dim(2));
    ImageU8 out(h, w, c);
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    for (int r = 0; r < h; ++r)
        for (int cc = 0; cc < w; ++cc)
            for (int ch = 0; ch < c; ++ch) {
                const float v = chw[ch * hw + static_cast<std::int64_t>(r) * w + cc];
                const float clamped = std::min(1.0f, std::max(0.0f, v));
                out.at(r, cc, ch) = static_cast<std::uint8_t>(std::lround(clamped * 255.0f));
            }
    return out;
}

}  // namespace tilesemi
