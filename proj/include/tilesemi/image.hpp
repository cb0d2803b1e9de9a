#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tilesemi/tensor.hpp"

namespace tilesemi {

// 8-bit raster, HWC interleaved. channels is 1 (label/index rasters) or 3 (RGB).
struct ImageU8 {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;

    ImageU8() = default;
    ImageU8(int h, int w, int c) : height(h), width(w), channels(c),
        pixels(static_cast<std::size_t>(h) * w * c, 0) {}

    std::uint8_t& at(int r, int c, int ch = 0) {
        return pixels[(static_cast<std::size_t>(r) * width + c) * channels + ch];
    }
    std::uint8_t at(int r, int c, int ch = 0) const {
        return pixels[(static_cast<std::size_t>(r) * width + c) * channels + ch];
    }

    ImageU8 crop(int row, int col, int h, int w) const;
};

// PNG or (Geo)TIFF decode; always returns 3-channel RGB. Throws on failure.
ImageU8 load_image_rgb(const std::string& path);

// Single-channel 8-bit raster (class indices). Throws on failure or >1 channel sources
// that cannot be reduced.
ImageU8 load_label(const std::string& path);

// Lossless PNG encode (any raster may also be saved as .tif).
void save_image(const std::string& path, const ImageU8& img);

ImageU8 resize_image(const ImageU8& img, int new_width, int new_height);

// v / 255 normalization into a (C, H, W) float tensor.
Tensor<float> to_unit_chw(const ImageU8& img);

// exact inverse of to_unit_chw for values produced from 8-bit sources
ImageU8 from_unit_chw(const Tensor<float>& chw);

}  // namespace tilesemi
