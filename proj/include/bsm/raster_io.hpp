#pragma once

#include <string>

#include "bsm/image.hpp"

namespace bsm {

// Thin wrappers around the image codecs (TIFF and PNG). Color images are
// exchanged as interleaved RGB; masks as single-channel 8-bit rasters.
ImageU8 read_image_rgb(const std::string& path);
ImageU8 read_image_gray(const std::string& path);
void write_image(const std::string& path, const ImageU8& img);

}  // namespace bsm
