#include "trove/image.hpp"

namespace trove {

ImageGrid::ImageGrid(int height, int width, Rgb fill)
    : height_(height), width_(width),
      pixels_(static_cast<std::size_t>(height) * width * kChannels) {
    for (int r = 0; r < height_; ++r)
        for (int c = 0; c < width_; ++c) set(r, c, fill);
}

Rgb ImageGrid::pixel(int row, int col) const {
    const auto o = offset(row, col);
    return {pixels_[o], pixels_[o + 1], pixels_[o + 2]};
}

void ImageGrid::set(int row, int col, Rgb c) {
    const auto o = offset(row, col);
    pixels_[o] = c.r;
    pixels_[o + 1] = c.g;
    pixels_[o + 2] = c.b;
}

}  // namespace trove
