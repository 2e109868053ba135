#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace trove {

struct Rgb {
    float r = 0.f, g = 0.f, b = 0.f;
    friend bool operator==(const Rgb&, const Rgb&) = default;
};

inline constexpr Rgb kBlack{0.f, 0.f, 0.f};
inline constexpr Rgb kBlue{0.f, 0.f, 1.f};
inline constexpr Rgb kRed{1.f, 0.f, 0.f};

/// Row-major H x W x 3 raster with channel values in [0, 1].
class ImageGrid {
public:
    static constexpr int kChannels = 3;

    ImageGrid() = default;
    ImageGrid(int height, int width, Rgb fill = kBlack);

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return pixels_.size(); }

    float at(int row, int col, int ch) const { return pixels_[offset(row, col) + ch]; }
    Rgb pixel(int row, int col) const;
    void set(int row, int col, Rgb c);

    std::span<const float> data() const { return pixels_; }
    std::span<float> data() { return pixels_; }

    friend bool operator==(const ImageGrid&, const ImageGrid&) = default;

private:
    std::size_t offset(int row, int col) const {
        return (static_cast<std::size_t>(row) * width_ + col) * kChannels;
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<float> pixels_;
};

}  // namespace trove
