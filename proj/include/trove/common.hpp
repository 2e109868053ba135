#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace trove {

/// Raised for invalid inputs, infeasible configurations and I/O failures.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class MotionLabel : std::uint8_t { North = 0, South = 1, West = 2, East = 3 };

inline constexpr int kNumClasses = 4;
inline constexpr MotionLabel kBiasClass = MotionLabel::South;
inline constexpr std::array<MotionLabel, kNumClasses> kAllLabels = {
    MotionLabel::North, MotionLabel::South, MotionLabel::West, MotionLabel::East};

constexpr int index_of(MotionLabel l) { return static_cast<int>(l); }
constexpr MotionLabel label_from_index(int i) { return static_cast<MotionLabel>(i); }

std::string_view label_name(MotionLabel l);     // "north"
std::string caption_for(MotionLabel l);         // "moving north"
std::optional<MotionLabel> parse_label(std::string_view s);

using Rng = std::mt19937_64;

/// Mixes a base seed with a stream index so that per-item generators are
/// independent of iteration order (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// 64-bit FNV-1a, used for config/model provenance hashes.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace trove
