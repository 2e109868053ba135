#include "trove/common.hpp"

#include <cstdio>

namespace trove {

std::string_view label_name(MotionLabel l) {
    switch (l) {
        case MotionLabel::North: return "north";
        case MotionLabel::South: return "south";
        case MotionLabel::West: return "west";
        case MotionLabel::East: return "east";
    }
    return "?";
}

std::string caption_for(MotionLabel l) { return "moving " + std::string(label_name(l)); }

std::optional<MotionLabel> parse_label(std::string_view s) {
    if (s.starts_with("moving ")) s.remove_prefix(7);
    for (auto l : kAllLabels)
        if (label_name(l) == s) return l;
    return std::nullopt;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace trove
