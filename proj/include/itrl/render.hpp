#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "itrl/blockworld.hpp"

namespace itrl::bw {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kBackground = {70, 70, 70};
inline constexpr Rgb kGripperColor = {255, 255, 255};

Rgb palette(int color);

// Pixel the object's sprite is anchored at (sprite centre, rounded down).
struct Pixel {
  int u = 0;
  int v = 0;
  bool operator==(const Pixel&) const = default;
};
Pixel project(const Vec3& p, Camera camera, const Vec3& gripper);

Image render(const SceneState& state, Camera camera);

void write_ppm(const std::filesystem::path& path, const Image& image);

}  // namespace itrl::bw
