#include "itrl/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace itrl::bw {

namespace {

constexpr std::array<Rgb, kPaletteSize> kPalette = {{{220, 40, 40},
                                                     {40, 180, 60},
                                                     {50, 80, 220},
                                                     {230, 210, 40},
                                                     {40, 200, 210},
                                                     {210, 60, 200},
                                                     {240, 140, 30},
                                                     {120, 50, 160}}};

struct Canvas {
  Image& img;

  void put(int u, int v, Rgb c) {
    if (u < 0 || v < 0 || u >= kImageSize || v >= kImageSize) return;
    const std::size_t at = (static_cast<std::size_t>(v) * kImageSize + static_cast<std::size_t>(u)) * 3;
    img[at] = c[0];
    img[at + 1] = c[1];
    img[at + 2] = c[2];
  }
};

int floor_px(double x) { return static_cast<int>(std::floor(x)); }

// Sprites are drawn on an s x s cell grid (s = 2 for the wrist camera).
void draw_object(Canvas& cv, const Object& o, Pixel at, int s) {
  Rgb c = palette(o.color);
  if (o.kind == ObjectKind::kButton && o.pressed)
    for (auto& ch : c) ch = static_cast<std::uint8_t>(ch / 2);
  auto cell = [&](int i, int j) {
    for (int a = 0; a < s; ++a)
      for (int b = 0; b < s; ++b) cv.put(at.u + i * s + a, at.v + j * s + b, c);
  };
  switch (o.kind) {
    case ObjectKind::kBlock:
      for (int i = -2; i < 2; ++i)
        for (int j = -2; j < 2; ++j) cell(i, j);
      break;
    case ObjectKind::kButton:
      for (int i = -2; i < 2; ++i)
        for (int j = -2; j < 2; ++j)
          if (!((i == -2 || i == 1) && (j == -2 || j == 1))) cell(i, j);
      break;
    case ObjectKind::kTarget:
      for (int i = -2; i <= 2; ++i)
        for (int j = -2; j <= 2; ++j)
          if (std::abs(i) == 2 || std::abs(j) == 2) cell(i, j);
      break;
  }
}

// Chevron pointing along the gripper's yaw; the arms spread wider when open.
void draw_gripper(Canvas& cv, const Gripper& g, Pixel at, int s) {
  const double spread = g.open ? 1.0 : 0.5;
  const double c = std::cos(g.yaw), sn = std::sin(g.yaw);
  for (int k = 0; k <= 3 * s; ++k) {
    for (int side : {-1, 1}) {
      const double fx = side * spread * k;
      const double fy = static_cast<double>(k) - 1.5 * s;
      const double rx = c * fx - sn * fy;
      const double ry = sn * fx + c * fy;
      cv.put(at.u + static_cast<int>(std::lround(rx)), at.v + static_cast<int>(std::lround(ry)), kGripperColor);
    }
  }
}

}  // namespace

Rgb palette(int color) {
  if (color < 0 || color >= kPaletteSize) throw Error("color id " + std::to_string(color) + " out of palette");
  return kPalette[static_cast<std::size_t>(color)];
}

Pixel project(const Vec3& p, Camera camera, const Vec3& gripper) {
  const double n = kImageSize;
  switch (camera) {
    case Camera::kTop:
      return {floor_px(p.x() * n), floor_px((1.0 - p.y()) * n)};
    case Camera::kLeftOblique:
      return {floor_px(n * (0.1 + 0.8 * p.y())), floor_px(n * (0.95 - 0.55 * p.x() - 0.4 * p.z()))};
    case Camera::kWrist:
      return {floor_px(n / 2 + (p.x() - gripper.x()) * 2 * n), floor_px(n / 2 - (p.y() - gripper.y()) * 2 * n)};
  }
  return {};
}

Image render(const SceneState& state, Camera camera) {
  Image img;
  for (std::size_t i = 0; i < img.size(); i += 3) {
    img[i] = kBackground[0];
    img[i + 1] = kBackground[1];
    img[i + 2] = kBackground[2];
  }
  Canvas cv{img};
  const Vec3& gp = state.gripper.position;

  std::vector<std::size_t> order(state.objects.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto kind_rank = [](ObjectKind k) { return k == ObjectKind::kTarget ? 0 : k == ObjectKind::kButton ? 1 : 2; };
  auto key = [&](std::size_t i) {
    const Object& o = state.objects[i];
    const double depth = camera == Camera::kLeftOblique ? -o.position.x() : 0.0;
    return std::make_tuple(depth, o.position.z(), kind_rank(o.kind), i);
  };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });

  const int s = camera == Camera::kWrist ? 2 : 1;
  for (std::size_t i : order) draw_object(cv, state.objects[i], project(state.objects[i].position, camera, gp), s);
  draw_gripper(cv, state.gripper, project(gp, camera, gp), s);
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write image: " + path.string());
  os << "P6\n" << kImageSize << ' ' << kImageSize << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.data()), static_cast<std::streamsize>(image.size()));
  if (!os) throw IoError("failed writing image: " + path.string());
}

}  // namespace itrl::bw
