#pragma once

#include <Eigen/Core>

#include <stdexcept>

namespace smesh {

/// Axis-aligned pixel rectangle.
struct Patch {
  int x0 = 0;
  int y0 = 0;
  int width = 0;
  int height = 0;

  Eigen::Index pixel_count() const { return static_cast<Eigen::Index>(width) * height; }
  bool operator==(const Patch&) const = default;
};

/// H x W buffer with fixed channel semantics. Pixel (x, y) lives in row
/// y * width + x of every channel. Background is white rgb, zero depth,
/// zero normal and zero mask.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  Eigen::MatrixX3d rgb;
  Eigen::VectorXd depth;
  Eigen::MatrixX3d normal;
  Eigen::VectorXd mask;

  static ImageBuffer background(int width, int height) {
    ImageBuffer b;
    b.width = width;
    b.height = height;
    const Eigen::Index n = b.pixel_count();
    b.rgb = Eigen::MatrixX3d::Ones(n, 3);
    b.depth = Eigen::VectorXd::Zero(n);
    b.normal = Eigen::MatrixX3d::Zero(n, 3);
    b.mask = Eigen::VectorXd::Zero(n);
    return b;
  }

  Eigen::Index pixel_count() const { return static_cast<Eigen::Index>(width) * height; }
  Eigen::Index index(int x, int y) const { return static_cast<Eigen::Index>(y) * width + x; }
  Patch full() const { return {0, 0, width, height}; }

  bool contains(const Patch& p) const {
    return p.x0 >= 0 && p.y0 >= 0 && p.width > 0 && p.height > 0 && p.x0 + p.width <= width &&
           p.y0 + p.height <= height;
  }

  ImageBuffer crop(const Patch& p) const {
    if (!contains(p)) throw std::out_of_range("ImageBuffer::crop: patch outside image");
    ImageBuffer out = background(p.width, p.height);
    for (int y = 0; y < p.height; ++y) {
      for (int x = 0; x < p.width; ++x) {
        const Eigen::Index src = index(p.x0 + x, p.y0 + y);
        const Eigen::Index dst = out.index(x, y);
        out.rgb.row(dst) = rgb.row(src);
        out.depth[dst] = depth[src];
        out.normal.row(dst) = normal.row(src);
        out.mask[dst] = mask[src];
      }
    }
    return out;
  }

  void paste(const ImageBuffer& src, const Patch& p) {
    if (!contains(p) || src.width != p.width || src.height != p.height) {
      throw std::out_of_range("ImageBuffer::paste: patch mismatch");
    }
    for (int y = 0; y < p.height; ++y) {
      for (int x = 0; x < p.width; ++x) {
        const Eigen::Index s = src.index(x, y);
        const Eigen::Index d = index(p.x0 + x, p.y0 + y);
        rgb.row(d) = src.rgb.row(s);
        depth[d] = src.depth[s];
        normal.row(d) = src.normal.row(s);
        mask[d] = src.mask[s];
      }
    }
  }
};

}  // namespace smesh
