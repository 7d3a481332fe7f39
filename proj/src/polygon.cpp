#include "polygcn/polygon.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace polygcn {

double signed_area(std::span<const Point> poly) {
  const std::size_t n = poly.size();
  double a = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Point& p = poly[i];
    const Point& q = poly[(i + 1) % n];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * a;
}

double perimeter(std::span<const Point> poly) {
  const std::size_t n = poly.size();
  double len = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Point& p = poly[i];
    const Point& q = poly[(i + 1) % n];
    len += std::hypot(q.x - p.x, q.y - p.y);
  }
  return len;
}

BoxCWH bounding_box(std::span<const Point> poly) {
  if (poly.empty()) throw std::invalid_argument("bounding_box: empty polygon");
  double x0 = poly[0].x, x1 = poly[0].x, y0 = poly[0].y, y1 = poly[0].y;
  for (const Point& p : poly) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  return BoxCWH::from_corners(x0, y0, x1, y1);
}

bool is_clockwise(std::span<const Point> poly) { return signed_area(poly) > 0.0; }

bool point_in_polygon(std::span<const Point> poly, Point p) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point& a = poly[i];
    const Point& b = poly[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double xc = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < xc) inside = !inside;
    }
  }
  return inside;
}

std::vector<std::uint8_t> fill_polygon(std::span<const Point> poly, const RasterGrid& grid) {
  std::vector<std::uint8_t> mask(grid.rows * grid.cols, 0);
  const std::size_t n = poly.size();
  if (n < 3) return mask;
  std::vector<double> xs;
  for (std::size_t r = 0; r < grid.rows; ++r) {
    const double y = grid.y0 + (static_cast<double>(r) + 0.5) * grid.dy;
    xs.clear();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const Point& a = poly[i];
      const Point& b = poly[j];
      if ((a.y > y) != (b.y > y)) xs.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      // cells whose centre x0 + (c + 0.5) dx lies in [xs[k], xs[k+1])
      const double lo = (xs[k] - grid.x0) / grid.dx - 0.5;
      const double hi = (xs[k + 1] - grid.x0) / grid.dx - 0.5;
      const long c0 = std::max(0L, static_cast<long>(std::ceil(lo)));
      long c1 = static_cast<long>(std::ceil(hi)) - 1;
      c1 = std::min(c1, static_cast<long>(grid.cols) - 1);
      for (long c = c0; c <= c1; ++c) mask[r * grid.cols + static_cast<std::size_t>(c)] = 1;
    }
  }
  return mask;
}

Point to_unit_frame(Point p, const BoxCWH& box) {
  return {(p.x - box.left()) / box.w, (p.y - box.top()) / box.h};
}

Point from_unit_frame(Point p, const BoxCWH& box) {
  return {box.left() + p.x * box.w, box.top() + p.y * box.h};
}

Polygon to_unit_frame(std::span<const Point> poly, const BoxCWH& box) {
  Polygon out;
  out.reserve(poly.size());
  for (const Point& p : poly) out.push_back(to_unit_frame(p, box));
  return out;
}

Polygon from_unit_frame(std::span<const Point> poly, const BoxCWH& box) {
  Polygon out;
  out.reserve(poly.size());
  for (const Point& p : poly) out.push_back(from_unit_frame(p, box));
  return out;
}

}  // namespace polygcn
