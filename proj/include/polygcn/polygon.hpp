#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "polygcn/boxes.hpp"

namespace polygcn {

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

using Polygon = std::vector<Point>;

/// Shoelace area. With y pointing down (image convention) a positive value
/// means the vertices run clockwise on screen.
double signed_area(std::span<const Point> poly);
double perimeter(std::span<const Point> poly);
BoxCWH bounding_box(std::span<const Point> poly);
bool is_clockwise(std::span<const Point> poly);

/// Even-odd membership test.
bool point_in_polygon(std::span<const Point> poly, Point p);

/// Row-major occupancy grid of `rows` x `cols` cells, cell (r, c) covering
/// [x0 + c*dx, x0 + (c+1)*dx) x [y0 + r*dy, ...). A cell is set when its
/// centre lies inside the polygon under the even-odd rule.
struct RasterGrid {
  double x0 = 0.0, y0 = 0.0, dx = 1.0, dy = 1.0;
  std::size_t rows = 0, cols = 0;
};
std::vector<std::uint8_t> fill_polygon(std::span<const Point> poly, const RasterGrid& grid);

/// Maps between image pixels and the unit frame of a box
/// (0 at left/top edge, 1 at right/bottom edge).
Point to_unit_frame(Point p, const BoxCWH& box);
Point from_unit_frame(Point p, const BoxCWH& box);
Polygon to_unit_frame(std::span<const Point> poly, const BoxCWH& box);
Polygon from_unit_frame(std::span<const Point> poly, const BoxCWH& box);

/// Integer line stepping between two grid cells (inclusive), calling
/// `plot(row, col)` for every visited cell.
template <class Plot>
void draw_line(long r0, long c0, long r1, long c1, Plot&& plot) {
  const long dc = c1 > c0 ? c1 - c0 : c0 - c1;
  const long dr = r1 > r0 ? r0 - r1 : r1 - r0;
  const long sc = c0 < c1 ? 1 : -1;
  const long sr = r0 < r1 ? 1 : -1;
  long err = dc + dr;
  while (true) {
    plot(r0, c0);
    if (r0 == r1 && c0 == c1) break;
    const long e2 = 2 * err;
    if (e2 >= dr) {
      err += dr;
      c0 += sc;
    }
    if (e2 <= dc) {
      err += dc;
      r0 += sr;
    }
  }
}

}  // namespace polygcn
