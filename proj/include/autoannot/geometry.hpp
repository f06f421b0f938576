#pragma once

// Boxes, binary masks and polygons, conversions among them, and IoU.
//
// Pixel (x, y) covers the unit square [x, x+1) x [y, y+1). Contours are traced
// along pixel edges, so the polygon of a rectangular blob has integer corners
// and rasterizing it (pixel-center rule) gives the blob back exactly.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <queue>
#include <span>
#include <utility>
#include <vector>

#include "autoannot/error.hpp"

namespace autoannot {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

struct BBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  static BBox from_xywh(double x, double y, double w, double h) { return {x, y, x + w, y + h}; }

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  Point center() const { return {(x1 + x2) / 2.0, (y1 + y2) / 2.0}; }

  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x1 <= x2 &&
           y1 <= y2;
  }

  bool contains(const BBox& o) const { return o.x1 >= x1 && o.y1 >= y1 && o.x2 <= x2 && o.y2 <= y2; }

  friend bool operator==(const BBox&, const BBox&) = default;
};

inline double intersection_area(const BBox& a, const BBox& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

inline double iou_box(const BBox& a, const BBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Coordinate-wise envelope; the ROI of a detection cluster.
inline BBox envelope(std::span<const BBox> boxes) {
  if (boxes.empty()) return {};
  BBox out = boxes.front();
  for (const auto& b : boxes.subspan(1)) {
    out.x1 = std::min(out.x1, b.x1);
    out.y1 = std::min(out.y1, b.y1);
    out.x2 = std::max(out.x2, b.x2);
    out.y2 = std::max(out.y2, b.y2);
  }
  return out;
}

/// Half-open integer pixel rectangle [x0, x1) x [y0, y1).
struct PixelRect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool empty() const { return x1 <= x0 || y1 <= y0; }

  PixelRect intersect(const PixelRect& o) const {
    return {std::max(x0, o.x0), std::max(y0, o.y0), std::min(x1, o.x1), std::min(y1, o.y1)};
  }
  PixelRect unite(const PixelRect& o) const {
    if (empty()) return o;
    if (o.empty()) return *this;
    return {std::min(x0, o.x0), std::min(y0, o.y0), std::max(x1, o.x1), std::max(y1, o.y1)};
  }

  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

/// A frame-sized binary mask. Only the tight window around the foreground is
/// stored, so masks of small objects on large frames stay cheap; all
/// observable behaviour is that of a dense width x height bit grid.
class BinaryMask {
 public:
  BinaryMask() : BinaryMask(1, 1) {}

  BinaryMask(int width, int height) : width_(width), height_(height) {
    if (width < 1 || height < 1) throw Error(ErrorCategory::invalid_argument, "mask dimensions must be >= 1");
  }

  /// Dense row-major constructor; nonzero bytes are foreground.
  BinaryMask(int width, int height, std::span<const std::uint8_t> data) : BinaryMask(width, height) {
    if (data.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
      throw Error(ErrorCategory::invalid_argument, "mask data length must equal width * height");
    assign_window({0, 0, width, height}, [&](int x, int y) { return data[static_cast<std::size_t>(y) * width + x] != 0; });
  }

  /// Builds a mask by evaluating `inside(x, y)` over `window` (clipped to the frame).
  template <class Pred>
  static BinaryMask from_predicate(int width, int height, PixelRect window, Pred&& inside) {
    BinaryMask m(width, height);
    m.assign_window(window, std::forward<Pred>(inside));
    return m;
  }

  /// Rebuilds from a serialized window (`bits` row-major within `window`).
  static BinaryMask from_window(int width, int height, PixelRect window, std::span<const std::uint8_t> bits) {
    if (!window.empty() &&
        bits.size() != static_cast<std::size_t>(window.width()) * static_cast<std::size_t>(window.height()))
      throw Error(ErrorCategory::invalid_argument, "mask window bits length mismatch");
    BinaryMask m(width, height);
    if (window.empty()) return m;
    m.assign_window(window, [&](int x, int y) {
      return bits[static_cast<std::size_t>(y - window.y0) * window.width() + (x - window.x0)] != 0;
    });
    return m;
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t count() const { return count_; }
  bool empty() const { return count_ == 0; }

  /// Tight pixel extent of the foreground; empty rect when the mask is empty.
  const PixelRect& window() const { return window_; }
  /// Row-major bits of window().
  const std::vector<std::uint8_t>& window_bits() const { return bits_; }

  bool at(int x, int y) const {
    if (x < window_.x0 || x >= window_.x1 || y < window_.y0 || y >= window_.y1) return false;
    return bits_[static_cast<std::size_t>(y - window_.y0) * window_.width() + (x - window_.x0)] != 0;
  }

  /// Box over pixel edges: a single pixel at (x, y) has box (x, y, x+1, y+1).
  std::optional<BBox> tight_box() const {
    if (empty()) return std::nullopt;
    return BBox{double(window_.x0), double(window_.y0), double(window_.x1), double(window_.y1)};
  }

  std::vector<std::uint8_t> dense() const {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(width_) * height_, 0);
    for (int y = window_.y0; y < window_.y1; ++y)
      for (int x = window_.x0; x < window_.x1; ++x)
        if (at(x, y)) out[static_cast<std::size_t>(y) * width_ + x] = 1;
    return out;
  }

  /// Shifted copy; pixels pushed outside the frame are lost.
  BinaryMask translated(int dx, int dy) const {
    const PixelRect w{window_.x0 + dx, window_.y0 + dy, window_.x1 + dx, window_.y1 + dy};
    return from_predicate(width_, height_, w, [&](int x, int y) { return at(x - dx, y - dy); });
  }

  BinaryMask united(const BinaryMask& o) const {
    require_same_frame(o);
    return from_predicate(width_, height_, window_.unite(o.window_),
                          [&](int x, int y) { return at(x, y) || o.at(x, y); });
  }

  /// Foreground of *this not covered by `o`.
  BinaryMask minus(const BinaryMask& o) const {
    require_same_frame(o);
    return from_predicate(width_, height_, window_, [&](int x, int y) { return at(x, y) && !o.at(x, y); });
  }

  std::size_t intersection_count(const BinaryMask& o) const {
    require_same_frame(o);
    const PixelRect r = window_.intersect(o.window_);
    std::size_t n = 0;
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) n += (at(x, y) && o.at(x, y)) ? 1 : 0;
    return n;
  }

  void require_same_frame(const BinaryMask& o) const {
    if (width_ != o.width_ || height_ != o.height_)
      throw Error(ErrorCategory::invalid_argument, "mask dimension mismatch");
  }

  friend bool operator==(const BinaryMask& a, const BinaryMask& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.window_ == b.window_ && a.bits_ == b.bits_;
  }

 private:
  template <class Pred>
  void assign_window(PixelRect window, Pred&& inside) {
    const PixelRect r = window.intersect({0, 0, width_, height_});
    window_ = {};
    bits_.clear();
    count_ = 0;
    if (r.empty()) return;
    // Evaluate once, then shrink to the tight extent.
    std::vector<std::uint8_t> tmp(static_cast<std::size_t>(r.width()) * r.height(), 0);
    PixelRect tight{r.x1, r.y1, r.x0, r.y0};
    for (int y = r.y0; y < r.y1; ++y) {
      for (int x = r.x0; x < r.x1; ++x) {
        if (!inside(x, y)) continue;
        tmp[static_cast<std::size_t>(y - r.y0) * r.width() + (x - r.x0)] = 1;
        ++count_;
        tight.x0 = std::min(tight.x0, x);
        tight.y0 = std::min(tight.y0, y);
        tight.x1 = std::max(tight.x1, x + 1);
        tight.y1 = std::max(tight.y1, y + 1);
      }
    }
    if (count_ == 0) return;
    window_ = tight;
    bits_.assign(static_cast<std::size_t>(tight.width()) * tight.height(), 0);
    for (int y = tight.y0; y < tight.y1; ++y)
      for (int x = tight.x0; x < tight.x1; ++x)
        bits_[static_cast<std::size_t>(y - tight.y0) * tight.width() + (x - tight.x0)] =
            tmp[static_cast<std::size_t>(y - r.y0) * r.width() + (x - r.x0)];
  }

  int width_ = 1;
  int height_ = 1;
  PixelRect window_{};
  std::vector<std::uint8_t> bits_;
  std::size_t count_ = 0;
};

inline double iou_mask(const BinaryMask& a, const BinaryMask& b) {
  a.require_same_frame(b);
  const std::size_t inter = a.intersection_count(b);
  const std::size_t uni = a.count() + b.count() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Closed polygon; the last vertex connects back to the first.
struct Polygon {
  std::vector<Point> vertices;

  std::size_t size() const { return vertices.size(); }
  bool valid() const {
    if (vertices.size() < 3) return false;
    return std::all_of(vertices.begin(), vertices.end(),
                       [](const Point& p) { return std::isfinite(p.x) && std::isfinite(p.y); });
  }

  friend bool operator==(const Polygon&, const Polygon&) = default;
};

inline BBox polygon_to_bbox(const Polygon& p) {
  if (p.vertices.empty()) return {};
  BBox b{p.vertices[0].x, p.vertices[0].y, p.vertices[0].x, p.vertices[0].y};
  for (const auto& v : p.vertices) {
    b.x1 = std::min(b.x1, v.x);
    b.y1 = std::min(b.y1, v.y);
    b.x2 = std::max(b.x2, v.x);
    b.y2 = std::max(b.y2, v.y);
  }
  return b;
}

inline double perimeter(const Polygon& p) {
  double len = 0.0;
  const std::size_t n = p.vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = p.vertices[i];
    const Point& b = p.vertices[(i + 1) % n];
    len += std::hypot(b.x - a.x, b.y - a.y);
  }
  return len;
}

/// Signed shoelace area (positive for clockwise order in image coordinates).
inline double signed_area(const Polygon& p) {
  double s = 0.0;
  const std::size_t n = p.vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = p.vertices[i];
    const Point& b = p.vertices[(i + 1) % n];
    s += a.x * b.y - b.x * a.y;
  }
  return s / 2.0;
}

/// Area centroid, falling back to the vertex mean for degenerate polygons.
inline Point centroid(const Polygon& p) {
  const double a = signed_area(p);
  const std::size_t n = p.vertices.size();
  if (n == 0) return {};
  if (std::abs(a) < 1e-12) {
    Point m;
    for (const auto& v : p.vertices) {
      m.x += v.x;
      m.y += v.y;
    }
    return {m.x / double(n), m.y / double(n)};
  }
  double cx = 0.0, cy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Point& u = p.vertices[i];
    const Point& v = p.vertices[(i + 1) % n];
    const double cross = u.x * v.y - v.x * u.y;
    cx += (u.x + v.x) * cross;
    cy += (u.y + v.y) * cross;
  }
  return {cx / (6.0 * a), cy / (6.0 * a)};
}

/// Pixel-center rasterization with the even-odd rule.
inline BinaryMask rasterize(const Polygon& p, int width, int height) {
  if (p.vertices.size() < 3) return BinaryMask(width, height);
  const BBox b = polygon_to_bbox(p);
  const PixelRect window{static_cast<int>(std::floor(b.x1)), static_cast<int>(std::floor(b.y1)),
                         static_cast<int>(std::ceil(b.x2)), static_cast<int>(std::ceil(b.y2))};
  const PixelRect r = window.intersect({0, 0, width, height});
  if (r.empty()) return BinaryMask(width, height);

  std::vector<std::uint8_t> bits(static_cast<std::size_t>(r.width()) * r.height(), 0);
  std::vector<double> xs;
  const std::size_t n = p.vertices.size();
  for (int y = r.y0; y < r.y1; ++y) {
    const double yc = y + 0.5;
    xs.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const Point& a = p.vertices[i];
      const Point& c = p.vertices[(i + 1) % n];
      if ((a.y <= yc) != (c.y <= yc)) xs.push_back(a.x + (yc - a.y) * (c.x - a.x) / (c.y - a.y));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const int from = std::max(r.x0, static_cast<int>(std::ceil(xs[k] - 0.5)));
      const int to = std::min(r.x1, static_cast<int>(std::ceil(xs[k + 1] - 0.5)));
      for (int x = from; x < to; ++x) bits[static_cast<std::size_t>(y - r.y0) * r.width() + (x - r.x0)] = 1;
    }
  }
  return BinaryMask::from_window(width, height, r, bits);
}

/// Polygon IoU is mask IoU of the two rasterized polygons on the frame grid.
inline double iou_polygon(const Polygon& a, const Polygon& b, int width, int height) {
  return iou_mask(rasterize(a, width, height), rasterize(b, width, height));
}

namespace detail {

/// Labels 4-connected foreground components inside the mask window and
/// returns the pixel set (window-local flags) of the largest one. Ties go to
/// the component met first in raster order.
inline std::vector<std::uint8_t> largest_component(const BinaryMask& m, std::size_t& size_out) {
  const PixelRect w = m.window();
  const int ww = w.width();
  const std::size_t n = static_cast<std::size_t>(ww) * w.height();
  std::vector<int> label(n, -1);
  const auto& bits = m.window_bits();
  int best_label = -1;
  std::size_t best_size = 0;
  int next = 0;
  std::queue<std::size_t> q;
  for (std::size_t s = 0; s < n; ++s) {
    if (!bits[s] || label[s] >= 0) continue;
    std::size_t size = 0;
    label[s] = next;
    q.push(s);
    while (!q.empty()) {
      const std::size_t c = q.front();
      q.pop();
      ++size;
      const int cx = static_cast<int>(c % ww);
      const int cy = static_cast<int>(c / ww);
      const int nx[4] = {cx + 1, cx - 1, cx, cx};
      const int ny[4] = {cy, cy, cy + 1, cy - 1};
      for (int k = 0; k < 4; ++k) {
        if (nx[k] < 0 || ny[k] < 0 || nx[k] >= ww || ny[k] >= w.height()) continue;
        const std::size_t nb = static_cast<std::size_t>(ny[k]) * ww + nx[k];
        if (bits[nb] && label[nb] < 0) {
          label[nb] = next;
          q.push(nb);
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best_label = next;
    }
    ++next;
  }
  std::vector<std::uint8_t> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) out[i] = (label[i] == best_label) ? 1 : 0;
  size_out = best_size;
  return out;
}

}  // namespace detail

/// Outer boundary of the largest 4-connected component, traced along pixel
/// edges with the foreground on the right (clockwise on screen). Only corner
/// vertices are emitted. Holes are ignored. Returns nullopt when the mask has
/// fewer than `min_pixels` foreground pixels.
inline std::optional<Polygon> mask_to_polygon(const BinaryMask& m, std::size_t min_pixels = 1) {
  if (m.count() < std::max<std::size_t>(min_pixels, 1)) return std::nullopt;
  std::size_t comp_size = 0;
  const std::vector<std::uint8_t> comp = detail::largest_component(m, comp_size);
  const PixelRect w = m.window();
  const auto fg = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= w.width() || y >= w.height()) return false;
    return comp[static_cast<std::size_t>(y) * w.width() + x] != 0;
  };

  // Topmost-leftmost pixel of the component; its top-left corner is on the outer boundary.
  int sx = 0, sy = 0;
  for (std::size_t i = 0; i < comp.size(); ++i) {
    if (comp[i]) {
      sx = static_cast<int>(i % w.width());
      sy = static_cast<int>(i / w.width());
      break;
    }
  }

  // Directions clockwise: E, S, W, N. For each, offsets (relative to the
  // current vertex) of the pixel ahead-left and ahead-right.
  static constexpr int kDx[4] = {1, 0, -1, 0};
  static constexpr int kDy[4] = {0, 1, 0, -1};
  static constexpr int kLeft[4][2] = {{0, -1}, {0, 0}, {-1, 0}, {-1, -1}};
  static constexpr int kRight[4][2] = {{0, 0}, {-1, 0}, {-1, -1}, {0, -1}};

  Polygon poly;
  int vx = sx, vy = sy;
  int dir = 0;
  const int start_dir = 0;
  // Arriving at the start vertex we come up the left side heading N, so it is a corner.
  poly.vertices.push_back({double(vx + w.x0), double(vy + w.y0)});
  const std::size_t guard = 4 * (comp.size() + 4);
  for (std::size_t step = 0; step < guard; ++step) {
    vx += kDx[dir];
    vy += kDy[dir];
    const bool right = fg(vx + kRight[dir][0], vy + kRight[dir][1]);
    const bool left = fg(vx + kLeft[dir][0], vy + kLeft[dir][1]);
    int nd = dir;
    if (!right)
      nd = (dir + 1) % 4;
    else if (left)
      nd = (dir + 3) % 4;
    if (vx == sx && vy == sy && nd == start_dir) break;
    if (nd != dir) poly.vertices.push_back({double(vx + w.x0), double(vy + w.y0)});
    dir = nd;
  }
  return poly;
}

/// Places n vertices at equal arc-length spacing along the closed outline,
/// starting at the first vertex.
inline Polygon resample_polygon(const Polygon& p, std::size_t n) {
  if (n < 3) throw Error(ErrorCategory::invalid_argument, "resample_polygon needs n >= 3");
  const double total = perimeter(p);
  if (!(total > 0.0)) throw Error(ErrorCategory::invalid_argument, "cannot resample a zero-perimeter polygon");
  const std::size_t m = p.vertices.size();
  const double step = total / static_cast<double>(n);

  Polygon out;
  out.vertices.reserve(n);
  std::size_t edge = 0;
  double edge_start = 0.0;  // arc length at the start of `edge`
  for (std::size_t i = 0; i < n; ++i) {
    const double target = step * static_cast<double>(i);
    for (;;) {
      const Point& a = p.vertices[edge % m];
      const Point& b = p.vertices[(edge + 1) % m];
      const double len = std::hypot(b.x - a.x, b.y - a.y);
      if (target <= edge_start + len || edge + 1 >= m) {
        const double t = len > 0.0 ? std::clamp((target - edge_start) / len, 0.0, 1.0) : 0.0;
        out.vertices.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
        break;
      }
      edge_start += len;
      ++edge;
    }
  }
  return out;
}

}  // namespace autoannot
