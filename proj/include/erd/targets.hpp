#pragma once

#include <array>
#include <cmath>
#include <tuple>
#include <vector>

#include "erd/detector.hpp"
#include "erd/synthshapes.hpp"

namespace erd::det {

struct LevelAssignment {
  int h = 0, w = 0, stride = 0;
  std::vector<int> label;                       // category id, -1 background
  std::vector<std::array<double, 4>> edges;     // l, t, r, b in stride units
  std::vector<double> matched_area;

  int locations() const { return h * w; }
};

struct Assignment {
  std::vector<LevelAssignment> levels;

  int num_positives() const {
    int n = 0;
    for (const auto& l : levels) {
      for (int v : l.label) n += (v >= 0);
    }
    return n;
  }
};

// A location is positive iff its center lies inside the central 50% region
// of a ground-truth box and the box's edge distances are representable in
// [0, num_bins - 1] at that level. Overlapping boxes resolve to the smaller
// area (further ties break on category then coordinates, so the result does
// not depend on annotation order).
inline Assignment assign_targets(const std::vector<synth::Annotation>& anns,
                                 int image_size, const HeadConfig& cfg) {
  Assignment out;
  for (int stride : cfg.pyramid_strides) {
    LevelAssignment lvl;
    lvl.stride = stride;
    lvl.h = image_size / stride;
    lvl.w = image_size / stride;
    lvl.label.assign(lvl.h * lvl.w, -1);
    lvl.edges.assign(lvl.h * lvl.w, {0, 0, 0, 0});
    lvl.matched_area.assign(lvl.h * lvl.w, 0.0);
    const double max_edge = cfg.num_bins - 1;
    for (int y = 0; y < lvl.h; ++y) {
      for (int x = 0; x < lvl.w; ++x) {
        const double cx = (x + 0.5) * stride;
        const double cy = (y + 0.5) * stride;
        const int loc = y * lvl.w + x;
        for (const auto& a : anns) {
          const Box& b = a.box;
          const double qw = b.width() / 4.0, qh = b.height() / 4.0;
          if (cx < b.x0 + qw || cx > b.x1 - qw || cy < b.y0 + qh ||
              cy > b.y1 - qh) {
            continue;
          }
          const double l = (cx - b.x0) / stride;
          const double t = (cy - b.y0) / stride;
          const double r = (b.x1 - cx) / stride;
          const double bt = (b.y1 - cy) / stride;
          if (l > max_edge || t > max_edge || r > max_edge || bt > max_edge) {
            continue;
          }
          const double area = b.area();
          const std::array<double, 4> cand{l, t, r, bt};
          if (lvl.label[loc] >= 0) {
            const auto cur_key =
                std::make_tuple(lvl.matched_area[loc], lvl.label[loc],
                                lvl.edges[loc]);
            const auto cand_key = std::make_tuple(area, a.category_id, cand);
            if (!(cand_key < cur_key)) continue;
          }
          lvl.label[loc] = a.category_id;
          lvl.edges[loc] = cand;
          lvl.matched_area[loc] = area;
        }
      }
    }
    out.levels.push_back(std::move(lvl));
  }
  return out;
}

}  // namespace erd::det
