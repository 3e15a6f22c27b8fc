#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

namespace erd {

// Axis-aligned box, (x0, y0) top-left inclusive, (x1, y1) exclusive.
struct Box {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const {
    return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0);
  }
};

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

struct Detection {
  Box box;
  int category = 0;
  double score = 0.0;
};

// Greedy NMS. Keeps the highest-scoring box of every overlapping group and
// suppresses boxes whose IoU with a kept box exceeds `iou_thr`. Returns
// indices into `dets`, descending by score; score ties break by index so
// the result is deterministic.
inline std::vector<int> nms(const std::vector<Detection>& dets,
                            double iou_thr) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;
  });
  std::vector<int> keep;
  std::vector<char> removed(dets.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const int a = order[i];
    if (removed[a]) continue;
    keep.push_back(a);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const int b = order[j];
      if (!removed[b] && iou(dets[a].box, dets[b].box) > iou_thr) {
        removed[b] = 1;
      }
    }
  }
  return keep;
}

}  // namespace erd
