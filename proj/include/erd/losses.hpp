#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "erd/detector.hpp"
#include "erd/targets.hpp"

namespace erd::det {

namespace detail {

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// log(sigmoid(z)) without overflow.
inline double log_sigmoid(double z) { return -softplus(-z); }

constexpr double kFocalGamma = 2.0;
constexpr double kFocalAlpha = 0.25;

// Sigmoid focal loss for one logit. Returns the loss value and writes the
// d/dz into *dz.
inline double focal_term(double z, bool positive, double* dz) {
  const double p = sigmoid(z);
  const double u = 1.0 - p;
  if (positive) {
    const double logp = log_sigmoid(z);
    const double loss = -kFocalAlpha * u * u * logp;
    *dz = kFocalAlpha * u * u * (2.0 * p * logp - u);
    return loss;
  }
  const double logu = log_sigmoid(-z);
  const double loss = -(1.0 - kFocalAlpha) * p * p * logu;
  *dz = (1.0 - kFocalAlpha) * p * p * (p - 2.0 * u * logu);
  return loss;
}

struct SoftmaxScratch {
  std::vector<double> q;      // probabilities
  std::vector<double> logq;   // log-probabilities
  double expectation = 0.0;

  void compute(const double* z, int n) {
    q.resize(n);
    logq.resize(n);
    double m = z[0];
    for (int i = 1; i < n; ++i) m = std::max(m, z[i]);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      q[i] = std::exp(z[i] - m);
      sum += q[i];
    }
    const double logsum = std::log(sum);
    expectation = 0.0;
    for (int i = 0; i < n; ++i) {
      q[i] /= sum;
      logq[i] = z[i] - m - logsum;
      expectation += q[i] * i;
    }
  }
};

}  // namespace detail

struct DetectorLoss {
  double total = 0.0;
  double focal = 0.0;
  double dfl = 0.0;
  double iou = 0.0;
  int num_positives = 0;
};

// Detector training loss: sigmoid focal classification over the active
// category channels, distribution focal loss over the four edge-bin
// distributions of positives, and IoU loss on decoded positive boxes. Every
// term is averaged over the positive count. Analytic gradients with respect
// to both logit grids are accumulated into `grad` when provided.
inline DetectorLoss detector_loss(const ResponseSet& rs, const Assignment& as,
                                  const std::vector<int>& active_categories,
                                  ResponseGrad* grad = nullptr) {
  if (rs.levels.size() != as.levels.size()) {
    throw std::invalid_argument("detector_loss: level count mismatch");
  }
  std::vector<char> active(rs.num_categories, 0);
  for (int c : active_categories) {
    if (c < 0 || c >= rs.num_categories) {
      throw std::invalid_argument("detector_loss: category out of budget");
    }
    active[c] = 1;
  }

  DetectorLoss out;
  out.num_positives = as.num_positives();
  const double norm = 1.0 / std::max(1, out.num_positives);
  const int n = rs.num_bins;
  detail::SoftmaxScratch sm;

  for (std::size_t li = 0; li < rs.levels.size(); ++li) {
    const ResponseLevel& lvl = rs.levels[li];
    const LevelAssignment& la = as.levels[li];
    if (lvl.h != la.h || lvl.w != la.w) {
      throw std::invalid_argument("detector_loss: level shape mismatch");
    }
    for (int loc = 0; loc < lvl.locations(); ++loc) {
      const int y = loc / lvl.w, x = loc % lvl.w;
      const double* cls = lvl.cls.loc(y, x);
      const int label = la.label[loc];

      for (int c = 0; c < rs.num_categories; ++c) {
        if (!active[c]) continue;
        double dz = 0.0;
        out.focal += detail::focal_term(cls[c], label == c, &dz);
        if (grad) grad->d_cls[li].at(y, x, c) += dz * norm;
      }

      if (label < 0) continue;

      const double* reg = lvl.reg.loc(y, x);
      // distribution focal loss per edge
      for (int e = 0; e < 4; ++e) {
        const double t = la.edges[loc][e];
        int k = std::min(static_cast<int>(t), n - 2);
        const double wl = k + 1 - t, wr = t - k;
        sm.compute(reg + e * n, n);
        out.dfl += -(wl * sm.logq[k] + wr * sm.logq[k + 1]);
        if (grad) {
          for (int j = 0; j < n; ++j) {
            double wj = 0.0;
            if (j == k) wj += wl;
            if (j == k + 1) wj += wr;
            grad->d_reg[li].at(y, x, e * n + j) += (sm.q[j] - wj) * norm;
          }
        }
      }

      // IoU loss on the decoded box
      const double cx = (x + 0.5) * lvl.stride;
      const double cy = (y + 0.5) * lvl.stride;
      double dist[4];        // decoded pixel distances l, t, r, b
      detail::SoftmaxScratch edge_sm[4];
      for (int e = 0; e < 4; ++e) {
        edge_sm[e].compute(reg + e * n, n);
        dist[e] = edge_sm[e].expectation * lvl.stride;
      }
      const double px0 = cx - dist[0], py0 = cy - dist[1];
      const double px1 = cx + dist[2], py1 = cy + dist[3];
      const double qx0 = cx - la.edges[loc][0] * lvl.stride;
      const double qy0 = cy - la.edges[loc][1] * lvl.stride;
      const double qx1 = cx + la.edges[loc][2] * lvl.stride;
      const double qy1 = cy + la.edges[loc][3] * lvl.stride;

      const double iw = std::min(px1, qx1) - std::max(px0, qx0);
      const double ih = std::min(py1, qy1) - std::max(py0, qy0);
      double diou[4] = {0, 0, 0, 0};  // d(IoU)/d(dist l,t,r,b)
      double iou_val = 0.0;
      if (iw > 0.0 && ih > 0.0 && px1 > px0 && py1 > py0) {
        const double inter = iw * ih;
        const double pa = (px1 - px0) * (py1 - py0);
        const double qa = (qx1 - qx0) * (qy1 - qy0);
        const double uni = pa + qa - inter;
        iou_val = inter / uni;
        // corner derivatives
        const double di_px0 = (px0 > qx0) ? -ih : 0.0;
        const double di_px1 = (px1 < qx1) ? ih : 0.0;
        const double di_py0 = (py0 > qy0) ? -iw : 0.0;
        const double di_py1 = (py1 < qy1) ? iw : 0.0;
        const double pw = px1 - px0, ph = py1 - py0;
        const double da_px0 = -ph, da_px1 = ph, da_py0 = -pw, da_py1 = pw;
        auto diou_d = [&](double di, double da) {
          return (di * uni - inter * (da - di)) / (uni * uni);
        };
        // chain through the corner/distance signs:
        // px0 = cx - l, py0 = cy - t, px1 = cx + r, py1 = cy + b
        diou[0] = -diou_d(di_px0, da_px0);
        diou[1] = -diou_d(di_py0, da_py0);
        diou[2] = diou_d(di_px1, da_px1);
        diou[3] = diou_d(di_py1, da_py1);
      }
      out.iou += 1.0 - iou_val;
      if (grad) {
        for (int e = 0; e < 4; ++e) {
          const double dl_ddist = -diou[e];  // loss = 1 - IoU
          if (dl_ddist == 0.0) continue;
          const double ex = edge_sm[e].expectation;
          for (int j = 0; j < n; ++j) {
            const double dq = edge_sm[e].q[j] * (j - ex);
            grad->d_reg[li].at(y, x, e * n + j) +=
                dl_ddist * lvl.stride * dq * norm;
          }
        }
      }
    }
  }

  out.focal *= norm;
  out.dfl *= norm;
  out.iou *= norm;
  out.total = out.focal + out.dfl + out.iou;
  return out;
}

}  // namespace erd::det
