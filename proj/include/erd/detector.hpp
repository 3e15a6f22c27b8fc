#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "erd/box.hpp"
#include "erd/net.hpp"
#include "erd/rng.hpp"
#include "erd/tensor.hpp"

namespace erd::det {

// ---------------------------------------------------------------------------
// Configuration and responses

struct HeadConfig {
  int num_categories_total = 16;  // channel budget across all steps
  int num_bins = 8;               // per box edge
  std::vector<int> pyramid_strides = {8, 16};
  int channels = 64;

  bool operator==(const HeadConfig&) const = default;

  void validate() const {
    if (num_categories_total < 1) {
      throw std::invalid_argument("HeadConfig: need at least one category");
    }
    if (num_bins < 2) {
      throw std::invalid_argument("HeadConfig: num_bins must be >= 2");
    }
    if (channels < 1) {
      throw std::invalid_argument("HeadConfig: channels must be positive");
    }
    if (pyramid_strides.empty()) {
      throw std::invalid_argument("HeadConfig: need at least one stride");
    }
    for (std::size_t i = 1; i < pyramid_strides.size(); ++i) {
      if (pyramid_strides[i] <= pyramid_strides[i - 1]) {
        throw std::invalid_argument(
            "HeadConfig: strides must be strictly increasing");
      }
    }
  }
};

// Raw head outputs for one pyramid level. Locations are indexed row-major
// (y * w + x); the location center in pixels is ((x + 0.5) * stride,
// (y + 0.5) * stride).
struct ResponseLevel {
  int h = 0, w = 0, stride = 0;
  Tensor3 cls;  // h x w x num_categories
  Tensor3 reg;  // h x w x (4 * num_bins), edge-major: [l, t, r, b]

  int locations() const { return h * w; }
};

struct ResponseSet {
  int num_categories = 0;
  int num_bins = 0;
  std::vector<ResponseLevel> levels;

  int total_locations() const {
    int n = 0;
    for (const auto& l : levels) n += l.locations();
    return n;
  }
};

// Gradient buffers matching a ResponseSet.
struct ResponseGrad {
  std::vector<Tensor3> d_cls, d_reg;

  static ResponseGrad zeros_like(const ResponseSet& rs) {
    ResponseGrad g;
    for (const auto& l : rs.levels) {
      g.d_cls.emplace_back(l.cls.h, l.cls.w, l.cls.c);
      g.d_reg.emplace_back(l.reg.h, l.reg.w, l.reg.c);
    }
    return g;
  }

  void axpy(double a, const ResponseGrad& other) {
    for (std::size_t l = 0; l < d_cls.size(); ++l) {
      for (std::size_t i = 0; i < d_cls[l].size(); ++i) {
        d_cls[l].data[i] += a * other.d_cls[l].data[i];
      }
      for (std::size_t i = 0; i < d_reg[l].size(); ++i) {
        d_reg[l].data[i] += a * other.d_reg[l].data[i];
      }
    }
  }
};

// ---------------------------------------------------------------------------
// The detector: 4 stride-2 conv stages, a 2-level top-down pyramid and a
// shared head emitting per-category logits plus per-edge bin logits.

class TinyDet {
 public:
  TinyDet() = default;

  explicit TinyDet(const HeadConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    if (cfg.pyramid_strides != std::vector<int>{8, 16}) {
      throw std::invalid_argument(
          "TinyDet: this head supports pyramid_strides [8, 16]");
    }
    const int c = cfg.channels;
    s1_ = Conv2d(3, c, 3, 2, 1);
    s2_ = Conv2d(c, c, 3, 2, 1);
    s3_ = Conv2d(c, c, 3, 2, 1);
    s4_ = Conv2d(c, c, 3, 2, 1);
    lat4_ = Conv2d(c, c, 1, 1, 0);
    lat5_ = Conv2d(c, c, 1, 1, 0);
    fpn4_ = Conv2d(c, c, 3, 1, 1);
    fpn5_ = Conv2d(c, c, 3, 1, 1);
    cls_tower_ = Conv2d(c, c, 3, 1, 1);
    reg_tower_ = Conv2d(c, c, 3, 1, 1);
    cls_head_ = Conv2d(c, cfg.num_categories_total, 3, 1, 1);
    reg_head_ = Conv2d(c, 4 * cfg.num_bins, 3, 1, 1);
  }

  const HeadConfig& config() const { return cfg_; }

  void init_params(std::uint64_t seed) {
    Rng rng(seed);
    for (Conv2d* conv : layers()) conv->init_he(rng);
    // prior bias keeps early classification scores near 0.01
    const double prior = -std::log((1.0 - 0.01) / 0.01);
    for (auto& v : cls_head_.b) v = prior;
  }

  struct Workspace {
    Tensor3 a1, a2, a3, a4;       // post-ReLU stage outputs
    Tensor3 l4, l5, m4, p4, p5;   // pyramid
    Tensor3 tc[2], tr[2];         // post-ReLU head towers per level
    ResponseSet responses;
  };

  void forward(const Tensor3& image, Workspace& ws) const {
    check_image(image);
    Tensor3 z;
    s1_.forward(image, z);
    relu_forward(z, ws.a1);
    s2_.forward(ws.a1, z);
    relu_forward(z, ws.a2);
    s3_.forward(ws.a2, z);
    relu_forward(z, ws.a3);
    s4_.forward(ws.a3, z);
    relu_forward(z, ws.a4);

    lat4_.forward(ws.a3, ws.l4);
    lat5_.forward(ws.a4, ws.l5);
    upsample2_forward(ws.l5, ws.m4);
    add_inplace(ws.m4, ws.l4);
    fpn4_.forward(ws.m4, ws.p4);
    fpn5_.forward(ws.l5, ws.p5);

    ws.responses.num_categories = cfg_.num_categories_total;
    ws.responses.num_bins = cfg_.num_bins;
    ws.responses.levels.assign(2, ResponseLevel{});
    const Tensor3* pyramid[2] = {&ws.p4, &ws.p5};
    for (int lvl = 0; lvl < 2; ++lvl) {
      ResponseLevel& out = ws.responses.levels[lvl];
      out.h = pyramid[lvl]->h;
      out.w = pyramid[lvl]->w;
      out.stride = cfg_.pyramid_strides[lvl];
      cls_tower_.forward(*pyramid[lvl], z);
      relu_forward(z, ws.tc[lvl]);
      cls_head_.forward(ws.tc[lvl], out.cls);
      reg_tower_.forward(*pyramid[lvl], z);
      relu_forward(z, ws.tr[lvl]);
      reg_head_.forward(ws.tr[lvl], out.reg);
    }
  }

  ResponseSet forward(const Tensor3& image) const {
    Workspace ws;
    forward(image, ws);
    return std::move(ws.responses);
  }

  // Accumulates parameter gradients for one image. `image` must be the
  // forward input that produced `ws`.
  void backward(const Tensor3& image, const Workspace& ws,
                const ResponseGrad& grad) {
    Tensor3 dp[2];
    Tensor3 tmp, dtower;
    const Tensor3* pyramid[2] = {&ws.p4, &ws.p5};
    for (int lvl = 0; lvl < 2; ++lvl) {
      dp[lvl].resize(pyramid[lvl]->h, pyramid[lvl]->w, pyramid[lvl]->c);
      cls_head_.backward(ws.tc[lvl], grad.d_cls[lvl], &tmp);
      relu_backward(ws.tc[lvl], tmp, dtower);
      cls_tower_.backward(*pyramid[lvl], dtower, &tmp);
      add_inplace(dp[lvl], tmp);
      reg_head_.backward(ws.tr[lvl], grad.d_reg[lvl], &tmp);
      relu_backward(ws.tr[lvl], tmp, dtower);
      reg_tower_.backward(*pyramid[lvl], dtower, &tmp);
      add_inplace(dp[lvl], tmp);
    }

    Tensor3 dm4, dl4, dl5, dl5up, da4, da3, dz;
    fpn4_.backward(ws.m4, dp[0], &dm4);
    fpn5_.backward(ws.l5, dp[1], &dl5);
    dl4 = dm4;  // add node fans out
    dl5up.resize(ws.l5.h, ws.l5.w, ws.l5.c);
    upsample2_backward(dm4, dl5up);
    add_inplace(dl5, dl5up);

    lat5_.backward(ws.a4, dl5, &da4);
    lat4_.backward(ws.a3, dl4, &da3);

    relu_backward(ws.a4, da4, dz);
    Tensor3 da3s;
    s4_.backward(ws.a3, dz, &da3s);
    add_inplace(da3, da3s);
    relu_backward(ws.a3, da3, dz);
    Tensor3 da2;
    s3_.backward(ws.a2, dz, &da2);
    relu_backward(ws.a2, da2, dz);
    Tensor3 da1;
    s2_.backward(ws.a1, dz, &da1);
    relu_backward(ws.a1, da1, dz);
    s1_.backward(image, dz, nullptr);
  }

  std::vector<Conv2d*> layers() {
    return {&s1_,   &s2_,   &s3_,        &s4_,        &lat4_,     &lat5_,
            &fpn4_, &fpn5_, &cls_tower_, &reg_tower_, &cls_head_, &reg_head_};
  }
  std::vector<const Conv2d*> layers() const {
    return {&s1_,   &s2_,   &s3_,        &s4_,        &lat4_,     &lat5_,
            &fpn4_, &fpn5_, &cls_tower_, &reg_tower_, &cls_head_, &reg_head_};
  }

  void zero_grads() {
    for (Conv2d* conv : layers()) conv->zero_grad();
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Conv2d* conv : layers()) n += conv->w.size() + conv->b.size();
    return n;
  }

 private:
  void check_image(const Tensor3& image) const {
    if (image.c != 3) throw std::invalid_argument("TinyDet: expected RGB input");
    for (int s : cfg_.pyramid_strides) {
      if (image.h % s != 0 || image.w % s != 0) {
        throw std::invalid_argument(
            "TinyDet: image dimensions must be divisible by every stride");
      }
    }
  }

  HeadConfig cfg_;
  Conv2d s1_, s2_, s3_, s4_;
  Conv2d lat4_, lat5_, fpn4_, fpn5_;
  Conv2d cls_tower_, reg_tower_, cls_head_, reg_head_;
};

// ---------------------------------------------------------------------------
// Snapshots

struct DetectorSnapshot {
  HeadConfig config;
  int step_index = 0;
  std::vector<int> categories_seen;
  TinyDet net;
};

namespace io {

constexpr std::uint32_t kSnapshotMagic = 0x45524431;  // "ERD1"
constexpr std::uint32_t kSnapshotVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("snapshot: truncated file");
  return v;
}

inline void put_vec(std::ostream& out, const std::vector<double>& v) {
  put<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline void get_vec(std::istream& in, std::vector<double>& v) {
  const auto n = get<std::uint64_t>(in);
  if (n != v.size()) throw std::runtime_error("snapshot: block size mismatch");
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw std::runtime_error("snapshot: truncated file");
}

}  // namespace io

inline void save_snapshot(const std::string& path,
                          const DetectorSnapshot& snap) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  io::put(out, io::kSnapshotMagic);
  io::put(out, io::kSnapshotVersion);
  const HeadConfig& c = snap.config;
  io::put<std::int32_t>(out, c.num_categories_total);
  io::put<std::int32_t>(out, c.num_bins);
  io::put<std::int32_t>(out, c.channels);
  io::put<std::uint64_t>(out, c.pyramid_strides.size());
  for (int s : c.pyramid_strides) io::put<std::int32_t>(out, s);
  io::put<std::int32_t>(out, snap.step_index);
  io::put<std::uint64_t>(out, snap.categories_seen.size());
  for (int v : snap.categories_seen) io::put<std::int32_t>(out, v);
  const auto layers = snap.net.layers();
  io::put<std::uint64_t>(out, layers.size());
  for (const Conv2d* conv : layers) {
    io::put_vec(out, conv->w);
    io::put_vec(out, conv->b);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline DetectorSnapshot load_snapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  if (io::get<std::uint32_t>(in) != io::kSnapshotMagic) {
    throw std::runtime_error("not a detector snapshot: " + path);
  }
  if (io::get<std::uint32_t>(in) != io::kSnapshotVersion) {
    throw std::runtime_error("unsupported snapshot version: " + path);
  }
  HeadConfig cfg;
  cfg.num_categories_total = io::get<std::int32_t>(in);
  cfg.num_bins = io::get<std::int32_t>(in);
  cfg.channels = io::get<std::int32_t>(in);
  cfg.pyramid_strides.resize(io::get<std::uint64_t>(in));
  for (auto& s : cfg.pyramid_strides) s = io::get<std::int32_t>(in);
  DetectorSnapshot snap;
  snap.config = cfg;
  snap.step_index = io::get<std::int32_t>(in);
  snap.categories_seen.resize(io::get<std::uint64_t>(in));
  for (auto& v : snap.categories_seen) v = io::get<std::int32_t>(in);
  snap.net = TinyDet(cfg);
  const auto n_layers = io::get<std::uint64_t>(in);
  auto layers = snap.net.layers();
  if (n_layers != layers.size()) {
    throw std::runtime_error("snapshot: layer count mismatch");
  }
  for (Conv2d* conv : layers) {
    io::get_vec(in, conv->w);
    io::get_vec(in, conv->b);
  }
  return snap;
}

// Loads and rejects snapshots whose head configuration differs from the one
// the caller expects.
inline DetectorSnapshot load_snapshot(const std::string& path,
                                      const HeadConfig& expected) {
  DetectorSnapshot snap = load_snapshot(path);
  if (!(snap.config == expected)) {
    throw std::runtime_error("snapshot head config mismatch: " + path);
  }
  return snap;
}

// ---------------------------------------------------------------------------
// Decoding

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Expectation of the softmax over `n` bin logits, in bin units.
inline double decode_edge(const double* bin_logits, int n) {
  double m = bin_logits[0];
  for (int i = 1; i < n; ++i) m = std::max(m, bin_logits[i]);
  double z = 0.0, e = 0.0;
  for (int i = 0; i < n; ++i) {
    const double p = std::exp(bin_logits[i] - m);
    z += p;
    e += p * i;
  }
  return e / z;
}

// Decoded box at a location, in pixels (unclipped).
inline Box decode_box_at(const ResponseLevel& lvl, int loc, int num_bins) {
  const int y = loc / lvl.w, x = loc % lvl.w;
  const double cx = (x + 0.5) * lvl.stride;
  const double cy = (y + 0.5) * lvl.stride;
  const double* reg = lvl.reg.loc(y, x);
  const double l = decode_edge(reg + 0 * num_bins, num_bins) * lvl.stride;
  const double t = decode_edge(reg + 1 * num_bins, num_bins) * lvl.stride;
  const double r = decode_edge(reg + 2 * num_bins, num_bins) * lvl.stride;
  const double b = decode_edge(reg + 3 * num_bins, num_bins) * lvl.stride;
  return Box{cx - l, cy - t, cx + r, cy + b};
}

// Dense decode followed by per-category NMS. Scores are per-category
// sigmoids; edges are bin-distribution expectations.
inline std::vector<Detection> decode_boxes(const ResponseSet& rs,
                                           double score_threshold,
                                           double nms_iou) {
  if (score_threshold < 0.0 || score_threshold > 1.0 || nms_iou < 0.0 ||
      nms_iou > 1.0) {
    throw std::invalid_argument("decode_boxes: thresholds must be in [0,1]");
  }
  std::vector<Detection> candidates;
  double img_w = 0.0, img_h = 0.0;
  for (const auto& lvl : rs.levels) {
    img_w = std::max(img_w, static_cast<double>(lvl.w * lvl.stride));
    img_h = std::max(img_h, static_cast<double>(lvl.h * lvl.stride));
  }
  for (const auto& lvl : rs.levels) {
    for (int loc = 0; loc < lvl.locations(); ++loc) {
      const int y = loc / lvl.w, x = loc % lvl.w;
      const double* cls = lvl.cls.loc(y, x);
      Box box;
      bool decoded = false;
      for (int c = 0; c < rs.num_categories; ++c) {
        const double s = sigmoid(cls[c]);
        if (s < score_threshold) continue;
        if (!decoded) {
          box = decode_box_at(lvl, loc, rs.num_bins);
          box.x0 = std::clamp(box.x0, 0.0, img_w);
          box.y0 = std::clamp(box.y0, 0.0, img_h);
          box.x1 = std::clamp(box.x1, 0.0, img_w);
          box.y1 = std::clamp(box.y1, 0.0, img_h);
          decoded = true;
        }
        candidates.push_back({box, c, s});
      }
    }
  }

  std::vector<Detection> out;
  std::vector<Detection> group;
  std::set<int> cats;
  for (const auto& d : candidates) cats.insert(d.category);
  for (int c : cats) {
    group.clear();
    for (const auto& d : candidates) {
      if (d.category == c) group.push_back(d);
    }
    for (int idx : nms(group, nms_iou)) out.push_back(group[idx]);
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a,
                                              const Detection& b) {
    return a.score > b.score;
  });
  return out;
}

}  // namespace erd::det
