#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "erd/box.hpp"
#include "erd/image.hpp"
#include "erd/rng.hpp"

namespace erd::synth {

// ---------------------------------------------------------------------------
// Scene specification

struct SceneSpec {
  int image_size = 128;  // square
  int num_categories = 16;
  int objects_min = 1;
  int objects_max = 6;
  int min_box_side = 12;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_categories < 2) {
      throw std::invalid_argument("SceneSpec: num_categories must be >= 2");
    }
    if (min_box_side <= 0) {
      throw std::invalid_argument("SceneSpec: min_box_side must be positive");
    }
    if (image_size < 4 * min_box_side) {
      throw std::invalid_argument(
          "SceneSpec: image_size must be >= 4 * min_box_side");
    }
    if (objects_min <= 0 || objects_max < objects_min) {
      throw std::invalid_argument(
          "SceneSpec: objects_per_image range must be positive and ordered");
    }
  }
};

struct Annotation {
  int category_id = 0;
  Box box;
};

struct ImageRecord {
  std::string name;
  std::vector<Annotation> annotations;
};

struct DatasetPartition {
  std::string dir;  // directory holding the image files
  std::vector<ImageRecord> images;

  std::size_t annotation_count() const {
    std::size_t n = 0;
    for (const auto& im : images) n += im.annotations.size();
    return n;
  }
};

struct Dataset {
  std::string root;
  SceneSpec spec;
  DatasetPartition train, test;
};

// ---------------------------------------------------------------------------
// Incremental task splits

struct TaskSplit {
  std::vector<std::vector<int>> steps;

  int num_steps() const { return static_cast<int>(steps.size()); }

  // Union of the category sets of steps [0, step_index].
  std::vector<int> categories_up_to(int step_index) const {
    std::vector<int> out;
    for (int s = 0; s <= step_index && s < num_steps(); ++s) {
      out.insert(out.end(), steps[s].begin(), steps[s].end());
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  std::vector<int> all_categories() const {
    return categories_up_to(num_steps() - 1);
  }
};

namespace detail {
inline std::vector<int> id_range(int lo, int hi) {  // [lo, hi)
  std::vector<int> v;
  for (int i = lo; i < hi; ++i) v.push_back(i);
  return v;
}
}  // namespace detail

// Builds the incremental protocols. `base_fraction` sizes the first step.
// one_step with base_fraction == 1 degenerates to a single joint step.
inline TaskSplit make_protocol(const std::string& name, double base_fraction,
                               int num_categories) {
  if (num_categories < 2) {
    throw std::invalid_argument("make_protocol: need at least 2 categories");
  }
  const int n = num_categories;
  const int base = static_cast<int>(std::lround(base_fraction * n));
  TaskSplit split;
  if (name == "one_step") {
    if (base_fraction <= 0.0 || base_fraction > 1.0 || base == 0) {
      throw std::invalid_argument("one_step: base_fraction yields empty base");
    }
    split.steps.push_back(detail::id_range(0, base));
    if (base < n) split.steps.push_back(detail::id_range(base, n));
  } else if (name == "two_step" || name == "four_step") {
    const int increments = (name == "two_step") ? 2 : 4;
    if (base <= 0 || base >= n) {
      throw std::invalid_argument(name + ": base_fraction yields empty step");
    }
    const int rest = n - base;
    if (rest < increments) {
      throw std::invalid_argument(name + ": not enough categories per step");
    }
    split.steps.push_back(detail::id_range(0, base));
    int lo = base;
    for (int i = 0; i < increments; ++i) {
      const int size = rest / increments + (i < rest % increments ? 1 : 0);
      split.steps.push_back(detail::id_range(lo, lo + size));
      lo += size;
    }
  } else if (name == "reversed") {
    if (base <= 0 || base >= n) {
      throw std::invalid_argument("reversed: base_fraction yields empty step");
    }
    split.steps.push_back(detail::id_range(n - base, n));
    split.steps.push_back(detail::id_range(0, n - base));
  } else {
    throw std::invalid_argument("unknown protocol: " + name);
  }
  return split;
}

inline void write_split_file(const std::string& path, const TaskSplit& split) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& step : split.steps) {
    for (std::size_t i = 0; i < step.size(); ++i) {
      out << (i ? " " : "") << step[i];
    }
    out << "\n";
  }
}

inline TaskSplit read_split_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  TaskSplit split;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<int> step;
    int id;
    while (ls >> id) step.push_back(id);
    if (!step.empty()) split.steps.push_back(step);
  }
  return split;
}

// ---------------------------------------------------------------------------
// Rendering

enum class ShapeKind { Disc, Rect, Triangle, Cross };

struct Appearance {
  ShapeKind shape;
  std::uint8_t r, g, b;
};

namespace detail {

inline void hsv_to_rgb(double h, double s, double v, std::uint8_t* out) {
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c; g = x;
  } else if (hp < 2) {
    r = x; g = c;
  } else if (hp < 3) {
    g = c; b = x;
  } else if (hp < 4) {
    g = x; b = c;
  } else if (hp < 5) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  const double m = v - c;
  out[0] = static_cast<std::uint8_t>(std::lround((r + m) * 255.0));
  out[1] = static_cast<std::uint8_t>(std::lround((g + m) * 255.0));
  out[2] = static_cast<std::uint8_t>(std::lround((b + m) * 255.0));
}

}  // namespace detail

// Category -> (shape, color). Shapes cycle through the four kinds; the color
// advances by a golden-angle hue step per shape cycle so any category count
// gets visually distinct saturated colors.
inline Appearance category_appearance(int category_id) {
  static constexpr ShapeKind kinds[4] = {ShapeKind::Disc, ShapeKind::Rect,
                                         ShapeKind::Triangle,
                                         ShapeKind::Cross};
  Appearance ap;
  ap.shape = kinds[category_id % 4];
  const int group = category_id / 4;
  const double hue = std::fmod(group * 137.50776405003785, 360.0);
  std::uint8_t rgb[3];
  detail::hsv_to_rgb(hue, 0.95, 0.95, rgb);
  ap.r = rgb[0];
  ap.g = rgb[1];
  ap.b = rgb[2];
  return ap;
}

namespace detail {

inline void draw_shape(ImageU8& img, const Box& box, const Appearance& ap) {
  const int x0 = static_cast<int>(box.x0), y0 = static_cast<int>(box.y0);
  const int x1 = static_cast<int>(box.x1), y1 = static_cast<int>(box.y1);
  const double cx = (box.x0 + box.x1) / 2.0, cy = (box.y0 + box.y1) / 2.0;
  const double rx = (box.x1 - box.x0) / 2.0, ry = (box.y1 - box.y0) / 2.0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      bool inside = false;
      switch (ap.shape) {
        case ShapeKind::Rect:
          inside = true;
          break;
        case ShapeKind::Disc: {
          const double dx = (px - cx) / rx, dy = (py - cy) / ry;
          inside = dx * dx + dy * dy <= 1.0;
          break;
        }
        case ShapeKind::Triangle: {
          // apex top-center, base at the bottom edge
          const double t = (py - box.y0) / (box.y1 - box.y0);
          inside = std::fabs(px - cx) <= rx * t;
          break;
        }
        case ShapeKind::Cross: {
          const bool vbar = std::fabs(px - cx) <= rx / 3.0;
          const bool hbar = std::fabs(py - cy) <= ry / 3.0;
          inside = vbar || hbar;
          break;
        }
      }
      if (inside) {
        img.at(y, x, 0) = ap.r;
        img.at(y, x, 1) = ap.g;
        img.at(y, x, 2) = ap.b;
      }
    }
  }
}

inline std::string image_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d.ppm", index);
  return buf;
}

// Maximum IoU between generated objects (keeps label assignment sane).
constexpr double kMaxGenOverlap = 0.3;
constexpr int kPlacementAttempts = 40;

inline DatasetPartition generate_partition(const SceneSpec& spec,
                                           int num_images,
                                           const std::string& dir,
                                           std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  Rng rng(seed);
  DatasetPartition part;
  part.dir = dir;

  // Categories still owed an instance; guarantees per-partition coverage.
  std::deque<int> pending;
  for (int c = 0; c < spec.num_categories; ++c) pending.push_back(c);

  const int max_side =
      std::max(spec.min_box_side, std::min(spec.image_size / 3,
                                           3 * spec.min_box_side));
  for (int i = 0; i < num_images; ++i) {
    ImageU8 img(spec.image_size, spec.image_size);
    for (int y = 0; y < spec.image_size; ++y) {
      for (int x = 0; x < spec.image_size; ++x) {
        const int base = static_cast<int>(rng.uniform_int(92, 164));
        for (int ch = 0; ch < 3; ++ch) {
          const int v = base + static_cast<int>(rng.uniform_int(-10, 10));
          img.at(y, x, ch) = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
        }
      }
    }

    ImageRecord rec;
    rec.name = image_name(i);
    const int want =
        static_cast<int>(rng.uniform_int(spec.objects_min, spec.objects_max));
    for (int obj = 0; obj < want; ++obj) {
      int category;
      bool from_pending = !pending.empty();
      if (from_pending) {
        category = pending.front();
        pending.pop_front();
      } else {
        category = static_cast<int>(rng.uniform_int(0, spec.num_categories - 1));
      }
      bool placed = false;
      for (int attempt = 0; attempt < kPlacementAttempts && !placed;
           ++attempt) {
        const int w =
            static_cast<int>(rng.uniform_int(spec.min_box_side, max_side));
        const int h =
            static_cast<int>(rng.uniform_int(spec.min_box_side, max_side));
        const int x0 = static_cast<int>(rng.uniform_int(0, spec.image_size - w));
        const int y0 = static_cast<int>(rng.uniform_int(0, spec.image_size - h));
        const Box box{static_cast<double>(x0), static_cast<double>(y0),
                      static_cast<double>(x0 + w), static_cast<double>(y0 + h)};
        bool ok = true;
        for (const auto& a : rec.annotations) {
          if (iou(a.box, box) > kMaxGenOverlap) {
            ok = false;
            break;
          }
        }
        if (ok) {
          draw_shape(img, box, category_appearance(category));
          rec.annotations.push_back({category, box});
          placed = true;
        }
      }
      if (!placed && from_pending) pending.push_front(category);
    }
    write_ppm(dir + "/" + rec.name, img);
    part.images.push_back(std::move(rec));
  }

  if (!pending.empty()) {
    throw std::runtime_error(
        "generation error: category coverage constraint violated - category " +
        std::to_string(pending.front()) +
        " could not be placed in partition " + dir);
  }
  return part;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Annotation and metadata files

inline void write_annotations(const std::string& path,
                              const DatasetPartition& part) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "# synthshapes v1\n";
  for (const auto& im : part.images) {
    for (const auto& a : im.annotations) {
      out << im.name << " " << a.category_id << " "
          << static_cast<long>(a.box.x0) << " " << static_cast<long>(a.box.y0)
          << " " << static_cast<long>(a.box.x1) << " "
          << static_cast<long>(a.box.y1) << "\n";
    }
  }
}

inline DatasetPartition read_annotations(const std::string& path,
                                         const std::string& image_dir) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string header;
  std::getline(in, header);
  if (header != "# synthshapes v1") {
    throw std::runtime_error("unrecognized annotation header in " + path);
  }
  DatasetPartition part;
  part.dir = image_dir;
  std::string name;
  Annotation a;
  std::string last;
  while (in >> name >> a.category_id >> a.box.x0 >> a.box.y0 >> a.box.x1 >>
         a.box.y1) {
    if (part.images.empty() || part.images.back().name != name) {
      part.images.push_back({name, {}});
    }
    part.images.back().annotations.push_back(a);
  }
  return part;
}

inline void write_scene_spec(const std::string& path, const SceneSpec& spec) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "image_size = " << spec.image_size << "\n";
  out << "num_categories = " << spec.num_categories << "\n";
  out << "objects_min = " << spec.objects_min << "\n";
  out << "objects_max = " << spec.objects_max << "\n";
  out << "min_box_side = " << spec.min_box_side << "\n";
  out << "seed = " << spec.seed << "\n";
}

inline SceneSpec read_scene_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  SceneSpec spec;
  std::string key, eq;
  while (in >> key >> eq) {
    std::uint64_t value;
    if (!(in >> value)) break;
    if (key == "image_size") spec.image_size = static_cast<int>(value);
    else if (key == "num_categories") spec.num_categories = static_cast<int>(value);
    else if (key == "objects_min") spec.objects_min = static_cast<int>(value);
    else if (key == "objects_max") spec.objects_max = static_cast<int>(value);
    else if (key == "min_box_side") spec.min_box_side = static_cast<int>(value);
    else if (key == "seed") spec.seed = value;
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Public dataset operations

// Renders both partitions to disk. Deterministic for a fixed spec; every
// image carries at least one annotation and every category appears in both
// partitions (or generation fails naming the constraint).
inline Dataset generate_dataset(const SceneSpec& spec, int num_train,
                                int num_test, const std::string& out_dir) {
  spec.validate();
  if (num_train <= 0 || num_test <= 0) {
    throw std::invalid_argument("generate_dataset: counts must be positive");
  }
  Dataset ds;
  ds.root = out_dir;
  ds.spec = spec;
  std::filesystem::create_directories(out_dir);
  ds.train = detail::generate_partition(spec, num_train, out_dir + "/train",
                                        derive_seed(spec.seed, 1));
  ds.test = detail::generate_partition(spec, num_test, out_dir + "/test",
                                       derive_seed(spec.seed, 2));
  write_annotations(out_dir + "/annotations_train.txt", ds.train);
  write_annotations(out_dir + "/annotations_test.txt", ds.test);
  write_scene_spec(out_dir + "/scene.txt", spec);
  return ds;
}

inline Dataset load_dataset(const std::string& root) {
  Dataset ds;
  ds.root = root;
  ds.spec = read_scene_spec(root + "/scene.txt");
  ds.train = read_annotations(root + "/annotations_train.txt", root + "/train");
  ds.test = read_annotations(root + "/annotations_test.txt", root + "/test");
  return ds;
}

// View of one incremental step: keeps only images containing at least one
// annotation of the step's categories and drops annotations outside the
// step (new data is labeled only for new classes).
inline DatasetPartition filter_by_step(const DatasetPartition& part,
                                       const TaskSplit& split,
                                       int step_index) {
  if (step_index < 0 || step_index >= split.num_steps()) {
    throw std::invalid_argument("filter_by_step: step index out of range");
  }
  const std::set<int> cats(split.steps[step_index].begin(),
                           split.steps[step_index].end());
  DatasetPartition view;
  view.dir = part.dir;
  for (const auto& im : part.images) {
    ImageRecord rec;
    rec.name = im.name;
    for (const auto& a : im.annotations) {
      if (cats.count(a.category_id)) rec.annotations.push_back(a);
    }
    if (!rec.annotations.empty()) view.images.push_back(std::move(rec));
  }
  if (view.images.empty()) {
    throw std::runtime_error("filter_by_step: step " +
                             std::to_string(step_index) +
                             " selects no images (empty step)");
  }
  return view;
}

}  // namespace erd::synth
