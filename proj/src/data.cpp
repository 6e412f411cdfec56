#include "wsds/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "json.hpp"

#include "wsds/errors.hpp"

namespace wsds {

using nlohmann::json;

std::string split_name(Split split) { return split == Split::kTrain ? "train" : "test"; }

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  throw DataError("unknown split '" + name + "'");
}

std::vector<const Sample*> Dataset::select(Split split) const {
  std::vector<const Sample*> out;
  for (const Sample& s : samples)
    if (s.split == split) out.push_back(&s);
  return out;
}

std::vector<const Sample*> Dataset::labeled() const {
  std::vector<const Sample*> out;
  for (const Sample& s : samples)
    if (s.split == Split::kTrain && s.labeled()) out.push_back(&s);
  return out;
}

// ---------------------------------------------------------------------------
// Manifest.

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& file) {
  json entries = json::array();
  for (const ManifestEntry& e : manifest.entries) {
    json j{{"id", e.id}, {"image", e.image}, {"split", split_name(e.split)}};
    if (e.gt) j["gt"] = *e.gt;
    if (e.trimap) j["trimap"] = *e.trimap;
    entries.push_back(std::move(j));
  }
  json doc{{"root", manifest.root.generic_string()}, {"entries", std::move(entries)}};
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  out << doc.dump(2) << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read manifest " + file.string());
  DatasetManifest m;
  try {
    const json doc = json::parse(in);
    std::filesystem::path root = doc.at("root").get<std::string>();
    m.root = root.is_absolute() ? root : (file.parent_path() / root).lexically_normal();
    for (const json& j : doc.at("entries")) {
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.image = j.at("image").get<std::string>();
      if (j.contains("gt")) e.gt = j.at("gt").get<std::string>();
      if (j.contains("trimap")) e.trimap = j.at("trimap").get<std::string>();
      e.split = parse_split(j.at("split").get<std::string>());
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    throw FormatError(file.string() + ": " + ex.what());
  }
  std::set<std::string> ids;
  for (const ManifestEntry& e : m.entries) {
    if (!ids.insert(e.id).second) throw DataError("duplicate sample id " + e.id);
    if (e.split == Split::kTest && e.trimap) {
      throw DataError("test sample " + e.id + " must not carry a trimap");
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Resizing.

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == height && w == width) return image;
  Tensor out({c, height, width});
  auto source = [](std::size_t o, std::size_t in, std::size_t out_n) {
    const double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in) /
                         static_cast<double>(out_n) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  for (std::size_t y = 0; y < height; ++y) {
    const double sy = source(y, h, height);
    const std::size_t y0 = static_cast<std::size_t>(sy), y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double sx = source(x, w, width);
      const std::size_t x0 = static_cast<std::size_t>(sx), x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* p = image.data().data() + ch * h * w;
        out[(ch * height + y) * width + x] =
            (1 - fy) * ((1 - fx) * p[y0 * w + x0] + fx * p[y0 * w + x1]) +
            fy * ((1 - fx) * p[y1 * w + x0] + fx * p[y1 * w + x1]);
      }
    }
  }
  return out;
}

namespace {

std::size_t nearest_source(std::size_t o, std::size_t in, std::size_t out_n) {
  return std::min(in - 1, (2 * o + 1) * in / (2 * out_n));
}

}  // namespace

Tensor resize_nearest(const Tensor& mask, std::size_t height, std::size_t width) {
  const std::size_t c = mask.dim(0), h = mask.dim(1), w = mask.dim(2);
  Tensor out({c, height, width});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        out[(ch * height + y) * width + x] =
            mask[(ch * h + nearest_source(y, h, height)) * w + nearest_source(x, w, width)];
  return out;
}

WeakLabelMap resize_nearest(const WeakLabelMap& labels, std::size_t height, std::size_t width) {
  WeakLabelMap out(height, width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      out.set(y, x, labels.at(nearest_source(y, labels.height(), height),
                              nearest_source(x, labels.width(), width)));
  return out;
}

// ---------------------------------------------------------------------------
// Loading and saving.

Dataset load_dataset(const DatasetManifest& manifest,
                     std::optional<std::pair<std::size_t, std::size_t>> size) {
  Dataset ds;
  for (const ManifestEntry& e : manifest.entries) {
    Sample s;
    s.id = e.id;
    s.split = e.split;
    s.image = load_image_png(manifest.root / e.image);
    const std::size_t h = s.image.dim(1), w = s.image.dim(2);
    if (e.gt) {
      s.gt = load_mask_png(manifest.root / *e.gt);
      if (s.gt->dim(1) != h || s.gt->dim(2) != w) {
        throw DataError("mask of " + e.id + " does not match its image size");
      }
    }
    if (e.trimap) {
      s.trimap = load_trimap_png(manifest.root / *e.trimap);
      if (s.trimap->height() != h || s.trimap->width() != w) {
        throw DataError("trimap of " + e.id + " does not match its image size");
      }
    }
    if (size && (size->first != h || size->second != w)) {
      s.image = resize_bilinear(s.image, size->first, size->second);
      if (s.gt) s.gt = resize_nearest(*s.gt, size->first, size->second);
      if (s.trimap) s.trimap = resize_nearest(*s.trimap, size->first, size->second);
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

DatasetManifest save_dataset(const Dataset& dataset, const std::filesystem::path& root) {
  DatasetManifest m;
  m.root = ".";
  for (const Sample& s : dataset.samples) {
    ManifestEntry e;
    e.id = s.id;
    e.split = s.split;
    e.image = "images/" + s.id + ".png";
    save_image_png(s.image, root / e.image);
    if (s.gt) {
      e.gt = "gt/" + s.id + ".png";
      save_mask_png(*s.gt, root / *e.gt);
    }
    if (s.trimap) {
      e.trimap = "trimaps/" + s.id + ".png";
      save_trimap_png(*s.trimap, root / *e.trimap);
    }
    m.entries.push_back(std::move(e));
  }
  write_manifest(m, root / "manifest.json");
  m.root = root;
  return m;
}

// ---------------------------------------------------------------------------
// Scribbles.

namespace {

struct Pixel {
  long y, x;
};

// Polyline random walk confined to `region`: straight runs of 3-7 px joined
// by turns of up to one radian, bouncing off the region border.
std::vector<Pixel> random_polyline(const std::vector<char>& region, long h, long w,
                                   std::size_t target, double wide_probability, Rng& rng) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < region.size(); ++i)
    if (region[i]) candidates.push_back(i);
  const std::size_t start = candidates[rng.below(candidates.size())];
  const bool wide = rng.uniform() < wide_probability;

  std::vector<char> marked(region.size(), 0);
  std::vector<Pixel> pixels;
  auto inside = [&](long y, long x) {
    return y >= 0 && x >= 0 && y < h && x < w && region[static_cast<std::size_t>(y * w + x)];
  };
  auto mark = [&](long y, long x) {
    if (!inside(y, x)) return;
    char& m = marked[static_cast<std::size_t>(y * w + x)];
    if (!m) {
      m = 1;
      pixels.push_back({y, x});
    }
  };

  double py = static_cast<double>(start / static_cast<std::size_t>(w)) + 0.5;
  double px = static_cast<double>(start % static_cast<std::size_t>(w)) + 0.5;
  double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  mark(static_cast<long>(py), static_cast<long>(px));
  std::size_t run = 0, run_length = 3 + rng.below(5);
  for (std::size_t step = 0; pixels.size() < target && step < 40 * target; ++step) {
    if (run == run_length) {
      angle += rng.uniform(-1.0, 1.0);
      run = 0;
      run_length = 3 + rng.below(5);
    }
    const double ny = py + std::sin(angle), nx = px + std::cos(angle);
    const long iy = static_cast<long>(std::floor(ny)), ix = static_cast<long>(std::floor(nx));
    if (!inside(iy, ix)) {
      angle += rng.uniform(0.5, 1.5) * std::numbers::pi;
      run = 0;
      continue;
    }
    py = ny;
    px = nx;
    ++run;
    mark(iy, ix);
    if (wide) {
      if (std::abs(std::cos(angle)) > std::abs(std::sin(angle))) mark(iy + 1, ix);
      else mark(iy, ix + 1);
    }
  }
  if (pixels.size() > target) pixels.resize(target);
  return pixels;
}

// Background stroke: a partial loop around the object (vertices every 15
// degrees at the radial extent plus a wandering margin) followed by a tail.
std::vector<Pixel> surrounding_arc(const std::vector<char>& fg, long h, long w, std::size_t target,
                                   double wide_probability, Rng& rng) {
  double cy = 0.0, cx = 0.0, n = 0.0;
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      if (fg[static_cast<std::size_t>(y * w + x)]) cy += y + 0.5, cx += x + 0.5, n += 1.0;
  cy /= n;
  cx /= n;
  auto in_image = [&](long y, long x) { return y >= 0 && x >= 0 && y < h && x < w; };
  auto is_fg = [&](long y, long x) {
    return in_image(y, x) && fg[static_cast<std::size_t>(y * w + x)];
  };
  auto extent = [&](double angle) {
    double last = 0.0;
    const double reach = static_cast<double>(h + w);
    for (double t = 0.0; t < reach; t += 0.5) {
      const long y = static_cast<long>(std::floor(cy + t * std::sin(angle)));
      const long x = static_cast<long>(std::floor(cx + t * std::cos(angle)));
      if (is_fg(y, x)) last = t;
    }
    return last;
  };

  const bool wide = rng.uniform() < wide_probability;
  std::vector<char> marked(fg.size(), 0);
  std::vector<Pixel> pixels;
  auto mark = [&](long y, long x) {
    if (!in_image(y, x) || is_fg(y, x)) return;
    char& m = marked[static_cast<std::size_t>(y * w + x)];
    if (!m && pixels.size() < target) {
      m = 1;
      pixels.push_back({y, x});
    }
  };

  const double step = std::numbers::pi / 12.0;
  const double start = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double turn = rng.uniform() < 0.5 ? 1.0 : -1.0;
  double margin = rng.uniform(2.0, 5.0);
  auto vertex = [&](int k) {
    const double a = start + turn * step * k;
    const double r = extent(a) + margin;
    return std::pair{cy + r * std::sin(a), cx + r * std::cos(a)};
  };
  // About 60 % of the stroke goes around the object, the rest trails off
  // outward into the far background.
  const std::size_t arc_target = (target * 3 + 4) / 5;
  auto prev = vertex(0);
  int k = 1;
  for (; k <= 24 && pixels.size() < arc_target; ++k) {
    margin = std::clamp(margin + rng.uniform(-1.0, 1.0), 1.5, 7.0);
    const auto next = vertex(k);
    const double len = std::hypot(next.first - prev.first, next.second - prev.second);
    const int steps = std::max(1, static_cast<int>(std::ceil(2.0 * len)));
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      const long y = static_cast<long>(std::floor(prev.first + t * (next.first - prev.first)));
      const long x = static_cast<long>(std::floor(prev.second + t * (next.second - prev.second)));
      mark(y, x);
      if (wide) mark(y + 1, x);
    }
    prev = next;
  }

  double heading = start + turn * step * (k - 1);
  double py = prev.first, px = prev.second;
  for (int i = 0; i < 400 && pixels.size() < target; ++i) {
    if (i % 5 == 4) heading += rng.uniform(-0.6, 0.6);
    const double ny = py + std::sin(heading), nx = px + std::cos(heading);
    const long iy = static_cast<long>(std::floor(ny)), ix = static_cast<long>(std::floor(nx));
    if (!in_image(iy, ix) || is_fg(iy, ix)) {
      heading += rng.uniform(0.5, 1.5) * std::numbers::pi;
      continue;
    }
    py = ny;
    px = nx;
    mark(iy, ix);
    if (wide) mark(iy + 1, ix);
  }
  return pixels;
}

}  // namespace

WeakLabelMap scribble_from_dense(const Tensor& gt, Rng& rng, const ScribbleConfig& cfg) {
  if (gt.rank() < 2 || gt.numel() != gt.dim(gt.rank() - 1) * gt.dim(gt.rank() - 2)) {
    throw ShapeError("scribble_from_dense expects a single-channel mask");
  }
  const long h = static_cast<long>(gt.dim(gt.rank() - 2));
  const long w = static_cast<long>(gt.dim(gt.rank() - 1));
  std::vector<char> fg(gt.numel()), bg(gt.numel());
  std::size_t n_fg = 0;
  for (std::size_t i = 0; i < gt.numel(); ++i) {
    fg[i] = gt[i] >= 0.5;
    bg[i] = !fg[i];
    n_fg += static_cast<std::size_t>(fg[i]);
  }
  if (n_fg == 0) throw DataError("mask has no foreground pixel to scribble on");
  if (n_fg == gt.numel()) throw DataError("mask has no background pixel to scribble on");

  if (cfg.foreground_min == 0 || cfg.foreground_max < cfg.foreground_min ||
      !(cfg.background_ratio > 0.0)) {
    throw ConfigError("invalid scribble lengths");
  }
  const std::size_t fg_target =
      cfg.foreground_min + rng.below(cfg.foreground_max - cfg.foreground_min + 1);
  const auto bg_target = static_cast<std::size_t>(
      std::lround(cfg.background_ratio * static_cast<double>(fg_target)));

  WeakLabelMap labels(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
  for (const Pixel& p : random_polyline(fg, h, w, fg_target, cfg.wide_probability, rng))
    labels.set(static_cast<std::size_t>(p.y), static_cast<std::size_t>(p.x), WeakLabel::kForeground);
  std::vector<Pixel> bg_stroke = surrounding_arc(fg, h, w, bg_target, cfg.wide_probability, rng);
  if (bg_stroke.empty()) bg_stroke = random_polyline(bg, h, w, bg_target, cfg.wide_probability, rng);
  for (const Pixel& p : bg_stroke)
    labels.set(static_cast<std::size_t>(p.y), static_cast<std::size_t>(p.x), WeakLabel::kBackground);
  return labels;
}

// ---------------------------------------------------------------------------
// Synthesis.

namespace {

// Smooth value noise in roughly [-1, 1]: random lattice values, smoothstep
// interpolation, three octaves.
std::vector<double> value_noise(std::size_t h, std::size_t w, std::size_t cells, Rng& rng) {
  std::vector<double> out(h * w, 0.0);
  double amplitude = 1.0, norm = 0.0;
  for (int octave = 0; octave < 3; ++octave, cells *= 2, amplitude *= 0.5) {
    const std::size_t g = cells + 1;
    std::vector<double> lattice(g * g);
    for (double& v : lattice) v = rng.uniform(-1.0, 1.0);
    for (std::size_t y = 0; y < h; ++y) {
      const double fy = (static_cast<double>(y) + 0.5) / static_cast<double>(h) * cells;
      const std::size_t y0 = std::min(static_cast<std::size_t>(fy), cells - 1);
      double ty = fy - static_cast<double>(y0);
      ty = ty * ty * (3 - 2 * ty);
      for (std::size_t x = 0; x < w; ++x) {
        const double fx = (static_cast<double>(x) + 0.5) / static_cast<double>(w) * cells;
        const std::size_t x0 = std::min(static_cast<std::size_t>(fx), cells - 1);
        double tx = fx - static_cast<double>(x0);
        tx = tx * tx * (3 - 2 * tx);
        const double top = (1 - tx) * lattice[y0 * g + x0] + tx * lattice[y0 * g + x0 + 1];
        const double bottom =
            (1 - tx) * lattice[(y0 + 1) * g + x0] + tx * lattice[(y0 + 1) * g + x0 + 1];
        out[y * w + x] += amplitude * ((1 - ty) * top + ty * bottom);
      }
    }
    norm += amplitude;
  }
  for (double& v : out) v /= norm;
  return out;
}

struct Blob {
  double cy, cx, radius, aspect, angle, softness;
  std::array<double, 3> harmonic_amp, harmonic_phase;

  // Soft membership in (0, 1); 0.5 on the nominal outline.
  double membership(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * dx + s * dy) / aspect, v = (-s * dx + c * dy) * aspect;
    const double rho = std::hypot(u, v);
    const double theta = std::atan2(v, u);
    double r = radius;
    for (int k = 0; k < 3; ++k) r *= 1.0 + harmonic_amp[k] * std::cos((k + 2) * theta + harmonic_phase[k]);
    return 1.0 / (1.0 + std::exp(-(r - rho) / softness));
  }
};

Blob random_blob(std::size_t h, std::size_t w, double scale, Rng& rng) {
  Blob b;
  const double side = static_cast<double>(std::min(h, w));
  b.cy = rng.uniform(0.3, 0.7) * static_cast<double>(h);
  b.cx = rng.uniform(0.3, 0.7) * static_cast<double>(w);
  b.radius = scale * rng.uniform(0.13, 0.24) * side;
  b.aspect = rng.uniform(0.75, 1.3);
  b.angle = rng.uniform(0.0, std::numbers::pi);
  b.softness = rng.uniform(0.8, 1.8) * side / 64.0;
  for (int k = 0; k < 3; ++k) {
    b.harmonic_amp[k] = rng.uniform(0.0, 0.12);
    b.harmonic_phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  return b;
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

Sample synthesize_sample(std::size_t h, std::size_t w, Rng& rng) {
  for (;;) {
    std::array<double, 3> bg_color, fg_color, dir;
    for (double& c : bg_color) c = rng.uniform(0.3, 0.65);
    // Objects are redder and brighter than their surroundings, with a random
    // per-image deviation in colour.
    constexpr std::array<double, 3> kObjectHue{1.0, 0.15, 0.05};
    double norm = 0.0;
    for (int c = 0; c < 3; ++c) {
      dir[c] = kObjectHue[c] + 0.45 * rng.normal();
      norm += dir[c] * dir[c];
    }
    const double contrast = rng.uniform(0.22, 0.35) / std::sqrt(norm);
    for (int c = 0; c < 3; ++c) fg_color[c] = std::clamp(bg_color[c] + contrast * dir[c], 0.05, 0.95);

    std::vector<Blob> blobs{random_blob(h, w, 1.0, rng)};
    if (rng.uniform() < 0.3) blobs.push_back(random_blob(h, w, 0.6, rng));

    const std::vector<double> shade = value_noise(h, w, 3, rng);
    std::array<std::vector<double>, 3> tint, texture;
    for (int c = 0; c < 3; ++c) {
      tint[c] = value_noise(h, w, 4, rng);
      texture[c] = value_noise(h, w, 6, rng);
    }

    Sample s;
    s.image = Tensor({3, h, w});
    s.gt = Tensor({1, h, w});
    std::size_t fg = 0;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t i = y * w + x;
        double m = 0.0;
        for (const Blob& b : blobs)
          m = std::max(m, b.membership(static_cast<double>(y) + 0.5, static_cast<double>(x) + 0.5));
        (*s.gt)[i] = m >= 0.5 ? 1.0 : 0.0;
        fg += m >= 0.5;
        for (int c = 0; c < 3; ++c) {
          const double back = bg_color[c] + 0.12 * shade[i] + 0.06 * tint[c][i];
          const double front = fg_color[c] + 0.08 * shade[i] + 0.05 * texture[c][i];
          s.image[c * h * w + i] = quantize((1 - m) * back + m * front + 0.02 * rng.normal());
        }
      }
    }
    if (fg > 0 && fg < h * w) return s;
  }
}

}  // namespace

Dataset synthesize_dataset(const SynthConfig& cfg) {
  if (!(cfg.labeled_fraction > 0.0 && cfg.labeled_fraction <= 1.0)) {
    throw ConfigError("labeled_fraction must lie in (0, 1]");
  }
  if (cfg.height == 0 || cfg.width == 0) throw ConfigError("image size must be positive");
  Rng master(cfg.seed);
  Dataset ds;
  const std::size_t total = cfg.n_train + cfg.n_test;
  for (std::size_t i = 0; i < total; ++i) {
    Rng rng(master.next_u64());
    Sample s = synthesize_sample(cfg.height, cfg.width, rng);
    const bool train = i < cfg.n_train;
    s.split = train ? Split::kTrain : Split::kTest;
    char id[32];
    std::snprintf(id, sizeof id, "%s_%04zu", train ? "train" : "test", train ? i : i - cfg.n_train);
    s.id = id;
    ds.samples.push_back(std::move(s));
  }

  std::vector<std::size_t> order(cfg.n_train);
  for (std::size_t i = 0; i < cfg.n_train; ++i) order[i] = i;
  shuffle(order, master);
  const auto n_labeled = static_cast<std::size_t>(
      std::ceil(cfg.labeled_fraction * static_cast<double>(cfg.n_train) - 1e-9));
  std::sort(order.begin(), order.begin() + static_cast<long>(n_labeled));
  for (std::size_t k = 0; k < n_labeled; ++k) {
    Sample& s = ds.samples[order[k]];
    Rng rng(master.next_u64());
    s.trimap = scribble_from_dense(*s.gt, rng, cfg.scribble);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Statistics.

LabeledPixelStats labeled_pixel_stats(const Dataset& dataset) {
  LabeledPixelStats st;
  std::size_t split_labeled = 0, split_total = 0;
  for (const Sample& s : dataset.samples) {
    if (s.split != Split::kTrain) continue;
    const std::size_t total = s.image.dim(1) * s.image.dim(2);
    split_total += total;
    if (!s.trimap) continue;
    const std::size_t labeled = s.trimap->labeled_count();
    split_labeled += labeled;
    st.images.push_back({s.id, labeled, total,
                         100.0 * static_cast<double>(labeled) / static_cast<double>(total)});
  }
  double sum = 0.0;
  for (const auto& row : st.images) {
    const auto bin = static_cast<std::size_t>(row.percent / LabeledPixelStats::kBinWidth);
    if (bin >= st.histogram.size()) st.histogram.resize(bin + 1, 0);
    ++st.histogram[bin];
    sum += row.percent;
  }
  if (!st.images.empty()) st.mean_percent = sum / static_cast<double>(st.images.size());
  if (split_total > 0) {
    st.split_percent = 100.0 * static_cast<double>(split_labeled) / static_cast<double>(split_total);
  }
  return st;
}

std::string format_percent(double percent) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", percent);
  return buf;
}

void write_stats_csv(const LabeledPixelStats& stats, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "id,labeled_pixels,total_pixels,percent\n";
  char buf[64];
  for (const auto& row : stats.images) {
    std::snprintf(buf, sizeof buf, "%.6f", row.percent);
    out << row.id << ',' << row.labeled_pixels << ',' << row.total_pixels << ',' << buf << '\n';
  }
}

void write_histogram_csv(const LabeledPixelStats& stats, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "bin_start,bin_end,images\n";
  for (std::size_t b = 0; b < stats.histogram.size(); ++b) {
    out << format_percent(b * LabeledPixelStats::kBinWidth) << ','
        << format_percent((b + 1) * LabeledPixelStats::kBinWidth) << ',' << stats.histogram[b]
        << '\n';
  }
}

}  // namespace wsds
