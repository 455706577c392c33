#pragma once

#include "autoadapt/rng.hpp"
#include "autoadapt/tensor.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace autoadapt {

/// Invalid user configuration; the message names the offending field.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DatasetConfig {
  std::size_t image_size = 96;
  std::size_t num_classes = 4; // background, circle, rectangle, stripe
  std::size_t n_source = 200;
  std::size_t n_target = 200;
  double shift = 0.6;
  std::uint64_t seed = 1;
  double adapt_fraction = 0.85;

  void validate() const {
    if (num_classes < 2)
      throw ConfigError("dataset.num_classes must be >= 2");
    if (num_classes > 255)
      throw ConfigError("dataset.num_classes must fit in 8-bit label maps");
    if (image_size < 16)
      throw ConfigError("dataset.image_size must be >= 16");
    if (!(shift >= 0.0 && shift <= 1.0))
      throw ConfigError("dataset.shift must be in [0,1], got " + std::to_string(shift));
    if (!(adapt_fraction > 0.0 && adapt_fraction < 1.0))
      throw ConfigError("dataset.adapt_fraction must be in (0,1)");
    if (n_source < 1)
      throw ConfigError("dataset.n_source must be >= 1");
    if (n_target < 2)
      throw ConfigError("dataset.n_target must be >= 2");
  }
};

inline nlohmann::ordered_json to_json(const DatasetConfig &c) {
  return {{"image_size", c.image_size}, {"num_classes", c.num_classes},
          {"n_source", c.n_source},     {"n_target", c.n_target},
          {"shift", c.shift},           {"seed", c.seed},
          {"adapt_fraction", c.adapt_fraction}};
}

template <class Json> DatasetConfig dataset_config_from_json(const Json &j, DatasetConfig c = {}) {
  auto field = [&](const char *key, auto &dst) {
    if (j.contains(key)) {
      try {
        j.at(key).get_to(dst);
      } catch (const nlohmann::json::exception &) {
        throw ConfigError(std::string("dataset.") + key + " has the wrong type");
      }
    }
  };
  field("image_size", c.image_size);
  field("num_classes", c.num_classes);
  field("n_source", c.n_source);
  field("n_target", c.n_target);
  field("shift", c.shift);
  field("seed", c.seed);
  field("adapt_fraction", c.adapt_fraction);
  return c;
}

/// One image (1x3xHxW, values in [0,1]) with its H*W label map.
struct Sample {
  Tensor image;
  std::vector<int> label;

  std::size_t height() const { return image.h(); }
  std::size_t width() const { return image.w(); }
};

// ---------------------------------------------------------------------------
// Scene synthesis
// ---------------------------------------------------------------------------

namespace detail {

struct Rgb {
  double r, g, b;
};

inline Rgb class_color(std::size_t cls) {
  static constexpr Rgb base[] = {
      {0.50, 0.50, 0.45}, // background
      {0.85, 0.25, 0.20}, // circle
      {0.20, 0.70, 0.30}, // rectangle
      {0.25, 0.35, 0.85}, // stripe
  };
  if (cls < 4)
    return base[cls];
  // extra classes: spread over the hue circle at fixed saturation
  const double hue = std::fmod(0.13 + 0.618034 * static_cast<double>(cls), 1.0) * 2 * std::numbers::pi;
  return {0.55 + 0.3 * std::cos(hue), 0.55 + 0.3 * std::cos(hue - 2.094), 0.55 + 0.3 * std::cos(hue + 2.094)};
}

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

/// Paints one scene. Shape kind for class k >= 1 is (k-1) % 3: circle, rectangle, stripe.
inline Sample synthesize_scene(std::size_t size, std::size_t num_classes, Rng &rng) {
  const double S = static_cast<double>(size);
  const double scale = S / 96.0;
  Sample s{Tensor(1, 3, size, size), std::vector<int>(size * size, 0)};
  auto paint = [&](std::size_t y, std::size_t x, std::size_t cls, Rgb c) {
    s.label[y * size + x] = static_cast<int>(cls);
    s.image.at(0, 0, y, x) = clamp01(c.r);
    s.image.at(0, 1, y, x) = clamp01(c.g);
    s.image.at(0, 2, y, x) = clamp01(c.b);
  };

  // textured background: low-frequency plane wave plus fine jitter
  const Rgb bg = class_color(0);
  const double fx = rng.uniform(0.05, 0.25), fy = rng.uniform(0.05, 0.25);
  const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
  const double tint = rng.uniform(-0.05, 0.05);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double wave = 0.07 * std::sin(fx * x / scale + fy * y / scale + phase);
      const double j = rng.uniform(-0.03, 0.03);
      paint(y, x, 0, {bg.r + wave + j + tint, bg.g + wave + j, bg.b + wave + j - tint});
    }

  // foreground classes painted from the highest id down so that stripes lie underneath
  for (std::size_t cls = num_classes; cls-- > 1;) {
    const int kind = static_cast<int>((cls - 1) % 3);
    const int count = rng.uniform_int(1, 2);
    for (int inst = 0; inst < count; ++inst) {
      Rgb c = class_color(cls);
      c.r += rng.uniform(-0.08, 0.08);
      c.g += rng.uniform(-0.08, 0.08);
      c.b += rng.uniform(-0.08, 0.08);
      const double shade = rng.uniform(-0.04, 0.04);
      auto put = [&](std::size_t y, std::size_t x) {
        const double j = rng.uniform(-0.025, 0.025) + shade;
        paint(y, x, cls, {c.r + j, c.g + j, c.b + j});
      };
      if (kind == 0) {
        const double r = rng.uniform(6.0, 15.0) * scale;
        const double cy = rng.uniform(r, S - r), cx = rng.uniform(r, S - r);
        for (std::size_t y = 0; y < size; ++y)
          for (std::size_t x = 0; x < size; ++x) {
            const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
            if (dy * dy + dx * dx <= r * r)
              put(y, x);
          }
      } else if (kind == 1) {
        const double h = rng.uniform(10.0, 30.0) * scale, w = rng.uniform(10.0, 30.0) * scale;
        const double y0 = rng.uniform(0.0, S - h), x0 = rng.uniform(0.0, S - w);
        for (std::size_t y = 0; y < size; ++y)
          for (std::size_t x = 0; x < size; ++x)
            if (y + 0.5 >= y0 && y + 0.5 < y0 + h && x + 0.5 >= x0 && x + 0.5 < x0 + w)
              put(y, x);
      } else {
        const double angle = rng.uniform(0.0, std::numbers::pi);
        const double ny = std::sin(angle), nx = std::cos(angle);
        const double width = rng.uniform(5.0, 10.0) * scale;
        const double offset = rng.uniform(0.25 * S, 0.75 * S);
        const double c0 = (S / 2) * (ny + nx);
        for (std::size_t y = 0; y < size; ++y)
          for (std::size_t x = 0; x < size; ++x) {
            const double dist = (y + 0.5) * ny + (x + 0.5) * nx - c0 + (S / 2) - offset;
            if (std::abs(dist) <= width / 2)
              put(y, x);
          }
      }
    }
  }
  return s;
}

inline void hue_rotate(Tensor &img, double degrees) {
  if (degrees == 0.0)
    return;
  const double a = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  const double k = (1.0 - c) / 3.0, r = std::sqrt(1.0 / 3.0) * s;
  // rotation about the gray axis (1,1,1)/sqrt(3)
  const double m[3][3] = {{c + k, k - r, k + r}, {k + r, c + k, k - r}, {k - r, k + r, c + k}};
  const std::size_t plane = img.h() * img.w();
  double *ch[3] = {img.plane(0, 0), img.plane(0, 1), img.plane(0, 2)};
  for (std::size_t i = 0; i < plane; ++i) {
    const double v[3] = {ch[0][i], ch[1][i], ch[2][i]};
    for (int o = 0; o < 3; ++o)
      ch[o][i] = clamp01(m[o][0] * v[0] + m[o][1] * v[1] + m[o][2] * v[2]);
  }
}

/// Mean over the (2r+1)^2 window clipped to the image.
inline void box_blur(Tensor &img, int radius) {
  if (radius <= 0)
    return;
  const long H = static_cast<long>(img.h()), W = static_cast<long>(img.w());
  for (std::size_t c = 0; c < img.c(); ++c) {
    for (std::size_t n = 0; n < img.n(); ++n) {
      double *p = img.plane(n, c);
      std::vector<double> src(p, p + H * W);
      for (long y = 0; y < H; ++y)
        for (long x = 0; x < W; ++x) {
          double sum = 0.0;
          int cnt = 0;
          for (long dy = -radius; dy <= radius; ++dy)
            for (long dx = -radius; dx <= radius; ++dx) {
              const long yy = y + dy, xx = x + dx;
              if (yy < 0 || yy >= H || xx < 0 || xx >= W)
                continue;
              sum += src[static_cast<std::size_t>(yy * W + xx)];
              ++cnt;
            }
          p[y * W + x] = sum / cnt;
        }
    }
  }
}

/// Target appearance: hue rotation 60*shift degrees, gamma 1+0.8*shift,
/// Gaussian noise sigma 0.08*shift, box blur radius round(2*shift).
inline void apply_domain_shift(Tensor &img, double shift, Rng &rng) {
  if (shift <= 0.0)
    return;
  hue_rotate(img, 60.0 * shift);
  const double gamma = 1.0 + 0.8 * shift;
  for (double &v : img.data())
    v = std::pow(v, gamma);
  const double sigma = 0.08 * shift;
  for (double &v : img.data())
    v = clamp01(v + rng.normal(0.0, sigma));
  box_blur(img, static_cast<int>(std::lround(2.0 * shift)));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Target split and crops
// ---------------------------------------------------------------------------

struct TargetSplit {
  std::vector<std::size_t> adapt;
  std::vector<std::size_t> eval;
};

/// Deterministic shuffle of [0, n) under seed; the first round(fraction*n) indices
/// (clamped so both sides are non-empty) go to adaptation. Each side is returned sorted.
inline TargetSplit split_target(std::size_t n, double adapt_fraction, std::uint64_t seed) {
  if (!(adapt_fraction > 0.0 && adapt_fraction < 1.0))
    throw ConfigError("adapt_fraction must be in (0,1), got " + std::to_string(adapt_fraction));
  if (n < 2)
    throw ConfigError("need at least 2 target images to split, got " + std::to_string(n));
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i)
    perm[i] = i;
  Rng rng(derive_seed(seed, 0x5b11));
  for (std::size_t i = n - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.index(i + 1)]);
  auto n_adapt = static_cast<std::size_t>(std::llround(adapt_fraction * static_cast<double>(n)));
  n_adapt = std::clamp<std::size_t>(n_adapt, 1, n - 1);
  TargetSplit s{{perm.begin(), perm.begin() + static_cast<long>(n_adapt)},
                {perm.begin() + static_cast<long>(n_adapt), perm.end()}};
  std::sort(s.adapt.begin(), s.adapt.end());
  std::sort(s.eval.begin(), s.eval.end());
  return s;
}

struct CropWindow {
  std::size_t y = 0, x = 0, side = 0;
};

inline std::size_t crop_side(std::size_t image_size, double ratio) {
  auto side = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(image_size)));
  side = std::max<std::size_t>(side, 8);
  return std::min(side, image_size);
}

inline CropWindow draw_crop(std::size_t h, std::size_t w, double ratio, Rng &rng) {
  const std::size_t side = std::min(crop_side(std::min(h, w), ratio), std::min(h, w));
  CropWindow c;
  c.side = side;
  c.y = rng.index(h - side + 1);
  c.x = rng.index(w - side + 1);
  return c;
}

inline Tensor crop_image(const Tensor &img, const CropWindow &c) {
  Tensor out(img.n(), img.c(), c.side, c.side);
  for (std::size_t n = 0; n < img.n(); ++n)
    for (std::size_t ch = 0; ch < img.c(); ++ch)
      for (std::size_t y = 0; y < c.side; ++y)
        std::copy_n(img.plane(n, ch) + (c.y + y) * img.w() + c.x, c.side,
                    out.plane(n, ch) + y * c.side);
  return out;
}

inline std::vector<int> crop_label(const std::vector<int> &label, std::size_t width,
                                   const CropWindow &c) {
  std::vector<int> out(c.side * c.side);
  for (std::size_t y = 0; y < c.side; ++y)
    std::copy_n(label.begin() + static_cast<long>((c.y + y) * width + c.x), c.side,
                out.begin() + static_cast<long>(y * c.side));
  return out;
}

/// Random square crop of side max(8, round(ratio * size)), image and label aligned.
inline Sample sample_crop(const Sample &s, double ratio, Rng &rng) {
  const CropWindow c = draw_crop(s.height(), s.width(), ratio, rng);
  return {crop_image(s.image, c), s.label.empty() ? std::vector<int>{} : crop_label(s.label, s.width(), c)};
}

// ---------------------------------------------------------------------------
// Label map file: 12-byte header (H, W, C as u32 LE) followed by H*W bytes.
// ---------------------------------------------------------------------------

inline std::string encode_label(const std::vector<int> &label, std::size_t h, std::size_t w,
                                std::size_t num_classes) {
  std::string out;
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(h));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(w));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(num_classes));
  for (int v : label)
    out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  return out;
}

struct LabelMap {
  std::size_t h = 0, w = 0, num_classes = 0;
  std::vector<int> data;
};

inline LabelMap decode_label(std::string_view bytes) {
  if (bytes.size() < 12)
    throw std::runtime_error("label file shorter than its 12-byte header");
  LabelMap m{detail::get_le<std::uint32_t>(bytes.data()),
             detail::get_le<std::uint32_t>(bytes.data() + 4),
             detail::get_le<std::uint32_t>(bytes.data() + 8),
             {}};
  if (bytes.size() != 12 + m.h * m.w)
    throw std::runtime_error("label file length does not match its header");
  m.data.resize(m.h * m.w);
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    m.data[i] = static_cast<unsigned char>(bytes[12 + i]);
    if (static_cast<std::size_t>(m.data[i]) >= m.num_classes)
      throw std::runtime_error("label value " + std::to_string(m.data[i]) + " >= num_classes");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

struct GeneratedDataset {
  DatasetConfig config;
  std::vector<Sample> source;
  std::vector<Sample> target; // labels present; exposure is gated by Dataset
  TargetSplit split;
};

/// Fraction of source pixels per class, aggregated over the whole source set.
inline std::vector<double> class_pixel_fractions(const std::vector<Sample> &samples,
                                                 std::size_t num_classes) {
  std::vector<double> counts(num_classes, 0.0);
  double total = 0.0;
  for (const Sample &s : samples)
    for (int v : s.label) {
      counts[static_cast<std::size_t>(v)] += 1.0;
      total += 1.0;
    }
  for (double &c : counts)
    c /= total;
  return counts;
}

inline GeneratedDataset generate_in_memory(const DatasetConfig &cfg) {
  cfg.validate();
  constexpr int kMaxAttempts = 16;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const std::uint64_t base = derive_seed(cfg.seed, static_cast<std::uint64_t>(attempt));
    GeneratedDataset d;
    d.config = cfg;
    Rng src_rng(derive_seed(base, 1));
    for (std::size_t i = 0; i < cfg.n_source; ++i)
      d.source.push_back(detail::synthesize_scene(cfg.image_size, cfg.num_classes, src_rng));
    const auto fractions = class_pixel_fractions(d.source, cfg.num_classes);
    if (*std::min_element(fractions.begin(), fractions.end()) < 0.01)
      continue;
    Rng tgt_rng(derive_seed(base, 2));
    Rng noise_rng(derive_seed(base, 3));
    for (std::size_t i = 0; i < cfg.n_target; ++i) {
      Sample s = detail::synthesize_scene(cfg.image_size, cfg.num_classes, tgt_rng);
      detail::apply_domain_shift(s.image, cfg.shift, noise_rng);
      d.target.push_back(std::move(s));
    }
    d.split = split_target(cfg.n_target, cfg.adapt_fraction, cfg.seed);
    return d;
  }
  throw std::runtime_error("could not generate a source set covering every class");
}

// ---------------------------------------------------------------------------
// Search-facing loader. Target labels sit behind an explicit unlock and every
// read is counted, so label-free code paths can be audited.
// ---------------------------------------------------------------------------

class Dataset {
public:
  class EvalLabels;

  static Dataset from_generated(GeneratedDataset g) {
    Dataset d;
    d.config_ = g.config;
    d.source_ = std::move(g.source);
    d.split_ = g.split;
    auto store = std::make_shared<LabelStore>();
    for (Sample &s : g.target) {
      d.target_images_.push_back(std::move(s.image));
      store->memory.push_back(std::move(s.label));
    }
    d.labels_ = std::move(store);
    return d;
  }

  /// Loads a dataset directory written by write_dataset(). Target labels are not read.
  static Dataset load(const std::filesystem::path &dir, bool verify = true);

  const DatasetConfig &config() const { return config_; }
  std::size_t num_classes() const { return config_.num_classes; }
  std::size_t image_size() const { return config_.image_size; }

  std::size_t source_size() const { return source_.size(); }
  const Sample &source(std::size_t i) const { return source_.at(i); }

  std::size_t target_adapt_size() const { return split_.adapt.size(); }
  const Tensor &target_adapt_image(std::size_t i) const {
    return target_images_.at(split_.adapt.at(i));
  }
  std::size_t target_eval_size() const { return split_.eval.size(); }
  const Tensor &target_eval_image(std::size_t i) const {
    return target_images_.at(split_.eval.at(i));
  }
  const TargetSplit &split() const { return split_; }

  /// Number of target label maps read so far (any split, any caller).
  std::uint64_t target_label_reads() const { return labels_->reads.load(); }

  /// The only way to see target labels; intended for evaluation code in the CLI layer.
  EvalLabels unlock_eval_labels() const;

private:
  struct LabelStore {
    std::vector<std::vector<int>> memory;      // in-memory datasets
    std::vector<std::filesystem::path> files;  // on-disk datasets
    std::atomic<std::uint64_t> reads{0};

    std::vector<int> read(std::size_t target_index) {
      reads.fetch_add(1);
      if (!memory.empty())
        return memory.at(target_index);
      return decode_label(detail::read_file_bytes(files.at(target_index).string())).data;
    }
  };

  DatasetConfig config_;
  std::vector<Sample> source_;
  std::vector<Tensor> target_images_;
  TargetSplit split_;
  std::shared_ptr<LabelStore> labels_;
};

class Dataset::EvalLabels {
public:
  std::size_t size() const { return ds_->target_eval_size(); }
  std::vector<int> label(std::size_t i) const {
    return ds_->labels_->read(ds_->split_.eval.at(i));
  }

private:
  friend class Dataset;
  explicit EvalLabels(const Dataset *ds) : ds_(ds) {}
  const Dataset *ds_;
};

inline Dataset::EvalLabels Dataset::unlock_eval_labels() const { return EvalLabels(this); }

// ---------------------------------------------------------------------------
// Directory layout: manifest.json, images/*.bin (tensor blobs), labels/*.lbl
// ---------------------------------------------------------------------------

inline std::string file_checksum(const std::string &bytes) { return hex64(fnv1a64(bytes)); }

inline nlohmann::ordered_json write_dataset(const GeneratedDataset &d,
                                            const std::filesystem::path &dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "labels", ec);
  if (ec)
    throw std::runtime_error("cannot create dataset directory '" + dir.string() + "': " + ec.message());

  auto files = nlohmann::ordered_json::array();
  auto emit = [&](const std::string &rel, const std::string &bytes, const char *role,
                  const char *kind, std::size_t index) {
    detail::write_file_bytes((dir / rel).string(), bytes);
    files.push_back({{"path", rel},
                     {"role", role},
                     {"kind", kind},
                     {"index", index},
                     {"checksum", file_checksum(bytes)}});
  };
  char name[32];
  for (std::size_t i = 0; i < d.source.size(); ++i) {
    std::snprintf(name, sizeof name, "src_%04zu", i);
    emit(std::string("images/") + name + ".bin", encode_blob(d.source[i].image), "source_train",
         "image", i);
    emit(std::string("labels/") + name + ".lbl",
         encode_label(d.source[i].label, d.config.image_size, d.config.image_size, d.config.num_classes),
         "source_train", "label", i);
  }
  std::vector<const char *> role(d.target.size(), "target_adapt");
  for (std::size_t i : d.split.eval)
    role[i] = "target_eval";
  for (std::size_t i = 0; i < d.target.size(); ++i) {
    std::snprintf(name, sizeof name, "tgt_%04zu", i);
    emit(std::string("images/") + name + ".bin", encode_blob(d.target[i].image), role[i], "image", i);
    emit(std::string("labels/") + name + ".lbl",
         encode_label(d.target[i].label, d.config.image_size, d.config.image_size, d.config.num_classes),
         role[i], "label", i);
  }
  nlohmann::ordered_json m;
  m["version"] = 1;
  m["config"] = to_json(d.config);
  m["split"] = {{"adapt", d.split.adapt.size()}, {"eval", d.split.eval.size()}};
  m["files"] = std::move(files);
  detail::write_file_bytes((dir / "manifest.json").string(), m.dump(2) + "\n");
  return m;
}

inline Dataset Dataset::load(const std::filesystem::path &dir, bool verify) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path))
    throw std::runtime_error("no dataset manifest at '" + manifest_path.string() + "'");
  const auto m = nlohmann::json::parse(detail::read_file_bytes(manifest_path.string()));
  Dataset d;
  d.config_ = dataset_config_from_json(m.at("config"));
  d.config_.validate();
  const std::size_t S = d.config_.image_size;
  d.source_.resize(d.config_.n_source);
  d.target_images_.resize(d.config_.n_target);
  auto store = std::make_shared<LabelStore>();
  store->files.resize(d.config_.n_target);
  for (const auto &f : m.at("files")) {
    const std::string role = f.at("role"), kind = f.at("kind");
    const auto idx = f.at("index").get<std::size_t>();
    const auto path = dir / f.at("path").get<std::string>();
    const bool is_target = role != "source_train";
    if (is_target && kind == "label") {
      if (idx >= d.config_.n_target)
        throw std::runtime_error("manifest target index out of range");
      store->files[idx] = path;
      if (role == "target_adapt")
        d.split_.adapt.push_back(idx);
      else
        d.split_.eval.push_back(idx);
      continue; // never opened here
    }
    const std::string bytes = detail::read_file_bytes(path.string());
    if (verify && file_checksum(bytes) != f.at("checksum").get<std::string>())
      throw std::runtime_error("checksum mismatch for '" + path.string() + "'");
    if (kind == "image") {
      Tensor img = decode_blob(bytes);
      if (img.shape() != Shape{1, 3, S, S})
        throw ShapeError("image '" + path.string() + "' has shape " + img.shape().str());
      (is_target ? d.target_images_.at(idx) : d.source_.at(idx).image) = std::move(img);
    } else {
      d.source_.at(idx).label = decode_label(bytes).data;
    }
  }
  std::sort(d.split_.adapt.begin(), d.split_.adapt.end());
  std::sort(d.split_.eval.begin(), d.split_.eval.end());
  d.labels_ = std::move(store);
  return d;
}

} // namespace autoadapt
