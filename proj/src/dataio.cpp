#include "fsdiff/dataio.hpp"

#include "fsdiff/rng.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;

namespace fsdiff {

// ---- images ----------------------------------------------------------------

std::uint8_t to_byte(double x) {
  const double v = std::round((x + 1.0) * 127.5);
  if (!(v >= 0.0)) return 0;  // also maps NaN to 0
  return static_cast<std::uint8_t>(std::min(v, 255.0));
}

double from_byte(std::uint8_t v) noexcept { return static_cast<double>(v) / 127.5 - 1.0; }

Tensor load_png(const fs::path& path, std::size_t channels) {
  if (channels != 1 && channels != 3) throw std::invalid_argument("load_png: channels must be 1 or 3");
  if (!fs::is_regular_file(path)) throw DataError("cannot read image " + path.string() + ": no such file");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw DataError("cannot decode image " + path.string() + ": " + img.message);
  img.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  png_color black{0, 0, 0};
  if (!png_image_finish_read(&img, &black, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DataError("cannot decode image " + path.string() + ": " + msg);
  }
  const std::size_t h = img.height, w = img.width;
  Tensor out({channels, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < channels; ++c)
        out[(c * h + y) * w + x] = from_byte(buf[(y * w + x) * channels + c]);
  return out;
}

void save_png(const fs::path& path, const Tensor& image) {
  if (image.rank() != 3 || (image.shape()[0] != 1 && image.shape()[0] != 3))
    throw ShapeError("save_png: expected (1|3, H, W), got " + shape_str(image.shape()));
  const std::size_t c = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
  std::vector<png_byte> buf(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) buf[(y * w + x) * c + k] = to_byte(image[(k * h + y) * w + x]);
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr))
    throw DataError("cannot write image " + path.string() + ": " + img.message);
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3) throw ShapeError("resize_bilinear: expected (C, H, W)");
  const std::size_t c = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
  if (out_h == 0 || out_w == 0 || h == 0 || w == 0) throw ShapeError("resize_bilinear: empty size");
  if (h == out_h && w == out_w) return image;
  auto taps = [](std::size_t out, std::size_t in) {
    struct Tap {
      std::size_t i0, i1;
      double f;
    };
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      const double s = std::clamp((static_cast<double>(o) + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(s));
      t[o] = {i0, std::min(i0 + 1, in - 1), s - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(out_h, h), tx = taps(out_w, w);
  Tensor out({c, out_h, out_w});
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) {
        auto px = [&](std::size_t yy, std::size_t xx) { return image[(k * h + yy) * w + xx]; };
        const auto& a = ty[y];
        const auto& b = tx[x];
        const double top = px(a.i0, b.i0) * (1 - b.f) + px(a.i0, b.i1) * b.f;
        const double bot = px(a.i1, b.i0) * (1 - b.f) + px(a.i1, b.i1) * b.f;
        out[(k * out_h + y) * out_w + x] = top * (1 - a.f) + bot * a.f;
      }
  return out;
}

Tensor make_grid(const Tensor& batch, std::size_t rows, std::size_t pad) {
  if (batch.rank() != 4 || batch.shape()[0] == 0) throw ShapeError("make_grid: expected non-empty (N, C, H, W)");
  if (rows == 0) throw std::invalid_argument("make_grid: rows must be positive");
  const std::size_t n = batch.shape()[0], c = batch.shape()[1], h = batch.shape()[2], w = batch.shape()[3];
  rows = std::min(rows, n);
  const std::size_t cols = (n + rows - 1) / rows;
  const std::size_t gh = rows * (h + pad) + pad, gw = cols * (w + pad) + pad;
  Tensor out({c, gh, gw}, -1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t oy = pad + (i / cols) * (h + pad), ox = pad + (i % cols) * (w + pad);
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out[(k * gh + oy + y) * gw + ox + x] = batch.at(i, k, y, x);
  }
  return out;
}

// ---- datasets --------------------------------------------------------------

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) { return a.string() < b.string(); });
  return out;
}

std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t count, std::uint64_t seed) {
  if (count > n)
    throw DataError("subsample of " + std::to_string(count) + " requested from " + std::to_string(n) + " images");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  SeededRng rng = SeededRng(seed).child("subsample");
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
  perm.resize(count);
  std::sort(perm.begin(), perm.end());
  return perm;
}

Tensor load_dataset(const DatasetSpec& spec) {
  auto files = list_images(spec.directory);
  if (files.empty()) throw DataError("no PNG images in " + spec.directory.string());
  if (spec.subsample) {
    std::vector<fs::path> picked;
    for (std::size_t i : subsample_indices(files.size(), spec.subsample->count, spec.subsample->seed))
      picked.push_back(files[i]);
    files = std::move(picked);
  }
  std::vector<Tensor> items;
  items.reserve(files.size());
  for (const auto& f : files)
    items.push_back(resize_bilinear(load_png(f, spec.channels), spec.image_size, spec.image_size));
  return stack(items);
}

std::vector<fs::path> save_batch(const fs::path& dir, const Tensor& batch, const std::string& prefix) {
  const auto items = unstack(batch);
  const std::size_t digits = std::max<std::size_t>(3, std::to_string(items.size()).size());
  std::vector<fs::path> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::string idx = std::to_string(i);
    idx.insert(0, digits - idx.size(), '0');
    out.push_back(dir / (prefix + idx + ".png"));
    save_png(out.back(), items[i]);
  }
  return out;
}

// ---- checkpoints -------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
void put(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.append(bytes.data(), bytes.size());
}

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  std::string bytes(std::uint64_t n, const char* what) {
    need(n, what);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool at_end() const { return pos_ == s_.size(); }

 private:
  void need(std::uint64_t n, const char* what) {
    if (n > s_.size() - pos_) throw TruncatedError(std::string("checkpoint truncated while reading ") + what);
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out = "FSDC";
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string cfg = Json(ckpt.config).dump();
  put<std::uint64_t>(out, cfg.size());
  out += cfg;
  put<std::uint64_t>(out, ckpt.iteration);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.count()));
  for (std::size_t i = 0; i < ckpt.params.count(); ++i) {
    const auto& name = ckpt.params.name(i);
    const Tensor& a = ckpt.params.array(i);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.rank()));
    for (std::size_t d : a.shape()) put<std::uint64_t>(out, d);
    for (std::size_t k = 0; k < a.size(); ++k) put<double>(out, a[k]);
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4) throw TruncatedError("checkpoint truncated while reading magic");
  if (bytes.compare(0, 4, "FSDC") != 0) throw BadMagicError("not a checkpoint file (bad magic)");
  Reader r(bytes);
  r.bytes(4, "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw VersionMismatchError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                               std::to_string(kCheckpointVersion) + ")");
  const auto json_len = r.get<std::uint64_t>("config length");
  Checkpoint ck;
  try {
    ck.config = run_config_from_json(Json::parse(r.bytes(json_len, "config")));
  } catch (const Json::exception& e) {
    throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
  } catch (const DataError& e) {
    throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
  }
  ck.iteration = r.get<std::uint64_t>("iteration");
  const auto n = r.get<std::uint32_t>("array count");
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto name_len = r.get<std::uint32_t>("array name length");
    std::string name = r.bytes(name_len, "array name");
    const auto rank = r.get<std::uint32_t>("array rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.get<std::uint64_t>("array shape"));
    Tensor a(shape);
    for (std::size_t k = 0; k < a.size(); ++k) a[k] = r.get<double>("array values");
    ck.params.add(std::move(name), std::move(a));
  }
  if (!r.at_end()) throw CheckpointError("checkpoint has trailing bytes");
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  const std::string bytes = serialize_checkpoint(ckpt);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

// ---- JSON ------------------------------------------------------------------

namespace {

void check_keys(const Json& j, const char* what, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw DataError(std::string(what) + ": expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw DataError(std::string(what) + ": unknown key '" + key + "'");
}

template <class T>
void opt(const Json& j, const char* key, T& v) {
  if (j.contains(key)) j.at(key).get_to(v);
}

}  // namespace

void to_json(Json& j, const ScheduleConfig& c) {
  j = Json{{"T", c.T}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}};
}
void from_json(const Json& j, ScheduleConfig& c) {
  check_keys(j, "schedule", {"T", "beta_start", "beta_end"});
  opt(j, "T", c.T);
  opt(j, "beta_start", c.beta_start);
  opt(j, "beta_end", c.beta_end);
}

void to_json(Json& j, const DenoiserConfig& c) {
  j = Json{{"image_size", c.image_size},         {"channels", c.channels},
           {"base_width", c.base_width},         {"depth", c.depth},
           {"time_embed_dim", c.time_embed_dim}, {"num_conditions", c.num_conditions},
           {"variance_learning", c.variance_learning}, {"dropout", c.dropout}};
}
void from_json(const Json& j, DenoiserConfig& c) {
  check_keys(j, "model",
             {"image_size", "channels", "base_width", "depth", "time_embed_dim", "num_conditions",
              "variance_learning", "dropout"});
  opt(j, "image_size", c.image_size);
  opt(j, "channels", c.channels);
  opt(j, "base_width", c.base_width);
  opt(j, "depth", c.depth);
  opt(j, "time_embed_dim", c.time_embed_dim);
  opt(j, "num_conditions", c.num_conditions);
  opt(j, "variance_learning", c.variance_learning);
  opt(j, "dropout", c.dropout);
}

void to_json(Json& j, const LossWeights& c) {
  j = Json{{"lambda1", c.lambda1}, {"lambda2", c.lambda2}, {"lambda3", c.lambda3},
           {"lambda4", c.lambda4}, {"mode", to_string(c.mode)}};
}
void from_json(const Json& j, LossWeights& c) {
  check_keys(j, "weights", {"lambda1", "lambda2", "lambda3", "lambda4", "mode"});
  opt(j, "lambda1", c.lambda1);
  opt(j, "lambda2", c.lambda2);
  opt(j, "lambda3", c.lambda3);
  opt(j, "lambda4", c.lambda4);
  if (j.contains("mode")) {
    try {
      c.mode = adaptation_mode_from_string(j.at("mode").get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw DataError(e.what());
    }
  }
}

void to_json(Json& j, const TrainConfig& c) {
  j = Json{{"iterations", c.iterations},
           {"batch_size", c.batch_size},
           {"learning_rate", c.learning_rate},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_eps", c.adam_eps},
           {"seed", c.seed},
           {"log_interval", c.log_interval},
           {"checkpoint_interval", c.checkpoint_interval},
           {"flip_augment", c.flip_augment},
           {"shared_t", c.shared_t},
           {"weights", c.weights},
           {"probe_interval", c.probe_interval},
           {"probe_count", c.probe_count},
           {"probe_seed", c.probe_seed},
           {"clip_x0", c.clip_x0},
           {"source_condition", c.source_condition},
           {"target_condition", c.target_condition},
           {"prior_pool_size", c.prior_pool_size},
           {"regenerate_prior_every", c.regenerate_prior_every}};
}
void from_json(const Json& j, TrainConfig& c) {
  check_keys(j, "train",
             {"iterations", "batch_size", "learning_rate", "adam_beta1", "adam_beta2", "adam_eps", "seed",
              "log_interval", "checkpoint_interval", "flip_augment", "shared_t", "weights", "probe_interval",
              "probe_count", "probe_seed", "clip_x0", "source_condition", "target_condition", "prior_pool_size",
              "regenerate_prior_every"});
  opt(j, "iterations", c.iterations);
  opt(j, "batch_size", c.batch_size);
  opt(j, "learning_rate", c.learning_rate);
  opt(j, "adam_beta1", c.adam_beta1);
  opt(j, "adam_beta2", c.adam_beta2);
  opt(j, "adam_eps", c.adam_eps);
  opt(j, "seed", c.seed);
  opt(j, "log_interval", c.log_interval);
  opt(j, "checkpoint_interval", c.checkpoint_interval);
  opt(j, "flip_augment", c.flip_augment);
  opt(j, "shared_t", c.shared_t);
  opt(j, "weights", c.weights);
  opt(j, "probe_interval", c.probe_interval);
  opt(j, "probe_count", c.probe_count);
  opt(j, "probe_seed", c.probe_seed);
  opt(j, "clip_x0", c.clip_x0);
  opt(j, "source_condition", c.source_condition);
  opt(j, "target_condition", c.target_condition);
  opt(j, "prior_pool_size", c.prior_pool_size);
  opt(j, "regenerate_prior_every", c.regenerate_prior_every);
}

void to_json(Json& j, const RunConfig& c) { j = Json{{"schedule", c.schedule}, {"model", c.model}, {"train", c.train}}; }
void from_json(const Json& j, RunConfig& c) {
  check_keys(j, "config", {"schedule", "model", "train"});
  opt(j, "schedule", c.schedule);
  opt(j, "model", c.model);
  opt(j, "train", c.train);
}

void to_json(Json& j, const LossReport& r) {
  j = Json{{"total", r.total}, {"simple", r.simple}, {"vlb", r.vlb}, {"img", r.img},
           {"hf", r.hf},       {"hfmse", r.hfmse},   {"pr", r.pr}};
}
void to_json(Json& j, const ProbeRecord& r) {
  j = Json{{"iteration", r.iteration}, {"mean_similarity", r.mean_similarity}, {"pair_similarity", r.pair_similarity}};
}
void to_json(Json& j, const LogRecord& r) {
  j = Json{{"iteration", r.iteration}, {"loss", r.report}};
  if (r.probe) j["probe"] = *r.probe;
}

RunConfig run_config_from_json(const Json& j) { return run_config_from_json(j, RunConfig{}); }

RunConfig run_config_from_json(const Json& j, RunConfig base) {
  try {
    from_json(j, base);
  } catch (const Json::exception& e) {
    throw DataError(std::string("invalid config: ") + e.what());
  }
  return base;
}

Json read_json_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path.string());
  try {
    return Json::parse(f);
  } catch (const Json::parse_error& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const Json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f << j.dump(2) << '\n';
}

void write_json_lines(const fs::path& path, const std::vector<Json>& records) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  for (const auto& r : records) f << r.dump() << '\n';
}

std::vector<Json> read_json_lines(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path.string());
  std::vector<Json> out;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) out.push_back(Json::parse(line));
  return out;
}

}  // namespace fsdiff
