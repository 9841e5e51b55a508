#pragma once

#include "fsdiff/denoiser.hpp"
#include "fsdiff/tensor.hpp"
#include "fsdiff/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsdiff {

// Bad user input: missing paths, undecodable files, malformed configs.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- images ----------------------------------------------------------------

// Decodes an 8/16-bit PNG to a (channels, H, W) tensor in [-1, 1]. channels is
// 1 or 3; libpng converts colour type and composites alpha onto black.
Tensor load_png(const std::filesystem::path& path, std::size_t channels);

// Writes a (C, H, W) tensor in [-1, 1] as an 8-bit PNG. Values are mapped by
// round((x + 1) * 127.5) and clamped to [0, 255].
void save_png(const std::filesystem::path& path, const Tensor& image);

std::uint8_t to_byte(double x);
double from_byte(std::uint8_t v) noexcept;

// Bilinear resize of a (C, H, W) tensor with half-pixel centres.
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

// Tiles a (N, C, H, W) batch into one (C, rows*H + pad, cols*W + pad) image,
// row-major, with `pad` pixels of -1 between and around tiles.
Tensor make_grid(const Tensor& batch, std::size_t rows, std::size_t pad = 1);

// ---- datasets --------------------------------------------------------------

struct Subsample {
  std::size_t count = 0;
  std::uint64_t seed = 0;
};

struct DatasetSpec {
  std::filesystem::path directory;
  std::size_t image_size = 16;
  std::size_t channels = 3;
  std::optional<Subsample> subsample;
};

// *.png files (case-insensitive extension) in lexicographic order.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

// Indices of a `count`-subset of [0, n): the first `count` entries of a
// permutation that depends only on (n, seed), returned sorted. Subsets with
// the same seed therefore nest as count grows.
std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t count, std::uint64_t seed);

// (N, C, S, S) batch, in listing order (after subsampling).
Tensor load_dataset(const DatasetSpec& spec);

// Writes each item of a (N, C, H, W) batch as <prefix><index>.png (zero padded).
std::vector<std::filesystem::path> save_batch(const std::filesystem::path& dir, const Tensor& batch,
                                              const std::string& prefix = "img_");

// ---- checkpoints -------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  std::uint64_t iteration = 0;
  DenoiserParams params;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class VersionMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// Layout (little endian):
//   "FSDC" | u32 version | u64 json_len | json config | u64 iteration | u32 n_arrays
//   per array: u32 name_len | name | u32 rank | u64 dims[rank] | f64 values[prod(dims)]
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

// ---- JSON ------------------------------------------------------------------

using Json = nlohmann::json;

// Unknown keys are rejected; missing keys keep their defaults.
void to_json(Json& j, const ScheduleConfig& c);
void from_json(const Json& j, ScheduleConfig& c);
void to_json(Json& j, const DenoiserConfig& c);
void from_json(const Json& j, DenoiserConfig& c);
void to_json(Json& j, const LossWeights& c);
void from_json(const Json& j, LossWeights& c);
void to_json(Json& j, const TrainConfig& c);
void from_json(const Json& j, TrainConfig& c);
void to_json(Json& j, const RunConfig& c);
void from_json(const Json& j, RunConfig& c);
void to_json(Json& j, const LossReport& r);
void to_json(Json& j, const ProbeRecord& r);
void to_json(Json& j, const LogRecord& r);

RunConfig run_config_from_json(const Json& j);
// Overlays the keys present in j onto base.
RunConfig run_config_from_json(const Json& j, RunConfig base);
Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);

// One compact JSON document per line.
void write_json_lines(const std::filesystem::path& path, const std::vector<Json>& records);
std::vector<Json> read_json_lines(const std::filesystem::path& path);

}  // namespace fsdiff
