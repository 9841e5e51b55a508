#include "fsdiff/cli.hpp"

#include "fsdiff/dataio.hpp"
#include "fsdiff/metrics.hpp"
#include "fsdiff/sweep.hpp"
#include "fsdiff/toydata.hpp"
#include "fsdiff/trainer.hpp"
#include "fsdiff/wavelet.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>

namespace fsdiff {
namespace {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IncompatibleCheckpointError : public std::runtime_error {
 public:
  explicit IncompatibleCheckpointError(const std::string& what)
      : std::runtime_error("incompatible source checkpoint: " + what) {}
};

// Appends one JSON record per line, flushed as it goes.
class JsonLinesWriter {
 public:
  explicit JsonLinesWriter(const fs::path& path) : f_(path, std::ios::binary | std::ios::trunc) {
    if (!f_) throw DataError("cannot write " + path.string());
  }
  void write(const Json& j) { f_ << j.dump() << '\n' << std::flush; }

 private:
  std::ofstream f_;
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
  std::optional<double> lambda1, lambda2, lambda3, lambda4;
  std::optional<std::string> mode;

  void add_to(CLI::App* c, bool adaptation) {
    c->add_option("--seed", seed, "Training seed");
    c->add_option("--iterations", iterations, "Optimisation steps");
    c->add_option("--lambda1", lambda1, "Weight of L_vlb (or L_pr in conditional mode)");
    if (!adaptation) return;
    c->add_option("--lambda2", lambda2, "Weight of the pairwise image similarity loss");
    c->add_option("--lambda3", lambda3, "Weight of the pairwise high-frequency similarity loss");
    c->add_option("--lambda4", lambda4, "Weight of the high-frequency reconstruction loss");
    c->add_option("--mode", mode, "unconditional or conditional")->check(CLI::IsMember({"unconditional", "conditional"}));
  }

  void apply(RunConfig& cfg) const {
    if (seed) cfg.train.seed = *seed;
    if (iterations) cfg.train.iterations = *iterations;
    auto& w = cfg.train.weights;
    if (lambda1) w.lambda1 = *lambda1;
    if (lambda2) w.lambda2 = *lambda2;
    if (lambda3) w.lambda3 = *lambda3;
    if (lambda4) w.lambda4 = *lambda4;
    if (mode) w.mode = adaptation_mode_from_string(*mode);
  }
};

struct DataOptions {
  std::string dir;
  std::optional<std::size_t> subsample;
  std::uint64_t subsample_seed = 0;

  void add_to(CLI::App* c) {
    c->add_option("--data", dir, "Directory of PNG images")->required();
    c->add_option("--subsample", subsample, "Use a seeded subset of this many images");
    c->add_option("--subsample-seed", subsample_seed, "Seed of the subset");
  }
  Tensor load(const DenoiserConfig& m) const {
    std::optional<Subsample> sub;
    if (subsample) sub = Subsample{*subsample, subsample_seed};
    return load_dataset({dir, m.image_size, m.channels, sub});
  }
  Json json() const {
    Json j{{"directory", dir}};
    if (subsample) j["subsample"] = {{"count", *subsample}, {"seed", subsample_seed}};
    return j;
  }
};

RunConfig load_config(const std::string& path, RunConfig base = {}) {
  if (path.empty()) return base;
  return run_config_from_json(read_json_file(path), std::move(base));
}

std::size_t default_rows(std::size_t n) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n)))));
}

std::optional<int> sampling_condition(const RunConfig& cfg, bool adapted) {
  if (cfg.model.num_conditions == 0) return std::nullopt;
  if (adapted && cfg.train.weights.mode == AdaptationMode::Conditional) return cfg.train.target_condition;
  return cfg.train.source_condition;
}

void prepare_out(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError("cannot create output directory " + out.string() + ": " + ec.message());
}

// Shared tail of pretrain and adapt: checkpoints, logs and the final grid.
struct RunArtifacts {
  fs::path out;
  RunConfig cfg;
  JsonLinesWriter log;

  RunArtifacts(fs::path dir, const RunConfig& c) : out(std::move(dir)), cfg(c), log(out / "log.jsonl") {}

  TrainHooks hooks(int total, std::ostream& err) {
    TrainHooks h;
    h.on_log = [this, total, &err](const LogRecord& r) {
      log.write(Json(r));
      err << "iter " << r.iteration << "/" << total << " loss " << r.report.total << '\n';
    };
    h.on_checkpoint = [this, total](int it, const DenoiserParams& p) {
      const fs::path name = it == total ? "checkpoint.ckpt" : "checkpoint_" + std::to_string(it) + ".ckpt";
      save_checkpoint({cfg, static_cast<std::uint64_t>(it), p}, out / name);
    };
    h.on_warning = [&err](const std::string& w) { err << "warning: " << w << '\n'; };
    return h;
  }
};

struct GridOptions {
  std::size_t n = 16;
  std::uint64_t seed = 0;
  void add_to(CLI::App* c) {
    c->add_option("--grid-n", n, "Samples in the final grid (0 disables it)");
    c->add_option("--grid-seed", seed, "Seed of the final grid samples");
  }
  void write(const fs::path& out, const DenoiserParams& p, const RunConfig& cfg, std::optional<int> cond) const {
    if (n == 0) return;
    save_png(out / "grid.png", make_grid(sample_images(p, cfg, n, seed, cond), default_rows(n)));
  }
};

// Zero-centred rendering: 0 -> gray 128, +-max|v| -> 255 / 1.
Tensor zero_centred(const Tensor& band) {
  const double m = band.size() ? band.vec().cwiseAbs().maxCoeff() : 0.0;
  Tensor out(band.shape());
  for (std::size_t i = 0; i < band.size(); ++i) {
    const double b = m > 0 ? std::round(128.0 + 127.0 * band[i] / m) : 128.0;
    out[i] = from_byte(static_cast<std::uint8_t>(std::clamp(b, 0.0, 255.0)));
  }
  return out;
}

std::vector<Tensor> load_image_dir(const std::string& dir, std::size_t channels, std::optional<std::size_t> size) {
  const auto files = list_images(dir);
  if (files.empty()) throw DataError("no PNG images in " + dir);
  std::vector<Tensor> out;
  for (const auto& f : files) {
    Tensor img = load_png(f, channels);
    if (!size) size = img.dim(1);
    if (img.dim(1) != *size || img.dim(2) != *size) img = resize_bilinear(img, *size, *size);
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot diffusion model adaptation toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  std::string config_path, out_dir;
  Overrides ov;
  DataOptions data;
  GridOptions grid;

  auto* pretrain_cmd = app.add_subcommand("pretrain", "Train a denoiser from scratch");
  pretrain_cmd->add_option("--config", config_path, "Run config JSON");
  pretrain_cmd->add_option("--out", out_dir, "Run directory")->required();
  data.add_to(pretrain_cmd);
  ov.add_to(pretrain_cmd, false);
  grid.add_to(pretrain_cmd);

  std::string source_path;
  auto* adapt_cmd = app.add_subcommand("adapt", "Adapt a source checkpoint to a few-shot target set");
  adapt_cmd->add_option("--source", source_path, "Source checkpoint")->required();
  adapt_cmd->add_option("--config", config_path, "Config JSON overlaid on the checkpoint's config");
  adapt_cmd->add_option("--out", out_dir, "Run directory")->required();
  data.add_to(adapt_cmd);
  ov.add_to(adapt_cmd, true);
  grid.add_to(adapt_cmd);

  std::string ckpt_path;
  std::size_t n = 16;
  std::uint64_t seed = 0;
  std::optional<int> cond;
  bool write_grid = false;
  auto* sample_cmd = app.add_subcommand("sample", "Draw samples from a checkpoint");
  sample_cmd->add_option("--checkpoint", ckpt_path, "Checkpoint to sample")->required();
  sample_cmd->add_option("--out", out_dir, "Output directory")->required();
  sample_cmd->add_option("--n", n, "Number of samples");
  sample_cmd->add_option("--seed", seed, "Sampling seed");
  sample_cmd->add_option("--cond", cond, "Condition token");
  sample_cmd->add_flag("--grid", write_grid, "Also write grid.png");

  std::string metric, gen_dir, train_dir, distance = "haar-ms", embedder = "haar-rp64";
  bool flips = false;
  std::size_t channels = 3;
  std::optional<std::size_t> image_size;
  auto* eval_cmd = app.add_subcommand("eval", "Score generated images");
  eval_cmd->add_option("--metric", metric, "Metric")
      ->required()
      ->check(CLI::IsMember({"nearest", "intra", "avg-pairwise", "frechet"}));
  eval_cmd->add_option("--generated", gen_dir, "Directory of generated PNGs")->required();
  eval_cmd->add_option("--training", train_dir, "Directory of training PNGs");
  eval_cmd->add_flag("--flips", flips, "Add horizontal flips of the training images (nearest)");
  eval_cmd->add_option("--distance", distance, "Image distance")->check(CLI::IsMember({"haar-ms", "pixel-mse"}));
  eval_cmd->add_option("--embedder", embedder, "Frechet embedder")->check(CLI::IsMember({"haar-rp64"}));
  eval_cmd->add_option("--channels", channels, "1 or 3")->check(CLI::IsMember({1, 3}));
  eval_cmd->add_option("--image-size", image_size, "Resize every image to this side (default: first generated)");
  eval_cmd->add_option("--out", out_dir, "Directory for report.json");

  std::string input;
  auto* wavelet_cmd = app.add_subcommand("wavelet", "Write LL and LH+HL+HH panels per image");
  wavelet_cmd->add_option("--input", input, "PNG file or directory")->required();
  wavelet_cmd->add_option("--out", out_dir, "Output directory")->required();
  wavelet_cmd->add_option("--channels", channels, "1 or 3")->check(CLI::IsMember({1, 3}));

  std::optional<std::size_t> rows;
  auto* grid_cmd = app.add_subcommand("grid", "Tile a directory of images into grid.png");
  grid_cmd->add_option("--input", input, "Directory of PNGs")->required();
  grid_cmd->add_option("--out", out_dir, "Output directory")->required();
  grid_cmd->add_option("--rows", rows, "Grid rows (default: ceil(sqrt(n)))")->check(CLI::PositiveNumber);
  grid_cmd->add_option("--channels", channels, "1 or 3")->check(CLI::IsMember({1, 3}));

  std::vector<double> lambda2_values;
  std::optional<std::size_t> sweep_n;
  std::optional<std::uint64_t> sweep_seed;
  std::optional<std::string> sweep_distance;
  auto* sweep_cmd = app.add_subcommand("sweep", "Adapt once per lambda2 value and tabulate intra-cluster diversity");
  sweep_cmd->add_option("--source", source_path, "Source checkpoint")->required();
  sweep_cmd->add_option("--config", config_path, "Config JSON; an optional top-level \"sweep\" object holds the matrix");
  sweep_cmd->add_option("--out", out_dir, "Output directory")->required();
  sweep_cmd->add_option("--lambda2-values", lambda2_values, "lambda2 values")->delimiter(',');
  sweep_cmd->add_option("--n", sweep_n, "Samples per value");
  sweep_cmd->add_option("--sample-seed", sweep_seed, "Sampling seed");
  sweep_cmd->add_option("--distance", sweep_distance, "Image distance")->check(CLI::IsMember({"haar-ms", "pixel-mse"}));
  data.add_to(sweep_cmd);
  ov.add_to(sweep_cmd, true);

  std::string kind = "source";
  std::size_t toy_size = 16;
  auto* toy_cmd = app.add_subcommand("toydata", "Write the procedural toy source or target set");
  toy_cmd->add_option("--out", out_dir, "Output directory")->required();
  toy_cmd->add_option("--kind", kind, "source or target")->check(CLI::IsMember({"source", "target"}));
  toy_cmd->add_option("--n", n, "Number of images");
  toy_cmd->add_option("--size", toy_size, "Image side");
  toy_cmd->add_option("--seed", seed, "Generation seed");

  std::vector<const char*> argv{"fsdiff"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUser;
  }

  try {
    const fs::path outp = out_dir;
    if (pretrain_cmd->parsed()) {
      RunConfig cfg = load_config(config_path);
      ov.apply(cfg);
      cfg.model.validate();
      cfg.train.validate();
      const Tensor dataset = data.load(cfg.model);
      prepare_out(outp);
      write_json_file(outp / "config.json", cfg);
      write_json_file(outp / "inputs.json", {{"command", "pretrain"}, {"data", data.json()}, {"images", dataset.dim(0)}});
      RunArtifacts art(outp, cfg);
      const TrainResult r = pretrain(dataset, cfg, std::nullopt, art.hooks(cfg.train.iterations, err));
      grid.write(outp, r.params, cfg, sampling_condition(cfg, false));
      out << "pretrained " << r.iterations_done << " iterations on " << dataset.dim(0) << " images -> "
          << (outp / "checkpoint.ckpt").string() << '\n';
    } else if (adapt_cmd->parsed() || sweep_cmd->parsed()) {
      const Checkpoint src = load_checkpoint(source_path);
      Json file = config_path.empty() ? Json::object() : read_json_file(config_path);
      Json sweep_json = Json::object();
      if (sweep_cmd->parsed() && file.is_object() && file.contains("sweep")) {
        sweep_json = file["sweep"];
        file.erase("sweep");
      }
      RunConfig cfg = run_config_from_json(file, src.config);
      ov.apply(cfg);
      if (!(cfg.model == src.config.model))
        throw IncompatibleCheckpointError("the config's model section differs from the checkpoint's");
      if (!params_match_config(src.params, cfg.model))
        throw IncompatibleCheckpointError("parameters do not match the stored model configuration");
      cfg.train.validate();
      const Tensor target = data.load(cfg.model);
      prepare_out(outp);
      write_json_file(outp / "config.json", cfg);
      Json inputs{{"source", source_path}, {"data", data.json()}, {"images", target.dim(0)}};

      if (adapt_cmd->parsed()) {
        inputs["command"] = "adapt";
        write_json_file(outp / "inputs.json", inputs);
        RunArtifacts art(outp, cfg);
        const TrainResult r = adapt(src.params, target, cfg, art.hooks(cfg.train.iterations, err));
        std::vector<Json> probes(r.probes.begin(), r.probes.end());
        write_json_lines(outp / "probes.jsonl", probes);
        grid.write(outp, r.params, cfg, sampling_condition(cfg, true));
        out << "adapted " << r.iterations_done << " iterations on " << target.dim(0) << " images -> "
            << (outp / "checkpoint.ckpt").string() << '\n';
      } else {
        SweepOptions so;
        try {
          if (!sweep_json.is_object()) throw DataError("sweep: expected a JSON object");
          for (const auto& [key, _] : sweep_json.items())
            if (key != "lambda2" && key != "num_samples" && key != "sample_seed" && key != "distance")
              throw DataError("sweep: unknown key '" + key + "'");
          if (sweep_json.contains("lambda2")) sweep_json.at("lambda2").get_to(so.lambda2_values);
          if (sweep_json.contains("num_samples")) sweep_json.at("num_samples").get_to(so.num_samples);
          if (sweep_json.contains("sample_seed")) sweep_json.at("sample_seed").get_to(so.sample_seed);
          if (sweep_json.contains("distance")) sweep_json.at("distance").get_to(so.distance);
        } catch (const Json::exception& e) {
          throw DataError(std::string("invalid sweep config: ") + e.what());
        }
        if (!lambda2_values.empty()) so.lambda2_values = lambda2_values;
        if (sweep_n) so.num_samples = *sweep_n;
        if (sweep_seed) so.sample_seed = *sweep_seed;
        if (sweep_distance) so.distance = *sweep_distance;
        if (so.lambda2_values.empty()) throw UsageError("sweep: no lambda2 values (use --lambda2-values or sweep.lambda2)");
        inputs["command"] = "sweep";
        inputs["sweep"] = {{"lambda2", so.lambda2_values}, {"num_samples", so.num_samples},
                           {"sample_seed", so.sample_seed}, {"distance", so.distance}};
        write_json_file(outp / "inputs.json", inputs);
        const auto table = run_lambda2_sweep(src.params, target, cfg, so, [&](const SweepRow& row) {
          err << "lambda2 " << row.lambda2 << ": intra "
              << (row.intra.overall_mean ? std::to_string(*row.intra.overall_mean) : "undefined") << '\n';
        });
        const Json j = sweep_table_json(table, so);
        write_json_file(outp / "sweep.json", j);
        out << j.dump(2) << '\n';
      }
    } else if (sample_cmd->parsed()) {
      const Checkpoint ck = load_checkpoint(ckpt_path);
      if (!cond) cond = sampling_condition(ck.config, true);
      const Tensor samples = sample_images(ck.params, ck.config, n, seed, cond);
      prepare_out(outp);
      write_json_file(outp / "config.json", ck.config);
      Json inputs{{"command", "sample"}, {"checkpoint", ckpt_path}, {"n", n}, {"seed", seed}};
      inputs["cond"] = cond ? Json(*cond) : Json(nullptr);
      write_json_file(outp / "inputs.json", inputs);
      save_batch(outp, samples);
      if (write_grid) save_png(outp / "grid.png", make_grid(samples, default_rows(n)));
      out << "wrote " << n << " samples to " << outp.string() << '\n';
    } else if (eval_cmd->parsed()) {
      const auto gen = load_image_dir(gen_dir, channels, image_size);
      const std::size_t side = gen.front().dim(1);
      std::vector<Tensor> train;
      if (metric != "avg-pairwise") {
        if (train_dir.empty()) throw UsageError("eval --metric " + metric + " needs --training");
        train = load_image_dir(train_dir, channels, side);
      }
      Json report{{"metric", metric}, {"generated", gen_dir}, {"num_generated", gen.size()}};
      if (!train.empty()) {
        report["training"] = train_dir;
        report["num_training"] = train.size();
      }
      if (metric == "frechet") {
        const auto e = make_embedder(embedder);
        const FrechetResult fr = frechet_distance(gen, train, *e);
        report["embedder"] = embedder;
        report["value"] = fr.value;
        report["undersampled"] = fr.undersampled;
        if (fr.undersampled) err << "warning: fewer images than embedding dimensions; covariance is rank deficient\n";
      } else {
        const auto d = make_distance(distance);
        report["distance"] = distance;
        if (metric == "nearest") {
          report["flips"] = flips;
          report["value"] = nearest_distance_score(gen, train, *d, flips);
        } else if (metric == "avg-pairwise") {
          report["value"] = average_pairwise_diversity(gen, *d);
        } else {
          const ClusterReport c = intra_cluster_diversity(gen, train, *d);
          report["value"] = c.overall_mean ? Json(*c.overall_mean) : Json(nullptr);
          report["std"] = c.std_dev ? Json(*c.std_dev) : Json(nullptr);
          report["defined"] = c.defined();
          report["included_clusters"] = c.included_clusters;
          report["member_counts"] = c.member_counts;
          if (!c.defined()) err << "warning: no cluster has two members; intra-cluster diversity is undefined\n";
        }
      }
      if (!out_dir.empty()) {
        prepare_out(outp);
        write_json_file(outp / "report.json", report);
      }
      out << report.dump(2) << '\n';
    } else if (wavelet_cmd->parsed()) {
      std::vector<fs::path> files;
      if (fs::is_directory(input)) files = list_images(input);
      else if (fs::exists(input)) files.push_back(input);
      else throw DataError("input not found: " + input);
      if (files.empty()) throw DataError("no PNG images in " + input);
      prepare_out(outp);
      write_json_file(outp / "config.json", {{"command", "wavelet"}, {"input", input}, {"channels", channels}});
      for (const auto& f : files) {
        const Tensor img = load_png(f, channels);
        if (img.dim(1) % 2 || img.dim(2) % 2)
          throw DataError(f.string() + ": wavelet panels need even image sides, got " + shape_str(img.shape()));
        const FrequencyBands<double> b = haar_decompose(img);
        const std::string stem = f.stem().string();
        save_png(outp / (stem + "_ll.png"), zero_centred(b.ll));
        save_png(outp / (stem + "_hf.png"), zero_centred(b.lh + b.hl + b.hh));
      }
      out << "wrote panels for " << files.size() << " image(s) to " << outp.string() << '\n';
    } else if (grid_cmd->parsed()) {
      const auto imgs = load_image_dir(input, channels, std::nullopt);
      prepare_out(outp);
      const std::size_t r = rows.value_or(default_rows(imgs.size()));
      write_json_file(outp / "config.json", {{"command", "grid"}, {"input", input}, {"rows", r}, {"channels", channels}});
      save_png(outp / "grid.png", make_grid(stack(imgs), r));
      out << "wrote " << (outp / "grid.png").string() << '\n';
    } else if (toy_cmd->parsed()) {
      const Tensor set = kind == "source" ? make_toy_source(n, toy_size, seed) : make_toy_target(n, toy_size, seed);
      prepare_out(outp);
      write_json_file(outp / "config.json", {{"command", "toydata"}, {"kind", kind}, {"n", n}, {"size", toy_size}, {"seed", seed}});
      save_batch(outp, set, kind + "_");
      out << "wrote " << n << " " << kind << " images to " << outp.string() << '\n';
    }
    return kExitOk;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
  } catch (const IncompatibleCheckpointError& e) {
    err << "error: " << e.what() << '\n';
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUser;
}

}  // namespace fsdiff
