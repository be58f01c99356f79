#pragma once

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "morphogen/config.hpp"
#include "morphogen/diffusion.hpp"
#include "morphogen/metrics.hpp"
#include "morphogen/synth.hpp"

namespace morphogen {

namespace cli_detail {

namespace fs = std::filesystem;

inline RunConfig resolve_config(const std::string& config_path,
                                const std::vector<std::string>& overrides,
                                uint64_t seed_flag, bool seed_given,
                                int64_t threads) {
  RunConfig cfg;
  if (!config_path.empty()) cfg.load(config_path);
  cfg.apply_overrides(overrides);
  if (seed_given) cfg.seed = seed_flag;
  if (threads > 0) cfg.threads = threads;
  set_thread_count(static_cast<int>(cfg.threads));
  return cfg;
}

inline void write_resolved(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  cfg.save(out_dir + "/config_resolved.cfg");
}

// Volumes for a dataset directory (manifest order) or a single file.
inline std::vector<std::string> volume_paths(const std::string& input) {
  std::vector<std::string> paths;
  if (fs::is_directory(input)) {
    if (fs::exists(input + "/manifest.csv")) {
      for (const auto& entry : load_manifest(input)) paths.push_back(entry.path);
    } else {
      for (const auto& e : fs::directory_iterator(input))
        if (e.path().extension() == ".mvol") paths.push_back(e.path().string());
      std::sort(paths.begin(), paths.end());
    }
  } else {
    paths.push_back(input);
  }
  if (paths.empty())
    fail(ErrorCode::EmptyDataset, "no .mvol volumes under '" + input + "'");
  return paths;
}

inline std::string stem_of(const std::string& path) {
  return fs::path(path).stem().string();
}

// Generated volumes are already cube-sized in [-1, 1]; raw volumes run
// through the standard preprocessing.
inline CellVolume ensure_preprocessed(const CellVolume& vol, int64_t cube) {
  if (vol.d == cube && vol.h == cube && vol.w == cube) {
    bool in_range = true;
    for (float v : vol.data) in_range = in_range && v >= -1.0f && v <= 1.0f;
    if (in_range) return vol;
  }
  return preprocess(vol, cube);
}

inline std::vector<CellVolume> load_preprocessed(const std::string& input,
                                                 int64_t cube) {
  std::vector<CellVolume> out;
  for (const std::string& path : volume_paths(input))
    out.push_back(ensure_preprocessed(mvol::load(path), cube));
  return out;
}

inline void write_descriptor_rows(std::ofstream& os,
                                  const std::string& sample_id,
                                  const CellVolume& vol) {
  for (int64_t c = 0; c < vol.channels; ++c) {
    const float* chan = vol.channel(c);
    const float iso = otsu_threshold(chan, vol.voxels_per_channel());
    Mesh mesh = extract_mesh(chan, vol.d, vol.h, vol.w, iso);
    BinaryMask mask = binarize(chan, vol.d, vol.h, vol.w, iso);
    const DescriptorVector desc = compute_descriptors(mask, mesh, false);
    os << sample_id << "," << c << "," << desc.volume << ","
       << desc.surface_area << "," << desc.sphericity << ","
       << desc.eccentricity << "," << desc.protrusivity << "\n";
  }
}

// Series values from a CSV: last column of each data row.
inline std::vector<double> load_series_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::Io, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line))
    fail(ErrorCode::EmptyInput, path + ": empty series file");
  std::vector<double> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto fields = csv::split(line, ',');
    out.push_back(std::stod(fields.back()));
  }
  if (out.empty()) fail(ErrorCode::EmptyInput, path + ": no data rows");
  return out;
}

struct LoadedStage1 {
  std::unique_ptr<Vqgan<float>> model;
};

inline std::unique_ptr<Vqgan<float>> load_vqgan(const RunConfig& cfg,
                                                const std::string& ckpt,
                                                bool signal_channel = false) {
  auto model = std::make_unique<Vqgan<float>>(cfg.vqgan_config(signal_channel));
  model->load(ckpt);
  return model;
}

inline std::unique_ptr<Ddpm<float>> load_ddpm(const RunConfig& cfg,
                                              const std::string& ckpt,
                                              bool signal_channel = false) {
  auto model = std::make_unique<Ddpm<float>>(cfg.ddpm_config(signal_channel));
  model->load(ckpt, /*apply_ema=*/true);
  return model;
}

}  // namespace cli_detail

// Dispatch for the whole toolkit. Exit codes: 0 success, 1 usage error,
// 2 data or validation error, 3 numeric abort.
inline int run_cli(const std::vector<std::string>& args) {
  namespace fs = std::filesystem;
  using cli_detail::ensure_preprocessed;
  using cli_detail::load_preprocessed;

  CLI::App app{"3D cell morphology generation and evaluation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global options are accepted after the subcommand

  std::string config_path;
  std::vector<std::string> overrides;
  uint64_t seed_flag = 0;
  bool seed_given = false;
  int64_t threads_flag = 0;
  app.add_option("--config", config_path, "run configuration file")
      ->each([](const std::string&) {});
  app.add_option("--set", overrides, "override config entries (key=value)");
  auto* seed_opt = app.add_option("--seed", seed_flag, "master random seed");
  app.add_option("--threads", threads_flag,
                 "worker threads (1 = deterministic reference order)");

  auto resolved = [&]() {
    seed_given = seed_opt->count() > 0;
    return cli_detail::resolve_config(config_path, overrides, seed_flag,
                                      seed_given, threads_flag);
  };

  int exit_code = 0;

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_archetype = "control", synth_out;
  int64_t synth_n = 10;
  bool synth_signal = false;
  synth->add_option("--archetype", synth_archetype,
                    "control | round | protrusive");
  synth->add_option("--n", synth_n, "number of cells")->required();
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_flag("--signal", synth_signal, "also write *_signal.mvol");
  synth->callback([&] {
    RunConfig cfg = resolved();
    cli_detail::write_resolved(cfg, synth_out);
    generate_dataset(archetype_by_name(synth_archetype), synth_n, cfg.seed,
                     synth_out, cfg.cube, synth_signal);
    std::cerr << "synth: wrote " << synth_n << " volumes to " << synth_out
              << "\n";
  });

  // ---- train-vqgan ----
  auto* train_vq = app.add_subcommand("train-vqgan", "stage-1 training");
  std::string tvq_data, tvq_out, tvq_tag = "vqgan";
  bool tvq_signal = false;
  train_vq->add_option("--data", tvq_data, "dataset directory")->required();
  train_vq->add_option("--out", tvq_out, "output directory")->required();
  train_vq->add_option("--tag", tvq_tag, "checkpoint name tag");
  train_vq->add_flag("--signal", tvq_signal,
                     "train a single-channel model on *_signal.mvol files");
  train_vq->callback([&] {
    RunConfig cfg = resolved();
    cli_detail::write_resolved(cfg, tvq_out);
    std::vector<CellVolume> volumes;
    for (const auto& entry : load_manifest(tvq_data)) {
      std::string path = entry.path;
      if (tvq_signal)
        path = tvq_data + "/" + entry.sample_id + "_signal.mvol";
      volumes.push_back(ensure_preprocessed(mvol::load(path), cfg.cube));
    }
    Vqgan<float> model(cfg.vqgan_config(tvq_signal));
    train_vqgan(model, volumes, tvq_out, tvq_tag);
    std::cerr << "train-vqgan: checkpoint " << tvq_out << "/" << tvq_tag
              << ".mfwt\n";
  });

  // ---- train-ddpm ----
  auto* train_dd = app.add_subcommand("train-ddpm", "stage-2 training");
  std::string tdd_data, tdd_vqgan, tdd_out, tdd_tag = "ddpm";
  std::string tdd_signal_vqgan;
  train_dd->add_option("--data", tdd_data, "dataset directory")->required();
  train_dd->add_option("--vqgan", tdd_vqgan, "stage-1 checkpoint")->required();
  train_dd->add_option("--out", tdd_out, "output directory")->required();
  train_dd->add_option("--tag", tdd_tag, "checkpoint name tag");
  train_dd->add_option(
      "--signal-vqgan", tdd_signal_vqgan,
      "single-channel stage-1 checkpoint; trains the signal model "
      "conditioned on morphology latents");
  train_dd->callback([&] {
    RunConfig cfg = resolved();
    cli_detail::write_resolved(cfg, tdd_out);
    auto vqgan = cli_detail::load_vqgan(cfg, tdd_vqgan);
    const bool signal_mode = !tdd_signal_vqgan.empty();
    std::vector<Tensor<float>> latents, conds;
    if (signal_mode) {
      auto signal_vq = cli_detail::load_vqgan(cfg, tdd_signal_vqgan, true);
      for (const auto& entry : load_manifest(tdd_data)) {
        CellVolume morph =
            ensure_preprocessed(mvol::load(entry.path), cfg.cube);
        CellVolume sig = ensure_preprocessed(
            mvol::load(tdd_data + "/" + entry.sample_id + "_signal.mvol"),
            cfg.cube);
        auto cond_channels = vqgan->encode(volume_to_batch<float>(morph));
        conds.push_back(concat(cond_channels, 1));
        latents.push_back(
            signal_vq->encode(volume_to_batch<float>(sig))[0]);
      }
      Ddpm<float> model(cfg.ddpm_config(true));
      train_ddpm(model, latents, conds, tdd_out, tdd_tag);
    } else {
      std::vector<CellVolume> volumes;
      for (const auto& entry : load_manifest(tdd_data))
        volumes.push_back(ensure_preprocessed(mvol::load(entry.path), cfg.cube));
      latents = encode_dataset(*vqgan, volumes);
      Ddpm<float> model(cfg.ddpm_config());
      train_ddpm(model, latents, {}, tdd_out, tdd_tag);
    }
    std::cerr << "train-ddpm: checkpoint " << tdd_out << "/" << tdd_tag
              << ".mfwt\n";
  });

  // ---- generate ----
  auto* gen = app.add_subcommand("generate", "unconditional sampling");
  std::string gen_vqgan, gen_ddpm, gen_out, gen_label = "generated";
  int64_t gen_n = 1;
  gen->add_option("--vqgan", gen_vqgan, "stage-1 checkpoint")->required();
  gen->add_option("--ddpm", gen_ddpm, "stage-2 checkpoint")->required();
  gen->add_option("--n", gen_n, "sample count")->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--perturbation", gen_label, "perturbation label");
  gen->callback([&] {
    RunConfig cfg = resolved();
    cli_detail::write_resolved(cfg, gen_out);
    auto vqgan = cli_detail::load_vqgan(cfg, gen_vqgan);
    auto ddpm = cli_detail::load_ddpm(cfg, gen_ddpm);
    auto volumes = sample_unconditional(*ddpm, *vqgan, gen_n, cfg.seed);
    std::ofstream manifest(gen_out + "/manifest.csv");
    manifest << "sample_id,perturbation,seed,t_bridge\n";
    for (size_t i = 0; i < volumes.size(); ++i) {
      char id[64];
      std::snprintf(id, sizeof id, "gen_%04zu", i);
      mvol::save(gen_out + "/" + id + ".mvol", volumes[i]);
      manifest << id << "," << gen_label << "," << cfg.seed << ",0\n";
    }
    std::cerr << "generate: " << volumes.size() << " samples in " << gen_out
              << "\n";
  });

  // ---- bridge ----
  auto* bridge = app.add_subcommand(
      "bridge", "conditional generation from source volumes");
  std::string br_source, br_vqgan, br_source_ddpm, br_target_ddpm, br_out;
  std::string br_label = "bridged";
  int64_t br_t = 0;
  int64_t br_limit = 0;
  bridge->add_option("--source", br_source, "source volume file or directory")
      ->required();
  bridge->add_option("--vqgan", br_vqgan, "stage-1 checkpoint")->required();
  bridge->add_option("--source-ddpm", br_source_ddpm,
                     "source-condition stage-2 checkpoint")
      ->required();
  bridge->add_option("--target-ddpm", br_target_ddpm,
                     "target-condition stage-2 checkpoint")
      ->required();
  bridge->add_option("--t-bridge", br_t, "bridging depth in steps")
      ->required();
  bridge->add_option("--out", br_out, "output directory")->required();
  bridge->add_option("--perturbation", br_label, "target label");
  bridge->add_option("--limit", br_limit, "bridge at most this many sources");
  bridge->callback([&] {
    RunConfig cfg = resolved();
    cli_detail::write_resolved(cfg, br_out);
    auto vqgan = cli_detail::load_vqgan(cfg, br_vqgan);
    auto source_ddpm = cli_detail::load_ddpm(cfg, br_source_ddpm);
    auto target_ddpm = cli_detail::load_ddpm(cfg, br_target_ddpm);
    std::ofstream manifest(br_out + "/manifest.csv");
    manifest << "sample_id,perturbation,seed,t_bridge\n";
    auto paths = cli_detail::volume_paths(br_source);
    if (br_limit > 0 && static_cast<int64_t>(paths.size()) > br_limit)
      paths.resize(br_limit);
    for (size_t i = 0; i < paths.size(); ++i) {
      CellVolume source =
          ensure_preprocessed(mvol::load(paths[i]), cfg.cube);
      const uint64_t sample_seed = Rng::stream(cfg.seed, i).next_u64();
      CellVolume out = bridge_conditional(source, *vqgan,
                                          source_ddpm->schedule(),
                                          *target_ddpm, br_t, sample_seed);
      char id[64];
      std::snprintf(id, sizeof id, "bridge_%04zu", i);
      mvol::save(br_out + "/" + id + ".mvol", out);
      manifest << id << "," << br_label << "," << sample_seed << "," << br_t
               << "\n";
    }
    std::cerr << "bridge: " << paths.size() << " volumes in " << br_out
              << "\n";
  });

  // ---- traverse ----
  auto* traverse = app.add_subcommand(
      "traverse", "morphodynamic trajectory of a bridged volume");
  std::string tr_source, tr_vqgan, tr_source_ddpm, tr_target_ddpm, tr_out;
  std::string tr_label = "traversal";
  int64_t tr_t = 0, tr_stride = 0;
  traverse->add_option("--source", tr_source, "source volume file")
      ->required();
  traverse->add_option("--vqgan", tr_vqgan, "stage-1 checkpoint")->required();
  traverse->add_option("--source-ddpm", tr_source_ddpm,
                       "source-condition stage-2 checkpoint")
      ->required();
  traverse->add_option("--target-ddpm", tr_target_ddpm,
                       "target-condition stage-2 checkpoint")
      ->required();
  traverse->add_option("--t-bridge", tr_t, "bridging depth")->required();
  traverse->add_option("--stride", tr_stride, "timestep stride")->required();
  traverse->add_option("--out", tr_out, "output directory")->required();
  traverse->add_option("--perturbation", tr_label, "target label");
  traverse->callback([&] {
    RunConfig cfg = resolved();
    cli_detail::write_resolved(cfg, tr_out);
    auto vqgan = cli_detail::load_vqgan(cfg, tr_vqgan);
    auto source_ddpm = cli_detail::load_ddpm(cfg, tr_source_ddpm);
    auto target_ddpm = cli_detail::load_ddpm(cfg, tr_target_ddpm);
    CellVolume source = ensure_preprocessed(mvol::load(tr_source), cfg.cube);
    auto entries =
        traverse_trajectory(source, *vqgan, source_ddpm->schedule(),
                            *target_ddpm, tr_t, tr_stride, cfg.seed);
    std::ofstream csv(tr_out + "/trajectory.csv");
    csv << "sample_id,perturbation,seed,t_bridge,timestep,channel,volume,"
           "surface_area,sphericity,eccentricity,protrusivity\n";
    csv.precision(10);
    for (const auto& entry : entries) {
      char id[64];
      std::snprintf(id, sizeof id, "traverse_t%04lld",
                    static_cast<long long>(entry.timestep));
      mvol::save(tr_out + "/" + std::string(id) + ".mvol", entry.volume);
      for (int64_t c = 0; c < entry.volume.channels && c < 2; ++c) {
        csv << id << "," << tr_label << "," << cfg.seed << "," << tr_t << ","
            << entry.timestep << "," << c;
        if (entry.descriptors_valid[c]) {
          const auto& d = entry.descriptors[c];
          csv << "," << d.volume << "," << d.surface_area << ","
              << d.sphericity << "," << d.eccentricity << ","
              << d.protrusivity << "\n";
        } else {
          csv << ",nan,nan,nan,nan,nan\n";
        }
      }
    }
    std::cerr << "traverse: " << entries.size() << " entries in " << tr_out
              << "\n";
  });

  // ---- synth-signal ----
  auto* ss = app.add_subcommand("synth-signal",
                                "generate the signal channel from morphology");
  std::string ss_morpho, ss_vqgan, ss_signal_vqgan, ss_ddpm, ss_out;
  ss->add_option("--morpho", ss_morpho, "morphology volume")->required();
  ss->add_option("--vqgan", ss_vqgan, "morphology stage-1 checkpoint")
      ->required();
  ss->add_option("--signal-vqgan", ss_signal_vqgan,
                 "signal stage-1 checkpoint")
      ->required();
  ss->add_option("--ddpm", ss_ddpm, "signal stage-2 checkpoint")->required();
  ss->add_option("--out", ss_out, "output directory")->required();
  ss->callback([&] {
    RunConfig cfg = resolved();
    cli_detail::write_resolved(cfg, ss_out);
    auto vqgan = cli_detail::load_vqgan(cfg, ss_vqgan);
    auto signal_vq = cli_detail::load_vqgan(cfg, ss_signal_vqgan, true);
    auto ddpm = cli_detail::load_ddpm(cfg, ss_ddpm, true);
    CellVolume morph = ensure_preprocessed(mvol::load(ss_morpho), cfg.cube);
    CellVolume signal =
        synthesize_signal_channel(morph, *vqgan, *signal_vq, *ddpm, cfg.seed);
    mvol::save(ss_out + "/signal.mvol", signal);
    std::cerr << "synth-signal: wrote " << ss_out << "/signal.mvol\n";
  });

  // ---- mesh ----
  auto* mesh_cmd = app.add_subcommand("mesh", "extract an isosurface mesh");
  std::string mesh_in, mesh_out;
  int64_t mesh_channel = 0;
  double mesh_iso = std::numeric_limits<double>::quiet_NaN();
  mesh_cmd->add_option("--in", mesh_in, "volume file")->required();
  mesh_cmd->add_option("--channel", mesh_channel, "channel index");
  mesh_cmd->add_option("--iso", mesh_iso,
                       "iso level (default: Otsu threshold)");
  mesh_cmd->add_option("--out", mesh_out, "output .obj path")->required();
  mesh_cmd->callback([&] {
    resolved();
    CellVolume vol = mvol::load(mesh_in);
    if (mesh_channel < 0 || mesh_channel >= vol.channels)
      fail(ErrorCode::InvalidArgument, "mesh: channel out of range");
    const float* chan = vol.channel(mesh_channel);
    const float iso = std::isnan(mesh_iso)
                          ? otsu_threshold(chan, vol.voxels_per_channel())
                          : static_cast<float>(mesh_iso);
    Mesh mesh = extract_mesh(chan, vol.d, vol.h, vol.w, iso);
    if (!mesh_out.empty()) {
      if (fs::path(mesh_out).has_parent_path())
        fs::create_directories(fs::path(mesh_out).parent_path());
    }
    save_mesh_obj(mesh_out, mesh);
    std::cerr << "mesh: " << mesh.vertices.size() << " vertices, "
              << mesh.faces.size() << " faces\n";
  });

  // ---- descriptors ----
  auto* desc_cmd =
      app.add_subcommand("descriptors", "shape descriptors per channel");
  std::string desc_in, desc_out;
  desc_cmd->add_option("--in", desc_in, "volume file or directory")
      ->required();
  desc_cmd->add_option("--out", desc_out, "output CSV")->required();
  desc_cmd->callback([&] {
    resolved();
    if (fs::path(desc_out).has_parent_path())
      fs::create_directories(fs::path(desc_out).parent_path());
    std::ofstream os(desc_out);
    os << "sample_id,channel,volume,surface_area,sphericity,eccentricity,"
          "protrusivity\n";
    os.precision(10);
    for (const std::string& path : cli_detail::volume_paths(desc_in))
      cli_detail::write_descriptor_rows(os, cli_detail::stem_of(path),
                                        mvol::load(path));
    std::cerr << "descriptors: wrote " << desc_out << "\n";
  });

  // ---- embed ----
  auto* embed_cmd = app.add_subcommand(
      "embed", "encoder embeddings for volumes, one CSV row each");
  std::string em_in, em_vqgan, em_out, em_label, em_plate = "p0";
  bool em_max_pool = false;
  embed_cmd->add_option("--in", em_in, "volume file or directory")->required();
  embed_cmd->add_option("--vqgan", em_vqgan, "stage-1 checkpoint")->required();
  embed_cmd->add_option("--out", em_out, "output CSV")->required();
  embed_cmd->add_option("--label", em_label,
                        "perturbation label (default: manifest archetype)");
  embed_cmd->add_option("--plate", em_plate, "plate identifier");
  embed_cmd->add_flag("--max-pool", em_max_pool,
                      "max-pool latents instead of mean-pooling");
  embed_cmd->callback([&] {
    RunConfig cfg = resolved();
    auto vqgan = cli_detail::load_vqgan(cfg, em_vqgan);
    EmbeddingSet set;
    std::vector<std::pair<std::string, std::string>> items;  // path, label
    if (fs::is_directory(em_in) && fs::exists(em_in + "/manifest.csv")) {
      for (const auto& entry : load_manifest(em_in))
        items.emplace_back(entry.path,
                           em_label.empty() ? entry.archetype : em_label);
    } else {
      for (const std::string& path : cli_detail::volume_paths(em_in))
        items.emplace_back(path, em_label.empty() ? "unknown" : em_label);
    }
    for (const auto& [path, label] : items) {
      CellVolume vol = ensure_preprocessed(mvol::load(path), cfg.cube);
      set.add_row(cli_detail::stem_of(path), label, em_plate,
                  vqgan->embed(volume_to_batch<float>(vol), em_max_pool));
    }
    if (fs::path(em_out).has_parent_path())
      fs::create_directories(fs::path(em_out).parent_path());
    save_embeddings_csv(em_out, set);
    std::cerr << "embed: " << set.rows() << " rows to " << em_out << "\n";
  });

  // ---- erk-ratio ----
  auto* erk_cmd = app.add_subcommand("erk-ratio",
                                     "nuclear / ring mean signal ratio");
  std::string erk_signal, erk_nucleus;
  int64_t erk_channel = 1, erk_dilate = 7;
  erk_cmd->add_option("--signal", erk_signal, "signal volume (1 channel)")
      ->required();
  erk_cmd->add_option("--nucleus", erk_nucleus,
                      "volume providing the nucleus channel")
      ->required();
  erk_cmd->add_option("--nucleus-channel", erk_channel,
                      "channel of the nucleus volume");
  erk_cmd->add_option("--dilate", erk_dilate, "ring dilation iterations");
  erk_cmd->callback([&] {
    resolved();
    CellVolume signal = mvol::load(erk_signal);
    CellVolume nucleus_vol = mvol::load(erk_nucleus);
    if (erk_channel < 0 || erk_channel >= nucleus_vol.channels)
      fail(ErrorCode::InvalidArgument, "erk-ratio: nucleus channel out of range");
    if (signal.d != nucleus_vol.d || signal.h != nucleus_vol.h ||
        signal.w != nucleus_vol.w)
      fail(ErrorCode::ShapeMismatch, "erk-ratio: extents differ");
    const float* chan = nucleus_vol.channel(erk_channel);
    const float iso = otsu_threshold(chan, nucleus_vol.voxels_per_channel());
    BinaryMask nucleus =
        binarize(chan, nucleus_vol.d, nucleus_vol.h, nucleus_vol.w, iso);
    const double ratio = erk_ratio(signal.channel(0), nucleus,
                                   static_cast<int>(erk_dilate));
    std::cout << ratio << "\n";
  });

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "evaluation metrics");
  eval_cmd->require_subcommand(1);
  std::string ev_real, ev_gen, ev_truth, ev_pred, ev_a, ev_b;
  std::string ev_embeddings, ev_pairs, ev_controls = "control";
  std::string ev_mode = "center_scale", ev_out;
  int64_t ev_k = 3;
  double ev_fraction = 0.05;
  bool ev_negate = false;

  auto add_report = [&](const std::string& metric, double value,
                        int64_t n_real, int64_t n_gen, uint64_t seed) {
    if (ev_out.empty()) return;
    std::vector<MetricReport> reports;
    reports.push_back({metric, value, ev_k, n_real, n_gen, seed});
    if (fs::path(ev_out).has_parent_path())
      fs::create_directories(fs::path(ev_out).parent_path());
    save_reports_csv(ev_out, reports);
  };

  auto* ev_fid = eval_cmd->add_subcommand("fid", "Frechet distance");
  ev_fid->add_option("--real", ev_real)->required();
  ev_fid->add_option("--gen", ev_gen)->required();
  ev_fid->add_option("--out", ev_out, "report CSV");
  ev_fid->callback([&] {
    RunConfig cfg = resolved();
    EmbeddingSet real = load_embeddings_csv(ev_real);
    EmbeddingSet gen = load_embeddings_csv(ev_gen);
    const double value = fid(real, gen);
    std::cout << value << "\n";
    add_report("fid", value, real.rows(), gen.rows(), cfg.seed);
  });

  auto* ev_prf = eval_cmd->add_subcommand("prf",
                                          "precision / recall / F1 / coverage");
  ev_prf->add_option("--real", ev_real)->required();
  ev_prf->add_option("--gen", ev_gen)->required();
  ev_prf->add_option("--k", ev_k, "neighbour count");
  ev_prf->add_option("--out", ev_out, "report CSV");
  ev_prf->callback([&] {
    RunConfig cfg = resolved();
    EmbeddingSet real = load_embeddings_csv(ev_real);
    EmbeddingSet gen = load_embeddings_csv(ev_gen);
    const PrfCoverage m = prf_coverage(real, gen, ev_k);
    std::cout << "precision " << m.precision << "\n"
              << "recall " << m.recall << "\n"
              << "f1 " << m.f1 << "\n"
              << "coverage " << m.coverage << "\n";
    if (!ev_out.empty()) {
      std::vector<MetricReport> reports = {
          {"precision", m.precision, ev_k, real.rows(), gen.rows(), cfg.seed},
          {"recall", m.recall, ev_k, real.rows(), gen.rows(), cfg.seed},
          {"f1", m.f1, ev_k, real.rows(), gen.rows(), cfg.seed},
          {"coverage", m.coverage, ev_k, real.rows(), gen.rows(), cfg.seed}};
      save_reports_csv(ev_out, reports);
    }
  });

  auto* ev_ci = eval_cmd->add_subcommand("ci", "concordance index");
  ev_ci->add_option("--truth", ev_truth)->required();
  ev_ci->add_option("--pred", ev_pred)->required();
  ev_ci->add_flag("--negate", ev_negate, "negate predictions first");
  ev_ci->add_option("--out", ev_out, "report CSV");
  ev_ci->callback([&] {
    RunConfig cfg = resolved();
    const auto truth = cli_detail::load_series_csv(ev_truth);
    const auto pred = cli_detail::load_series_csv(ev_pred);
    const double value = concordance_index(truth, pred, ev_negate);
    std::cout << value << "\n";
    add_report("ci", value, truth.size(), pred.size(), cfg.seed);
  });

  auto* ev_ks = eval_cmd->add_subcommand("ks", "two-sample KS test");
  ev_ks->add_option("--a", ev_a)->required();
  ev_ks->add_option("--b", ev_b)->required();
  ev_ks->add_option("--out", ev_out, "report CSV");
  ev_ks->callback([&] {
    RunConfig cfg = resolved();
    const auto a = cli_detail::load_series_csv(ev_a);
    const auto b = cli_detail::load_series_csv(ev_b);
    const KsResult r = ks_two_sample(a, b);
    std::cout << "statistic " << r.statistic << "\n"
              << "p_value " << r.p_value << "\n";
    add_report("ks", r.statistic, a.size(), b.size(), cfg.seed);
  });

  auto* ev_pearson = eval_cmd->add_subcommand("pearson", "correlation");
  ev_pearson->add_option("--a", ev_a)->required();
  ev_pearson->add_option("--b", ev_b)->required();
  ev_pearson->add_option("--out", ev_out, "report CSV");
  ev_pearson->callback([&] {
    RunConfig cfg = resolved();
    const auto a = cli_detail::load_series_csv(ev_a);
    const auto b = cli_detail::load_series_csv(ev_b);
    const double value = pearson(a, b);
    std::cout << value << "\n";
    add_report("pearson", value, a.size(), b.size(), cfg.seed);
  });

  auto* ev_recall = eval_cmd->add_subcommand(
      "recall", "known-relationship recall at the similarity extremes");
  ev_recall->add_option("--embeddings", ev_embeddings)->required();
  ev_recall->add_option("--known-pairs", ev_pairs)->required();
  ev_recall->add_option("--controls", ev_controls, "control label");
  ev_recall->add_option("--mode", ev_mode, "center_scale | tvn");
  ev_recall->add_option("--fraction", ev_fraction, "tail fraction per side");
  ev_recall->add_option("--out", ev_out, "report CSV");
  ev_recall->callback([&] {
    RunConfig cfg = resolved();
    EmbeddingSet set = load_embeddings_csv(ev_embeddings);
    NormalizeMode mode;
    if (ev_mode == "center_scale")
      mode = NormalizeMode::CenterScale;
    else if (ev_mode == "tvn")
      mode = NormalizeMode::Tvn;
    else
      fail(ErrorCode::Config, "eval recall: mode must be center_scale or tvn");
    const auto agg = efaar_normalize_aggregate(set, ev_controls, mode);
    const auto pairs = load_known_pairs(ev_pairs);
    const double value = relationship_recall(agg, pairs, ev_fraction);
    std::cout << value << "\n";
    add_report("recall", value, set.rows(), 0, cfg.seed);
  });

  try {
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::NanLoss ? 3 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return exit_code;
}

}  // namespace morphogen
