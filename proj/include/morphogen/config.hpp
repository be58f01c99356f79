#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "morphogen/diffusion.hpp"
#include "morphogen/errors.hpp"
#include "morphogen/vqgan.hpp"

namespace morphogen {

// Line-based `key = value` run configuration mirroring the stage-1/stage-2
// hyperparameter tables plus desk-scale overrides. Unknown keys are
// rejected; `#` starts a comment. Every run writes the resolved config
// next to its outputs.
struct RunConfig {
  // volumes / stage 1
  int64_t cube = 32;
  int64_t channels = 2;
  int64_t n_z = 16;
  int64_t codebook_size = 1024;
  int64_t vq_base_width = 16;
  double vq_lr = 3e-4;
  int64_t vq_steps = 2000;
  int64_t batch = 2;
  double commitment_weight = 0.25;
  double disc_weight = 0.1;
  double disc_warmup_frac = 0.25;
  bool use_ema_codebook = false;
  double codebook_ema_decay = 0.99;
  int64_t dead_entry_steps = 1000;
  bool paper_literal_hinge = false;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  // stage 2
  int64_t timesteps = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double ddpm_lr = 1e-4;
  int64_t ddpm_steps = 3000;
  double ema_decay = 0.995;
  int64_t unet_base_width = 32;
  std::vector<int64_t> dim_mults = {1, 2, 4, 8};
  // run control
  uint64_t seed = 0;
  int64_t threads = 1;

  using Setter = std::function<void(RunConfig&, const std::string&)>;

  static int64_t to_int(const std::string& v) {
    size_t pos = 0;
    const int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) fail(ErrorCode::Config, "bad integer '" + v + "'");
    return out;
  }
  static double to_double(const std::string& v) {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) fail(ErrorCode::Config, "bad number '" + v + "'");
    return out;
  }
  static bool to_bool(const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    fail(ErrorCode::Config, "bad boolean '" + v + "' (use 0/1/true/false)");
  }
  static std::vector<int64_t> to_int_list(const std::string& v) {
    std::vector<int64_t> out;
    std::string cur;
    for (char c : v + ",") {
      if (c == ',') {
        if (!cur.empty()) out.push_back(to_int(cur));
        cur.clear();
      } else if (!std::isspace(static_cast<unsigned char>(c))) {
        cur.push_back(c);
      }
    }
    if (out.empty()) fail(ErrorCode::Config, "empty integer list");
    return out;
  }

  static const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"cube", [](RunConfig& c, const std::string& v) { c.cube = to_int(v); }},
        {"channels",
         [](RunConfig& c, const std::string& v) { c.channels = to_int(v); }},
        {"n_z", [](RunConfig& c, const std::string& v) { c.n_z = to_int(v); }},
        {"codebook_size",
         [](RunConfig& c, const std::string& v) { c.codebook_size = to_int(v); }},
        {"vq_base_width",
         [](RunConfig& c, const std::string& v) { c.vq_base_width = to_int(v); }},
        {"vq_lr",
         [](RunConfig& c, const std::string& v) { c.vq_lr = to_double(v); }},
        {"vq_steps",
         [](RunConfig& c, const std::string& v) { c.vq_steps = to_int(v); }},
        {"batch", [](RunConfig& c, const std::string& v) { c.batch = to_int(v); }},
        {"commitment_weight",
         [](RunConfig& c, const std::string& v) {
           c.commitment_weight = to_double(v);
         }},
        {"disc_weight",
         [](RunConfig& c, const std::string& v) { c.disc_weight = to_double(v); }},
        {"disc_warmup_frac",
         [](RunConfig& c, const std::string& v) {
           c.disc_warmup_frac = to_double(v);
         }},
        {"use_ema_codebook",
         [](RunConfig& c, const std::string& v) { c.use_ema_codebook = to_bool(v); }},
        {"codebook_ema_decay",
         [](RunConfig& c, const std::string& v) {
           c.codebook_ema_decay = to_double(v);
         }},
        {"dead_entry_steps",
         [](RunConfig& c, const std::string& v) { c.dead_entry_steps = to_int(v); }},
        {"paper_literal_hinge",
         [](RunConfig& c, const std::string& v) {
           c.paper_literal_hinge = to_bool(v);
         }},
        {"adam_beta1",
         [](RunConfig& c, const std::string& v) { c.adam_beta1 = to_double(v); }},
        {"adam_beta2",
         [](RunConfig& c, const std::string& v) { c.adam_beta2 = to_double(v); }},
        {"timesteps",
         [](RunConfig& c, const std::string& v) { c.timesteps = to_int(v); }},
        {"beta_start",
         [](RunConfig& c, const std::string& v) { c.beta_start = to_double(v); }},
        {"beta_end",
         [](RunConfig& c, const std::string& v) { c.beta_end = to_double(v); }},
        {"ddpm_lr",
         [](RunConfig& c, const std::string& v) { c.ddpm_lr = to_double(v); }},
        {"ddpm_steps",
         [](RunConfig& c, const std::string& v) { c.ddpm_steps = to_int(v); }},
        {"ema_decay",
         [](RunConfig& c, const std::string& v) { c.ema_decay = to_double(v); }},
        {"unet_base_width",
         [](RunConfig& c, const std::string& v) { c.unet_base_width = to_int(v); }},
        {"dim_mults",
         [](RunConfig& c, const std::string& v) { c.dim_mults = to_int_list(v); }},
        {"seed",
         [](RunConfig& c, const std::string& v) {
           c.seed = static_cast<uint64_t>(std::stoull(v));
         }},
        {"threads",
         [](RunConfig& c, const std::string& v) { c.threads = to_int(v); }},
    };
    return table;
  }

  void set(const std::string& key, const std::string& value) {
    const auto& table = setters();
    auto it = table.find(key);
    if (it == table.end())
      fail(ErrorCode::Config, "unknown config key '" + key + "'");
    it->second(*this, value);
  }

  static std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
  }

  void load(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorCode::Io, "cannot open config '" + path + "'");
    std::string line;
    int64_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const size_t comment = line.find('#');
      if (comment != std::string::npos) line = line.substr(0, comment);
      line = trim(line);
      if (line.empty()) continue;
      const size_t eq = line.find('=');
      if (eq == std::string::npos)
        fail(ErrorCode::Config, path + ":" + std::to_string(line_no) +
                                    ": expected 'key = value'");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  // key=value pairs passed on the command line; they override file values.
  void apply_overrides(const std::vector<std::string>& overrides) {
    for (const std::string& kv : overrides) {
      const size_t eq = kv.find('=');
      if (eq == std::string::npos)
        fail(ErrorCode::Config, "override '" + kv + "' is not key=value");
      set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) fail(ErrorCode::Io, "cannot open '" + path + "' for writing");
    os.precision(17);
    os << "cube = " << cube << "\n";
    os << "channels = " << channels << "\n";
    os << "n_z = " << n_z << "\n";
    os << "codebook_size = " << codebook_size << "\n";
    os << "vq_base_width = " << vq_base_width << "\n";
    os << "vq_lr = " << vq_lr << "\n";
    os << "vq_steps = " << vq_steps << "\n";
    os << "batch = " << batch << "\n";
    os << "commitment_weight = " << commitment_weight << "\n";
    os << "disc_weight = " << disc_weight << "\n";
    os << "disc_warmup_frac = " << disc_warmup_frac << "\n";
    os << "use_ema_codebook = " << (use_ema_codebook ? 1 : 0) << "\n";
    os << "codebook_ema_decay = " << codebook_ema_decay << "\n";
    os << "dead_entry_steps = " << dead_entry_steps << "\n";
    os << "paper_literal_hinge = " << (paper_literal_hinge ? 1 : 0) << "\n";
    os << "adam_beta1 = " << adam_beta1 << "\n";
    os << "adam_beta2 = " << adam_beta2 << "\n";
    os << "timesteps = " << timesteps << "\n";
    os << "beta_start = " << beta_start << "\n";
    os << "beta_end = " << beta_end << "\n";
    os << "ddpm_lr = " << ddpm_lr << "\n";
    os << "ddpm_steps = " << ddpm_steps << "\n";
    os << "ema_decay = " << ema_decay << "\n";
    os << "unet_base_width = " << unet_base_width << "\n";
    os << "dim_mults = ";
    for (size_t i = 0; i < dim_mults.size(); ++i)
      os << (i ? "," : "") << dim_mults[i];
    os << "\n";
    os << "seed = " << seed << "\n";
    os << "threads = " << threads << "\n";
  }

  VqganConfig<float> vqgan_config(bool signal_channel = false) const {
    VqganConfig<float> cfg;
    cfg.cube = cube;
    cfg.channels = signal_channel ? 1 : channels;
    cfg.n_z = n_z;
    cfg.codebook_size = codebook_size;
    cfg.base_width = vq_base_width;
    cfg.lr = static_cast<float>(vq_lr);
    cfg.beta1 = static_cast<float>(adam_beta1);
    cfg.beta2 = static_cast<float>(adam_beta2);
    cfg.batch = batch;
    cfg.steps = vq_steps;
    cfg.commitment_weight = static_cast<float>(commitment_weight);
    cfg.disc_weight = static_cast<float>(disc_weight);
    cfg.disc_warmup_frac = disc_warmup_frac;
    cfg.use_ema_codebook = use_ema_codebook;
    cfg.codebook_ema_decay = static_cast<float>(codebook_ema_decay);
    cfg.dead_entry_steps = dead_entry_steps;
    cfg.paper_literal_hinge = paper_literal_hinge;
    cfg.seed = seed;
    return cfg;
  }

  DdpmConfig<float> ddpm_config(bool signal_channel = false) const {
    DdpmConfig<float> cfg;
    cfg.timesteps = timesteps;
    cfg.beta_start = static_cast<float>(beta_start);
    cfg.beta_end = static_cast<float>(beta_end);
    cfg.lr = static_cast<float>(ddpm_lr);
    cfg.beta1 = static_cast<float>(adam_beta1);
    cfg.beta2 = static_cast<float>(adam_beta2);
    cfg.batch = batch;
    cfg.steps = ddpm_steps;
    cfg.ema_decay = static_cast<float>(ema_decay);
    cfg.base_width = unet_base_width;
    cfg.dim_mults = dim_mults;
    if (signal_channel) {
      cfg.latent_channels = n_z;
      cfg.cond_channels = channels * n_z;
    } else {
      cfg.latent_channels = channels * n_z;
      cfg.cond_channels = 0;
    }
    cfg.latent_extent = cube / VqganConfig<float>::downsample;
    cfg.seed = seed;
    return cfg;
  }
};

}  // namespace morphogen
