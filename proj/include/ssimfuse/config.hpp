#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssimfuse/error.hpp"

namespace ssimfuse {

/// Architecture and training hyperparameters of the fusion network.
struct FusionConfig {
  std::vector<int> hf_kernels_anatomical{3, 3, 3};
  std::vector<int> hf_kernels_functional{5, 3, 3};
  int lf_kernel_anatomical = 9;
  int lf_kernel_functional = 7;
  std::vector<int> hf_channels{16, 32, 64};
  int lf_channels = 32;
  std::vector<int> recon_channels{32, 32, 1};
  int recon_kernel = 3;
  double leaky_slope = 0.2;
  double lambda = 0.8;
  double omega = 0.6;
  int epochs = 200;
  double lr = 0.002;
  int batch_size = 1;
  double init_std = 0.01;
  std::uint64_t seed = 42;
  double eps_fuse = 1e-6;
  std::string padding = "reflect";
  int ssim_window = 11;
  double ssim_sigma = 1.5;
  /// "reference" uses sigma_i*sigma_j in the structure term, "printed" uses sigma_i+sigma_j.
  std::string ssim_structure = "reference";

  friend bool operator==(const FusionConfig&, const FusionConfig&) = default;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    auto odd = [](int k) { return k > 0 && k % 2 == 1; };
    if (hf_kernels_anatomical.empty() || hf_kernels_anatomical.size() != hf_channels.size() ||
        hf_kernels_functional.size() != hf_channels.size())
      fail("hf kernel lists must match hf_channels in length");
    for (int k : hf_kernels_anatomical)
      if (!odd(k)) fail("hf_kernels_anatomical: kernel sizes must be odd");
    for (int k : hf_kernels_functional)
      if (!odd(k)) fail("hf_kernels_functional: kernel sizes must be odd");
    if (!odd(lf_kernel_anatomical) || !odd(lf_kernel_functional) || !odd(recon_kernel))
      fail("kernel sizes must be odd");
    for (std::size_t i = 0; i < hf_channels.size(); ++i) {
      if (hf_channels[i] <= 0) fail("hf_channels must be positive");
      if (i > 0 && hf_channels[i] <= hf_channels[i - 1]) fail("hf_channels must be strictly increasing");
    }
    if (lf_channels <= 0) fail("lf_channels must be positive");
    if (recon_channels.size() != 3 || recon_channels.back() != 1)
      fail("recon_channels must have three entries ending in 1");
    if (recon_channels[0] <= 0 || recon_channels[1] <= 0) fail("recon_channels must be positive");
    if (recon_channels[1] != lf_channels) fail("recon_channels[1] must equal lf_channels for the LF fusion rule");
    if (!(leaky_slope > 0 && leaky_slope < 1)) fail("leaky_slope must lie in (0,1)");
    if (!(lambda >= 0 && lambda <= 1)) fail("lambda must lie in [0,1]");
    if (!(omega >= 0 && omega <= 1)) fail("omega must lie in [0,1]");
    if (epochs < 0) fail("epochs must be non-negative");
    if (!(lr >= 0)) fail("lr must be non-negative");
    if (batch_size != 1) fail("only batch_size 1 is supported");
    if (!(init_std > 0)) fail("init_std must be positive");
    if (!(eps_fuse >= 0)) fail("eps_fuse must be non-negative");
    if (padding != "reflect" && padding != "zero") fail("padding must be 'reflect' or 'zero'");
    if (ssim_window < 3 || ssim_window % 2 == 0) fail("ssim_window must be odd and >= 3");
    if (!(ssim_sigma > 0)) fail("ssim_sigma must be positive");
    if (ssim_structure != "reference" && ssim_structure != "printed")
      fail("ssim_structure must be 'reference' or 'printed'");
  }
};

inline void to_json(nlohmann::json& j, const FusionConfig& c) {
  j = nlohmann::json{{"hf_kernels_anatomical", c.hf_kernels_anatomical},
                     {"hf_kernels_functional", c.hf_kernels_functional},
                     {"lf_kernel_anatomical", c.lf_kernel_anatomical},
                     {"lf_kernel_functional", c.lf_kernel_functional},
                     {"hf_channels", c.hf_channels},
                     {"lf_channels", c.lf_channels},
                     {"recon_channels", c.recon_channels},
                     {"recon_kernel", c.recon_kernel},
                     {"leaky_slope", c.leaky_slope},
                     {"lambda", c.lambda},
                     {"omega", c.omega},
                     {"epochs", c.epochs},
                     {"lr", c.lr},
                     {"batch_size", c.batch_size},
                     {"init_std", c.init_std},
                     {"seed", c.seed},
                     {"eps_fuse", c.eps_fuse},
                     {"padding", c.padding},
                     {"ssim_window", c.ssim_window},
                     {"ssim_sigma", c.ssim_sigma},
                     {"ssim_structure", c.ssim_structure}};
}

namespace detail {

template <class V>
void read_key(const nlohmann::json& j, const char* key, V& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    it->get_to(out);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("key '") + key + "': " + e.what());
  }
}

inline const std::set<std::string>& fusion_config_keys() {
  static const std::set<std::string> keys = [] {
    nlohmann::json j = FusionConfig{};
    std::set<std::string> k;
    for (auto it = j.begin(); it != j.end(); ++it) k.insert(it.key());
    return k;
  }();
  return keys;
}

}  // namespace detail

/// Missing keys keep their defaults. Unknown keys are not checked here; see
/// `fusion_config_from_json` for the strict entry point.
inline void from_json(const nlohmann::json& j, FusionConfig& c) {
  using detail::read_key;
  read_key(j, "hf_kernels_anatomical", c.hf_kernels_anatomical);
  read_key(j, "hf_kernels_functional", c.hf_kernels_functional);
  read_key(j, "lf_kernel_anatomical", c.lf_kernel_anatomical);
  read_key(j, "lf_kernel_functional", c.lf_kernel_functional);
  read_key(j, "hf_channels", c.hf_channels);
  read_key(j, "lf_channels", c.lf_channels);
  read_key(j, "recon_channels", c.recon_channels);
  read_key(j, "recon_kernel", c.recon_kernel);
  read_key(j, "leaky_slope", c.leaky_slope);
  read_key(j, "lambda", c.lambda);
  read_key(j, "omega", c.omega);
  read_key(j, "epochs", c.epochs);
  read_key(j, "lr", c.lr);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "init_std", c.init_std);
  read_key(j, "seed", c.seed);
  read_key(j, "eps_fuse", c.eps_fuse);
  read_key(j, "padding", c.padding);
  read_key(j, "ssim_window", c.ssim_window);
  read_key(j, "ssim_sigma", c.ssim_sigma);
  read_key(j, "ssim_structure", c.ssim_structure);
}

/// Strict parse: rejects unknown keys and validates the result.
inline FusionConfig fusion_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("fusion config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!detail::fusion_config_keys().count(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
  FusionConfig c = j.get<FusionConfig>();
  c.validate();
  return c;
}

/// Compact, key-sorted serialization used in checkpoint headers.
inline std::string canonical_json(const FusionConfig& c) { return nlohmann::json(c).dump(); }

/// FusionConfig plus the filesystem locations of one run.
struct RunConfig {
  FusionConfig fusion;
  std::string data_dir;
  std::string checkpoint;
  std::string output_dir;

  static RunConfig from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    nlohmann::json fusion = nlohmann::json::object();
    RunConfig rc;
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      if (k == "data_dir" || k == "checkpoint" || k == "output_dir") {
        if (!it->is_string()) throw ConfigError("key '" + k + "' must be a string");
        (k == "data_dir" ? rc.data_dir : k == "checkpoint" ? rc.checkpoint : rc.output_dir) = it->get<std::string>();
      } else {
        fusion[k] = *it;
      }
    }
    rc.fusion = fusion_config_from_json(fusion);
    return rc;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = fusion;
    j["data_dir"] = data_dir;
    j["checkpoint"] = checkpoint;
    j["output_dir"] = output_dir;
    return j;
  }
};

}  // namespace ssimfuse
