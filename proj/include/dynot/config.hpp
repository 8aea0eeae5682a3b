#pragma once

#include "dynot/params.hpp"
#include "dynot/problem.hpp"
#include "dynot/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dynot {

using Json = nlohmann::ordered_json;

/// Everything a run needs. Built from a preset and then overridden by the
/// keys present in a JSON document.
struct ExperimentConfig {
  std::string preset;
  int dim = 2;
  bool reconstruction = false;  // preset geometry is a reconstruction, not a published layout
  Problem problem;
  NetworkShape network;
  Hyperparameters hyper;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output = "runs/out";
  int trajectory_particles = 512;
  UniformBoxSpec plot_window;  // first two coordinates

  void validate() const;
};

std::vector<std::string> preset_names();

/// Throws ConfigError naming the valid presets for an unknown name.
ExperimentConfig make_preset(const std::string& name, int dim);

/// Closed-form squared W2 when both end densities are Gaussians.
std::optional<double> ground_truth(const Problem& problem);

/// Parses a config document: "preset" and "dim" select the base, then
/// "problem", "network", "hyper", "train", "seeds", "output" override it.
ExperimentConfig config_from_json(const Json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);
Json config_to_json(const ExperimentConfig& config);

Json density_to_json(const Density& density);
Density density_from_json(const Json& j, int dim);
Json preference_to_json(const PreferenceSpec& pref);
PreferenceSpec preference_from_json(const Json& j);

}  // namespace dynot
