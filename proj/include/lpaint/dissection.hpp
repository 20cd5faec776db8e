#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lpaint/archive.hpp"
#include "lpaint/generator.hpp"
#include "lpaint/image.hpp"

namespace lpaint {

// Activations at the dissected boundary paired with the segmentation of the
// image they render.
struct DissectionSample {
  Tensor activations;  // (C, h, w)
  LabelMap labels;     // (H, W), H and W multiples of h and w
};

// Runs the generator up to `boundary` for each latent.
std::vector<DissectionSample> collect_activations(const LayeredGenerator& generator,
                                                  const std::vector<Tensor>& latents,
                                                  const std::vector<LabelMap>& labels,
                                                  std::size_t boundary);

inline constexpr double kDefaultQuantile = 0.99;

struct ChannelScores {
  std::size_t class_id = 0;
  std::vector<double> iou;         // per channel, in [0, 1]
  std::vector<float> thresholds;   // per channel binarization level
};

// Per channel: nearest-upsample the activation map to label resolution,
// binarize at the channel's `quantile` level over the whole sample, and
// average the IoU against the class mask over images where the union is
// non-empty. Throws ValidationError if the class never occurs.
ChannelScores channel_iou(const std::vector<DissectionSample>& samples, std::size_t class_id,
                          double quantile = kDefaultQuantile,
                          const std::vector<std::string>& class_names = {});

std::vector<float> channel_thresholds(const std::vector<DissectionSample>& samples,
                                      double quantile);

struct ClassUnits {
  std::string name;
  std::vector<std::uint8_t> indicator;  // i_c, 0/1 per channel
  Tensor activation;                    // p_c, zero where indicator is 0
  std::vector<double> iou;

  bool empty() const;
  std::vector<std::size_t> channels() const;
};

struct UnitCatalog {
  std::string checkpoint_id;
  std::string config_digest;
  std::size_t boundary = 0;
  GridShape grid;
  std::vector<ClassUnits> classes;
  std::vector<std::string> warnings;

  const ClassUnits& find(const std::string& name) const;
  bool contains(const std::string& name) const;

  Archive to_archive() const;
  static UnitCatalog from_archive(const Archive& archive);
  void save(const std::filesystem::path& path) const { to_archive().save(path); }
  static UnitCatalog load(const std::filesystem::path& path) { return from_archive(Archive::load(path)); }
};

struct SelectionRule {
  double iou_floor = 0.04;
  std::size_t max_units = 16;
  // When set, take exactly the top-k channels regardless of the floor.
  std::optional<std::size_t> top_k;
};

// Channel selection plus class-conditional mean activation p_c over the
// sample. A class with no passing channel gets an empty i_c and a warning.
UnitCatalog build_catalog(const std::vector<ChannelScores>& scores,
                          const std::vector<DissectionSample>& samples,
                          const std::vector<std::string>& class_names, const SelectionRule& rule,
                          const std::string& checkpoint_id, const std::string& config_digest);

// p_c from a reference latent: per selected channel, the mean of its strictly
// positive activations (0 if none); other channels 0.
Tensor reference_style_vector(const Tensor& reference_latent, const UnitCatalog& catalog,
                              const std::string& class_name);

}  // namespace lpaint
