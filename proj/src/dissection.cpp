#include "lpaint/dissection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lpaint/error.hpp"

namespace lpaint {

namespace {

struct BlockGeometry {
  std::size_t bh;
  std::size_t bw;
};

BlockGeometry geometry(const DissectionSample& s) {
  const std::size_t h = s.activations.height();
  const std::size_t w = s.activations.width();
  if (s.labels.height % h != 0 || s.labels.width % w != 0) {
    throw ShapeError("label map is not a multiple of the activation grid");
  }
  return {s.labels.height / h, s.labels.width / w};
}

// Class pixel count inside every activation cell.
std::vector<std::size_t> cell_counts(const DissectionSample& s, std::size_t class_id) {
  const auto [bh, bw] = geometry(s);
  const std::size_t h = s.activations.height();
  const std::size_t w = s.activations.width();
  std::vector<std::size_t> counts(h * w, 0);
  for (std::size_t y = 0; y < s.labels.height; ++y)
    for (std::size_t x = 0; x < s.labels.width; ++x)
      if (s.labels.at(y, x) == class_id) ++counts[(y / bh) * w + x / bw];
  return counts;
}

std::string class_label(std::size_t id, const std::vector<std::string>& names) {
  return id < names.size() ? names[id] : "class " + std::to_string(id);
}

}  // namespace

std::vector<DissectionSample> collect_activations(const LayeredGenerator& generator,
                                                  const std::vector<Tensor>& latents,
                                                  const std::vector<LabelMap>& labels,
                                                  std::size_t boundary) {
  if (latents.size() != labels.size()) throw ShapeError("latent/label count mismatch");
  std::vector<DissectionSample> samples;
  samples.reserve(latents.size());
  for (std::size_t i = 0; i < latents.size(); ++i) {
    samples.push_back({generator.run(0, boundary, latents[i]), labels[i]});
  }
  return samples;
}

std::vector<float> channel_thresholds(const std::vector<DissectionSample>& samples,
                                      double quantile) {
  if (samples.empty()) throw ValidationError("dissection needs at least one sample");
  const std::size_t channels = samples.front().activations.channels();
  const std::size_t plane = samples.front().activations.height() * samples.front().activations.width();
  std::vector<float> thresholds(channels);
  std::vector<float> values(samples.size() * plane);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      std::copy_n(samples[i].activations.data() + c * plane, plane, values.begin() + i * plane);
    }
    // Nearest-rank quantile; every cell stands for an equal pixel block.
    const auto rank = static_cast<std::size_t>(
        std::ceil(quantile * static_cast<double>(values.size())));
    const std::size_t k = std::clamp<std::size_t>(rank, 1, values.size()) - 1;
    std::nth_element(values.begin(), values.begin() + static_cast<long>(k), values.end());
    thresholds[c] = values[k];
  }
  return thresholds;
}

ChannelScores channel_iou(const std::vector<DissectionSample>& samples, std::size_t class_id,
                          double quantile, const std::vector<std::string>& class_names) {
  ChannelScores scores;
  scores.class_id = class_id;
  scores.thresholds = channel_thresholds(samples, quantile);
  const std::size_t channels = scores.thresholds.size();
  const std::size_t plane = samples.front().activations.height() * samples.front().activations.width();

  std::vector<float> channel_min(channels, std::numeric_limits<float>::infinity());
  for (const auto& s : samples)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t k = 0; k < plane; ++k)
        channel_min[c] = std::min(channel_min[c], s.activations[c * plane + k]);

  std::vector<std::vector<std::size_t>> counts;
  std::size_t total_class = 0;
  for (const auto& s : samples) {
    if (s.activations.channels() != channels) throw ShapeError("samples disagree on channel count");
    counts.push_back(cell_counts(s, class_id));
    total_class += std::accumulate(counts.back().begin(), counts.back().end(), std::size_t{0});
  }
  if (total_class == 0) {
    throw ValidationError("class '" + class_label(class_id, class_names) +
                          "' does not occur in any segmentation");
  }

  scores.iou.assign(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    const float t = scores.thresholds[c];
    // A threshold at the channel minimum would switch on every tied cell.
    const bool strict = t <= channel_min[c];
    double sum = 0.0;
    std::size_t images = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto [bh, bw] = geometry(samples[i]);
      const std::size_t block = bh * bw;
      std::size_t inter = 0;
      std::size_t on = 0;
      std::size_t cls = 0;
      for (std::size_t k = 0; k < plane; ++k) {
        const float a = samples[i].activations[c * plane + k];
        const bool fires = strict ? a > t : a >= t;
        cls += counts[i][k];
        if (fires) {
          on += block;
          inter += counts[i][k];
        }
      }
      const std::size_t uni = on + cls - inter;
      if (uni == 0) continue;
      sum += static_cast<double>(inter) / static_cast<double>(uni);
      ++images;
    }
    scores.iou[c] = images ? sum / static_cast<double>(images) : 0.0;
  }
  return scores;
}

bool ClassUnits::empty() const {
  return std::none_of(indicator.begin(), indicator.end(), [](std::uint8_t v) { return v != 0; });
}

std::vector<std::size_t> ClassUnits::channels() const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < indicator.size(); ++c)
    if (indicator[c]) out.push_back(c);
  return out;
}

const ClassUnits& UnitCatalog::find(const std::string& name) const {
  for (const auto& c : classes)
    if (c.name == name) return c;
  throw ValidationError("class '" + name + "' is not in the unit catalog");
}

bool UnitCatalog::contains(const std::string& name) const {
  return std::any_of(classes.begin(), classes.end(), [&](const ClassUnits& c) { return c.name == name; });
}

UnitCatalog build_catalog(const std::vector<ChannelScores>& scores,
                          const std::vector<DissectionSample>& samples,
                          const std::vector<std::string>& class_names, const SelectionRule& rule,
                          const std::string& checkpoint_id, const std::string& config_digest) {
  if (samples.empty()) throw ValidationError("catalog needs at least one sample");
  UnitCatalog catalog;
  catalog.checkpoint_id = checkpoint_id;
  catalog.config_digest = config_digest;
  const Tensor& first = samples.front().activations;
  catalog.grid = {first.channels(), first.height(), first.width()};
  const std::size_t channels = first.channels();
  const std::size_t plane = first.height() * first.width();

  for (const ChannelScores& s : scores) {
    ClassUnits units;
    units.name = class_label(s.class_id, class_names);
    units.iou = s.iou;
    units.indicator.assign(channels, 0);
    units.activation = Tensor({channels});

    std::vector<std::size_t> order(channels);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return s.iou[a] > s.iou[b]; });
    const std::size_t limit = rule.top_k.value_or(rule.max_units);
    for (std::size_t r = 0; r < std::min(limit, channels); ++r) {
      if (!rule.top_k && s.iou[order[r]] < rule.iou_floor) break;
      units.indicator[order[r]] = 1;
    }

    if (units.empty()) {
      catalog.warnings.push_back("class '" + units.name + "' has no channel passing selection");
    } else {
      std::vector<double> sums(channels, 0.0);
      double pixels = 0.0;
      for (const auto& sample : samples) {
        const auto counts = cell_counts(sample, s.class_id);
        for (std::size_t k = 0; k < plane; ++k) {
          if (counts[k] == 0) continue;
          pixels += static_cast<double>(counts[k]);
          for (std::size_t c = 0; c < channels; ++c) {
            if (units.indicator[c]) sums[c] += counts[k] * static_cast<double>(sample.activations[c * plane + k]);
          }
        }
      }
      if (pixels == 0.0) {
        catalog.warnings.push_back("class '" + units.name + "' absent from the sample; p_c is zero");
      } else {
        for (std::size_t c = 0; c < channels; ++c)
          if (units.indicator[c]) units.activation[c] = static_cast<float>(sums[c] / pixels);
      }
    }
    catalog.classes.push_back(std::move(units));
  }
  return catalog;
}

Tensor reference_style_vector(const Tensor& reference_latent, const UnitCatalog& catalog,
                              const std::string& class_name) {
  const ClassUnits& units = catalog.find(class_name);
  if (reference_latent.rank() != 3 || reference_latent.channels() != units.indicator.size()) {
    throw ShapeError("reference latent shape " + shape_string(reference_latent.shape()) +
                     " does not match the catalog's " + std::to_string(units.indicator.size()) +
                     " channels");
  }
  const std::size_t plane = reference_latent.height() * reference_latent.width();
  Tensor style({units.indicator.size()});
  for (std::size_t c = 0; c < units.indicator.size(); ++c) {
    if (!units.indicator[c]) continue;
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < plane; ++k) {
      const float v = reference_latent[c * plane + k];
      if (v > 0.0f) {
        sum += v;
        ++n;
      }
    }
    style[c] = n ? static_cast<float>(sum / static_cast<double>(n)) : 0.0f;
  }
  return style;
}

Archive UnitCatalog::to_archive() const {
  Archive archive;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& c : classes) {
    entries.push_back({{"name", c.name}, {"channels", c.channels()}});
    Tensor indicator({c.indicator.size()});
    Tensor iou_values({c.iou.size()});
    for (std::size_t k = 0; k < c.indicator.size(); ++k) indicator[k] = c.indicator[k];
    for (std::size_t k = 0; k < c.iou.size(); ++k) iou_values[k] = static_cast<float>(c.iou[k]);
    archive.put("class." + c.name + ".indicator", indicator);
    archive.put("class." + c.name + ".activation", c.activation);
    archive.put("class." + c.name + ".iou", iou_values);
  }
  archive.meta = {{"format", "lpaint-catalog"},
                  {"format_version", 1},
                  {"checkpoint_id", checkpoint_id},
                  {"config_digest", config_digest},
                  {"boundary", boundary},
                  {"grid", {{"channels", grid.channels}, {"height", grid.height}, {"width", grid.width}}},
                  {"classes", entries},
                  {"warnings", warnings}};
  return archive;
}

UnitCatalog UnitCatalog::from_archive(const Archive& archive) {
  const auto& m = archive.meta;
  if (m.value("format", "") != "lpaint-catalog") throw VersionError("archive is not a unit catalog");
  if (m.value("format_version", 0) != 1) throw VersionError("unsupported catalog version");
  UnitCatalog catalog;
  catalog.checkpoint_id = m.at("checkpoint_id").get<std::string>();
  catalog.config_digest = m.at("config_digest").get<std::string>();
  catalog.boundary = m.at("boundary").get<std::size_t>();
  const auto& g = m.at("grid");
  catalog.grid = {g.at("channels").get<std::size_t>(), g.at("height").get<std::size_t>(),
                  g.at("width").get<std::size_t>()};
  catalog.warnings = m.value("warnings", std::vector<std::string>{});
  const std::size_t channels = catalog.grid.channels;
  for (const auto& entry : m.at("classes")) {
    ClassUnits units;
    units.name = entry.at("name").get<std::string>();
    const Tensor& indicator = archive.get("class." + units.name + ".indicator", {channels});
    const Tensor& iou_values = archive.get("class." + units.name + ".iou", {channels});
    units.activation = archive.get("class." + units.name + ".activation", {channels});
    for (std::size_t k = 0; k < channels; ++k) {
      if (indicator[k] != 0.0f && indicator[k] != 1.0f) {
        throw ShapeError("catalog indicator for '" + units.name + "' is not binary");
      }
      units.indicator.push_back(static_cast<std::uint8_t>(indicator[k]));
      units.iou.push_back(iou_values[k]);
    }
    catalog.classes.push_back(std::move(units));
  }
  return catalog;
}

}  // namespace lpaint
