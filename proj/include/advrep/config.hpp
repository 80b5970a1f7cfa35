#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "class_map.hpp"
#include "datasets.hpp"
#include "errors.hpp"
#include "models.hpp"
#include "reprogram.hpp"

namespace advrep {

/// Where a dataset comes from: an IDX file pair or the synthetic glyph generator.
struct DataSpec {
  std::string kind = "idx";  // "idx" | "synth"
  std::string name;
  std::string images, labels;            // idx
  std::string test_images, test_labels;  // idx, optional held-out split
  std::size_t limit = 0;                 // idx: keep the first n samples (0 = all)
  std::size_t test_limit = 0;
  std::uint64_t seed = 0;  // synth
  SynthOptions synth;
};

struct ModelSpec {
  std::string architecture = "cwnet";  // "cwnet" | "linear"
  double width_scale = 0.25;
  bool trained = true;
  double dropout_rate = 0.5;
  std::string tag;  // defaults to the architecture, suffixed "-U" when untrained

  std::string display_tag() const {
    if (!tag.empty()) return tag;
    return architecture + (trained ? "" : "-U");
  }
};

struct ExperimentConfig {
  DataSpec source;
  DataSpec target;
  ModelSpec model;
  std::size_t channels = 3;
  std::size_t height = 64;
  std::size_t width = 64;
  /// Outer extents of the active program annulus; empty means the full input.
  std::vector<std::size_t> mask_sizes;
  /// Target class t maps to source class class_map[t]; empty means identity.
  std::vector<int> class_map;
  TrainConfig train;
  ReprogramConfig reprogram;
  std::size_t test_set_size = 1000;
  std::uint64_t seed = 0;
  std::string out = "runs/default";
  /// Relative dataset paths resolve against this directory (not hashed).
  std::filesystem::path base_dir;

  Shape input_shape() const { return {channels, height, width}; }

  ClassMap class_map_for(int num_source_classes, int num_target_classes) const {
    if (class_map.empty()) return build_class_map(num_target_classes, FirstTen{}, num_source_classes);
    return build_class_map(num_target_classes, class_map, num_source_classes);
  }

  std::filesystem::path resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      throw SchemaError("unknown key '" + k + "' in " + where + " (expected one of: " + list + ")");
    }
}

inline DataSpec parse_data(const nlohmann::json& j, const std::string& where) {
  check_keys(j,
             {"kind", "name", "images", "labels", "test_images", "test_labels", "limit", "test_limit", "seed",
              "num_classes", "per_class", "height", "width", "intensity", "noise", "max_shift"},
             where);
  DataSpec d;
  d.kind = j.value("kind", d.kind);
  d.name = j.value("name", d.kind == "synth" ? std::string("glyphs") : std::string("idx"));
  if (d.kind == "idx") {
    if (!j.contains("images") || !j.contains("labels")) throw SchemaError(where + " needs images and labels paths");
    d.images = j.at("images").get<std::string>();
    d.labels = j.at("labels").get<std::string>();
    d.test_images = j.value("test_images", std::string());
    d.test_labels = j.value("test_labels", std::string());
    d.limit = j.value("limit", d.limit);
    d.test_limit = j.value("test_limit", d.test_limit);
  } else if (d.kind == "synth") {
    d.seed = j.value("seed", d.seed);
    d.synth.num_classes = j.value("num_classes", d.synth.num_classes);
    d.synth.per_class = j.value("per_class", d.synth.per_class);
    d.synth.height = j.value("height", d.synth.height);
    d.synth.width = j.value("width", d.synth.width);
    d.synth.intensity = j.value("intensity", d.synth.intensity);
    d.synth.noise = j.value("noise", d.synth.noise);
    d.synth.max_shift = j.value("max_shift", d.synth.max_shift);
  } else {
    throw SchemaError(where + ".kind must be \"idx\" or \"synth\", got \"" + d.kind + "\"");
  }
  return d;
}

inline nlohmann::json data_json(const DataSpec& d) {
  nlohmann::json j{{"kind", d.kind}, {"name", d.name}};
  if (d.kind == "idx") {
    j["images"] = d.images;
    j["labels"] = d.labels;
    j["test_images"] = d.test_images;
    j["test_labels"] = d.test_labels;
    j["limit"] = d.limit;
    j["test_limit"] = d.test_limit;
  } else {
    j["seed"] = d.seed;
    j["num_classes"] = d.synth.num_classes;
    j["per_class"] = d.synth.per_class;
    j["height"] = d.synth.height;
    j["width"] = d.synth.width;
    j["intensity"] = d.synth.intensity;
    j["noise"] = d.synth.noise;
    j["max_shift"] = d.synth.max_shift;
  }
  return j;
}

}  // namespace detail

/// Builds a config from its JSON form; missing keys take their defaults.
inline ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  detail::check_keys(j,
                     {"source", "target", "model", "input", "mask_sizes", "class_map", "train", "reprogram",
                      "test_set_size", "seed", "out"},
                     "config");
  ExperimentConfig c;
  c.base_dir = base_dir;
  try {
    if (!j.contains("source") || !j.contains("target")) throw SchemaError("config needs source and target datasets");
    c.source = detail::parse_data(j.at("source"), "source");
    c.target = detail::parse_data(j.at("target"), "target");
    if (j.contains("model")) {
      const auto& m = j.at("model");
      detail::check_keys(m, {"architecture", "width_scale", "trained", "dropout_rate", "tag"}, "model");
      c.model.architecture = m.value("architecture", c.model.architecture);
      c.model.width_scale = m.value("width_scale", c.model.width_scale);
      c.model.trained = m.value("trained", c.model.trained);
      c.model.dropout_rate = m.value("dropout_rate", c.model.dropout_rate);
      c.model.tag = m.value("tag", c.model.tag);
      if (c.model.architecture != "cwnet" && c.model.architecture != "linear")
        throw SchemaError("model.architecture must be \"cwnet\" or \"linear\"");
    }
    if (j.contains("input")) {
      const auto& in = j.at("input");
      detail::check_keys(in, {"channels", "height", "width"}, "input");
      c.channels = in.value("channels", c.channels);
      c.height = in.value("height", c.height);
      c.width = in.value("width", c.width);
    }
    c.mask_sizes = j.value("mask_sizes", c.mask_sizes);
    if (j.contains("class_map")) {
      const auto& h = j.at("class_map");
      if (h.is_string()) {
        if (h.get<std::string>() != "first-ten") throw SchemaError("class_map string must be \"first-ten\"");
      } else {
        c.class_map = h.get<std::vector<int>>();
      }
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      detail::check_keys(t, {"epochs", "learning_rate", "momentum", "batch_size", "dropout"}, "train");
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
      c.train.momentum = t.value("momentum", c.train.momentum);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.dropout = t.value("dropout", c.train.dropout);
    }
    if (j.contains("reprogram")) {
      const auto& r = j.at("reprogram");
      detail::check_keys(
          r, {"eta", "epochs", "batch_size", "opt_set_size", "eval_set_size", "held_out_eval", "loss"}, "reprogram");
      c.reprogram = r.get<ReprogramConfig>();
    }
    c.test_set_size = j.value("test_set_size", c.test_set_size);
    c.seed = j.value("seed", c.seed);
    c.out = j.value("out", c.out);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("config: ") + e.what());
  }
  c.train.seed = c.seed;
  c.reprogram.seed = c.seed;
  c.train.validate();
  c.reprogram.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is, nullptr, true, true);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed config " + path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

/// Everything that determines results. Keys are sorted by the JSON object
/// type and numbers use the shortest round-trip form, so the dump is stable.
inline nlohmann::json canonical_json(const ExperimentConfig& c) {
  nlohmann::json r = c.reprogram;
  r.erase("seed");
  return nlohmann::json{
      {"source", detail::data_json(c.source)},
      {"target", detail::data_json(c.target)},
      {"model",
       {{"architecture", c.model.architecture},
        {"width_scale", c.model.width_scale},
        {"trained", c.model.trained},
        {"dropout_rate", c.model.dropout_rate},
        {"tag", c.model.display_tag()}}},
      {"input", {{"channels", c.channels}, {"height", c.height}, {"width", c.width}}},
      {"mask_sizes", c.mask_sizes},
      {"class_map", c.class_map},
      {"train",
       {{"epochs", c.train.epochs},
        {"learning_rate", c.train.learning_rate},
        {"momentum", c.train.momentum},
        {"batch_size", c.train.batch_size},
        {"dropout", c.train.dropout}}},
      {"reprogram", r},
      {"test_set_size", c.test_set_size},
      {"seed", c.seed},
  };
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a64(canonical_json(c).dump())); }

/// Hash of the settings that determine the model checkpoint alone.
inline std::string model_key(const ExperimentConfig& c) {
  const auto j = canonical_json(c);
  const nlohmann::json m{{"source", j["source"]}, {"model", j["model"]}, {"input", j["input"]},
                         {"train", j["train"]},   {"seed", j["seed"]}};
  return hex64(fnv1a64(m.dump()));
}

}  // namespace advrep
