#pragma once

// Checkpoints are two files: <stem>.json, a manifest with the model config,
// channel schema, fitted encoder and parameter table, and <stem>.bin, every
// parameter as little-endian float64 concatenated in manifest order. Both are
// written through temporaries and renamed, the manifest last, so a crash
// never leaves a manifest pointing at a partial weight file.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trans2d/config.hpp"
#include "trans2d/data/preprocess.hpp"
#include "trans2d/errors.hpp"
#include "trans2d/model/model.hpp"

namespace trans2d {

static_assert(std::endian::native == std::endian::little, "checkpoint weights are stored little-endian");

inline constexpr const char* kCheckpointFormat = "trans2d-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  model::Trans2DModel model;
  data::Encoder encoder;
  DataOptions data;  // channel list and history filters used to assemble inputs
  std::size_t epoch = 0;
};

namespace ckpt_detail {

inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw std::filesystem::filesystem_error("cannot open for writing", tmp,
                                              std::make_error_code(std::errc::permission_denied));
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline json encoder_to_json(const data::Encoder& e) {
  json vocab = json::object();
  for (const auto& a : data::kAttributes) {
    if (data::Encoder::is_categorical(a.attribute)) vocab[std::string(a.name)] = e.vocabulary(a.attribute);
  }
  return {{"max_len", e.max_len()},
          {"price_edges", e.price_edges().edges},
          {"price_bins", e.price_edges().requested_bins},
          {"price_collapsed", e.price_edges().collapsed},
          {"vocabulary", vocab}};
}

inline data::Encoder encoder_from_json(const json& j) {
  data::BinEdges price;
  price.edges = j.at("price_edges").get<std::vector<double>>();
  price.requested_bins = j.at("price_bins").get<std::size_t>();
  price.collapsed = j.at("price_collapsed").get<bool>();
  std::array<std::vector<std::int64_t>, data::kAttributeCount> vocab{};
  for (const auto& [name, values] : j.at("vocabulary").items()) {
    vocab[static_cast<std::size_t>(data::attribute_from_name(name))] = values.get<std::vector<std::int64_t>>();
  }
  return data::Encoder::from_parts(j.at("max_len").get<std::size_t>(), std::move(price), std::move(vocab));
}

}  // namespace ckpt_detail

inline std::filesystem::path checkpoint_weights_path(std::filesystem::path manifest) {
  return manifest.replace_extension(".bin");
}

/// Writes `manifest` (a .json path) and its sibling .bin.
inline void save_checkpoint(const std::filesystem::path& manifest, const model::Trans2DModel& m,
                            const data::Encoder& enc, const DataOptions& data, std::size_t epoch) {
  const auto parent = manifest.parent_path();
  if (!parent.empty() && !std::filesystem::is_directory(parent)) {
    throw std::filesystem::filesystem_error("checkpoint directory does not exist", parent,
                                            std::make_error_code(std::errc::no_such_file_or_directory));
  }
  json params = json::array();
  std::string bytes;
  std::size_t offset = 0;
  for (const auto& p : m.parameters()) {
    params.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset}, {"trainable", p.trainable}});
    const auto v = p.value.data();
    bytes.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    offset += v.size();
  }
  json schema = json::array();
  for (const auto& c : m.schema().channels()) schema.push_back({{"name", c.name}, {"vocab_size", c.vocab_size}});
  RunConfig rc;
  rc.data = data;
  json doc{{"format", kCheckpointFormat},
           {"version", kCheckpointVersion},
           {"epoch", epoch},
           {"model", to_json(m.config())},
           {"data", to_json(rc)["data"]},
           {"schema", schema},
           {"encoder", ckpt_detail::encoder_to_json(enc)},
           {"parameters", params},
           {"values", offset},
           {"weights", checkpoint_weights_path(manifest).filename().string()}};
  ckpt_detail::write_file_atomic(checkpoint_weights_path(manifest), bytes);
  ckpt_detail::write_file_atomic(manifest, doc.dump(2) + "\n");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) {
    throw std::filesystem::filesystem_error("cannot open checkpoint", manifest,
                                            std::make_error_code(std::errc::no_such_file_or_directory));
  }
  const json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw SchemaError("checkpoint manifest is not valid JSON");
  if (doc.value("format", "") != kCheckpointFormat || doc.value("version", 0) != kCheckpointVersion) {
    throw SchemaError("not a version " + std::to_string(kCheckpointVersion) + " checkpoint: " + manifest.string());
  }
  try {
    model::Trans2DConfig cfg;
    read_model(doc.at("model"), cfg);
    std::vector<std::string> names;
    for (const auto& c : doc.at("schema")) names.push_back(c.at("name").get<std::string>());
    auto schema = data::AttributeSchema::from_names(names);
    for (std::size_t j = 0; j < names.size(); ++j) schema.set_vocab_size(j, doc["schema"][j].at("vocab_size"));
    const RunConfig rc = run_config_from_json(json{{"data", doc.at("data")}});

    Checkpoint ck{model::Trans2DModel(cfg, schema, 0), ckpt_detail::encoder_from_json(doc.at("encoder")), rc.data,
                  doc.at("epoch").get<std::size_t>()};

    const auto total = doc.at("values").get<std::size_t>();
    std::ifstream bin(checkpoint_weights_path(manifest), std::ios::binary);
    if (!bin) throw SchemaError("missing weight file for " + manifest.string());
    std::vector<double> values(total);
    bin.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(total * sizeof(double)));
    if (!bin || bin.peek() != std::char_traits<char>::eof()) {
      throw SchemaError("weight file size does not match the manifest");
    }

    auto& params = ck.model.parameters();
    const auto& table = doc.at("parameters");
    if (table.size() != params.size()) throw SchemaError("checkpoint parameter count does not match the model");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& row = table[i];
      if (row.at("name").get<std::string>() != params[i].name ||
          row.at("shape").get<ad::Shape>() != params[i].value.shape()) {
        throw SchemaError("checkpoint parameter '" + row.at("name").get<std::string>() + "' does not match the model");
      }
      const auto off = row.at("offset").get<std::size_t>();
      auto dst = params[i].value.mutable_data();
      if (off + dst.size() > total) throw SchemaError("checkpoint parameter table overruns the weight file");
      std::memcpy(dst.data(), values.data() + off, dst.size() * sizeof(double));
    }
    return ck;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed checkpoint manifest: ") + e.what());
  }
}

}  // namespace trans2d
