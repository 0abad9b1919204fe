#include "vlpre/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"
#include "vlpre/util.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written as native little-endian doubles");

namespace vlpre::checkpoint {

using nlohmann::json;

void save(const std::string& stem, const NamedTensors& tensors) {
  std::string blob;
  json manifest;
  manifest["format"] = "vlpre-checkpoint-v1";
  manifest["blob"] = std::filesystem::path(stem).filename().string() + ".bin";
  json entries = json::array();
  for (const auto& [name, t] : tensors) {
    json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["dtype"] = "f64";
    e["offset"] = blob.size();
    e["numel"] = t.numel();
    entries.push_back(std::move(e));
    size_t bytes = t.data().size() * sizeof(double);
    size_t off = blob.size();
    blob.resize(off + bytes);
    std::memcpy(blob.data() + off, t.data().data(), bytes);
  }
  manifest["tensors"] = std::move(entries);
  manifest["checksum"] = hex64(fnv1a64(blob.data(), blob.size()));
  write_file_atomic(stem + ".bin", blob);
  write_file_atomic(stem + ".json", manifest.dump(2) + "\n");
}

namespace {

json read_manifest(const std::string& stem) {
  json manifest = json::parse(read_file(stem + ".json"));
  if (manifest.value("format", "") != "vlpre-checkpoint-v1") {
    throw std::runtime_error("checkpoint " + stem + ": unrecognized manifest format");
  }
  return manifest;
}

}  // namespace

void load_into(const std::string& stem, const NamedTensors& tensors) {
  json manifest = read_manifest(stem);
  std::string blob = read_file(stem + ".bin");
  std::unordered_map<std::string, Tensor> by_name;
  for (const auto& [name, t] : tensors) by_name.emplace(name, t);

  size_t matched = 0;
  for (const auto& e : manifest.at("tensors")) {
    std::string name = e.at("name");
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw std::runtime_error("checkpoint " + stem + ": unexpected tensor '" + name + "'");
    }
    Tensor t = it->second;
    std::vector<int> shape = e.at("shape").get<std::vector<int>>();
    if (shape != t.shape()) {
      throw std::runtime_error("checkpoint " + stem + ": tensor '" + name + "' has shape " +
                               shape_str(shape) + ", expected " + shape_str(t.shape()));
    }
    size_t offset = e.at("offset").get<size_t>();
    size_t bytes = t.data().size() * sizeof(double);
    if (offset + bytes > blob.size()) {
      throw std::runtime_error("checkpoint " + stem + ": tensor '" + name +
                               "' extends past end of blob");
    }
    std::memcpy(t.data().data(), blob.data() + offset, bytes);
    ++matched;
  }
  if (matched != tensors.size()) {
    throw std::runtime_error("checkpoint " + stem + ": manifest lists " +
                             std::to_string(matched) + " of " + std::to_string(tensors.size()) +
                             " expected tensors");
  }
}

NamedTensors load(const std::string& stem, bool requires_grad) {
  json manifest = read_manifest(stem);
  std::string blob = read_file(stem + ".bin");
  NamedTensors out;
  for (const auto& e : manifest.at("tensors")) {
    std::vector<int> shape = e.at("shape").get<std::vector<int>>();
    Tensor t = Tensor::zeros(shape, requires_grad);
    size_t offset = e.at("offset").get<size_t>();
    size_t bytes = t.data().size() * sizeof(double);
    if (offset + bytes > blob.size()) {
      throw std::runtime_error("checkpoint " + stem + ": blob too short");
    }
    std::memcpy(t.data().data(), blob.data() + offset, bytes);
    out.emplace_back(e.at("name").get<std::string>(), std::move(t));
  }
  return out;
}

std::string blob_hash(const std::string& stem) {
  std::string blob = read_file(stem + ".bin");
  return hex64(fnv1a64(blob.data(), blob.size()));
}

}  // namespace vlpre::checkpoint
