#pragma once

// Tensor archive: a directory holding `manifest.json` plus one raw
// little-endian binary blob per named array (row-major). Element types are
// float32, int32 and uint8 (bools as uint8). The manifest carries a schema
// version, the array table and a free-form `meta` object (config snapshots,
// PRNG states, ...).

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace q4d {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kArchiveSchemaVersion = 1;

enum class DType { F32, I32, U8 };

inline std::string dtype_name(DType t) {
  switch (t) {
    case DType::F32: return "float32";
    case DType::I32: return "int32";
    case DType::U8: return "uint8";
  }
  return "?";
}

inline DType dtype_from_name(const std::string& s) {
  if (s == "float32") return DType::F32;
  if (s == "int32") return DType::I32;
  if (s == "uint8") return DType::U8;
  throw std::runtime_error("archive: unknown dtype " + s);
}

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::F32: return 4;
    case DType::I32: return 4;
    case DType::U8: return 1;
  }
  return 0;
}

struct ArchiveArray {
  DType dtype = DType::F32;
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> bytes;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

class TensorArchive {
 public:
  json meta;

  void put_f32(const std::string& name, std::vector<std::int64_t> shape,
               const std::vector<float>& data) {
    put_raw(name, DType::F32, std::move(shape), data.data(),
            data.size() * sizeof(float));
  }
  void put_i32(const std::string& name, std::vector<std::int64_t> shape,
               const std::vector<std::int32_t>& data) {
    put_raw(name, DType::I32, std::move(shape), data.data(),
            data.size() * sizeof(std::int32_t));
  }
  void put_u8(const std::string& name, std::vector<std::int64_t> shape,
              const std::vector<std::uint8_t>& data) {
    put_raw(name, DType::U8, std::move(shape), data.data(), data.size());
  }

  bool has(const std::string& name) const { return arrays_.count(name) > 0; }

  const ArchiveArray& array(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end())
      throw std::runtime_error("archive: missing array '" + name + "'");
    return it->second;
  }

  std::vector<float> get_f32(const std::string& name) const {
    const ArchiveArray& a = array(name);
    if (a.dtype != DType::F32)
      throw std::runtime_error("archive: '" + name + "' is not float32");
    std::vector<float> out(a.bytes.size() / 4);
    std::memcpy(out.data(), a.bytes.data(), a.bytes.size());
    return out;
  }
  std::vector<std::int32_t> get_i32(const std::string& name) const {
    const ArchiveArray& a = array(name);
    if (a.dtype != DType::I32)
      throw std::runtime_error("archive: '" + name + "' is not int32");
    std::vector<std::int32_t> out(a.bytes.size() / 4);
    std::memcpy(out.data(), a.bytes.data(), a.bytes.size());
    return out;
  }
  std::vector<std::uint8_t> get_u8(const std::string& name) const {
    const ArchiveArray& a = array(name);
    if (a.dtype != DType::U8)
      throw std::runtime_error("archive: '" + name + "' is not uint8");
    return a.bytes;
  }

  const std::vector<std::int64_t>& shape(const std::string& name) const {
    return array(name).shape;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : arrays_) out.push_back(k);
    return out;
  }

  void write(const fs::path& dir) const {
    std::error_code ec;
    fs::create_directories(dir, ec);
    json manifest;
    manifest["schema_version"] = kArchiveSchemaVersion;
    manifest["byte_order"] = "little-endian";
    manifest["meta"] = meta.is_null() ? json::object() : meta;
    json arr = json::array();
    for (const auto& [name, a] : arrays_) {
      arr.push_back({{"name", name},
                     {"shape", a.shape},
                     {"dtype", dtype_name(a.dtype)},
                     {"file", name + ".bin"}});
      std::ofstream f(dir / (name + ".bin"), std::ios::binary);
      if (!f) throw std::runtime_error("archive: cannot write " + name);
      f.write(reinterpret_cast<const char*>(a.bytes.data()),
              static_cast<std::streamsize>(a.bytes.size()));
    }
    manifest["arrays"] = arr;
    std::ofstream mf(dir / "manifest.json");
    if (!mf) throw std::runtime_error("archive: cannot write manifest");
    mf << manifest.dump(2) << "\n";
  }

  static TensorArchive read(const fs::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf)
      throw std::runtime_error("archive: missing manifest in " + dir.string());
    json manifest = json::parse(mf);
    if (manifest.at("schema_version").get<int>() != kArchiveSchemaVersion)
      throw std::runtime_error("archive: unsupported schema version");
    TensorArchive out;
    out.meta = manifest.value("meta", json::object());
    for (const auto& e : manifest.at("arrays")) {
      ArchiveArray a;
      a.dtype = dtype_from_name(e.at("dtype").get<std::string>());
      a.shape = e.at("shape").get<std::vector<std::int64_t>>();
      fs::path file = dir / e.at("file").get<std::string>();
      std::ifstream f(file, std::ios::binary);
      if (!f) throw std::runtime_error("archive: missing blob " + file.string());
      a.bytes.assign(std::istreambuf_iterator<char>(f),
                     std::istreambuf_iterator<char>());
      std::size_t expect =
          static_cast<std::size_t>(a.numel()) * dtype_size(a.dtype);
      if (a.bytes.size() != expect)
        throw std::runtime_error("archive: blob size mismatch for " +
                                 e.at("name").get<std::string>());
      out.arrays_[e.at("name").get<std::string>()] = std::move(a);
    }
    return out;
  }

 private:
  void put_raw(const std::string& name, DType dtype,
               std::vector<std::int64_t> shape, const void* data,
               std::size_t bytes) {
    ArchiveArray a;
    a.dtype = dtype;
    a.shape = std::move(shape);
    std::size_t expect = static_cast<std::size_t>(a.numel()) * dtype_size(dtype);
    if (bytes != expect)
      throw std::invalid_argument("archive: data does not match shape for '" +
                                  name + "'");
    a.bytes.resize(bytes);
    std::memcpy(a.bytes.data(), data, bytes);
    arrays_[name] = std::move(a);
  }

  std::map<std::string, ArchiveArray> arrays_;  // ordered for stable manifests
};

// Helpers converting double vectors through the float32 storage type.
inline std::vector<float> to_f32(const std::vector<double>& v) {
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

inline std::vector<double> to_f64(const std::vector<float>& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(v[i]);
  return out;
}

}  // namespace q4d
