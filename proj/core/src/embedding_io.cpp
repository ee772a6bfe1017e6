#include "cmce/embedding_io.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "cmce/error.hpp"

namespace cmce {

namespace detail {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for '" + path + "'");
  return data;
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace detail

std::string encode_embedding_set(const EmbeddingSet& set) {
  if (set.model_id().size() > 0xFFFF) throw InvalidConfig("model_id too long");
  detail::ByteWriter w;
  w.bytes(std::string(kEmbeddingMagic, 4));
  w.u32(kEmbeddingFormatVersion);
  w.u32(static_cast<std::uint32_t>(set.size()));
  w.u32(static_cast<std::uint32_t>(set.dim()));
  w.u16(static_cast<std::uint16_t>(set.model_id().size()));
  w.bytes(set.model_id());
  for (const auto& item : set.items()) {
    w.u32(item.item_id);
    w.u32(item.class_label);
    for (double x : item.vector.values()) w.f32(static_cast<float>(x));
  }
  return w.data();
}

EmbeddingSet decode_embedding_set(const std::string& bytes) {
  detail::ByteReader r(bytes);
  if (r.bytes(4) != std::string(kEmbeddingMagic, 4)) {
    throw FormatError("bad magic: not an embedding-set file");
  }
  const std::uint32_t version = r.u32();
  if (version != kEmbeddingFormatVersion) {
    throw FormatError("unsupported embedding-set version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  const std::uint32_t dim = r.u32();
  const std::uint16_t id_len = r.u16();
  std::string model_id = r.bytes(id_len);
  if (dim < 2) throw FormatError("declared dim < 2");

  const std::uint64_t expected = static_cast<std::uint64_t>(count) * (8 + 4ull * dim);
  if (r.remaining() < expected) throw FormatError("truncated payload");
  if (r.remaining() > expected) {
    throw DimensionMismatch("payload length does not match declared count x dim");
  }

  EmbeddingSet set(std::move(model_id), dim);
  std::vector<double> coords(dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t item_id = r.u32();
    const std::uint32_t label = r.u32();
    for (auto& x : coords) {
      x = r.f32();
      if (!std::isfinite(x)) throw FormatError("non-finite coordinate in payload");
    }
    try {
      set.add(EmbeddingVector(coords), label, item_id);
    } catch (const InvalidConfig& e) {
      throw FormatError(e.what());
    }
  }
  return set;
}

void write_embedding_set(const EmbeddingSet& set, const std::string& path) {
  detail::write_file(path, encode_embedding_set(set));
}

EmbeddingSet read_embedding_set(const std::string& path) {
  return decode_embedding_set(detail::read_file(path));
}

void write_class_manifest(const ClassNames& names, const std::string& path) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [label, name] : names) j[std::to_string(label)] = name;
  detail::write_file(path, j.dump(2) + "\n");
}

ClassNames read_class_manifest(const std::string& path) {
  ClassNames names;
  try {
    const auto j = nlohmann::json::parse(detail::read_file(path));
    for (const auto& [key, value] : j.items()) {
      names[static_cast<std::uint32_t>(std::stoul(key))] = value.get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad class manifest: ") + e.what());
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("bad class label in manifest: ") + e.what());
  }
  return names;
}

}  // namespace cmce
