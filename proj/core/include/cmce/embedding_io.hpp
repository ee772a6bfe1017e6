#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "cmce/embedding.hpp"

namespace cmce {

// Binary layout, little-endian:
//   "CMCE" | u32 version=1 | u32 count | u32 dim | u16 len + model_id bytes
//   then per item: u32 item_id | u32 class_label | dim x f32
// Coordinates are stored as float32, so a set round-trips bit-exactly only if
// it already holds float32-representable values (see quantize_f32).
inline constexpr char kEmbeddingMagic[4] = {'C', 'M', 'C', 'E'};
inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

std::string encode_embedding_set(const EmbeddingSet& set);
EmbeddingSet decode_embedding_set(const std::string& bytes);

void write_embedding_set(const EmbeddingSet& set, const std::string& path);
EmbeddingSet read_embedding_set(const std::string& path);

// Optional companion manifest mapping class labels to readable names.
using ClassNames = std::map<std::uint32_t, std::string>;
void write_class_manifest(const ClassNames& names, const std::string& path);
ClassNames read_class_manifest(const std::string& path);

}  // namespace cmce
