#pragma once

#include <string>

#include "cmce/trainer.hpp"

namespace cmce {

// Binary layout, little-endian:
//   "CMCT" | u32 version=1 | u32 variant tag | u32 json length + JSON header
//   (train config, class labels, loss history)
//   u32 net count | u32 has query net
//   per net: u32 in_dim | u32 out_dim | u32 r | u32 has weight head | matrices
//   head: u32 C | u32 m | f32 scale | C x m matrix
// Matrices are written row-major as f32, in TransformNet::for_each_param order.
inline constexpr char kTransformMagic[4] = {'C', 'M', 'C', 'T'};
inline constexpr std::uint32_t kTransformFormatVersion = 1;

std::string encode_transform(const TrainedTransform& t);
TrainedTransform decode_transform(const std::string& bytes);

void write_transform(const TrainedTransform& t, const std::string& path);
TrainedTransform read_transform(const std::string& path);

// Rounds every parameter through float32 (the precision stored on disk).
void quantize_f32(Trainables& p);

}  // namespace cmce
