#include "cmce/param_io.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "cmce/error.hpp"

namespace cmce {

namespace {

using Eigen::Index;

std::uint32_t variant_tag(Variant v) { return static_cast<std::uint32_t>(v); }

Variant variant_from_tag(std::uint32_t tag) {
  if (tag > static_cast<std::uint32_t>(Variant::kConcat)) {
    throw FormatError("unknown variant tag " + std::to_string(tag));
  }
  return static_cast<Variant>(tag);
}

void write_matrix(detail::ByteWriter& w, const Eigen::MatrixXd& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) w.f32(static_cast<float>(m(i, j)));
  }
}

void read_matrix(detail::ByteReader& r, Eigen::MatrixXd& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      const float v = r.f32();
      if (!std::isfinite(v)) throw FormatError("non-finite parameter");
      m(i, j) = v;
    }
  }
}

void write_net(detail::ByteWriter& w, const TransformNet& net) {
  w.u32(static_cast<std::uint32_t>(net.in_dim));
  w.u32(static_cast<std::uint32_t>(net.out_dim));
  w.u32(static_cast<std::uint32_t>(kReductionRatio));
  w.u32(net.has_weight_head ? 1u : 0u);
  net.for_each_param([&](const Eigen::MatrixXd& m) { write_matrix(w, m); });
}

TransformNet read_net(detail::ByteReader& r) {
  const std::uint32_t n = r.u32();
  const std::uint32_t m = r.u32();
  const std::uint32_t ratio = r.u32();
  const std::uint32_t weighted = r.u32();
  if (ratio != kReductionRatio) throw FormatError("unsupported reduction ratio");
  if (weighted > 1) throw FormatError("bad weight-head flag");
  TransformNet net;
  try {
    net = init_transform(n, m, 0, weighted == 1);
  } catch (const InvalidConfig& e) {
    throw FormatError(std::string("bad net shape: ") + e.what());
  }
  net.for_each_param([&](Eigen::MatrixXd& mat) { read_matrix(r, mat); });
  return net;
}

}  // namespace

void quantize_f32(Trainables& p) {
  p.for_each_param([](Eigen::MatrixXd& m) {
    m = m.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
  });
  p.head.scale = static_cast<float>(p.head.scale);
}

std::string encode_transform(const TrainedTransform& t) {
  nlohmann::json header;
  header["train_config"] = t.cfg;
  header["class_labels"] = t.class_labels;
  header["loss_history"] = t.loss_history;
  const std::string json = header.dump();

  detail::ByteWriter w;
  w.bytes(std::string(kTransformMagic, 4));
  w.u32(kTransformFormatVersion);
  w.u32(variant_tag(t.variant));
  w.u32(static_cast<std::uint32_t>(json.size()));
  w.bytes(json);
  w.u32(static_cast<std::uint32_t>(t.params.nets.size()));
  w.u32(t.params.query_net ? 1u : 0u);
  for (const auto& net : t.params.nets) write_net(w, net);
  if (t.params.query_net) write_net(w, *t.params.query_net);
  const auto& h = t.params.head;
  w.u32(static_cast<std::uint32_t>(h.weights.rows()));
  w.u32(static_cast<std::uint32_t>(h.weights.cols()));
  w.f32(static_cast<float>(h.scale));
  write_matrix(w, h.weights);
  return w.data();
}

TrainedTransform decode_transform(const std::string& bytes) {
  detail::ByteReader r(bytes);
  if (r.bytes(4) != std::string(kTransformMagic, 4)) {
    throw FormatError("bad magic: not a transform parameter file");
  }
  const std::uint32_t version = r.u32();
  if (version != kTransformFormatVersion) {
    throw FormatError("unsupported transform file version " + std::to_string(version));
  }
  TrainedTransform t;
  t.variant = variant_from_tag(r.u32());
  const std::uint32_t json_len = r.u32();
  try {
    const auto header = nlohmann::json::parse(r.bytes(json_len));
    t.cfg = header.at("train_config").get<TrainConfig>();
    t.class_labels = header.at("class_labels").get<std::vector<std::uint32_t>>();
    t.loss_history = header.at("loss_history").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad transform header: ") + e.what());
  }
  const std::uint32_t num_nets = r.u32();
  const std::uint32_t has_query = r.u32();
  if (num_nets == 0 || num_nets > 1024) throw FormatError("bad net count");
  if (has_query > 1) throw FormatError("bad query-net flag");
  for (std::uint32_t i = 0; i < num_nets; ++i) t.params.nets.push_back(read_net(r));
  if (has_query == 1) t.params.query_net = read_net(r);
  const std::uint32_t c = r.u32();
  const std::uint32_t m = r.u32();
  if (c != t.class_labels.size()) throw FormatError("head rows differ from class count");
  t.params.head.scale = r.f32();
  t.params.head.weights.resize(c, m);
  read_matrix(r, t.params.head.weights);
  if (r.remaining() != 0) throw FormatError("trailing bytes after transform payload");
  return t;
}

void write_transform(const TrainedTransform& t, const std::string& path) {
  detail::write_file(path, encode_transform(t));
}

TrainedTransform read_transform(const std::string& path) {
  return decode_transform(detail::read_file(path));
}

}  // namespace cmce
