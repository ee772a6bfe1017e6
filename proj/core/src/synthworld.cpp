#include "cmce/synthworld.hpp"

#include <cmath>

#include "cmce/error.hpp"
#include "cmce/random.hpp"

namespace cmce {

namespace {

// Stream tags keep the keyed generators of different roles independent.
constexpr std::uint64_t kPrototypeTag = 0x70726f746f;
constexpr std::uint64_t kRotationTag = 0x726f74;
constexpr std::uint64_t kSampleTag = 0x73616d706c65;
constexpr std::uint64_t kModelNoiseTag = 0x6d6e6f697365;
constexpr std::uint64_t kFamilyNoiseTag = 0x666e6f697365;

void validate(const WorldConfig& c) {
  if (c.latent_dim < 8) throw InvalidConfig("latent_dim must be >= 8");
  if (c.num_classes < 2) throw InvalidConfig("num_classes must be >= 2");
  if (c.num_classes > 0xFFFF) throw InvalidConfig("num_classes must be < 65536");
  if (!(c.intra_class_spread >= 0.0)) throw InvalidConfig("intra_class_spread must be >= 0");
  if (!(c.difficulty_sigma >= 0.0)) throw InvalidConfig("difficulty_sigma must be >= 0");
  if (!(c.noise_difficulty_exponent >= 0.0)) {
    throw InvalidConfig("noise_difficulty_exponent must be >= 0");
  }
  if (!(c.family_noise_share >= 0.0 && c.family_noise_share <= 1.0)) {
    throw InvalidConfig("family_noise_share must be in [0, 1]");
  }
}

}  // namespace

LatentWorld::LatentWorld(WorldConfig config) : config_(config) {
  validate(config_);
  const auto c = static_cast<Eigen::Index>(config_.num_classes);
  const auto l = static_cast<Eigen::Index>(config_.latent_dim);
  prototypes_.resize(c, l);
  Rng rng({config_.seed, kPrototypeTag});
  for (Eigen::Index i = 0; i < c; ++i) {
    for (Eigen::Index k = 0; k < l; ++k) prototypes_(i, k) = rng.normal();
    prototypes_.row(i).normalize();
  }
}

LatentWorld::Sample LatentWorld::sample(std::uint32_t class_label,
                                        std::uint32_t sample_id) const {
  if (class_label >= config_.num_classes) {
    throw InvalidConfig("class label " + std::to_string(class_label) + " outside world");
  }
  const auto l = static_cast<Eigen::Index>(config_.latent_dim);
  const Eigen::VectorXd proto = prototypes_.row(class_label).transpose();

  Rng rng({config_.seed, kSampleTag, class_label, sample_id});
  Sample s;
  s.difficulty = std::exp(config_.difficulty_sigma * rng.normal());

  Eigen::VectorXd tangent(l);
  for (Eigen::Index k = 0; k < l; ++k) tangent(k) = rng.normal();
  tangent -= tangent.dot(proto) * proto;
  const double tnorm = tangent.norm();
  const double angle = config_.intra_class_spread * s.difficulty * tnorm /
                       std::sqrt(static_cast<double>(l - 1));
  if (angle == 0.0 || tnorm == 0.0) {
    s.latent = proto;
  } else {
    s.latent = std::cos(angle) * proto + std::sin(angle) / tnorm * tangent;
  }
  return s;
}

ArchFamily parse_arch_family(const std::string& name) {
  if (name == "A") return ArchFamily::kA;
  if (name == "B") return ArchFamily::kB;
  if (name == "C") return ArchFamily::kC;
  throw InvalidConfig("unknown arch family '" + name + "' (expected A, B or C)");
}

std::string to_string(ArchFamily family) {
  switch (family) {
    case ArchFamily::kA: return "A";
    case ArchFamily::kB: return "B";
    case ArchFamily::kC: return "C";
  }
  return "?";
}

SynthModel::SynthModel(const LatentWorld& world, ModelConfig config)
    : config_(std::move(config)) {
  const auto l = static_cast<Eigen::Index>(world.latent_dim());
  if (config_.out_dim < 2 || config_.out_dim > world.latent_dim()) {
    throw InvalidConfig("out_dim must be in [2, latent_dim]");
  }
  if (!(config_.noise_sigma >= 0.0)) throw InvalidConfig("noise_sigma must be >= 0");

  Eigen::MatrixXd gauss(l, l);
  Rng rng({config_.seed, kRotationTag});
  for (Eigen::Index i = 0; i < l; ++i) {
    for (Eigen::Index k = 0; k < l; ++k) gauss(i, k) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  Eigen::MatrixXd q = qr.householderQ();
  // Sign-fix so Q is the unique Haar-distributed factor.
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index k = 0; k < l; ++k) {
    if (r(k, k) < 0.0) q.col(k) *= -1.0;
  }
  rotation_ = q.transpose().topRows(static_cast<Eigen::Index>(config_.out_dim));
}

double SynthModel::nonlinearity_gain() const noexcept {
  switch (config_.family) {
    case ArchFamily::kA: return 1.0;
    case ArchFamily::kB: return 2.0;
    case ArchFamily::kC: return 0.5;
  }
  return 1.0;
}

void EmbedLog::record(const std::string& model_id, const SampleSpec& spec) {
  std::lock_guard lock(mu_);
  entries_.push_back({model_id, spec});
}

std::vector<EmbedLog::Entry> EmbedLog::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

std::size_t EmbedLog::count(const std::string& model_id) const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& e : entries_) n += (e.model_id == model_id);
  return n;
}

LatentWorld make_world(std::size_t latent_dim, std::size_t num_classes,
                       double intra_class_spread, std::uint64_t seed) {
  WorldConfig c;
  c.latent_dim = latent_dim;
  c.num_classes = num_classes;
  c.intra_class_spread = intra_class_spread;
  c.seed = seed;
  return LatentWorld(c);
}

LatentWorld make_world(const WorldConfig& config) { return LatentWorld(config); }

SynthModel spawn_model(const LatentWorld& world, ArchFamily family,
                       std::size_t out_dim, double noise_sigma, std::uint64_t seed) {
  ModelConfig c;
  c.model_id = "model-" + to_string(family) + "-" + std::to_string(seed);
  c.family = family;
  c.out_dim = out_dim;
  c.noise_sigma = noise_sigma;
  c.seed = seed;
  return SynthModel(world, std::move(c));
}

SynthModel spawn_model(const LatentWorld& world, const ModelConfig& config) {
  return SynthModel(world, config);
}

EmbeddingVector embed(const SynthModel& model, const LatentWorld& world,
                      const SampleSpec& spec) {
  if (model.rotation().cols() != static_cast<Eigen::Index>(world.latent_dim())) {
    throw InvalidConfig("model was spawned for a different latent dim");
  }
  const auto sample = world.sample(spec.class_label, spec.sample_id);
  Eigen::VectorXd y = model.rotation() * sample.latent;
  switch (model.config().family) {
    case ArchFamily::kA:
      break;
    case ArchFamily::kB:
      y = (model.nonlinearity_gain() * y.array()).tanh().matrix();
      break;
    case ArchFamily::kC:
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        y(i) = std::copysign(std::pow(std::abs(y(i)), model.nonlinearity_gain()), y(i));
      }
      break;
  }
  // Unit signal before the noise, so families share one signal-to-noise ratio.
  const double ynorm = y.norm();
  if (ynorm > kNormEpsilon) y /= ynorm;

  const auto& wc = world.config();
  const double sigma = model.config().noise_sigma;
  if (sigma > 0.0) {
    const double scale = sigma * std::pow(sample.difficulty, wc.noise_difficulty_exponent);
    const double own = std::sqrt(1.0 - wc.family_noise_share);
    const double shared = std::sqrt(wc.family_noise_share);
    Rng model_rng({model.config().seed, kModelNoiseTag, spec.class_label, spec.sample_id});
    Rng family_rng({wc.seed, kFamilyNoiseTag,
                    static_cast<std::uint64_t>(model.config().family), spec.class_label,
                    spec.sample_id});
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      y(i) += scale * (own * model_rng.normal() + shared * family_rng.normal());
    }
  }
  return l2_normalize(EmbeddingVector(std::vector<double>(y.data(), y.data() + y.size())));
}

std::uint32_t make_item_id(std::uint32_t class_label, std::uint32_t sample_id) {
  if (class_label > 0xFFFF || sample_id > kMaxSampleId) {
    throw InvalidConfig("class label and sample id must both be < 65536");
  }
  return (class_label << 16) | sample_id;
}

SampleSpec split_item_id(std::uint32_t item_id) {
  return {item_id >> 16, item_id & 0xFFFFu};
}

EmbeddingSet generate_split(const LatentWorld& world, const SynthModel& model,
                            const std::vector<std::uint32_t>& classes,
                            std::uint32_t samples_per_class, std::uint32_t id_offset,
                            EmbedLog* log) {
  if (samples_per_class == 0) throw InvalidConfig("samples_per_class must be > 0");
  if (static_cast<std::uint64_t>(id_offset) + samples_per_class - 1 > kMaxSampleId) {
    throw InvalidConfig("sample id range exceeds 65535");
  }
  EmbeddingSet set(model.model_id(), model.out_dim());
  for (std::uint32_t c : classes) {
    if (c >= world.num_classes()) {
      throw InvalidConfig("class " + std::to_string(c) + " does not exist in the world");
    }
    for (std::uint32_t k = 0; k < samples_per_class; ++k) {
      const SampleSpec spec{c, id_offset + k};
      if (log != nullptr) log->record(model.model_id(), spec);
      set.add(embed(model, world, spec), c, make_item_id(c, spec.sample_id));
    }
  }
  return set;
}

void to_json(nlohmann::json& j, const WorldConfig& c) {
  j = nlohmann::json{{"latent_dim", c.latent_dim},
                     {"num_classes", c.num_classes},
                     {"intra_class_spread", c.intra_class_spread},
                     {"difficulty_sigma", c.difficulty_sigma},
                     {"noise_difficulty_exponent", c.noise_difficulty_exponent},
                     {"family_noise_share", c.family_noise_share},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, WorldConfig& c) {
  WorldConfig d;
  c.latent_dim = j.value("latent_dim", d.latent_dim);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.intra_class_spread = j.value("intra_class_spread", d.intra_class_spread);
  c.difficulty_sigma = j.value("difficulty_sigma", d.difficulty_sigma);
  c.noise_difficulty_exponent =
      j.value("noise_difficulty_exponent", d.noise_difficulty_exponent);
  c.family_noise_share = j.value("family_noise_share", d.family_noise_share);
  c.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"model_id", c.model_id},
                     {"family", to_string(c.family)},
                     {"out_dim", c.out_dim},
                     {"noise_sigma", c.noise_sigma},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.model_id = j.at("model_id").get<std::string>();
  c.family = parse_arch_family(j.value("family", std::string("A")));
  c.out_dim = j.value("out_dim", d.out_dim);
  c.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  c.seed = j.value("seed", d.seed);
}

}  // namespace cmce
