#include "cmce/cli/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "cmce/error.hpp"
#include "cmce/random.hpp"

namespace cmce::cli {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string role_name(Role r) { return r == Role::kQuery ? "query" : "gallery"; }

Role parse_role(const std::string& s) {
  if (s == "query") return Role::kQuery;
  if (s == "gallery") return Role::kGallery;
  throw InvalidConfig("unknown model role '" + s + "'");
}

RosterEntry entry(const std::string& id, ArchFamily family, Role role) {
  RosterEntry e;
  e.model.model_id = id;
  e.model.family = family;
  e.role = role;
  return e;
}

struct Range {
  std::uint32_t begin, end;
  const char* name;
};

bool overlaps(const Range& a, const Range& b) { return a.begin < b.end && b.begin < a.end; }

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

std::vector<std::uint32_t> class_range(std::uint32_t begin, std::uint32_t end) {
  std::vector<std::uint32_t> out;
  for (std::uint32_t c = begin; c < end; ++c) out.push_back(c);
  return out;
}

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.models = {
      entry("query", ArchFamily::kA, Role::kQuery),
      entry("g-a0", ArchFamily::kA, Role::kGallery),
      entry("g-a1", ArchFamily::kA, Role::kGallery),
      entry("g-a2", ArchFamily::kA, Role::kGallery),
      entry("g-a3", ArchFamily::kA, Role::kGallery),
      entry("g-b0", ArchFamily::kB, Role::kGallery),
      entry("g-c0", ArchFamily::kC, Role::kGallery),
  };
  cfg.train.epochs = 100;
  cfg.train.learning_rate = 3e-3;
  return cfg;
}

const RosterEntry& ExperimentConfig::model(const std::string& id) const {
  for (const auto& m : models) {
    if (m.model.model_id == id) return m;
  }
  throw InvalidConfig("unknown model '" + id + "'");
}

const RosterEntry& ExperimentConfig::query_model() const {
  for (const auto& m : models) {
    if (m.role == Role::kQuery) return m;
  }
  throw InvalidConfig("no query model in roster");
}

TrainConfig ExperimentConfig::train_config(Variant v) const {
  json j = train;
  const auto it = train_overrides.find(to_string(v));
  if (it != train_overrides.end()) j.merge_patch(it->second);
  return j.get<TrainConfig>();
}

void ExperimentConfig::validate() const {
  if (world.latent_dim < 8) throw InvalidConfig("world.latent_dim must be >= 8");
  if (world_seeds.empty()) throw InvalidConfig("world_seeds is empty");
  if (std::set<std::uint64_t>(world_seeds.begin(), world_seeds.end()).size() !=
      world_seeds.size()) {
    throw InvalidConfig("world_seeds contains duplicates");
  }

  std::size_t queries = 0;
  std::set<std::string> ids;
  for (const auto& m : models) {
    if (m.model.model_id.empty()) throw InvalidConfig("empty model id");
    if (!ids.insert(m.model.model_id).second) {
      throw InvalidConfig("duplicate model id '" + m.model.model_id + "'");
    }
    if (m.model.out_dim < 2 || m.model.out_dim > world.latent_dim) {
      throw InvalidConfig("model '" + m.model.model_id + "': out_dim must be in [2, latent_dim]");
    }
    if (m.model.out_dim % kReductionRatio != 0) {
      throw InvalidConfig("model '" + m.model.model_id + "': out_dim must be divisible by 4");
    }
    if (!(m.model.noise_sigma >= 0.0)) throw InvalidConfig("noise_sigma must be >= 0");
    if (m.role == Role::kQuery) ++queries;
  }
  if (queries != 1) throw InvalidConfig("exactly one model must have role 'query'");

  const Range train{split.train_begin, split.train_end, "train"};
  const Range gallery{split.gallery_begin, split.gallery_end, "gallery"};
  const Range nonmated{split.nonmated_begin, split.nonmated_end, "nonmated"};
  for (const Range& r : {train, gallery, nonmated}) {
    if (r.begin >= r.end) throw InvalidConfig(std::string(r.name) + " class range is empty");
    if (r.end > world.num_classes) {
      throw InvalidConfig(std::string(r.name) + " class range exceeds num_classes");
    }
  }
  if (train.end - train.begin < 2) throw InvalidConfig("need >= 2 training classes");
  if (overlaps(gallery, nonmated)) throw InvalidConfig("gallery and nonmated classes overlap");
  if (overlaps(train, gallery) || overlaps(train, nonmated)) {
    throw InvalidConfig("training classes overlap the evaluation classes");
  }
  if (split.gallery_samples == 0 || split.gallery_samples >= split.samples_per_class) {
    throw InvalidConfig("gallery_samples must be in [1, samples_per_class)");
  }
  if (split.samples_per_class > kMaxSampleId) throw InvalidConfig("samples_per_class too large");

  if (eval.far_targets.empty()) throw InvalidConfig("eval.far_targets is empty");
  for (double f : eval.far_targets) {
    if (!(f > 0.0 && f <= 1.0)) throw InvalidConfig("FAR targets must be in (0, 1]");
  }
  if (!(eval.primary_far > 0.0 && eval.primary_far <= 1.0)) {
    throw InvalidConfig("eval.primary_far must be in (0, 1]");
  }
  if (eval.coverages.empty()) throw InvalidConfig("eval.coverages is empty");
  for (std::size_t i = 0; i < eval.coverages.size(); ++i) {
    const double c = eval.coverages[i];
    if (!(c > 0.0 && c <= 1.0)) throw InvalidConfig("coverages must be in (0, 1]");
    if (i > 0 && !(c < eval.coverages[i - 1])) {
      throw InvalidConfig("coverages must be strictly decreasing");
    }
  }
  if (eval.rejection_seeds == 0) throw InvalidConfig("eval.rejection_seeds must be > 0");

  const auto check_gallery = [&](const std::string& id) {
    if (model(id).role != Role::kGallery) {
      throw InvalidConfig("model '" + id + "' is not a gallery model");
    }
  };
  const auto& s = scenarios;
  if (s.ensemble_models.empty()) throw InvalidConfig("scenarios.ensemble_models is empty");
  for (const auto& id : s.ensemble_models) check_gallery(id);
  for (const auto* sizes : {&s.ensemble_sizes, &s.update_sizes}) {
    if (sizes->empty()) throw InvalidConfig("ensemble size list is empty");
    for (std::size_t i = 0; i < sizes->size(); ++i) {
      const std::size_t n = (*sizes)[i];
      if (n == 0 || n > s.ensemble_models.size()) {
        throw InvalidConfig("ensemble size " + std::to_string(n) + " out of range");
      }
      if (i > 0 && n <= (*sizes)[i - 1]) {
        throw InvalidConfig("ensemble sizes must be strictly increasing");
      }
    }
  }
  check_gallery(s.dt_model);
  if (s.dtg_models.size() != s.dtga_models.size() || s.dtg_models.empty()) {
    throw InvalidConfig("diversity arms need equal, non-empty model lists");
  }
  for (const auto& id : s.dtg_models) check_gallery(id);
  for (const auto& id : s.dtga_models) check_gallery(id);
  if (!(s.update_train_fraction > 0.0 && s.update_train_fraction <= 1.0)) {
    throw InvalidConfig("update_train_fraction must be in (0, 1]");
  }
  if (!(s.update_noise_scale > 0.0)) throw InvalidConfig("update_noise_scale must be > 0");

  this->train.validate();
  for (const auto& [name, patch] : train_overrides) {
    train_config(parse_variant(name)).validate();
  }
}

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg = default_config();
  try {
    if (!j.is_object()) throw InvalidConfig("config must be a JSON object");
    if (j.contains("world")) cfg.world = j.at("world").get<WorldConfig>();
    read_if(j, "world_seeds", cfg.world_seeds);
    if (j.contains("models")) {
      cfg.models.clear();
      for (const auto& m : j.at("models")) {
        RosterEntry e;
        e.model = m.get<ModelConfig>();
        e.seed_given = m.contains("seed");
        e.role = parse_role(m.value("role", std::string("gallery")));
        cfg.models.push_back(e);
      }
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      auto& o = cfg.split;
      const auto range = [&](const char* key, std::uint32_t& b, std::uint32_t& e) {
        if (!s.contains(key)) return;
        const auto v = s.at(key).get<std::vector<std::uint32_t>>();
        if (v.size() != 2) throw InvalidConfig(std::string("split.") + key + " must be [begin, end)");
        b = v[0];
        e = v[1];
      };
      range("train_classes", o.train_begin, o.train_end);
      range("gallery_classes", o.gallery_begin, o.gallery_end);
      range("nonmated_classes", o.nonmated_begin, o.nonmated_end);
      read_if(s, "samples_per_class", o.samples_per_class);
      read_if(s, "gallery_samples", o.gallery_samples);
    }
    if (j.contains("train")) {
      json t = json(cfg.train);
      for (const auto& [k, v] : j.at("train").items()) {
        if (k == "overrides") continue;
        t[k] = v;
      }
      cfg.train = t.get<TrainConfig>();
      if (j.at("train").contains("overrides")) {
        for (const auto& [k, v] : j.at("train").at("overrides").items()) {
          parse_variant(k);
          cfg.train_overrides[k] = v;
        }
      }
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      read_if(e, "far_targets", cfg.eval.far_targets);
      read_if(e, "primary_far", cfg.eval.primary_far);
      read_if(e, "coverages", cfg.eval.coverages);
      read_if(e, "rejection_seeds", cfg.eval.rejection_seeds);
      if (e.contains("variance_metric")) {
        cfg.eval.variance_metric = parse_distance_metric(e.at("variance_metric").get<std::string>());
      }
    }
    if (j.contains("scenarios")) {
      const auto& s = j.at("scenarios");
      auto& o = cfg.scenarios;
      read_if(s, "ensemble_models", o.ensemble_models);
      read_if(s, "ensemble_sizes", o.ensemble_sizes);
      read_if(s, "dt_model", o.dt_model);
      read_if(s, "dtg_models", o.dtg_models);
      read_if(s, "dtga_models", o.dtga_models);
      read_if(s, "update_train_fraction", o.update_train_fraction);
      read_if(s, "update_noise_scale", o.update_noise_scale);
      read_if(s, "update_sizes", o.update_sizes);
    }
    read_if(j, "output_dir", cfg.output_dir);
    read_if(j, "master_seed", cfg.master_seed);
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string("bad config: ") + e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidConfig("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

ordered_json to_json(const ExperimentConfig& cfg) {
  ordered_json j;
  j["world"] = ordered_json::parse(json(cfg.world).dump());
  j["world_seeds"] = cfg.world_seeds;
  j["models"] = ordered_json::array();
  for (const auto& m : cfg.models) {
    auto mj = ordered_json::parse(json(m.model).dump());
    mj["role"] = role_name(m.role);
    j["models"].push_back(mj);
  }
  const auto& s = cfg.split;
  j["split"] = {{"train_classes", {s.train_begin, s.train_end}},
                {"gallery_classes", {s.gallery_begin, s.gallery_end}},
                {"nonmated_classes", {s.nonmated_begin, s.nonmated_end}},
                {"samples_per_class", s.samples_per_class},
                {"gallery_samples", s.gallery_samples}};
  auto train = ordered_json::parse(json(cfg.train).dump());
  if (!cfg.train_overrides.empty()) {
    train["overrides"] = ordered_json::object();
    for (const auto& [k, v] : cfg.train_overrides) {
      train["overrides"][k] = ordered_json::parse(v.dump());
    }
  }
  j["train"] = train;
  j["eval"] = {{"far_targets", cfg.eval.far_targets},
               {"primary_far", cfg.eval.primary_far},
               {"coverages", cfg.eval.coverages},
               {"rejection_seeds", cfg.eval.rejection_seeds},
               {"variance_metric", to_string(cfg.eval.variance_metric)}};
  const auto& sc = cfg.scenarios;
  j["scenarios"] = {{"ensemble_models", sc.ensemble_models},
                    {"ensemble_sizes", sc.ensemble_sizes},
                    {"dt_model", sc.dt_model},
                    {"dtg_models", sc.dtg_models},
                    {"dtga_models", sc.dtga_models},
                    {"update_train_fraction", sc.update_train_fraction},
                    {"update_noise_scale", sc.update_noise_scale},
                    {"update_sizes", sc.update_sizes}};
  j["output_dir"] = cfg.output_dir;
  j["master_seed"] = cfg.master_seed;
  return j;
}

void resolve_seeds(ExperimentConfig& cfg) {
  for (auto& m : cfg.models) {
    if (!m.seed_given) {
      m.model.seed = derive_seed(cfg.master_seed, "model/" + m.model.model_id);
      m.seed_given = true;
    }
  }
}

std::string config_hash(const ExperimentConfig& cfg) {
  ordered_json j = to_json(cfg);
  j.erase("output_dir");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(hash_name(j.dump())));
  return buf;
}

}  // namespace cmce::cli
