#include "cmce/cli/scenario.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cmath>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "cmce/embedding_io.hpp"
#include "cmce/error.hpp"
#include "cmce/param_io.hpp"
#include "cmce/random.hpp"

namespace cmce::cli {

namespace fs = std::filesystem;

namespace {

enum class SplitKind { kTrain, kGallery, kMated, kNonmated };

const char* split_name(SplitKind k) {
  switch (k) {
    case SplitKind::kTrain: return "train";
    case SplitKind::kGallery: return "gallery";
    case SplitKind::kMated: return "mated";
    case SplitKind::kNonmated: return "nonmated";
  }
  return "?";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Everything generated for one world seed. Models, splits and trained
// transforms are created on first use and cached by name.
class WorldRun {
 public:
  WorldRun(const ExperimentConfig& cfg, std::uint64_t world_seed, fs::path dir)
      : cfg_(cfg), world_seed_(world_seed), dir_(std::move(dir)), world_(world_config()) {
    fs::create_directories(dir_);
  }

  const ExperimentConfig& cfg() const { return cfg_; }
  const fs::path& dir() const { return dir_; }
  const EmbedLog& log() const { return log_; }

  std::uint64_t seed(const std::string& component) const {
    return derive_seed(cfg_.master_seed, "w" + std::to_string(world_seed_) + "/" + component);
  }

  // A roster model, or with noise_scale != 1 / reseed a derived variant named
  // `alias` (e.g. the weaker pre-update models).
  const SynthModel& model(const std::string& alias, const std::string& base_id,
                          double noise_scale = 1.0, bool reseed = false) {
    auto it = models_.find(alias);
    if (it != models_.end()) return it->second;
    ModelConfig mc = cfg_.model(base_id).model;
    mc.model_id = alias;
    mc.noise_sigma *= noise_scale;
    mc.seed = mix_keys({mc.seed, world_seed_});
    if (reseed) mc.seed = derive_seed(mc.seed, "reseed/" + alias);
    return models_.emplace(alias, SynthModel(world_, mc)).first->second;
  }
  const SynthModel& model(const std::string& id) { return model(id, id); }

  std::vector<std::uint32_t> train_classes(double fraction) const {
    const auto& s = cfg_.split;
    const std::uint32_t total = s.train_end - s.train_begin;
    auto n = static_cast<std::uint32_t>(std::floor(fraction * total + 1e-9));
    n = std::clamp<std::uint32_t>(n, 2, total);
    return class_range(s.train_begin, s.train_begin + n);
  }

  // The model must already be registered through model().
  const EmbeddingSet& split(const std::string& alias, SplitKind kind, double fraction = 1.0) {
    std::string key = alias + "/" + split_name(kind);
    if (kind == SplitKind::kTrain && fraction != 1.0) key += "@" + std::to_string(fraction);
    auto it = sets_.find(key);
    if (it != sets_.end()) return it->second;
    const SynthModel& m = models_.at(alias);
    const auto& s = cfg_.split;
    const std::uint32_t probes = s.samples_per_class - s.gallery_samples;
    EmbeddingSet set;
    switch (kind) {
      case SplitKind::kTrain:
        set = generate_split(world_, m, train_classes(fraction), s.samples_per_class, 0, &log_);
        break;
      case SplitKind::kGallery:
        set = generate_split(world_, m, class_range(s.gallery_begin, s.gallery_end),
                             s.gallery_samples, 0, &log_);
        break;
      case SplitKind::kMated:
        set = generate_split(world_, m, class_range(s.gallery_begin, s.gallery_end), probes,
                             s.gallery_samples, &log_);
        break;
      case SplitKind::kNonmated:
        set = generate_split(world_, m, class_range(s.nonmated_begin, s.nonmated_end), probes,
                             s.gallery_samples, &log_);
        break;
    }
    return sets_.emplace(key, quantize_f32(set)).first->second;
  }

  const TrainedTransform& transform(const std::string& key, Variant variant,
                                    const std::vector<std::string>& gallery_aliases,
                                    const std::string& query_alias, double fraction = 1.0) {
    auto it = transforms_.find(key);
    if (it != transforms_.end()) return it->second;
    TrainSpec spec;
    spec.variant = variant;
    for (const auto& g : gallery_aliases) spec.gallery_sets.push_back(split(g, SplitKind::kTrain, fraction));
    spec.query_set = split(query_alias, SplitKind::kTrain, fraction);
    spec.cfg = cfg_.train_config(variant);
    spec.cfg.seed = seed("transform/" + key);
    TrainedTransform t = train(spec);
    quantize_f32(t.params);
    fs::create_directories(dir_ / "transforms");
    write_transform(t, (dir_ / "transforms" / (key + ".cmct")).string());
    return transforms_.emplace(key, std::move(t)).first->second;
  }

  EmbeddingSet transformed_gallery(const TrainedTransform& t,
                                   const std::vector<std::string>& gallery_aliases,
                                   const std::string& name) {
    std::vector<EmbeddingSet> sets;
    for (const auto& g : gallery_aliases) sets.push_back(split(g, SplitKind::kGallery));
    return quantize_f32(t.apply_gallery(sets, name));
  }

 private:
  WorldConfig world_config() const {
    WorldConfig w = cfg_.world;
    w.seed = world_seed_;
    return w;
  }

  const ExperimentConfig& cfg_;
  std::uint64_t world_seed_;
  fs::path dir_;
  LatentWorld world_;
  EmbedLog log_;
  std::map<std::string, SynthModel> models_;
  std::map<std::string, EmbeddingSet> sets_;
  std::map<std::string, TrainedTransform> transforms_;
};

ArmData make_arm(const std::vector<EmbeddingSet>& transformed, const EmbeddingSet& mated,
                 const EmbeddingSet& nonmated, DistanceMetric metric) {
  ArmData a;
  a.gallery = fuse_gallery(transformed, metric);
  for (auto& it : a.gallery) {
    it.fused = quantize_f32(it.fused);
    it.degenerate = it.fused.norm() <= kNormEpsilon;
  }
  a.mated = mated;
  a.nonmated = nonmated;
  return a;
}

}  // namespace

std::string m2m_key(const std::string& model, std::size_t tag) {
  return "m2m_" + model + "_t" + std::to_string(tag);
}

namespace {

std::string size_arm(std::size_t k) { return "size" + std::to_string(k); }

EmbeddingSet merged(const EmbeddingSet& a, const EmbeddingSet& b) {
  EmbeddingSet out(a.model_id(), a.dim());
  for (const auto* s : {&a, &b}) {
    for (const auto& it : s->items()) out.add(it.vector, it.class_label, it.item_id);
  }
  return out;
}

struct SeedOutput {
  std::vector<MetricValue> values;
  std::size_t backfill_violations = 0;
};

class SeedRunner {
 public:
  SeedRunner(const ExperimentConfig& cfg, std::uint64_t world_seed, const fs::path& dir)
      : run_(cfg, world_seed, dir), query_(cfg.query_model().model.model_id) {
    run_.model(query_);
  }

  SeedOutput run(ScenarioName name) {
    switch (name) {
      case ScenarioName::kEnsembleSize: ensemble_size(); break;
      case ScenarioName::kDiversity: diversity(); break;
      case ScenarioName::kFusionVariants: fusion_variants(); break;
      case ScenarioName::kRiskCoverage: risk_coverage(); break;
      case ScenarioName::kModelUpdate: model_update(); break;
    }
    return std::move(out_);
  }

 private:
  const ExperimentConfig& cfg() const { return run_.cfg(); }

  void add_arm(const std::string& name, const ArmData& arm, const std::string& query_alias) {
    write_arm(arm, query_alias, run_.dir() / name);
    auto v = evaluate_arm(arm, cfg().eval, name);
    out_.values.insert(out_.values.end(), v.begin(), v.end());
  }

  const EmbeddingSet& mated() { return run_.split(query_, SplitKind::kMated); }
  const EmbeddingSet& nonmated() { return run_.split(query_, SplitKind::kNonmated); }

  // Independently trained model-to-model transforms, fused by averaging.
  ArmData m2m_ensemble(const std::vector<std::string>& models, const std::vector<std::size_t>& tags) {
    std::vector<EmbeddingSet> transformed;
    for (std::size_t i = 0; i < models.size(); ++i) {
      run_.model(models[i]);
      const std::string key = m2m_key(models[i], tags[i]);
      const auto& t = run_.transform(key, Variant::kM2M, {models[i]}, query_);
      transformed.push_back(run_.transformed_gallery(t, {models[i]}, key));
    }
    return make_arm(transformed, mated(), nonmated(), cfg().eval.variance_metric);
  }

  std::vector<std::string> first_models(std::size_t n) const {
    const auto& all = cfg().scenarios.ensemble_models;
    return {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n)};
  }

  void ensemble_size() {
    const auto dm = cfg().eval.variance_metric;
    add_arm("symmetric", make_arm({run_.split(query_, SplitKind::kGallery)}, mated(), nonmated(), dm),
            query_);
    const EmbeddingSet own = merged(run_.split(query_, SplitKind::kGallery), mated());
    const auto own_probes = to_probes(own);
    out_.values.push_back({loo_recall_key("symmetric"), recall_at_1(build_index(own), own_probes), 1});

    const std::string& g0 = cfg().scenarios.ensemble_models.front();
    run_.model(g0);
    const EmbeddingSet& raw = run_.split(g0, SplitKind::kGallery);
    if (raw.dim() == mated().dim()) {
      add_arm("naive", make_arm({raw}, mated(), nonmated(), dm), query_);
      const EmbeddingSet other = merged(raw, run_.split(g0, SplitKind::kMated));
      out_.values.push_back({loo_recall_key("naive"), recall_at_1(build_index(other), own_probes), 1});
    }
    const auto& u = run_.transform("unified_" + g0, Variant::kUnified, {g0}, query_);
    add_arm("unified",
            make_arm({run_.transformed_gallery(u, {g0}, "unified_" + g0)},
                     quantize_f32(u.apply_query(mated())), quantize_f32(u.apply_query(nonmated())), dm),
            query_);
    for (std::size_t k : cfg().scenarios.ensemble_sizes) {
      add_arm(size_arm(k), m2m_ensemble(first_models(k), std::vector<std::size_t>(k, 0)), query_);
    }
  }

  void diversity() {
    const auto& s = cfg().scenarios;
    const std::size_t n = s.dtg_models.size();
    std::vector<std::size_t> tags(n);
    for (std::size_t i = 0; i < n; ++i) tags[i] = i;
    add_arm("D-T", m2m_ensemble(std::vector<std::string>(n, s.dt_model), tags), query_);
    add_arm("D-TG", m2m_ensemble(s.dtg_models, std::vector<std::size_t>(n, 0)), query_);
    add_arm("D-TGA", m2m_ensemble(s.dtga_models, std::vector<std::size_t>(n, 0)), query_);
  }

  void fusion_variants() {
    const auto models = first_models(cfg().scenarios.ensemble_sizes.back());
    add_arm("independent", m2m_ensemble(models, std::vector<std::size_t>(models.size(), 0)), query_);
    std::string joined;
    for (const auto& m : models) joined += (joined.empty() ? "" : "+") + m;
    for (Variant v : {Variant::kE2eMean, Variant::kE2eWeighted, Variant::kConcat}) {
      const std::string key = to_string(v) + "_" + joined;
      const auto& t = run_.transform(key, v, models, query_);
      add_arm(to_string(v),
              make_arm({run_.transformed_gallery(t, models, key)}, mated(), nonmated(),
                       cfg().eval.variance_metric),
              query_);
    }
  }

  void risk_coverage() {
    const auto& e = cfg().eval;
    const auto models = first_models(cfg().scenarios.ensemble_sizes.back());
    const ArmData arm = m2m_ensemble(models, std::vector<std::size_t>(models.size(), 0));
    const std::string name = "ensemble";
    add_arm(name, arm, query_);

    const ProbeSet probes{to_probes(arm.mated), to_probes(arm.nonmated)};
    CoveragePolicy random;
    random.random = true;
    for (std::size_t k = 0; k < e.rejection_seeds; ++k) {
      random.seeds.push_back(run_.seed("rejection/" + std::to_string(k)));
    }
    for (CurveMetric metric : {CurveMetric::kOpenSetTar, CurveMetric::kRecallAt1}) {
      for (const CoveragePolicy& policy : {CoveragePolicy{}, random}) {
        for (const auto& pt : risk_coverage_curve(arm.gallery, probes, metric, e.coverages, policy,
                                                  e.primary_far)) {
          out_.values.push_back(
              {{name, to_string(metric), "coverage", pt.coverage, pt.policy}, pt.metric_value,
               pt.seed_count});
        }
      }
    }

    // Variance against the mean cosine distance to the item's mated probes.
    std::map<std::uint32_t, std::vector<EmbeddingVector>> by_class;
    for (const auto& p : arm.mated.items()) by_class[p.class_label].push_back(l2_normalize(p.vector));
    std::vector<double> var, dist;
    for (const auto& it : arm.gallery) {
      if (it.degenerate || !it.variance) continue;
      const auto found = by_class.find(it.class_label);
      if (found == by_class.end()) continue;
      const EmbeddingVector g = it.normalized();
      double sum = 0.0;
      for (const auto& q : found->second) sum += 1.0 - unit_dot(g.values(), q.values());
      var.push_back(*it.variance);
      dist.push_back(sum / static_cast<double>(found->second.size()));
    }
    out_.values.push_back({{name, "spearman", "none", 0.0, ""}, spearman(var, dist), 1});
  }

  void model_update() {
    const auto& s = cfg().scenarios;
    const std::string old_query = query_ + "~old";
    run_.model(old_query, query_, s.update_noise_scale, true);
    const auto models = first_models(s.update_sizes.back());

    // The pre-update gallery is embedded once by the old gallery models and
    // stored; the post-update arms read it back instead of re-embedding.
    std::vector<std::string> old_models;
    const fs::path stored = run_.dir() / "stored_gallery";
    fs::create_directories(stored);
    for (const auto& m : models) {
      const std::string alias = m + "~old";
      run_.model(alias, m, s.update_noise_scale, false);
      write_embedding_set(run_.split(alias, SplitKind::kGallery), (stored / (alias + ".cmce")).string());
      old_models.push_back(alias);
    }

    const auto dm = cfg().eval.variance_metric;
    const EmbeddingSet& old_mated = run_.split(old_query, SplitKind::kMated);
    const EmbeddingSet& old_nonmated = run_.split(old_query, SplitKind::kNonmated);
    std::vector<EmbeddingSet> before, after;
    for (const auto& alias : old_models) {
      const std::string bkey = "before_" + alias;
      const auto& tb = run_.transform(bkey, Variant::kM2M, {alias}, old_query, s.update_train_fraction);
      before.push_back(run_.transformed_gallery(tb, {alias}, bkey));

      const std::string akey = "after_" + alias;
      const auto& ta = run_.transform(akey, Variant::kM2M, {alias}, query_);
      const EmbeddingSet reused = read_embedding_set((stored / (alias + ".cmce")).string());
      after.push_back(quantize_f32(ta.apply_gallery({reused}, akey)));
    }
    for (std::size_t k : s.update_sizes) {
      const std::vector<EmbeddingSet> b(before.begin(), before.begin() + static_cast<std::ptrdiff_t>(k));
      const std::vector<EmbeddingSet> a(after.begin(), after.begin() + static_cast<std::ptrdiff_t>(k));
      add_arm("before/" + size_arm(k), make_arm(b, old_mated, old_nonmated, dm), old_query);
      add_arm("after/" + size_arm(k), make_arm(a, mated(), nonmated(), dm), query_);
    }

    // No-backfilling check: the new query model must never have embedded a
    // gallery sample.
    const auto& sp = cfg().split;
    std::size_t violations = 0;
    for (const auto& e : run_.log().entries()) {
      if (e.model_id == query_ && e.spec.class_label >= sp.gallery_begin &&
          e.spec.class_label < sp.gallery_end && e.spec.sample_id < sp.gallery_samples) {
        ++violations;
      }
    }
    out_.backfill_violations = violations;
    out_.values.push_back({{"after", "backfill_embeds", "none", 0.0, ""},
                           static_cast<double>(violations), 1});
  }

  WorldRun run_;
  std::string query_;
  SeedOutput out_;
};

}  // namespace

std::string to_string(ScenarioName s) {
  switch (s) {
    case ScenarioName::kEnsembleSize: return "ensemble_size";
    case ScenarioName::kDiversity: return "diversity";
    case ScenarioName::kFusionVariants: return "fusion_variants";
    case ScenarioName::kRiskCoverage: return "risk_coverage";
    case ScenarioName::kModelUpdate: return "model_update";
  }
  return "?";
}

ScenarioName parse_scenario(const std::string& s) {
  for (ScenarioName n : all_scenarios()) {
    if (to_string(n) == s) return n;
  }
  throw InvalidConfig("unknown scenario '" + s + "'");
}

std::vector<ScenarioName> all_scenarios() {
  return {ScenarioName::kEnsembleSize, ScenarioName::kDiversity, ScenarioName::kFusionVariants,
          ScenarioName::kRiskCoverage, ScenarioName::kModelUpdate};
}

const std::vector<double>& ScenarioResult::per_seed(const MetricKey& key) const {
  const auto it = values.find(key);
  if (it == values.end()) {
    throw InvalidConfig("no metric " + key.metric + " for arm '" + key.arm + "'");
  }
  return it->second;
}

double ScenarioResult::mean(const MetricKey& key) const {
  const auto& v = per_seed(key);
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

MetricKey open_set_key(const std::string& arm, double far) {
  return {arm, "open_set_tar", "far", far, ""};
}
MetricKey verification_key(const std::string& arm, double far) {
  return {arm, "verification_tar", "far", far, ""};
}
MetricKey recall_key(const std::string& arm) { return {arm, "recall_at_1", "rank", 1.0, ""}; }

MetricKey loo_recall_key(const std::string& arm) {
  return {arm, "recall_at_1_loo", "rank", 1.0, ""};
}

std::vector<MetricValue> evaluate_arm(const ArmData& arm, const EvalSpec& eval,
                                      const std::string& arm_name) {
  std::vector<MetricValue> out;
  const GalleryIndex index = build_index(arm.gallery);
  ProbeSet probes{to_probes(arm.mated), to_probes(arm.nonmated)};
  for (double far : eval.far_targets) {
    out.push_back({open_set_key(arm_name, far), open_set_search_eval(index, probes, far).tar, 1});
  }

  std::map<std::uint32_t, Template> templates;
  for (const auto& p : arm.mated.items()) {
    auto& t = templates[p.class_label];
    t.class_label = p.class_label;
    t.members.push_back(p.vector);
  }
  std::vector<double> genuine, impostor;
  for (const auto& [label, t] : templates) {
    const EmbeddingVector probe = aggregate_template(t);
    for (const auto& e : index.entries()) {
      const double s = e.sentinel() ? kSentinelScore : unit_dot(probe.values(), e.unit);
      (e.class_label == label ? genuine : impostor).push_back(s);
    }
  }
  for (double far : eval.far_targets) {
    out.push_back({verification_key(arm_name, far),
                   tar_at_far_verification(genuine, impostor, far).tar, 1});
  }
  out.push_back({recall_key(arm_name), recall_at_1(index, probes.mated), 1});
  return out;
}

void write_arm(const ArmData& arm, const std::string& query_model_id, const fs::path& dir) {
  fs::create_directories(dir);
  write_fused_gallery(arm.gallery, query_model_id, (dir / "gallery.cmce").string(),
                      (dir / "gallery.json").string());
  write_embedding_set(arm.mated, (dir / "mated.cmce").string());
  write_embedding_set(arm.nonmated, (dir / "nonmated.cmce").string());
}

ArmData read_arm(const fs::path& dir) {
  ArmData a;
  a.gallery = read_fused_gallery((dir / "gallery.cmce").string(), (dir / "gallery.json").string());
  a.mated = read_embedding_set((dir / "mated.cmce").string());
  a.nonmated = read_embedding_set((dir / "nonmated.cmce").string());
  if (!a.gallery.empty() && (a.gallery.front().fused.dim() != a.mated.dim() ||
                             a.mated.dim() != a.nonmated.dim())) {
    throw DimensionMismatch("gallery and probe files differ in dim");
  }
  return a;
}

Report build_report(const ScenarioResult& result, const ExperimentConfig& cfg) {
  Report r;
  nlohmann::ordered_json c = to_json(cfg);
  c.erase("output_dir");
  r.config["scenario"] = result.scenario;
  r.config["config_hash"] = result.config_hash;
  r.config["tool_version"] = kToolVersion;
  r.config["experiment"] = c;
  const std::size_t n = result.world_seeds.size();
  const auto inner = [&](const MetricKey& k) {
    const auto it = result.inner_seeds.find(k);
    return it == result.inner_seeds.end() ? std::size_t{1} : it->second;
  };
  for (const auto& [k, v] : result.values) {
    r.rows.push_back({k.arm + "/" + k.metric, k.x_kind, k.x, result.mean(k),
                      k.policy.empty() ? "mean" : k.policy, n * inner(k)});
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& [k, v] : result.values) {
      r.rows.push_back({k.arm + "/" + k.metric + "/w" + std::to_string(result.world_seeds[i]),
                        k.x_kind, k.x, v[i], k.policy.empty() ? "world_seed" : k.policy,
                        inner(k)});
    }
  }
  return r;
}

void claim_output_dir(const fs::path& root, const std::string& label, const std::string& hash,
                      bool force) {
  const fs::path prov = root / "provenance.json";
  if (fs::exists(root) && !fs::is_empty(root)) {
    bool same = false;
    if (fs::exists(prov)) {
      try {
        same = nlohmann::json::parse(read_text(prov)).at("config_hash").get<std::string>() == hash;
      } catch (const nlohmann::json::exception&) {
        same = false;
      }
    }
    if (!same) {
      if (!force) {
        throw IoError("'" + root.string() +
                      "' holds artifacts from a different config; pass --force to overwrite");
      }
      fs::remove_all(root);
    }
  }
  fs::create_directories(root);
  nlohmann::ordered_json j;
  j["output"] = label;
  j["config_hash"] = hash;
  j["tool_version"] = kToolVersion;
  write_text(prov, j.dump(2) + "\n");
}

std::vector<fs::path> generate_synthetic(const ExperimentConfig& cfg_in, const RunOptions& opts) {
  ExperimentConfig cfg = cfg_in;
  resolve_seeds(cfg);
  cfg.validate();
  const fs::path root = fs::path(cfg.output_dir) / "synth";
  claim_output_dir(root, "synth", config_hash(cfg), opts.force);
  std::vector<fs::path> written;
  for (std::uint64_t ws : cfg.world_seeds) {
    const fs::path dir = root / ("w" + std::to_string(ws));
    WorldRun run(cfg, ws, dir);
    for (const auto& m : cfg.models) {
      const std::string& id = m.model.model_id;
      run.model(id);
      fs::create_directories(dir / id);
      for (SplitKind k : {SplitKind::kTrain, SplitKind::kGallery, SplitKind::kMated,
                          SplitKind::kNonmated}) {
        const fs::path path = dir / id / (std::string(split_name(k)) + ".cmce");
        write_embedding_set(run.split(id, k), path.string());
        written.push_back(path);
      }
    }
  }
  ClassNames names;
  char buf[32];
  for (std::uint32_t c = 0; c < cfg.world.num_classes; ++c) {
    std::snprintf(buf, sizeof buf, "class-%04u", c);
    names[c] = buf;
  }
  write_class_manifest(names, (root / "classes.json").string());
  written.push_back(root / "classes.json");
  return written;
}

std::string transform_key(Variant v, const std::vector<std::string>& gallery_models,
                          std::size_t tag) {
  if (gallery_models.empty()) throw InvalidConfig("no gallery models given");
  if (v == Variant::kM2M) return m2m_key(gallery_models.front(), tag);
  std::string joined;
  for (const auto& m : gallery_models) joined += (joined.empty() ? "" : "+") + m;
  return to_string(v) + "_" + joined;
}

fs::path train_transform_artifact(const ExperimentConfig& cfg_in, Variant v,
                                  const std::vector<std::string>& gallery_models,
                                  std::uint64_t world_seed, std::size_t tag,
                                  const RunOptions& opts) {
  ExperimentConfig cfg = cfg_in;
  resolve_seeds(cfg);
  cfg.validate();
  if ((v == Variant::kM2M || v == Variant::kUnified) && gallery_models.size() != 1) {
    throw InvalidConfig(to_string(v) + " takes exactly one gallery model");
  }
  const fs::path root = fs::path(cfg.output_dir) / "train-transform";
  claim_output_dir(root, "train-transform", config_hash(cfg), opts.force);
  WorldRun run(cfg, world_seed, root / ("w" + std::to_string(world_seed)));
  const std::string query = cfg.query_model().model.model_id;
  run.model(query);
  for (const auto& g : gallery_models) {
    if (cfg.model(g).role != Role::kGallery) {
      throw InvalidConfig("model '" + g + "' is not a gallery model");
    }
    run.model(g);
  }
  const std::string key = transform_key(v, gallery_models, tag);
  run.transform(key, v, gallery_models, query);
  return run.dir() / "transforms" / (key + ".cmct");
}

ScenarioResult run_scenario(ScenarioName name, const ExperimentConfig& cfg_in,
                            const RunOptions& opts) {
  ExperimentConfig cfg = cfg_in;
  resolve_seeds(cfg);
  cfg.validate();

  ScenarioResult result;
  result.scenario = to_string(name);
  result.config_hash = config_hash(cfg);
  result.world_seeds = cfg.world_seeds;

  const fs::path root = fs::path(cfg.output_dir) / result.scenario;
  claim_output_dir(root, result.scenario, result.config_hash, opts.force);

  const std::size_t n = cfg.world_seeds.size();
  std::vector<SeedOutput> outputs(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        const std::uint64_t ws = cfg.world_seeds[i];
        SeedRunner runner(cfg, ws, root / ("w" + std::to_string(ws)));
        outputs[i] = runner.run(name);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(opts.threads, 1, n);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& mv : outputs[i].values) {
      auto& v = result.values[mv.key];
      if (v.size() != i) throw InvalidConfig("metric set differs between world seeds");
      v.push_back(mv.value);
      if (mv.seed_count != 1) result.inner_seeds[mv.key] = mv.seed_count;
    }
    result.backfill_violations += outputs[i].backfill_violations;
  }

  result.report = build_report(result, cfg);
  export_report(result.report, (root / "report").string());
  return result;
}

}  // namespace cmce::cli
