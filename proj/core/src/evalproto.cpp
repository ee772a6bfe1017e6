#include "cmce/evalproto.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "binary_io.hpp"
#include "cmce/error.hpp"

namespace cmce {

double unit_dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::size_t GalleryIndex::sentinel_count() const {
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(), [](const Entry& e) { return e.sentinel(); }));
}

bool GalleryIndex::has_class(std::uint32_t label) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.class_label == label; });
}

GalleryIndex build_index(const EmbeddingSet& gallery) {
  if (gallery.empty()) throw EmptyGallery("cannot index an empty gallery");
  GalleryIndex index;
  index.dim_ = gallery.dim();
  for (const auto& item : gallery.items()) {
    GalleryIndex::Entry e{item.item_id, item.class_label, {}};
    if (item.vector.norm() > kNormEpsilon) e.unit = l2_normalize(item.vector).raw();
    index.entries_.push_back(std::move(e));
  }
  return index;
}

GalleryIndex build_index(const std::vector<FusedGalleryItem>& gallery) {
  if (gallery.empty()) throw EmptyGallery("cannot index an empty gallery");
  GalleryIndex index;
  index.dim_ = gallery.front().fused.dim();
  for (const auto& item : gallery) {
    if (item.fused.dim() != index.dim_) throw DimensionMismatch("gallery items differ in dim");
    GalleryIndex::Entry e{item.item_id, item.class_label, {}};
    if (!item.degenerate && item.fused.norm() > kNormEpsilon) {
      e.unit = l2_normalize(item.fused).raw();
    }
    index.entries_.push_back(std::move(e));
  }
  return index;
}

namespace {

// nullopt when every entry was excluded.
std::optional<SearchHit> search_unit(const GalleryIndex& index, std::span<const double> q,
                                     std::optional<std::uint32_t> exclude) {
  std::optional<SearchHit> best;
  for (const auto& e : index.entries()) {
    if (exclude && e.item_id == *exclude) continue;
    const double s = e.sentinel() ? kSentinelScore : unit_dot(q, e.unit);
    if (!best || s > best->score || (s == best->score && e.item_id < best->item_id)) {
      best = SearchHit{e.class_label, e.item_id, s};
    }
  }
  return best;
}

std::vector<double> unit_query(const GalleryIndex& index, const EmbeddingVector& query) {
  if (query.dim() != index.dim()) {
    throw DimensionMismatch("query dim " + std::to_string(query.dim()) + " != gallery dim " +
                            std::to_string(index.dim()));
  }
  return l2_normalize(query).raw();
}

std::size_t far_accept_count(double far, std::size_t k) {
  return static_cast<std::size_t>(std::floor(far * static_cast<double>(k) + 1e-9));
}

}  // namespace

SearchHit search_top1(const GalleryIndex& index, const EmbeddingVector& query,
                      std::optional<std::uint32_t> exclude_item_id) {
  if (index.size() == 0) throw EmptyGallery("search on an empty gallery");
  const auto q = unit_query(index, query);
  const auto hit = search_unit(index, q, exclude_item_id);
  if (!hit) throw EmptyGallery("every gallery entry was excluded from the search");
  return *hit;
}

std::vector<Probe> to_probes(const EmbeddingSet& set) {
  std::vector<Probe> out;
  out.reserve(set.size());
  for (const auto& item : set.items()) out.push_back({item.vector, item.class_label, item.item_id});
  return out;
}

RocOperatingPoint tar_at_far_verification(const std::vector<double>& genuine,
                                          const std::vector<double>& impostor, double far) {
  if (!(far > 0.0 && far <= 1.0)) throw InvalidConfig("far must be in (0, 1]");
  if (genuine.empty() || impostor.empty()) throw EmptyScores("genuine and impostor scores needed");
  std::vector<double> sorted(impostor);
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const std::size_t k = sorted.size();
  const std::size_t accepted = far_accept_count(far, k);

  RocOperatingPoint p;
  p.far_target = far;
  p.threshold = accepted >= k ? kSentinelScore : sorted[accepted];
  const auto above = [&](const std::vector<double>& v) {
    return static_cast<double>(std::count_if(v.begin(), v.end(),
                                             [&](double s) { return s > p.threshold; }));
  };
  p.tar = above(genuine) / static_cast<double>(genuine.size());
  p.achieved_far = above(impostor) / static_cast<double>(k);
  return p;
}

RocOperatingPoint open_set_search_eval(const GalleryIndex& index, const ProbeSet& probes,
                                       double far) {
  if (index.size() == 0) throw EmptyGallery("open-set search on an empty gallery");
  if (probes.nonmated.empty()) throw EmptyScores("open-set search needs nonmated probes");
  if (probes.mated.empty()) throw EmptyScores("open-set search needs mated probes");
  std::set<std::uint32_t> enrolled;
  for (const auto& e : index.entries()) enrolled.insert(e.class_label);

  std::vector<double> impostor;
  impostor.reserve(probes.nonmated.size());
  for (const auto& p : probes.nonmated) {
    if (enrolled.count(p.class_label)) {
      throw InvalidConfig("nonmated probe of enrolled class " + std::to_string(p.class_label));
    }
    impostor.push_back(search_unit(index, unit_query(index, p.vector), std::nullopt)->score);
  }
  // A wrong-label top-1 can never be accepted: it scores -inf as a genuine.
  std::vector<double> genuine;
  genuine.reserve(probes.mated.size());
  for (const auto& p : probes.mated) {
    if (!enrolled.count(p.class_label)) {
      throw InvalidConfig("mated probe of unenrolled class " + std::to_string(p.class_label));
    }
    const SearchHit hit = *search_unit(index, unit_query(index, p.vector), std::nullopt);
    genuine.push_back(hit.class_label == p.class_label ? hit.score : kSentinelScore);
  }
  return tar_at_far_verification(genuine, impostor, far);
}

double recall_at_1(const GalleryIndex& index, const std::vector<Probe>& queries) {
  if (index.size() == 0) throw EmptyGallery("recall on an empty gallery");
  if (queries.empty()) throw EmptyScores("recall needs at least one query");
  std::size_t hits = 0;
  for (const auto& q : queries) {
    const auto hit = search_unit(index, unit_query(index, q.vector), q.item_id);
    if (hit && hit->class_label == q.class_label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

std::string to_string(CurveMetric m) {
  return m == CurveMetric::kOpenSetTar ? "open_set_tar" : "recall_at_1";
}

CurveMetric parse_curve_metric(const std::string& s) {
  if (s == "open_set_tar") return CurveMetric::kOpenSetTar;
  if (s == "recall_at_1") return CurveMetric::kRecallAt1;
  throw InvalidConfig("unknown curve metric '" + s + "'");
}

namespace {

struct Evaluated {
  double value = 0.0;
  std::size_t affected = 0;
};

Evaluated evaluate_retained(const std::vector<FusedGalleryItem>& retained, const ProbeSet& probes,
                            CurveMetric metric, double far) {
  if (retained.empty()) throw EmptyGallery("coverage rejected every gallery item");
  const GalleryIndex index = build_index(retained);
  std::set<std::uint32_t> enrolled;
  for (const auto& it : retained) enrolled.insert(it.class_label);
  Evaluated out;
  if (metric == CurveMetric::kOpenSetTar) {
    ProbeSet adjusted;
    adjusted.nonmated = probes.nonmated;
    for (const auto& p : probes.mated) {
      if (enrolled.count(p.class_label)) {
        adjusted.mated.push_back(p);
      } else {
        adjusted.nonmated.push_back(p);
        ++out.affected;
      }
    }
    out.value = open_set_search_eval(index, adjusted, far).tar;
  } else {
    std::vector<Probe> queries;
    for (const auto& p : probes.mated) {
      if (enrolled.count(p.class_label)) {
        queries.push_back(p);
      } else {
        ++out.affected;
      }
    }
    out.value = recall_at_1(index, queries);
  }
  return out;
}

}  // namespace

std::vector<RiskCoveragePoint> risk_coverage_curve(
    const std::vector<FusedGalleryItem>& items, const ProbeSet& probes, CurveMetric metric,
    const std::vector<double>& coverages, const CoveragePolicy& policy, double far) {
  if (coverages.empty()) throw InvalidConfig("no coverages requested");
  for (std::size_t i = 0; i < coverages.size(); ++i) {
    if (!(coverages[i] > 0.0 && coverages[i] <= 1.0)) {
      throw InvalidConfig("coverages must lie in (0, 1]");
    }
    if (i > 0 && !(coverages[i] < coverages[i - 1])) {
      throw InvalidConfig("coverages must be strictly decreasing");
    }
  }
  if (policy.random && policy.seeds.empty()) throw InvalidConfig("random policy needs seeds");
  const std::string rule = metric == CurveMetric::kOpenSetTar
                               ? "mated probes of rejected classes reclassified as nonmated"
                               : "queries of rejected classes dropped";

  std::vector<RiskCoveragePoint> curve;
  for (double c : coverages) {
    RiskCoveragePoint pt;
    pt.coverage = c;
    pt.rule = rule;
    if (!policy.random) {
      const auto r = apply_rejection(items, {RejectionMode::kCoverageQuantile, c, 0});
      const Evaluated e = evaluate_retained(r.retained, probes, metric, far);
      pt.metric_value = e.value;
      pt.affected_probes = static_cast<double>(e.affected);
      pt.policy = "variance";
      pt.seed_count = 1;
    } else {
      double sum = 0.0, affected = 0.0;
      for (std::uint64_t seed : policy.seeds) {
        const auto r = apply_rejection(items, {RejectionMode::kRandom, c, seed});
        const Evaluated e = evaluate_retained(r.retained, probes, metric, far);
        sum += e.value;
        affected += static_cast<double>(e.affected);
      }
      const auto n = static_cast<double>(policy.seeds.size());
      pt.metric_value = sum / n;
      pt.affected_probes = affected / n;
      pt.policy = "random";
      pt.seed_count = policy.seeds.size();
    }
    curve.push_back(std::move(pt));
  }
  return curve;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DimensionMismatch("spearman inputs differ in length");
  if (x.size() < 2) throw EmptyScores("spearman needs at least two points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double round_sig9(double v) {
  if (!std::isfinite(v)) return v;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

namespace {

std::string fmt9(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string report_csv(const Report& report) {
  std::string out = "curve,x_kind,x,value,policy,seed_count\n";
  for (const auto& r : report.rows) {
    out += csv_field(r.curve) + "," + csv_field(r.x_kind) + "," + fmt9(r.x) + "," + fmt9(r.value) +
           "," + csv_field(r.policy) + "," + std::to_string(r.seed_count) + "\n";
  }
  return out;
}

std::string report_json(const Report& report) {
  nlohmann::ordered_json j;
  j["config"] = report.config;
  j["points"] = nlohmann::ordered_json::array();
  for (const auto& r : report.rows) {
    nlohmann::ordered_json p;
    p["curve"] = r.curve;
    p["x_kind"] = r.x_kind;
    p["x"] = round_sig9(r.x);
    p["value"] = round_sig9(r.value);
    p["policy"] = r.policy;
    p["seed_count"] = r.seed_count;
    j["points"].push_back(std::move(p));
  }
  return j.dump(2) + "\n";
}

Report parse_report_json(const std::string& text) {
  Report r;
  try {
    const auto j = nlohmann::ordered_json::parse(text);
    r.config = j.at("config");
    for (const auto& p : j.at("points")) {
      r.rows.push_back({p.at("curve").get<std::string>(), p.at("x_kind").get<std::string>(),
                        p.at("x").get<double>(), p.at("value").get<double>(),
                        p.at("policy").get<std::string>(), p.at("seed_count").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad report JSON: ") + e.what());
  }
  return r;
}

void export_report(const Report& report, const std::string& stem) {
  detail::write_file(stem + ".json", report_json(report));
  detail::write_file(stem + ".csv", report_csv(report));
}

}  // namespace cmce
