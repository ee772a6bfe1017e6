#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cmce/cli/experiment.hpp"
#include "cmce/cli/scenario.hpp"

namespace cmce::cli {

// Applies each transform to its gallery set (or a single joint transform to
// all sets) and writes the fused gallery as <out_dir>/gallery.{cmce,json}.
std::vector<FusedGalleryItem> cmd_fuse(const std::vector<std::string>& transform_paths,
                                       const std::vector<std::string>& gallery_paths,
                                       const std::string& query_model_id,
                                       const std::filesystem::path& out_dir,
                                       DistanceMetric metric = DistanceMetric::kCosine);

struct EvalInputs {
  std::string gallery;          // fused gallery binary
  std::string sidecar;          // its JSON sidecar
  std::string mated;
  std::string nonmated;
  std::string query_transform;  // optional: applied to both probe files
};

// Inputs of an arm directory written by a scenario run.
EvalInputs arm_inputs(const std::filesystem::path& arm_dir);

// Re-evaluates stored artifacts only. Writes <out_stem>.{json,csv} when
// out_stem is non-empty.
Report cmd_eval(const EvalInputs& in, const EvalSpec& eval, const std::string& out_stem);

// Collects every <out_dir>/<name>/report.json into <out_dir>/summary.csv
// (seed-averaged rows only, prefixed by the report's scenario) and returns
// a plain-text table of the same rows.
std::string cmd_report(const std::filesystem::path& out_dir);

}  // namespace cmce::cli
