#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "m2m/cost.hpp"
#include "m2m/tensor.hpp"
#include "m2m/warp.hpp"

namespace m2m::pipe {

using diff::Tensor;

inline constexpr const char* kVersion = "1.0.0";

struct InterpolationRequest {
  std::string frame0_path;
  std::string frame1_path;
  std::vector<std::string> flow01_paths;  // 1 or N .flo files
  std::vector<std::string> flow10_paths;
  std::vector<double> times;  // strictly increasing, inside (0,1)
  int factor = 0;             // alternative to times: t = k/factor
  double alpha = 1.0;
  int n_flows = 4;
  bool jitter = false;
  double ssr_ratio = 0.0;  // 0 disables selective refinement
  int patch_side = 32;
  std::string prn_params_path;  // optional trained parameters
  std::uint64_t seed = 0;
  std::string out_dir;  // empty: no files written
  std::string image_format = "png";
  warp::HolePolicy hole_policy = warp::HolePolicy::blend_inputs;

  void validate() const;
  std::vector<double> resolve_times() const;
};

// Ordered key = value document; serializes byte-stably and parses back
// losslessly. The final line carries an FNV-1a hash of the body.
class RunManifest {
 public:
  void set(std::string key, std::string value);
  void set(std::string key, double value);
  void set(std::string key, std::uint64_t value);
  const std::string* get(std::string_view key) const;

  std::string serialize() const;
  static RunManifest parse(const std::string& text);

  void save(const std::string& path) const;
  static RunManifest load(const std::string& path);

  const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::string format_time(double t);  // e.g. 0.125 -> "0.125"

struct InterpolationResult {
  std::vector<double> times;
  std::vector<Tensor> frames;
  std::vector<double> hole_ratios;
  cost::CostLedger ledger;
  RunManifest manifest;
};

// Shared stage once per frame pair (flow load/replication, brightness maps,
// context pyramids when SSR is on), then scale -> splat -> fill-holes ->
// optional selective refinement per requested time step.
InterpolationResult interpolate(const InterpolationRequest& request);

// Replicates a single flow field into n sub-flows, optionally with the
// deterministic half-pixel diagonal jitter pattern.
std::vector<Tensor> replicate_flow(const Tensor& flow, int n, bool jitter);

}  // namespace m2m::pipe
