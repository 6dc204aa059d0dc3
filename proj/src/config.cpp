#include "rdm/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "rdm/errors.hpp"

namespace rdm::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

using Setter = std::function<void(Config&, const std::string&)>;

double to_double(const std::string& v) {
  size_t pos = 0;
  const double d = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("bad number: " + v);
  return d;
}

int to_int(const std::string& v) {
  size_t pos = 0;
  const int i = std::stoi(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("bad integer: " + v);
  return i;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw std::invalid_argument("bad boolean: " + v);
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"fine_voxel", [](Config& c, const std::string& v) { c.fine_voxel = to_double(v); }},
      {"coarse_voxel", [](Config& c, const std::string& v) { c.coarse_voxel = to_double(v); }},
      {"feature_dim", [](Config& c, const std::string& v) { c.feature_dim = to_int(v); }},
      {"layers", [](Config& c, const std::string& v) { c.layers = to_int(v); }},
      {"num_coarse", [](Config& c, const std::string& v) { c.num_coarse = to_int(v); }},
      {"sinkhorn_iters", [](Config& c, const std::string& v) { c.sinkhorn_iters = to_int(v); }},
      {"clamp_radius", [](Config& c, const std::string& v) { c.clamp_radius = to_double(v); }},
      {"filter_radius", [](Config& c, const std::string& v) { c.filter_radius = to_double(v); }},
      {"voting_enabled", [](Config& c, const std::string& v) { c.voting_enabled = to_bool(v); }},
      {"embedding", [](Config& c, const std::string& v) { c.embedding = v; }},
      {"estimator", [](Config& c, const std::string& v) { c.estimator = v; }},
      {"ransac_iters", [](Config& c, const std::string& v) { c.ransac_iters = to_int(v); }},
      {"lgr_refine_rounds", [](Config& c, const std::string& v) { c.lgr_refine_rounds = to_int(v); }},
      {"inlier_threshold", [](Config& c, const std::string& v) { c.inlier_threshold = to_double(v); }},
      {"rr_rot_threshold_deg", [](Config& c, const std::string& v) { c.rr_rot_threshold_deg = to_double(v); }},
      {"rr_trans_threshold_m", [](Config& c, const std::string& v) { c.rr_trans_threshold_m = to_double(v); }},
      {"fmr_threshold", [](Config& c, const std::string& v) { c.fmr_threshold = to_double(v); }},
      {"circle_pos_margin", [](Config& c, const std::string& v) { c.circle_pos_margin = to_double(v); }},
      {"circle_neg_margin", [](Config& c, const std::string& v) { c.circle_neg_margin = to_double(v); }},
      {"circle_gamma", [](Config& c, const std::string& v) { c.circle_gamma = to_double(v); }},
      {"gap_eta", [](Config& c, const std::string& v) { c.gap_eta = to_double(v); }},
      {"match_tau", [](Config& c, const std::string& v) { c.match_tau = to_double(v); }},
      {"lr", [](Config& c, const std::string& v) { c.lr = to_double(v); }},
      {"lr_decay_factor", [](Config& c, const std::string& v) { c.lr_decay_factor = to_double(v); }},
      {"lr_decay_epochs", [](Config& c, const std::string& v) { c.lr_decay_epochs = to_int(v); }},
      {"grad_clip", [](Config& c, const std::string& v) { c.grad_clip = to_double(v); }},
      {"train_max_pairs", [](Config& c, const std::string& v) { c.train_max_pairs = to_int(v); }},
      {"train_max_patch_points", [](Config& c, const std::string& v) { c.train_max_patch_points = to_int(v); }},
      {"seed", [](Config& c, const std::string& v) { c.seed = static_cast<uint64_t>(std::stoull(v)); }},
      {"synth_objects", [](Config& c, const std::string& v) { c.synth_objects = to_int(v); }},
      {"synth_extent", [](Config& c, const std::string& v) { c.synth_extent = to_double(v); }},
      {"synth_overlap", [](Config& c, const std::string& v) { c.synth_overlap = to_double(v); }},
      {"synth_noise", [](Config& c, const std::string& v) { c.synth_noise = to_double(v); }},
  };
  return table;
}

void set_key(Config& cfg, const std::string& key, const std::string& value) {
  auto it = setters().find(key);
  if (it == setters().end()) {
    throw std::invalid_argument("unknown config key: " + key);
  }
  it->second(cfg, value);
}

}  // namespace

void Config::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw std::invalid_argument(std::string(name) + " must be positive");
  };
  positive(fine_voxel, "fine_voxel");
  positive(coarse_voxel, "coarse_voxel");
  positive(inlier_threshold, "inlier_threshold");
  positive(match_tau, "match_tau");
  positive(clamp_radius, "clamp_radius");
  positive(filter_radius, "filter_radius");
  positive(synth_extent, "synth_extent");
  if (feature_dim < 2 || feature_dim % 2 != 0) {
    throw std::invalid_argument("feature_dim must be even and >= 2");
  }
  if (layers < 1) throw std::invalid_argument("layers must be >= 1");
  if (num_coarse < 1) throw std::invalid_argument("num_coarse must be >= 1");
  if (sinkhorn_iters < 1) throw std::invalid_argument("sinkhorn_iters must be >= 1");
  const double ratio = coarse_voxel / fine_voxel;
  if (std::abs(ratio - std::round(ratio)) > 1e-9) {
    throw std::invalid_argument("coarse_voxel must be a multiple of fine_voxel");
  }
  if (estimator != "svd" && estimator != "ransac" && estimator != "lgr") {
    throw std::invalid_argument("estimator must be one of svd|ransac|lgr");
  }
}

Config parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  Config cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", line_no);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      set_key(cfg, key, value);
    } catch (const std::invalid_argument& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return cfg;
}

Config apply_overrides(Config base, const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) set_key(base, key, value);
  return base;
}

}  // namespace rdm::cli
