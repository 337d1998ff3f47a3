#include "nvmag/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include "nvmag/error.hpp"

namespace nvmag {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

[[noreturn]] void bad_field(const std::string& path, const std::string& what) {
  fail(ErrorKind::kInvalidInput, "field '" + path + "': " + what);
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

std::string join(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

const Json& member(const Json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) bad_field(path.empty() ? "<root>" : path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) bad_field(join(path, key), "missing");
  return *it;
}

// null stands for NaN (undefined statistics).
double number(const Json& j, const std::string& path) {
  if (j.is_null()) return kNaN;
  if (!j.is_number()) bad_field(path, "expected a number");
  return j.get<double>();
}

double number_at(const Json& j, const std::string& key, const std::string& path) {
  return number(member(j, key, path), join(path, key));
}

Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

std::uint64_t u64(const Json& j, const std::string& path) {
  if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<std::int64_t>() < 0)) {
    bad_field(path, "expected a non-negative integer");
  }
  return j.get<std::uint64_t>();
}

int integer(const Json& j, const std::string& path) {
  if (!j.is_number_integer()) bad_field(path, "expected an integer");
  return j.get<int>();
}

std::vector<double> number_list(const Json& j, const std::string& path) {
  if (!j.is_array()) bad_field(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], join(path, i)));
  return out;
}

Json matrix_to_json(const Eigen::MatrixX4d& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (int k = 0; k < 4; ++k) row.push_back(num(m(i, k)));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixX4d matrix_from_json(const Json& j, const std::string& path) {
  if (!j.is_array()) bad_field(path, "expected an array of 4-element rows");
  Eigen::MatrixX4d m(static_cast<Eigen::Index>(j.size()), 4);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto row = number_list(j[i], join(path, i));
    if (row.size() != 4) bad_field(join(path, i), "expected 4 values, got " + std::to_string(row.size()));
    for (int k = 0; k < 4; ++k) m(static_cast<Eigen::Index>(i), k) = row[static_cast<std::size_t>(k)];
  }
  return m;
}

Json matrix3_to_json(const Eigen::Matrix3d& m) {
  Json rows = Json::array();
  for (int i = 0; i < 3; ++i) rows.push_back(Json::array({m(i, 0), m(i, 1), m(i, 2)}));
  return rows;
}

Eigen::Matrix3d matrix3_from_json(const Json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) bad_field(path, "expected a 3x3 array");
  Eigen::Matrix3d m;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto row = number_list(j[i], join(path, i));
    if (row.size() != 3) bad_field(join(path, i), "expected 3 values");
    for (int k = 0; k < 3; ++k) m(static_cast<int>(i), k) = row[static_cast<std::size_t>(k)];
  }
  return m;
}

std::string to_string(NoiseMode m) {
  switch (m) {
    case NoiseMode::kNone: return "none";
    case NoiseMode::kFrequency: return "frequency";
    case NoiseMode::kAmplitude: return "amplitude";
  }
  return "none";
}

NoiseMode noise_mode_from_string(const std::string& s, const std::string& path) {
  if (s == "none") return NoiseMode::kNone;
  if (s == "frequency") return NoiseMode::kFrequency;
  if (s == "amplitude") return NoiseMode::kAmplitude;
  bad_field(path, "unknown noise mode '" + s + "' (expected frequency or amplitude)");
}

StopReason stop_reason_from_string(const std::string& s, const std::string& path) {
  for (StopReason r : {StopReason::kCostTolerance, StopReason::kStepTolerance, StopReason::kGradientTolerance,
                       StopReason::kZeroCost, StopReason::kDampingLimit, StopReason::kMaxIterations,
                       StopReason::kNonFinite}) {
    if (to_string(r) == s) return r;
  }
  bad_field(path, "unknown stop reason '" + s + "'");
}

SweepKind sweep_kind_from_string(const std::string& s, const std::string& path) {
  for (SweepKind k : {SweepKind::kNoise, SweepKind::kScaling, SweepKind::kSaturation}) {
    if (to_string(k) == s) return k;
  }
  bad_field(path, "unknown sweep kind '" + s + "'");
}

std::string string_at(const Json& j, const std::string& key, const std::string& path) {
  const Json& v = member(j, key, path);
  if (!v.is_string()) bad_field(join(path, key), "expected a string");
  return v.get<std::string>();
}

Json solution_to_json(const Solution& s) {
  return Json{{"params", to_json(s.params)}, {"b_loc_mt", vector_to_json(s.b_loc)}, {"cost", num(s.cost)}};
}

Solution solution_from_json(const Json& j, const std::string& path) {
  Solution s;
  const Json& p = member(j, "params", path);
  s.params.theta1 = number_at(p, "theta1", join(path, "params"));
  s.params.phi1 = number_at(p, "phi1", join(path, "params"));
  s.params.alpha = number_at(p, "alpha", join(path, "params"));
  s.b_loc = vector_from_json(member(j, "b_loc_mt", path), join(path, "b_loc_mt"));
  s.cost = number_at(j, "cost", path);
  return s;
}

Json field_list_to_json(const std::vector<FieldVector>& v) {
  Json out = Json::array();
  for (const auto& b : v) out.push_back(vector_to_json(b));
  return out;
}

Json ground_truth_to_json(const GroundTruth& g) {
  return Json{{"axes", to_json(g.axes)}, {"b_loc_mt", vector_to_json(g.b_loc)}};
}

GroundTruth ground_truth_from_json(const Json& j, const std::string& path) {
  GroundTruth g;
  if (j.contains("axes")) {
    g.axes = axes_from_json(j["axes"]);
  } else if (j.contains("orientation")) {
    g.axes = axes_from_params(orientation_from_json(j["orientation"]));
  } else {
    bad_field(join(path, "axes"), "missing (or give 'orientation')");
  }
  g.b_loc = vector_from_json(member(j, "b_loc_mt", path), join(path, "b_loc_mt"));
  return g;
}

Json reconstruction_config_to_json(const ReconstructionConfig& c) {
  return Json{{"n_starts", c.n_starts},
              {"orientation_samples", c.orientation_samples},
              {"candidates_per_seed", c.candidates_per_seed},
              {"refinements", c.refinements},
              {"refinement_rad", c.refinement_rad},
              {"refinement_mt", c.refinement_mt},
              {"b_loc_lower_mt", vector_to_json(c.b_loc_lower)},
              {"b_loc_upper_mt", vector_to_json(c.b_loc_upper)},
              {"weight", c.weight},
              {"local_solver_tol", c.local_solver_tol},
              {"max_iter", c.max_iter},
              {"fd_step", c.fd_step},
              {"cluster_radius_mt", c.cluster_radius_mt},
              {"cluster_radius_rad", c.cluster_radius_rad},
              {"tie_relative", c.tie_relative},
              {"tie_absolute", c.tie_absolute}};
}

ReconstructionConfig reconstruction_config_from_json(const Json& j, ReconstructionConfig c,
                                                     const std::string& path) {
  if (!j.is_object()) bad_field(path, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const std::string p = join(path, k);
    const Json& v = it.value();
    if (k == "n_starts") c.n_starts = integer(v, p);
    else if (k == "orientation_samples") c.orientation_samples = integer(v, p);
    else if (k == "candidates_per_seed") c.candidates_per_seed = integer(v, p);
    else if (k == "refinements") c.refinements = integer(v, p);
    else if (k == "refinement_rad") c.refinement_rad = number(v, p);
    else if (k == "refinement_mt") c.refinement_mt = number(v, p);
    else if (k == "b_loc_lower_mt") c.b_loc_lower = vector_from_json(v, p);
    else if (k == "b_loc_upper_mt") c.b_loc_upper = vector_from_json(v, p);
    else if (k == "weight") c.weight = number(v, p);
    else if (k == "local_solver_tol") c.local_solver_tol = number(v, p);
    else if (k == "max_iter") c.max_iter = integer(v, p);
    else if (k == "fd_step") c.fd_step = number(v, p);
    else if (k == "cluster_radius_mt") c.cluster_radius_mt = number(v, p);
    else if (k == "cluster_radius_rad") c.cluster_radius_rad = number(v, p);
    else if (k == "tie_relative") c.tie_relative = number(v, p);
    else if (k == "tie_absolute") c.tie_absolute = number(v, p);
    else if (k == "rng_seed") c.rng_seed = u64(v, p);
    else if (k == "threads") c.threads = integer(v, p);
    else bad_field(p, "unknown key");
  }
  return c;
}

Json stats_to_json(const CellStats& s) {
  return Json{{"trials", s.trials},
              {"successes", s.successes},
              {"complete", s.complete},
              {"delta_b_mt", Json::array({num(s.delta_b.x()), num(s.delta_b.y()), num(s.delta_b.z())})},
              {"delta_b_norm_mt", num(s.delta_b_norm)},
              {"dgc_rad", Json::array({num(s.dgc[0]), num(s.dgc[1]), num(s.dgc[2]), num(s.dgc[3])})},
              {"mean_dgc_rad", num(s.mean_dgc)},
              {"mean_b_error_mt", num(s.mean_b_error)},
              {"median_b_error_mt", num(s.median_b_error)},
              {"mean_axis_error_rad", num(s.mean_axis_error)},
              {"median_axis_error_rad", num(s.median_axis_error)}};
}

CellStats stats_from_json(const Json& j, const std::string& path) {
  CellStats s;
  s.trials = integer(member(j, "trials", path), join(path, "trials"));
  s.successes = integer(member(j, "successes", path), join(path, "successes"));
  s.complete = member(j, "complete", path).get<bool>();
  const auto db = number_list(member(j, "delta_b_mt", path), join(path, "delta_b_mt"));
  if (db.size() != 3) bad_field(join(path, "delta_b_mt"), "expected 3 values");
  s.delta_b = FieldVector(db[0], db[1], db[2]);
  s.delta_b_norm = number_at(j, "delta_b_norm_mt", path);
  const auto dgc = number_list(member(j, "dgc_rad", path), join(path, "dgc_rad"));
  if (dgc.size() != 4) bad_field(join(path, "dgc_rad"), "expected 4 values");
  std::copy(dgc.begin(), dgc.end(), s.dgc.begin());
  s.mean_dgc = number_at(j, "mean_dgc_rad", path);
  s.mean_b_error = number_at(j, "mean_b_error_mt", path);
  s.median_b_error = number_at(j, "median_b_error_mt", path);
  s.mean_axis_error = number_at(j, "mean_axis_error_rad", path);
  s.median_axis_error = number_at(j, "median_axis_error_rad", path);
  return s;
}

Json key_to_json(const CellKey& k) {
  return Json{{"noise", k.noise}, {"count", k.count}, {"scaling", k.scaling}};
}

CellKey key_from_json(const Json& j, const std::string& path) {
  return CellKey{number_at(j, "noise", path), integer(member(j, "count", path), join(path, "count")),
                 number_at(j, "scaling", path)};
}

// Shortest round-trip decimal, as in the JSON output.
std::string fmt(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& s, double& out) {
  const std::string t = trim(s);
  if (t.empty()) return false;
  const char* first = t.data();
  if (*first == '+') ++first;
  auto res = std::from_chars(first, t.data() + t.size(), out);
  return res.ec == std::errc() && res.ptr == t.data() + t.size();
}

}  // namespace

// -- JSON schemas -----------------------------------------------------------

Json to_json(const SplittingTable& t) { return Json{{"s", matrix_to_json(t.s)}, {"sigma", matrix_to_json(t.sigma)}}; }

SplittingTable splitting_table_from_json(const Json& j) {
  SplittingTable t;
  t.s = matrix_from_json(member(j, "s", ""), "s");
  if (j.contains("sigma")) {
    t.sigma = matrix_from_json(j["sigma"], "sigma");
  } else {
    t.sigma = Eigen::MatrixX4d::Zero(t.s.rows(), 4);
  }
  if (t.sigma.rows() != t.s.rows()) bad_field("sigma", "row count differs from 's'");
  t.validate();
  return t;
}

Json to_json(const PeakSet& p) {
  Json centers = Json::array();
  for (const auto& pk : p.peaks) {
    centers.push_back(Json{{"center", num(pk.center)},
                           {"uncertainty", num(pk.uncertainty)},
                           {"depth", num(pk.depth)},
                           {"width", num(pk.width)}});
  }
  return Json{{"centers", centers}};
}

PeakSet peak_set_from_json(const Json& j) {
  const Json& c = member(j, "centers", "");
  if (!c.is_array()) bad_field("centers", "expected an array");
  PeakSet p;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const std::string path = join("centers", i);
    Peak pk;
    pk.center = number_at(c[i], "center", path);
    pk.uncertainty = c[i].contains("uncertainty") ? number_at(c[i], "uncertainty", path) : 0.0;
    pk.depth = c[i].contains("depth") ? number_at(c[i], "depth", path) : 0.0;
    pk.width = c[i].contains("width") ? number_at(c[i], "width", path) : 0.0;
    p.peaks.push_back(pk);
  }
  return p;
}

Json to_json(const OrientationParams& p) {
  return Json{{"theta1", p.theta1}, {"phi1", p.phi1}, {"alpha", p.alpha}};
}

OrientationParams orientation_from_json(const Json& j) {
  OrientationParams p;
  p.theta1 = number_at(j, "theta1", "orientation");
  p.phi1 = number_at(j, "phi1", "orientation");
  p.alpha = number_at(j, "alpha", "orientation");
  p.validate();
  return p;
}

Json to_json(const AxesSet& a) {
  Json out = Json::array();
  for (const auto& n : a.n) out.push_back(vector_to_json(n));
  return out;
}

AxesSet axes_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4) bad_field("axes", "expected four 3-vectors");
  AxesSet a;
  for (std::size_t i = 0; i < 4; ++i) a.n[i] = vector_from_json(j[i], join("axes", i));
  if (!a.is_valid(1e-9, 1e-6)) bad_field("axes", "not a set of unit vectors with pairwise dot -1/3");
  return a;
}

Json vector_to_json(const Eigen::Vector3d& v) { return Json::array({num(v.x()), num(v.y()), num(v.z())}); }

Eigen::Vector3d vector_from_json(const Json& j, const std::string& field) {
  const auto v = number_list(j, field);
  if (v.size() != 3) bad_field(field, "expected 3 values, got " + std::to_string(v.size()));
  return Eigen::Vector3d(v[0], v[1], v[2]);
}

Json to_json(const CoilModel& m) { return Json{{"m_mt_per_a", matrix3_to_json(m.m)}, {"offset_mt", vector_to_json(m.offset)}}; }

CoilModel coil_model_from_json(const Json& j) {
  CoilModel m;
  m.m = matrix3_from_json(member(j, "m_mt_per_a", "coil_model"), "coil_model.m_mt_per_a");
  if (j.contains("offset_mt")) m.offset = vector_from_json(j["offset_mt"], "coil_model.offset_mt");
  return m;
}

Json to_json(const ReconstructionResult& r) {
  Json clusters = Json::array();
  for (const auto& c : r.clusters) {
    Json cj = solution_to_json(c.representative);
    cj["members"] = c.members;
    cj["at_bound"] = c.at_bound;
    cj["first_start"] = c.first_start;
    clusters.push_back(cj);
  }
  Json traces = Json::array();
  for (const auto& t : r.traces) {
    traces.push_back(Json{{"start", t.start},
                          {"initial_cost", num(t.initial_cost)},
                          {"final_cost", num(t.final_cost)},
                          {"iterations", t.iterations},
                          {"reason", to_string(t.reason)}});
  }
  return Json{{"best", solution_to_json(r.best)},
              {"axes", to_json(r.best.axes())},
              {"clusters", clusters},
              {"converged_fraction", num(r.converged_fraction)},
              {"residuals_mhz", matrix_to_json(r.residuals)},
              {"tied_clusters", r.tied_clusters},
              {"underdetermined", r.underdetermined},
              {"degenerate", r.degenerate()},
              {"uncertainty",
               Json{{"theta1", num(r.uncertainty.angles[0])},
                    {"phi1", num(r.uncertainty.angles[1])},
                    {"alpha", num(r.uncertainty.angles[2])},
                    {"b_loc_mt", vector_to_json(r.uncertainty.b_loc)}}},
              {"traces", traces}};
}

ReconstructionResult reconstruction_result_from_json(const Json& j) {
  ReconstructionResult r;
  r.best = solution_from_json(member(j, "best", ""), "best");
  const Json& cl = member(j, "clusters", "");
  for (std::size_t i = 0; i < cl.size(); ++i) {
    const std::string path = join("clusters", i);
    Cluster c;
    c.representative = solution_from_json(cl[i], path);
    c.members = integer(member(cl[i], "members", path), join(path, "members"));
    c.at_bound = member(cl[i], "at_bound", path).get<bool>();
    c.first_start = integer(member(cl[i], "first_start", path), join(path, "first_start"));
    r.clusters.push_back(c);
  }
  r.converged_fraction = number_at(j, "converged_fraction", "");
  r.residuals = matrix_from_json(member(j, "residuals_mhz", ""), "residuals_mhz");
  r.tied_clusters = integer(member(j, "tied_clusters", ""), "tied_clusters");
  r.underdetermined = member(j, "underdetermined", "").get<bool>();
  const Json& u = member(j, "uncertainty", "");
  r.uncertainty.angles = {number_at(u, "theta1", "uncertainty"), number_at(u, "phi1", "uncertainty"),
                          number_at(u, "alpha", "uncertainty")};
  r.uncertainty.b_loc = vector_from_json(member(u, "b_loc_mt", "uncertainty"), "uncertainty.b_loc_mt");
  const Json& tr = member(j, "traces", "");
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const std::string path = join("traces", i);
    StartTrace t;
    t.start = integer(member(tr[i], "start", path), join(path, "start"));
    t.initial_cost = number_at(tr[i], "initial_cost", path);
    t.final_cost = number_at(tr[i], "final_cost", path);
    t.iterations = integer(member(tr[i], "iterations", path), join(path, "iterations"));
    t.reason = stop_reason_from_string(string_at(tr[i], "reason", path), join(path, "reason"));
    r.traces.push_back(t);
  }
  return r;
}

Json to_json(const DegeneracyResult& d) {
  Json out{{"kind", to_string(d.kind)}, {"solutions_mt", field_list_to_json(d.solutions)}, {"ambiguous", d.ambiguous}};
  if (d.ring) {
    out["ring"] = Json{{"center_mt", vector_to_json(d.ring->center)},
                       {"radius_mt", d.ring->radius},
                       {"normal", vector_to_json(d.ring->normal)}};
  }
  if (d.sphere) out["sphere"] = Json{{"center_mt", vector_to_json(d.sphere->center)}, {"radius_mt", d.sphere->radius}};
  if (d.mirror_normal) out["mirror_normal"] = vector_to_json(*d.mirror_normal);
  if (d.mirror_point) out["mirror_point_mt"] = vector_to_json(*d.mirror_point);
  return out;
}

Json to_json(const ReconstructionConfig& c) { return reconstruction_config_to_json(c); }

ReconstructionConfig reconstruction_config_from_json(const Json& j, const ReconstructionConfig& base) {
  ReconstructionConfig c = reconstruction_config_from_json(j, base, "");
  c.validate();
  return c;
}

// -- bias input -------------------------------------------------------------

std::vector<FieldVector> BiasInput::resolved_fields() const {
  if (!has_currents()) return fields;
  if (!coil) fail(ErrorKind::kInvalidInput, "bias input gives currents but no coil_model");
  std::vector<FieldVector> out;
  for (const auto& i : currents) out.push_back(coil->field(i));
  return out;
}

Json bias_fields_to_json(const std::vector<FieldVector>& fields) {
  Json out = Json::array();
  for (const auto& b : fields) out.push_back(Json{{"bx_mt", b.x()}, {"by_mt", b.y()}, {"bz_mt", b.z()}});
  return out;
}

Json currents_to_json(const std::vector<Eigen::Vector3d>& currents, const std::optional<CoilModel>& coil) {
  Json list = Json::array();
  for (const auto& i : currents) list.push_back(Json{{"currents_a", vector_to_json(i)}});
  Json out{{"fields", list}};
  if (coil) out["coil_model"] = to_json(*coil);
  return out;
}

BiasInput bias_input_from_json(const Json& j) {
  BiasInput in;
  const Json* list = &j;
  if (j.is_object()) {
    list = &member(j, "fields", "");
    if (j.contains("coil_model")) in.coil = coil_model_from_json(j["coil_model"]);
  }
  if (!list->is_array() || list->empty()) bad_field("fields", "expected a nonempty array");
  for (std::size_t i = 0; i < list->size(); ++i) {
    const Json& e = (*list)[i];
    const std::string path = join("fields", i);
    if (e.is_object() && e.contains("currents_a")) {
      in.currents.push_back(vector_from_json(e["currents_a"], join(path, "currents_a")));
    } else if (e.is_object()) {
      in.fields.emplace_back(number_at(e, "bx_mt", path), number_at(e, "by_mt", path), number_at(e, "bz_mt", path));
    } else {
      in.fields.push_back(vector_from_json(e, path));
    }
  }
  if (!in.fields.empty() && !in.currents.empty()) bad_field("fields", "mixes fields and currents");
  for (const auto& b : in.fields) {
    if (!b.allFinite()) bad_field("fields", "non-finite bias field");
  }
  return in;
}

// -- sweeps -----------------------------------------------------------------

Json to_json(const SweepConfig& c) {
  Json pool = Json::array();
  for (const auto& b : c.bias_pool) pool.push_back(vector_to_json(b));
  return Json{{"scenario", to_string(c.scenario)},
              {"noise_levels", c.noise_levels},
              {"field_counts", c.field_counts},
              {"bias_pool_mt", pool},
              {"bias_scaling", c.bias_scaling},
              {"trials_per_cell", c.trials_per_cell},
              {"ground_truth", ground_truth_to_json(c.ground_truth)},
              {"rng_seed", c.rng_seed},
              {"noise_mode", to_string(c.noise_mode)},
              {"linewidth_mhz", c.linewidth_mhz},
              {"reconstruction", reconstruction_config_to_json(c.reconstruction)}};
}

SweepConfig sweep_config_from_json(const Json& j, const SweepConfig& base) {
  if (!j.is_object()) bad_field("<root>", "expected an object");
  SweepConfig c = base;
  // The scenario picks the defaults that the remaining keys override.
  if (j.contains("scenario")) {
    const std::string s = string_at(j, "scenario", "");
    try {
      c.scenario = scenario_from_string(s);
    } catch (const Error&) {
      bad_field("scenario", "unknown scenario '" + s + "'");
    }
    if (c.scenario != Scenario::kCustom && c.scenario != base.scenario) {
      const auto rc = c.reconstruction;
      c = SweepConfig::preset(c.scenario);
      c.rng_seed = base.rng_seed;
      c.threads = base.threads;
      c.reconstruction = rc;
    }
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const Json& v = it.value();
    if (k == "scenario") continue;
    if (k == "noise_levels") c.noise_levels = number_list(v, k);
    else if (k == "field_counts") {
      if (!v.is_array()) bad_field(k, "expected an array of integers");
      c.field_counts.clear();
      for (std::size_t i = 0; i < v.size(); ++i) c.field_counts.push_back(integer(v[i], join(k, i)));
    } else if (k == "bias_pool_mt" || k == "bias_pool") {
      c.bias_pool = bias_input_from_json(v).resolved_fields();
    } else if (k == "bias_scaling") c.bias_scaling = number_list(v, k);
    else if (k == "trials_per_cell") c.trials_per_cell = integer(v, k);
    else if (k == "ground_truth") c.ground_truth = ground_truth_from_json(v, k);
    else if (k == "rng_seed" || k == "seed") c.rng_seed = u64(v, k);
    else if (k == "noise_mode") {
      if (!v.is_string()) bad_field(k, "expected a string");
      c.noise_mode = noise_mode_from_string(v.get<std::string>(), k);
    } else if (k == "linewidth_mhz") c.linewidth_mhz = number(v, k);
    else if (k == "reconstruction") c.reconstruction = reconstruction_config_from_json(v, c.reconstruction, k);
    else if (k == "threads") c.threads = integer(v, k);
    else bad_field(k, "unknown key");
  }
  c.validate();
  return c;
}

Json to_json(const SweepResult& r) {
  Json cells = Json::array();
  for (const auto& c : r.cells) cells.push_back(Json{{"key", key_to_json(c.key)}, {"stats", stats_to_json(c.stats)}});
  Json trials = Json::array();
  for (const auto& t : r.trials) {
    Json subset = Json::array();
    for (int i : t.subset) subset.push_back(i);
    trials.push_back(Json{{"cell", t.cell},
                          {"trial", t.trial},
                          {"seed", t.seed},
                          {"subset", subset},
                          {"rejections", t.rejections},
                          {"success", t.success},
                          {"error", t.error},
                          {"b_loc_mt", vector_to_json(t.b_loc)},
                          {"cost", num(t.cost)},
                          {"axes", to_json(t.axes)},
                          {"b_error_mt", num(t.b_error)},
                          {"axis_error_rad", num(t.axis_error)}});
  }
  return Json{{"kind", to_string(r.kind)}, {"config", to_json(r.config)}, {"cells", cells}, {"trials", trials}};
}

SweepResult sweep_result_from_json(const Json& j) {
  SweepResult r;
  r.kind = sweep_kind_from_string(string_at(j, "kind", ""), "kind");
  SweepConfig base;
  base.scenario = Scenario::kCustom;
  r.config = sweep_config_from_json(member(j, "config", ""), base);
  const Json& cells = member(j, "cells", "");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::string path = join("cells", i);
    r.cells.push_back(CellResult{key_from_json(member(cells[i], "key", path), join(path, "key")),
                                 stats_from_json(member(cells[i], "stats", path), join(path, "stats"))});
  }
  const Json& trials = member(j, "trials", "");
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const Json& e = trials[i];
    const std::string path = join("trials", i);
    TrialRecord t;
    t.cell = member(e, "cell", path).get<std::size_t>();
    t.trial = integer(member(e, "trial", path), join(path, "trial"));
    t.seed = u64(member(e, "seed", path), join(path, "seed"));
    for (const auto& s : member(e, "subset", path)) t.subset.push_back(s.get<int>());
    t.rejections = integer(member(e, "rejections", path), join(path, "rejections"));
    t.success = member(e, "success", path).get<bool>();
    t.error = string_at(e, "error", path);
    t.b_loc = vector_from_json(member(e, "b_loc_mt", path), join(path, "b_loc_mt"));
    t.cost = number_at(e, "cost", path);
    const Json& ax = member(e, "axes", path);
    for (std::size_t k = 0; k < 4 && k < ax.size(); ++k) t.axes.n[k] = vector_from_json(ax[k], join(path, "axes"));
    t.b_error = number_at(e, "b_error_mt", path);
    t.axis_error = number_at(e, "axis_error_rad", path);
    r.trials.push_back(t);
  }
  return r;
}

std::string sweep_trials_csv(const SweepResult& r) {
  std::ostringstream os;
  os << "cell,noise,count,scaling,trial,seed,success,bx_mt,by_mt,bz_mt,cost,b_error_mt,dgc_rad,error\n";
  for (const auto& t : r.trials) {
    const CellKey& k = r.cells.at(t.cell).key;
    std::string err = t.error;
    std::replace(err.begin(), err.end(), '"', '\'');
    os << t.cell << ',' << fmt(k.noise) << ',' << k.count << ',' << fmt(k.scaling) << ',' << t.trial << ',' << t.seed
       << ',' << (t.success ? 1 : 0) << ',' << fmt(t.b_loc.x()) << ',' << fmt(t.b_loc.y()) << ','
       << fmt(t.b_loc.z()) << ',' << fmt(t.cost) << ',' << fmt(t.b_error) << ',' << fmt(t.axis_error) << ",\""
       << err << "\"\n";
  }
  return os.str();
}

// -- spectra ----------------------------------------------------------------

std::string spectrum_to_csv(const OdmrSpectrum& s) {
  std::ostringstream os;
  os << "#bias_id=" << s.meta.bias_id << '\n'
     << "#linewidth_mhz=" << fmt(s.meta.linewidth_mhz) << '\n'
     << "#seed=" << s.meta.seed << '\n'
     << "frequency_mhz,contrast\n";
  for (std::size_t i = 0; i < s.frequencies.size(); ++i) {
    os << fmt(s.frequencies[i]) << ',' << fmt(s.contrast[i]) << '\n';
  }
  return os.str();
}

OdmrSpectrum spectrum_from_csv(const std::string& text, const std::string& source) {
  OdmrSpectrum s;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool header_seen = false;
  auto where = [&] { return source + ":" + std::to_string(lineno) + ": "; };
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      const auto eq = t.find('=');
      if (eq == std::string::npos) continue;  // free-text comment
      const std::string key = trim(t.substr(1, eq - 1));
      const std::string val = trim(t.substr(eq + 1));
      double v = 0.0;
      if (key == "bias_id" || key == "seed") {
        std::uint64_t u = 0;
        auto res = std::from_chars(val.data(), val.data() + val.size(), u);
        if (res.ec != std::errc() || res.ptr != val.data() + val.size()) {
          fail(ErrorKind::kInvalidInput, where() + key + " must be a non-negative integer");
        }
        if (key == "bias_id") s.meta.bias_id = static_cast<int>(u);
        else s.meta.seed = u;
      } else if (key == "linewidth_mhz") {
        if (!parse_double(val, v)) fail(ErrorKind::kInvalidInput, where() + "linewidth_mhz is not a number");
        s.meta.linewidth_mhz = v;
      }
      continue;
    }
    const auto comma = t.find(',');
    if (comma == std::string::npos) fail(ErrorKind::kInvalidInput, where() + "expected two comma-separated columns");
    double f = 0.0;
    double c = 0.0;
    const bool ok = parse_double(t.substr(0, comma), f) && parse_double(t.substr(comma + 1), c);
    if (!ok) {
      if (!header_seen && s.frequencies.empty()) {
        header_seen = true;  // column names
        continue;
      }
      fail(ErrorKind::kInvalidInput, where() + "non-numeric value");
    }
    s.frequencies.push_back(f);
    s.contrast.push_back(c);
  }
  try {
    s.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kInvalidInput, source + ": " + e.what());
  }
  return s;
}

std::string splitting_table_csv(const SplittingTable& t) {
  std::ostringstream os;
  os << "row,s1_mhz,s2_mhz,s3_mhz,s4_mhz,sigma1_mhz,sigma2_mhz,sigma3_mhz,sigma4_mhz\n";
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    os << i;
    for (int k = 0; k < 4; ++k) os << ',' << fmt(t.s(i, k));
    for (int k = 0; k < 4; ++k) os << ',' << fmt(t.sigma(i, k));
    os << '\n';
  }
  return os.str();
}

// -- files ------------------------------------------------------------------

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  if (in.bad()) fail(ErrorKind::kIo, "error reading " + path.string());
  return os.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path(), ec);
    if (ec) fail(ErrorKind::kIo, "cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::random_device rd;
  const fs::path tmp = path.string() + ".tmp" + std::to_string(rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      fs::remove(tmp, ec);
      fail(ErrorKind::kIo, "error writing " + tmp.string());
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignore;
    fs::remove(tmp, ignore);
    fail(ErrorKind::kIo, "cannot rename onto " + path.string() + ": " + ec.message());
  }
}

std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

Json parse_json(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    std::size_t line = 1;
    std::size_t col = 1;
    const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    fail(ErrorKind::kInvalidInput,
         source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": invalid JSON (" + e.what() + ")");
  }
}

Json load_json_file(const std::filesystem::path& path) { return parse_json(read_file(path), path.string()); }

Json load_config_file(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && (text[first] == '{' || text[first] == '[')) return parse_json(text, path.string());

  Json out = Json::object();
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string t = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::kInvalidInput, path.string() + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    if (key.empty()) fail(ErrorKind::kInvalidInput, path.string() + ":" + std::to_string(lineno) + ": empty key");
    Json v;
    try {
      v = Json::parse(val);
    } catch (const Json::parse_error&) {
      if (val.find(',') != std::string::npos) {
        v = Json::array();
        std::istringstream items(val);
        std::string item;
        while (std::getline(items, item, ',')) {
          try {
            v.push_back(Json::parse(trim(item)));
          } catch (const Json::parse_error&) {
            v.push_back(trim(item));
          }
        }
      } else {
        v = val;
      }
    }
    out[key] = v;
  }
  return out;
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorKind::kIo, "sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

void RunManifest::add_input(const std::filesystem::path& path) {
  inputs.emplace_back(path.string(), sha256_hex(read_file(path)));
}

Json to_json(const RunManifest& m) {
  Json inputs = Json::array();
  for (const auto& [p, d] : m.inputs) inputs.push_back(Json{{"path", p}, {"sha256", d}});
  return Json{{"command", m.command},     {"config", m.config},   {"seed", m.seed},
              {"tool_version", m.tool_version}, {"inputs", inputs}, {"outputs", m.outputs},
              {"duration_s", m.duration_s}};
}

RunManifest manifest_from_json(const Json& j) {
  RunManifest m;
  m.command = string_at(j, "command", "");
  m.config = member(j, "config", "");
  m.seed = u64(member(j, "seed", ""), "seed");
  m.tool_version = string_at(j, "tool_version", "");
  for (const auto& e : member(j, "inputs", "")) m.inputs.emplace_back(string_at(e, "path", "inputs"), string_at(e, "sha256", "inputs"));
  for (const auto& o : member(j, "outputs", "")) m.outputs.push_back(o.get<std::string>());
  m.duration_s = number_at(j, "duration_s", "");
  return m;
}

}  // namespace nvmag
