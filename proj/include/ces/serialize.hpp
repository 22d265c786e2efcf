#pragma once

// Stage artifacts: ensemble snapshots, problem data, emulators and chains.

#include "ces/calibration.hpp"
#include "ces/emulator.hpp"
#include "ces/io.hpp"
#include "ces/mcmc.hpp"
#include "ces/setup.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <string>
#include <vector>

namespace ces {

inline json to_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json to_json(const Matrix& m) {
  json a = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    a.push_back(std::move(row));
  }
  return a;
}

inline Vector vector_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw IoError(what + ": expected an array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw IoError(what + ": expected numbers");
    v(static_cast<Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline Matrix matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw IoError(what + ": expected an array of rows");
  if (j.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Index>(j.size()), static_cast<Index>(j[0].size()));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != j[0].size()) throw IoError(what + ": ragged rows");
    for (std::size_t c = 0; c < j[r].size(); ++c) m(static_cast<Index>(r), static_cast<Index>(c)) = j[r][c].get<double>();
  }
  return m;
}

inline json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

inline std::vector<std::string> output_names(Index d) {
  std::vector<std::string> names;
  for (Index i = 0; i < d; ++i) names.push_back("g_" + std::to_string(i + 1));
  return names;
}

// --- snapshots ----------------------------------------------------------------

/// One row per (snapshot, particle): iteration, particle, θ..., G(θ)...
inline void write_snapshots(const fs::path& path, const std::vector<Ensemble>& snapshots,
                            const std::vector<std::string>& parameter_names) {
  if (snapshots.empty()) throw IoError("no snapshots to write");
  const Index p = snapshots.front().input_dim(), d = snapshots.front().output_dim();
  std::vector<std::string> header{"iteration", "particle"};
  header.insert(header.end(), parameter_names.begin(), parameter_names.end());
  for (const auto& n : output_names(d)) header.push_back(n);
  Index rows = 0;
  for (const auto& e : snapshots) rows += e.size();
  Matrix values(rows, 2 + p + d);
  Index r = 0;
  for (const auto& e : snapshots)
    for (Index j = 0; j < e.size(); ++j, ++r) {
      values(r, 0) = e.iteration;
      values(r, 1) = static_cast<double>(j);
      values.row(r).segment(2, p) = e.particles.col(j).transpose();
      values.row(r).segment(2 + p, d) = e.outputs.col(j).transpose();
    }
  write_csv(path, header, values);
}

inline std::vector<Ensemble> read_snapshots(const fs::path& path, Index p) {
  const Table t = read_csv(path);
  const Index cols = static_cast<Index>(t.header.size());
  if (cols < 3 + p || t.header[0] != "iteration" || t.header[1] != "particle")
    throw IoError(path.string() + ": unexpected snapshot header");
  const Index d = cols - 2 - p;
  std::vector<Ensemble> out;
  Index r = 0;
  while (r < t.values.rows()) {
    const int it = static_cast<int>(t.values(r, 0));
    Index end = r;
    while (end < t.values.rows() && static_cast<int>(t.values(end, 0)) == it) ++end;
    Ensemble e;
    e.iteration = it;
    e.particles = t.values.block(r, 2, end - r, p).transpose();
    e.outputs = t.values.block(r, 2 + p, end - r, d).transpose();
    out.push_back(std::move(e));
    r = end;
  }
  if (out.empty()) throw IoError(path.string() + ": no snapshots");
  return out;
}

// --- problem data ---------------------------------------------------------------

inline json data_to_json(const ProblemSetup& s) {
  json j;
  j["kind"] = s.kind;
  j["parameter_names"] = s.names;
  j["data"] = to_json(s.problem.data);
  j["noise_covariance"] = to_json(s.problem.noise_cov);
  j["prior_mean"] = to_json(s.prior.mean());
  j["prior_covariance"] = to_json(s.prior.covariance());
  j["truth"] = to_json(s.truth);
  j["truth_full"] = to_json(s.truth_full);
  j["windows"] = s.windows;
  return j;
}

/// Restores the stored data and prior around a freshly built forward model.
inline ProblemSetup setup_from_json(const json& j, const ProblemConfig& pc) {
  ProblemSetup s;
  try {
    s.kind = j.at("kind").get<std::string>();
    if (s.kind != pc.kind) throw IoError("stored data is for problem '" + s.kind + "', config says '" + pc.kind + "'");
    s.model = make_forward_model(pc);
    s.names = j.at("parameter_names").get<std::vector<std::string>>();
    s.problem.model = s.model;
    s.problem.data = vector_from_json(j.at("data"), "data");
    s.problem.noise_cov = matrix_from_json(j.at("noise_covariance"), "noise_covariance");
    s.prior = GaussianPrior(vector_from_json(j.at("prior_mean"), "prior_mean"),
                            matrix_from_json(j.at("prior_covariance"), "prior_covariance"));
    s.truth = vector_from_json(j.at("truth"), "truth");
    s.truth_full = vector_from_json(j.at("truth_full"), "truth_full");
    s.windows = j.at("windows").get<Index>();
  } catch (const json::exception& e) {
    throw IoError(std::string("problem data: ") + e.what());
  }
  s.problem.validate();
  return s;
}

// --- emulator -------------------------------------------------------------------

inline json emulator_to_json(const GpEmulator& em, const std::string& design_file, const std::string& design_sha) {
  const auto& t = em.transform();
  json j;
  j["format"] = "ces-emulator";
  j["version"] = 1;
  j["design_file"] = design_file;
  j["design_sha256"] = design_sha;
  j["design_size"] = em.design_size();
  j["provenance"] = em.provenance();
  j["transform"] = {{"kind", to_string(t.kind)},
                    {"basis", to_json(t.basis)},
                    {"scales", to_json(t.scales)},
                    {"offset", to_json(t.offset)}};
  const auto& first = em.components().front();
  j["mean"] = to_string(first.mean_family());
  j["kernel"] = to_string(first.kernel().family);
  json comps = json::array();
  for (const auto& c : em.components())
    comps.push_back({{"amplitude", c.kernel().amplitude},
                     {"lengthscales", to_json(c.kernel().lengthscales)},
                     {"noise", c.kernel().noise},
                     {"coefficients", to_json(c.coefficients())},
                     {"jitter", c.jitter()},
                     {"log_marginal_likelihood", c.log_marginal_likelihood()}});
  j["components"] = std::move(comps);
  return j;
}

inline void save_emulator(const fs::path& dir, const GpEmulator& em, const std::vector<std::string>& parameter_names) {
  const std::string design_file = "emulator_design.csv";
  std::vector<std::string> header = parameter_names;
  for (const auto& n : output_names(em.output_dim())) header.push_back(n);
  Matrix design(em.design_size(), em.input_dim() + em.output_dim());
  design << em.design_inputs(), em.design_outputs();
  const std::string csv = to_csv(header, design);
  write_file_atomic(dir / design_file, csv);
  write_json(dir / "emulator.json", emulator_to_json(em, design_file, sha256_hex(csv)));
}

inline GpEmulator load_emulator(const fs::path& dir) {
  const json j = read_json(dir / "emulator.json");
  try {
    if (j.at("format") != "ces-emulator") throw IoError("emulator.json: unknown format");
    const std::string csv = read_file(dir / j.at("design_file").get<std::string>());
    if (sha256_hex(csv) != j.at("design_sha256").get<std::string>())
      throw IoError("emulator design file does not match its checksum");
    const Table t = parse_csv(csv, "emulator design");
    const auto& jt = j.at("transform");
    OutputTransform tr;
    const std::string kind = jt.at("kind");
    tr.kind = kind == "identity" ? TransformKind::identity
              : kind == "time-diag" ? TransformKind::time_diag
              : kind == "svd" ? TransformKind::svd
                                : throw IoError("emulator.json: unknown transform '" + kind + "'");
    tr.basis = matrix_from_json(jt.at("basis"), "transform.basis");
    tr.scales = vector_from_json(jt.at("scales"), "transform.scales");
    tr.offset = vector_from_json(jt.at("offset"), "transform.offset");
    const Index d = tr.dim();
    const Index p = static_cast<Index>(t.header.size()) - d;
    if (p < 1) throw IoError("emulator design has too few columns");
    const MeanFamily mean = j.at("mean") == "linear" ? MeanFamily::linear : MeanFamily::zero;
    const KernelFamily family =
        j.at("kernel") == "matern52" ? KernelFamily::matern52 : KernelFamily::squared_exponential;
    std::vector<KernelSpec> kernels;
    for (const auto& c : j.at("components")) {
      KernelSpec k;
      k.family = family;
      k.amplitude = c.at("amplitude").get<double>();
      k.lengthscales = vector_from_json(c.at("lengthscales"), "lengthscales");
      k.noise = c.at("noise").get<double>();
      kernels.push_back(std::move(k));
    }
    return rebuild_emulator(t.values.leftCols(p), t.values.rightCols(d), std::move(tr), mean, kernels,
                            j.at("provenance").get<std::vector<int>>());
  } catch (const json::exception& e) {
    throw IoError(std::string("emulator.json: ") + e.what());
  }
}

// --- chains ---------------------------------------------------------------------

inline void write_chain(const fs::path& path, const Chain& chain, const std::vector<std::string>& parameter_names) {
  std::vector<std::string> header{"step", "accept", "logpost"};
  header.insert(header.end(), parameter_names.begin(), parameter_names.end());
  Matrix values(chain.size(), 3 + chain.samples.cols());
  for (Index n = 0; n < chain.size(); ++n) {
    values(n, 0) = static_cast<double>(n + 1);
    values(n, 1) = chain.accepted[static_cast<std::size_t>(n)];
    values(n, 2) = chain.log_post(n);
    values.row(n).tail(chain.samples.cols()) = chain.samples.row(n);
  }
  write_csv(path, header, values);
}

inline Chain read_chain(const fs::path& path) {
  const Table t = read_csv(path);
  if (t.header.size() < 4 || t.header[0] != "step" || t.header[1] != "accept" || t.header[2] != "logpost")
    throw IoError(path.string() + ": unexpected chain header");
  Chain c;
  c.samples = t.values.rightCols(t.values.cols() - 3);
  c.log_post = t.values.col(2);
  for (Index n = 0; n < t.values.rows(); ++n) c.accepted.push_back(t.values(n, 1) != 0.0 ? 1 : 0);
  return c;
}

}  // namespace ces
