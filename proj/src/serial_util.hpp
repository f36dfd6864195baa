#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "asopf/common.hpp"
#include "asopf/opf.hpp"

namespace asopf::detail {

using json = nlohmann::ordered_json;

inline json vec_to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Vec vec_from_json(const json& a) {
  if (!a.is_array()) throw ValidationError("expected a numeric array");
  Vec v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

inline json bits_to_json(const std::vector<std::uint8_t>& bits) {
  json a = json::array();
  for (auto b : bits) a.push_back(static_cast<int>(b));
  return a;
}

inline std::vector<std::uint8_t> bits_from_json(const json& a) {
  if (!a.is_array()) throw ValidationError("expected a bit array");
  std::vector<std::uint8_t> bits(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    int v = a[i].get<int>();
    if (v != 0 && v != 1) throw ValidationError("label bits must be 0 or 1");
    bits[i] = static_cast<std::uint8_t>(v);
  }
  return bits;
}

inline json sol_to_json(const OpfSolution& sol, bool include_timing) {
  json j;
  j["schema_version"] = 1;
  j["status"] = to_string(sol.status);
  j["objective_usd_per_h"] = sol.objective;
  j["lambda_usd_per_mwh"] = sol.lambda;
  j["p_pu"] = vec_to_json(sol.p);
  j["shed_pu"] = vec_to_json(sol.shed);
  j["curtail_pu"] = vec_to_json(sol.curtail);
  j["mu_upper_usd_per_mwh"] = vec_to_json(sol.mu_upper);
  j["mu_lower_usd_per_mwh"] = vec_to_json(sol.mu_lower);
  j["alpha_upper_usd_per_mwh"] = vec_to_json(sol.alpha_upper);
  j["alpha_lower_usd_per_mwh"] = vec_to_json(sol.alpha_lower);
  j["iterations"] = sol.iterations;
  j["polished"] = sol.polished;
  if (include_timing) j["wall_time_us"] = sol.wall_time_us;
  if (!sol.message.empty()) j["message"] = sol.message;
  return j;
}

inline OpfSolution sol_from_json(const json& j) {
  OpfSolution sol;
  std::string st = j.at("status").get<std::string>();
  if (st == "optimal") sol.status = SolveStatus::optimal;
  else if (st == "infeasible") sol.status = SolveStatus::infeasible;
  else if (st == "numerical_failure") sol.status = SolveStatus::numerical_failure;
  else throw ValidationError("unknown solution status '" + st + "'");
  sol.objective = j.at("objective_usd_per_h").get<double>();
  sol.lambda = j.at("lambda_usd_per_mwh").get<double>();
  sol.p = vec_from_json(j.at("p_pu"));
  sol.shed = vec_from_json(j.at("shed_pu"));
  sol.curtail = vec_from_json(j.at("curtail_pu"));
  sol.mu_upper = vec_from_json(j.at("mu_upper_usd_per_mwh"));
  sol.mu_lower = vec_from_json(j.at("mu_lower_usd_per_mwh"));
  sol.alpha_upper = vec_from_json(j.at("alpha_upper_usd_per_mwh"));
  sol.alpha_lower = vec_from_json(j.at("alpha_lower_usd_per_mwh"));
  sol.iterations = j.value("iterations", 0);
  sol.polished = j.value("polished", false);
  sol.message = j.value("message", std::string());
  sol.wall_time_us = j.value("wall_time_us", static_cast<std::int64_t>(0));
  return sol;
}

inline json read_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ValidationError(std::string("cannot open ") + what + " file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed ") + what + " file '" + path + "': " + e.what());
  }
  return j;
}

inline void write_json_file(const json& j, const std::string& path, const char* what) {
  std::ofstream out(path);
  if (!out) throw ValidationError(std::string("cannot write ") + what + " file '" + path + "'");
  out << j.dump(2) << "\n";
  if (!out) throw ValidationError(std::string("failed writing ") + what + " file '" + path + "'");
}

}  // namespace asopf::detail
