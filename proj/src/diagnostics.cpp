#include "clasp/diagnostics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "clasp/error.hpp"
#include "clasp/kernels.hpp"

namespace clasp {

namespace {

// 17 significant digits: enough to round-trip any f64 through decimal.
std::string f64_to_string(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void GradientTrace::validate() const {
  if (tasks.size() < 2)
    throw Error("gradient trace needs at least two tasks");
  for (const Layer& l : layers) {
    if (l.grads.size() != tasks.size())
      throw Error("gradient trace: layer '" + l.name +
                  "' does not cover every task");
    for (const auto& g : l.grads)
      if (g.size() != l.grads[0].size())
        throw Error("gradient trace: layer '" + l.name +
                    "' has mismatched gradient lengths");
  }
}

double gradient_cosine(const std::vector<double>& a,
                       const std::vector<double>& b) {
  if (a.size() != b.size())
    throw Error("gradient cosine: length mismatch");
  const double na = kern::sumsq(a.data(), a.size());
  const double nb = kern::sumsq(b.data(), b.size());
  if (na == 0.0 || nb == 0.0) return 0.0;
  return kern::dot(a.data(), b.data(), a.size()) /
         (std::sqrt(na) * std::sqrt(nb));
}

double conflict_ratio(const GradientTrace& trace) {
  trace.validate();
  if (trace.layers.empty()) throw Error("gradient trace has no layers");
  const std::size_t t = trace.tasks.size();
  const double pairs = static_cast<double>(t) * static_cast<double>(t - 1);
  double acc = 0.0;
  for (const GradientTrace::Layer& l : trace.layers) {
    int negative = 0;
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < t; ++j) {
        if (i == j) continue;
        if (gradient_cosine(l.grads[i], l.grads[j]) < 0.0) ++negative;
      }
    acc += static_cast<double>(negative) / pairs;
  }
  return acc / static_cast<double>(trace.layers.size());
}

ExpertActivationProfile build_activation_profile(
    const std::vector<GateRecord>& records, int n_experts,
    const std::string& task) {
  if (records.empty())
    throw Error("activation profile needs at least one gate record");
  const auto N = static_cast<std::size_t>(n_experts);
  ExpertActivationProfile out;
  out.task = task;
  out.p.assign(N, 0.0);
  double mass = 0.0;
  for (const GateRecord& r : records) {
    if (r.gate.size() != N)
      throw Error("activation profile: record width != expert count");
    for (std::size_t e = 0; e < N; ++e) {
      out.p[e] += r.gate[e];
      mass += r.gate[e];
    }
  }
  if (mass != 0.0) {
    for (double& v : out.p) v /= mass;
    return out;
  }
  // Degenerate gates: count selections instead.
  out.p.assign(N, 0.0);
  double count = 0.0;
  for (const GateRecord& r : records)
    for (const int e : r.selected) {
      out.p[static_cast<std::size_t>(e)] += 1.0;
      count += 1.0;
    }
  if (count == 0.0) throw Error("activation profile: no expert selections");
  for (double& v : out.p) v /= count;
  return out;
}

double expert_activation_divergence(const ExpertActivationProfile& pi,
                                    const ExpertActivationProfile& pj) {
  if (pi.p.size() != pj.p.size())
    throw Error("activation divergence: expert counts differ");
  const std::size_t n = pi.p.size();
  double overlap = 0.0;
  for (std::size_t e = 0; e < n; ++e) overlap += std::min(pi.p[e], pj.p[e]);
  return 1.0 - overlap / static_cast<double>(n);
}

double harmonic_mean(double a, double b) {
  if (a <= 0.0 || b <= 0.0)
    throw Error("harmonic mean requires positive inputs");
  return 2.0 * a * b / (a + b);
}

void save_trace(const DiagnosticsTrace& trace, const std::string& path) {
  nlohmann::ordered_json j;
  j["tasks"] = trace.gradients.tasks;
  j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : trace.gradients.layers) {
    nlohmann::ordered_json lj;
    lj["name"] = l.name;
    lj["grads"] = nlohmann::ordered_json::array();
    for (const auto& g : l.grads) {
      nlohmann::ordered_json arr = nlohmann::ordered_json::array();
      for (const double v : g) arr.push_back(f64_to_string(v));
      lj["grads"].push_back(std::move(arr));
    }
    j["layers"].push_back(std::move(lj));
  }
  if (!trace.profiles.empty()) {
    nlohmann::ordered_json pj;
    for (const auto& p : trace.profiles) {
      nlohmann::ordered_json arr = nlohmann::ordered_json::array();
      for (const double v : p.p) arr.push_back(f64_to_string(v));
      pj[p.task] = std::move(arr);
    }
    j["profiles"] = std::move(pj);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write trace file: " + path);
  out << j.dump(1) << "\n";
  if (!out) throw DataError("short write on trace file: " + path);
}

namespace {

double parse_f64(const nlohmann::json& v, const char* what) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    try {
      return std::stod(v.get<std::string>());
    } catch (const std::exception&) {
    }
  }
  throw DataError(std::string("trace file: bad float in ") + what);
}

}  // namespace

DiagnosticsTrace load_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read trace file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw DataError("trace file is not valid JSON: " + std::string(e.what()));
  }
  DiagnosticsTrace trace;
  if (!j.contains("tasks") || !j.contains("layers"))
    throw DataError("trace file needs 'tasks' and 'layers'");
  trace.gradients.tasks = j["tasks"].get<std::vector<std::string>>();
  for (const auto& lj : j["layers"]) {
    GradientTrace::Layer l;
    l.name = lj.at("name").get<std::string>();
    for (const auto& gj : lj.at("grads")) {
      std::vector<double> g;
      g.reserve(gj.size());
      for (const auto& v : gj) g.push_back(parse_f64(v, "layer gradients"));
      l.grads.push_back(std::move(g));
    }
    trace.gradients.layers.push_back(std::move(l));
  }
  if (j.contains("profiles")) {
    for (const auto& [task, arr] : j["profiles"].items()) {
      ExpertActivationProfile p;
      p.task = task;
      for (const auto& v : arr) p.p.push_back(parse_f64(v, "profiles"));
      trace.profiles.push_back(std::move(p));
    }
  }
  return trace;
}

std::string diagnostics_report_json(const DiagnosticsTrace& trace) {
  nlohmann::ordered_json j;
  j["gcr"] = conflict_ratio(trace.gradients);
  j["tasks"] = trace.gradients.tasks;
  j["layers"] = trace.gradients.layers.size();
  if (!trace.profiles.empty()) {
    nlohmann::ordered_json ead;
    for (std::size_t i = 0; i < trace.profiles.size(); ++i)
      for (std::size_t k = i + 1; k < trace.profiles.size(); ++k) {
        const std::string key =
            trace.profiles[i].task + "|" + trace.profiles[k].task;
        ead[key] =
            expert_activation_divergence(trace.profiles[i], trace.profiles[k]);
      }
    j["ead"] = std::move(ead);
  }
  return j.dump(2);
}

}  // namespace clasp
