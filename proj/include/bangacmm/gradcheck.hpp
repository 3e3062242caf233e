#pragma once

// Central-difference gradient checking over named parameter tensors.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "nn.hpp"

namespace bangacmm {

struct TensorCheck {
  std::string name;
  std::string group;
  std::size_t size = 0;
  double rel_error = 0;  // |analytic - numeric| / max(|analytic| + |numeric|, floor), L2 norms
};

struct GroupCheck {
  std::string group;
  double max_rel_error = 0;
  std::string worst;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  std::vector<GroupCheck> groups;
  double tolerance = 1e-4;
  bool passed() const {
    return std::all_of(groups.begin(), groups.end(), [](const GroupCheck& g) { return g.passed; });
  }
  std::vector<std::string> failing_tensors() const {
    std::vector<std::string> out;
    for (const auto& t : tensors)
      if (!(t.rel_error < tolerance)) out.push_back(t.name);
    return out;
  }
};

// "text.layer0.attn.q.weight" -> "text"
inline std::string param_group(const std::string& name) { return name.substr(0, name.find('.')); }

using LossFn = std::function<Tensor(Tape&)>;

inline GradCheckReport gradcheck(std::vector<Parameter>& params, const LossFn& loss_fn, double step = 1e-5,
                                 double tolerance = 1e-4, double floor = 1e-8) {
  for (auto& p : params) p.value.zero_grad();
  {
    Tape tape(true);
    backward(loss_fn(tape), tape);
  }
  auto eval = [&] {
    Tape tape(false);
    return loss_fn(tape).item();
  };
  GradCheckReport report;
  report.tolerance = tolerance;
  std::map<std::string, GroupCheck> groups;
  for (auto& p : params) {
    const auto analytic = p.value.grad();
    auto w = p.value.data();
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + step;
      const double up = eval();
      w[i] = orig - step;
      const double down = eval();
      w[i] = orig;
      const double numeric = (up - down) / (2 * step);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    TensorCheck t{p.name, param_group(p.name), w.size(),
                  std::sqrt(diff2) / std::max(std::sqrt(a2) + std::sqrt(n2), floor)};
    auto& g = groups[t.group];
    g.group = t.group;
    if (g.worst.empty() || !(t.rel_error <= g.max_rel_error)) {
      g.max_rel_error = t.rel_error;
      g.worst = t.name;
    }
    g.passed = g.passed && t.rel_error < tolerance;
    report.tensors.push_back(t);
  }
  for (auto& [k, g] : groups) report.groups.push_back(g);
  for (auto& p : params) p.value.zero_grad();
  return report;
}

inline std::string render_gradcheck(const GradCheckReport& r) {
  std::ostringstream os;
  char line[160];
  for (const auto& g : r.groups) {
    std::snprintf(line, sizeof line, "  %-12s max_rel_error=%.3e  %s  (worst: %s)\n", g.group.c_str(),
                  g.max_rel_error, g.passed ? "PASS" : "FAIL", g.worst.c_str());
    os << line;
  }
  for (const auto& t : r.tensors) {
    if (t.rel_error < r.tolerance) continue;
    std::snprintf(line, sizeof line, "    failing %s rel_error=%.3e\n", t.name.c_str(), t.rel_error);
    os << line;
  }
  return os.str();
}

}  // namespace bangacmm
