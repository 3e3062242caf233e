#pragma once

// Independent finite-difference oracle and small fixtures for the tests.

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <unistd.h>
#include <string>
#include <vector>

#include "bangacmm/autodiff.hpp"

namespace testsupport {

using bangacmm::Tape;
using bangacmm::Tensor;

inline Tensor random_tensor(bangacmm::Shape shape, std::uint64_t seed, bool grad = true, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(std::move(shape), 0.0, grad);
  for (double& v : t.data()) v = n(rng);
  return t;
}

// Central differences of a scalar function of the listed tensors' values.
inline std::vector<std::vector<double>> numeric_grads(const std::function<double()>& f, std::vector<Tensor> wrt,
                                                      double h = 1e-5) {
  std::vector<std::vector<double>> out;
  for (auto& t : wrt) {
    std::vector<double> g(t.numel());
    auto d = t.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double keep = d[i];
      d[i] = keep + h;
      const double up = f();
      d[i] = keep - h;
      const double down = f();
      d[i] = keep;
      g[i] = (up - down) / (2 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

// ||a - b|| / max(||a|| + ||b||, 1e-12)
inline double rel_error(std::span<const double> a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max(std::sqrt(na) + std::sqrt(nb), 1e-12);
}

// Builds loss = sum(w ⊙ op(inputs)) with a fixed random weighting w, runs
// backward, and returns the worst relative error over all inputs.
inline double check_op(const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& op,
                       std::vector<Tensor> inputs, std::uint64_t seed = 99) {
  Tensor probe;
  {
    Tape t(false);
    probe = op(t, inputs);
  }
  Tensor w = random_tensor(probe.shape(), seed, false);
  auto loss_value = [&] {
    Tape t(false);
    Tensor y = op(t, inputs);
    double s = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * w[i];
    return s;
  };
  for (auto& x : inputs) x.zero_grad();
  Tape tape;
  Tensor loss = bangacmm::sum(tape, bangacmm::mul(tape, op(tape, inputs), w));
  bangacmm::backward(loss, tape);
  const auto numeric = numeric_grads(loss_value, inputs);
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!inputs[k].requires_grad()) continue;
    worst = std::max(worst, rel_error(inputs[k].grad(), numeric[k]));
  }
  return worst;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("bangacmm_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace testsupport
