#pragma once

// Shared helpers for the unit tests.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>

#include <unistd.h>

#include "expt/nn/layers.hpp"
#include "expt/nn/tensor.hpp"

namespace expt::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("expt-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t violations = 0;
  std::string worst;
};

/// Central finite differences of `loss` against the gradients left by one
/// backward pass, over every element of every parameter in `store`. The
/// relative error uses max(|analytic|, |numeric|, floor) as denominator.
/// Some gradients are exactly zero (key biases under softmax shift
/// invariance) and the difference quotient of an O(10) loss carries about
/// 1e-10 of rounding at h = 1e-5; the 1e-5 floor keeps those entries from
/// reading as relative errors of order one.
inline GradCheck check_gradients(nn::ParameterStore<double>& store, const std::function<nn::Tensor<double>()>& loss,
                                 double h = 1e-5, double tol = 1e-4, double floor = 1e-5) {
  store.zero_grad();
  nn::backward(loss());
  GradCheck out;
  for (auto& [name, t] : store.entries()) {
    auto tensor = t;
    std::vector<double> analytic(tensor.grad().begin(), tensor.grad().end());
    analytic.resize(tensor.size(), 0.0);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double saved = tensor.values()[i];
      double plus = 0.0, minus = 0.0;
      {
        nn::NoGradGuard no_grad;
        tensor.values()[i] = saved + h;
        plus = loss().item();
        tensor.values()[i] = saved - h;
        minus = loss().item();
      }
      tensor.values()[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++out.checked;
      if (rel >= tol) ++out.violations;
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[i]) + " numeric " +
                    std::to_string(numeric);
      }
    }
  }
  return out;
}

}  // namespace expt::testing
